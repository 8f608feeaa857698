//! Instances: fractional (b-)matchings revealed online, multigraphs for edge
//! coloring, and multi-stage cover programs. JSON is the interchange format.

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, uniform};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const TOL: f64 = 1e-9;

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub x: f64,
    #[serde(default = "one")]
    pub w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    #[serde(default = "one")]
    pub p: f64,
    pub edges: Vec<Edge>,
}

impl Arrival {
    pub fn new(edges: Vec<(usize, f64)>) -> Self {
        Arrival {
            p: 1.0,
            edges: edges.into_iter().map(|(i, x)| Edge { i, x, w: 1.0 }).collect(),
        }
    }

    pub fn fraction_sum(&self) -> f64 {
        self.edges.iter().map(|e| e.x).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatchingInstance {
    pub n_offline: usize,
    pub capacities: Vec<u32>,
    pub arrivals: Vec<Arrival>,
}

#[derive(Deserialize)]
struct RawArrival {
    #[serde(default = "one")]
    p: f64,
    #[serde(default)]
    b: Option<u32>,
    edges: Vec<Edge>,
}

#[derive(Deserialize)]
struct RawInstance {
    n_offline: usize,
    capacities: Vec<u32>,
    arrivals: Vec<RawArrival>,
}

impl<'de> Deserialize<'de> for MatchingInstance {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawInstance::deserialize(d)?;
        let mut arrivals = Vec::with_capacity(raw.arrivals.len());
        // online nodes of capacity b > 1 become b unit arrivals carrying x/b each
        for a in raw.arrivals {
            let b = a.b.unwrap_or(1).max(1);
            if b == 1 {
                arrivals.push(Arrival { p: a.p, edges: a.edges });
            } else {
                let edges: Vec<Edge> = a
                    .edges
                    .iter()
                    .map(|e| Edge { i: e.i, x: e.x / b as f64, w: e.w })
                    .collect();
                for _ in 0..b {
                    arrivals.push(Arrival { p: a.p, edges: edges.clone() });
                }
            }
        }
        Ok(MatchingInstance { n_offline: raw.n_offline, capacities: raw.capacities, arrivals })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: String,
    pub index: usize,
    pub magnitude: f64,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn push(&mut self, kind: &str, index: usize, magnitude: f64, message: String) {
        self.violations.push(Violation { kind: kind.into(), index, magnitude, message });
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            let msgs: Vec<&str> = self.violations.iter().map(|v| v.message.as_str()).collect();
            Err(Error::Validation(msgs.join("; ")))
        }
    }
}

impl MatchingInstance {
    pub fn new(capacities: Vec<u32>, arrivals: Vec<Arrival>) -> Self {
        MatchingInstance { n_offline: capacities.len(), capacities, arrivals }
    }

    pub fn unit(n_offline: usize, arrivals: Vec<Arrival>) -> Self {
        Self::new(vec![1; n_offline], arrivals)
    }

    pub fn n_arrivals(&self) -> usize {
        self.arrivals.len()
    }

    pub fn n_edges(&self) -> usize {
        self.arrivals.iter().map(|a| a.edges.len()).sum()
    }

    pub fn is_unit_capacity(&self) -> bool {
        self.capacities.iter().all(|&b| b == 1)
    }

    pub fn degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n_offline];
        for a in &self.arrivals {
            for e in &a.edges {
                if e.i < self.n_offline {
                    d[e.i] += e.x;
                }
            }
        }
        d
    }

    pub fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        if self.capacities.len() != self.n_offline {
            r.push(
                "structure",
                0,
                self.capacities.len() as f64,
                format!(
                    "capacities has {} entries but n_offline is {}",
                    self.capacities.len(),
                    self.n_offline
                ),
            );
        }
        for (i, &b) in self.capacities.iter().enumerate() {
            if b == 0 {
                r.push("capacity", i, 0.0, format!("offline node {i} has capacity 0"));
            }
        }
        for (t, a) in self.arrivals.iter().enumerate() {
            if !(a.p > 0.0 && a.p <= 1.0) {
                r.push("arrival_prob", t, a.p, format!("arrival {t} probability {} outside (0,1]", a.p));
            }
            let mut seen = std::collections::BTreeSet::new();
            for e in &a.edges {
                if e.i >= self.n_offline {
                    r.push("endpoint", t, e.i as f64, format!("arrival {t} edge to unknown offline node {}", e.i));
                }
                if !seen.insert(e.i) {
                    r.push("duplicate", t, e.i as f64, format!("arrival {t} lists offline node {} twice", e.i));
                }
                if !(0.0..=1.0).contains(&e.x) {
                    r.push("fraction", t, e.x, format!("arrival {t} edge {} fraction {} outside [0,1]", e.i, e.x));
                }
                if !(e.w >= 0.0) {
                    r.push("weight", t, e.w, format!("arrival {t} edge {} weight {} negative", e.i, e.w));
                }
            }
            let sum = a.fraction_sum();
            if sum > a.p + TOL {
                r.push("arrival_degree", t, sum, format!("arrival {t} degree {sum} > {}", a.p));
            }
        }
        for (i, d) in self.degrees().into_iter().enumerate() {
            let b = self.capacities.get(i).copied().unwrap_or(1) as f64;
            if d > b + TOL {
                r.push("offline_degree", i, d, format!("offline node {i} degree {d} > {b}"));
            }
        }
        r
    }

    /// Same instance with every fraction multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for a in &mut out.arrivals {
            for e in &mut a.edges {
                e.x *= factor;
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn gen_uniform_star(n: usize) -> Result<MatchingInstance> {
    if n == 0 {
        return Err(Error::Domain("uniform star needs n >= 1".into()));
    }
    let x = 1.0 / n as f64;
    Ok(MatchingInstance::unit(n, vec![Arrival::new((0..n).map(|i| (i, x)).collect())]))
}

/// First n arrivals of the lower-bound construction: arrival t neighbors 2t and 2t+1.
pub fn gen_lb_prefix(n: usize) -> Result<MatchingInstance> {
    if n < 2 {
        return Err(Error::Domain("lower-bound prefix needs n >= 2".into()));
    }
    let arrivals = (0..n).map(|t| Arrival::new(vec![(2 * t, 0.5), (2 * t + 1, 0.5)])).collect();
    Ok(MatchingInstance::unit(2 * n, arrivals))
}

/// Random fractional b-matching. Rows are drawn then columns rescaled into capacity.
pub fn gen_random_b(n: usize, t: usize, density: f64, max_b: u32, seed: u64) -> Result<MatchingInstance> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::Domain(format!("density {density} outside (0,1]")));
    }
    if n == 0 {
        return Err(Error::Domain("need at least one offline node".into()));
    }
    let mut rng = rng_from_seed(seed);
    let caps: Vec<u32> = (0..n).map(|_| 1 + (uniform(&mut rng) * max_b.max(1) as f64) as u32 % max_b.max(1)).collect();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(t);
    for _ in 0..t {
        let mut row: Vec<(usize, f64)> = Vec::new();
        for i in 0..n {
            if uniform(&mut rng) < density {
                row.push((i, 0.05 + uniform(&mut rng)));
            }
        }
        let target = 0.3 + 0.7 * uniform(&mut rng);
        let sum: f64 = row.iter().map(|e| e.1).sum();
        if sum > 0.0 {
            for e in &mut row {
                e.1 *= target / sum;
            }
        }
        rows.push(row);
    }
    let mut col = vec![0.0; n];
    for row in &rows {
        for &(i, x) in row {
            col[i] += x;
        }
    }
    let scale: Vec<f64> = (0..n)
        .map(|i| if col[i] > caps[i] as f64 { caps[i] as f64 / col[i] * (1.0 - 1e-12) } else { 1.0 })
        .collect();
    let arrivals = rows
        .into_iter()
        .map(|row| Arrival::new(row.into_iter().map(|(i, x)| (i, (x * scale[i]).min(1.0))).collect()))
        .collect();
    Ok(MatchingInstance::new(caps, arrivals))
}

pub fn gen_random(n: usize, t: usize, density: f64, seed: u64) -> Result<MatchingInstance> {
    gen_random_b(n, t, density, 1, seed)
}

/// Random stochastic-arrival instance: arrival probabilities in [0.2,1], weights in
/// [0.1,1]. Fractions are zero placeholders; the LP supplies x*.
pub fn gen_stochastic(n: usize, t: usize, density: f64, seed: u64) -> Result<MatchingInstance> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::Domain(format!("density {density} outside (0,1]")));
    }
    let mut rng = rng_from_seed(seed);
    let arrivals = (0..t)
        .map(|_| {
            let p = 0.2 + 0.8 * uniform(&mut rng);
            let mut edges = Vec::new();
            for i in 0..n {
                if uniform(&mut rng) < density {
                    edges.push(Edge { i, x: 0.0, w: 0.1 + 0.9 * uniform(&mut rng) });
                }
            }
            Arrival { p, edges }
        })
        .collect();
    Ok(MatchingInstance::unit(n, arrivals))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiEdge {
    pub j: usize,
    pub kappa: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiArrival {
    pub edges: Vec<MultiEdge>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultigraphInstance {
    pub left: usize,
    pub right: usize,
    pub delta: u32,
    pub arrivals: Vec<MultiArrival>,
}

impl MultigraphInstance {
    pub fn left_degrees(&self) -> Vec<u64> {
        self.arrivals.iter().map(|a| a.edges.iter().map(|e| e.kappa as u64).sum()).collect()
    }

    pub fn right_degrees(&self) -> Vec<u64> {
        let mut d = vec![0u64; self.right];
        for a in &self.arrivals {
            for e in &a.edges {
                if e.j < self.right {
                    d[e.j] += e.kappa as u64;
                }
            }
        }
        d
    }

    pub fn max_degree(&self) -> u64 {
        let l = self.left_degrees().into_iter().max().unwrap_or(0);
        let r = self.right_degrees().into_iter().max().unwrap_or(0);
        l.max(r)
    }

    pub fn n_copies(&self) -> u64 {
        self.left_degrees().iter().sum()
    }

    pub fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        if self.arrivals.len() != self.left {
            r.push(
                "structure",
                0,
                self.arrivals.len() as f64,
                format!("{} arrivals but left = {}", self.arrivals.len(), self.left),
            );
        }
        for (t, a) in self.arrivals.iter().enumerate() {
            let mut seen = std::collections::BTreeSet::new();
            for e in &a.edges {
                if e.j >= self.right {
                    r.push("endpoint", t, e.j as f64, format!("arrival {t} edge to unknown right node {}", e.j));
                }
                if !seen.insert(e.j) {
                    r.push("duplicate", t, e.j as f64, format!("arrival {t} lists right node {} twice", e.j));
                }
            }
        }
        for (t, d) in self.left_degrees().into_iter().enumerate() {
            if d > self.delta as u64 {
                r.push("degree", t, d as f64, format!("left node {t} degree {d} > {}", self.delta));
            }
        }
        for (j, d) in self.right_degrees().into_iter().enumerate() {
            if d > self.delta as u64 {
                r.push("degree", j, d as f64, format!("right node {j} degree {d} > {}", self.delta));
            }
        }
        r
    }
}

/// Sum of `k` random perfect matchings on n+n nodes with positive multiplicities
/// adding up to `delta`: a delta-regular bipartite multigraph.
pub fn gen_multigraph(n: usize, delta: u32, k: usize, seed: u64) -> Result<MultigraphInstance> {
    if n == 0 || k == 0 || (delta as usize) < k {
        return Err(Error::Domain(format!("need n >= 1 and 1 <= k <= delta (n={n}, k={k}, delta={delta})")));
    }
    let mut rng = rng_from_seed(seed);
    let mut cuts: Vec<u32> = Vec::new();
    while cuts.len() < k - 1 {
        let c = 1 + (uniform(&mut rng) * (delta - 1) as f64) as u32;
        if c < delta && !cuts.contains(&c) {
            cuts.push(c);
        }
    }
    cuts.sort();
    let mut parts = Vec::with_capacity(k);
    let mut prev = 0;
    for c in cuts.into_iter().chain(std::iter::once(delta)) {
        parts.push(c - prev);
        prev = c;
    }
    let mut adj: Vec<BTreeMap<usize, u32>> = vec![BTreeMap::new(); n];
    for &m in &parts {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = (uniform(&mut rng) * (i + 1) as f64) as usize;
            perm.swap(i, j.min(i));
        }
        for (l, &r) in perm.iter().enumerate() {
            *adj[l].entry(r).or_insert(0) += m;
        }
    }
    let arrivals = adj
        .into_iter()
        .map(|m| MultiArrival { edges: m.into_iter().map(|(j, kappa)| MultiEdge { j, kappa }).collect() })
        .collect();
    Ok(MultigraphInstance { left: n, right: n, delta, arrivals })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub costs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperEdge {
    pub verts: Vec<usize>,
    pub demand: u32,
}

/// Multi-stage cover program; `xstar[v][l]` is vertex v's fractional purchase at stage l.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverInstance {
    pub k: usize,
    pub stages: Vec<Stage>,
    pub edges: Vec<HyperEdge>,
    pub xstar: Vec<Vec<f64>>,
}

impl CoverInstance {
    pub fn n_vertices(&self) -> usize {
        self.xstar.len()
    }

    pub fn coverage(&self, y: &[Vec<f64>], e: &HyperEdge) -> f64 {
        e.verts.iter().map(|&v| y[v].iter().sum::<f64>()).sum()
    }

    pub fn lp_cost(&self) -> f64 {
        let mut c = 0.0;
        for (v, row) in self.xstar.iter().enumerate() {
            for (l, &x) in row.iter().enumerate() {
                c += self.stages[l].costs[v] * x;
            }
        }
        c
    }

    /// Scaling factor max over edges of (|e| + demand − 1)/demand.
    pub fn alpha(&self) -> f64 {
        self.edges
            .iter()
            .filter(|e| e.demand > 0)
            .map(|e| (e.verts.len() as f64 + e.demand as f64 - 1.0) / e.demand as f64)
            .fold(1.0, f64::max)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        let n = self.n_vertices();
        if self.stages.len() != self.k {
            r.push("structure", 0, self.stages.len() as f64, format!("{} stages but k = {}", self.stages.len(), self.k));
        }
        for (l, s) in self.stages.iter().enumerate() {
            if s.costs.len() != n {
                r.push("structure", l, s.costs.len() as f64, format!("stage {l} has {} costs for {n} vertices", s.costs.len()));
            }
        }
        for (v, row) in self.xstar.iter().enumerate() {
            if row.len() != self.k {
                r.push("structure", v, row.len() as f64, format!("vertex {v} has {} stage values, expected {}", row.len(), self.k));
            }
            for &x in row {
                if !(x >= 0.0) {
                    r.push("negative", v, x, format!("vertex {v} has negative value {x}"));
                }
            }
        }
        if !r.is_valid() {
            return r;
        }
        for (idx, e) in self.edges.iter().enumerate() {
            if e.verts.iter().any(|&v| v >= n) {
                r.push("endpoint", idx, 0.0, format!("edge {idx} references unknown vertex"));
                continue;
            }
            let cov = self.coverage(&self.xstar, e);
            if cov < e.demand as f64 - TOL {
                r.push("coverage", idx, cov, format!("edge {idx} covered {cov} < demand {}", e.demand));
            }
        }
        r
    }
}

/// Random multi-stage cover with `m` hyperedges of size d and demand t over n vertices.
pub fn gen_cover(n: usize, m: usize, d: usize, t: u32, k: usize, seed: u64) -> Result<CoverInstance> {
    if d == 0 || d > n || k == 0 || t == 0 {
        return Err(Error::Domain(format!("bad cover shape n={n} d={d} t={t} k={k}")));
    }
    let mut rng = rng_from_seed(seed);
    let stages = (0..k)
        .map(|l| Stage { costs: (0..n).map(|_| (1.0 + l as f64) * (1.0 + 2.0 * uniform(&mut rng))).collect() })
        .collect();
    let mut edges = Vec::with_capacity(m);
    for _ in 0..m {
        let mut verts: Vec<usize> = Vec::with_capacity(d);
        while verts.len() < d {
            let v = (uniform(&mut rng) * n as f64) as usize;
            if !verts.contains(&v) {
                verts.push(v);
            }
        }
        verts.sort();
        edges.push(HyperEdge { verts, demand: t });
    }
    let mut xstar: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| 0.4 * uniform(&mut rng)).collect()).collect();
    for e in &edges {
        let cov: f64 = e.verts.iter().map(|&v| xstar[v].iter().sum::<f64>()).sum();
        let deficit = t as f64 - cov;
        if deficit > 0.0 {
            for &v in &e.verts {
                let l = (uniform(&mut rng) * k as f64) as usize;
                xstar[v][l.min(k - 1)] += deficit / d as f64 + 1e-9;
            }
        }
    }
    Ok(CoverInstance { k, stages, edges, xstar })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn over_capacity_flagged() {
        let inst = MatchingInstance::unit(1, vec![Arrival::new(vec![(0, 0.6)]), Arrival::new(vec![(0, 0.6)])]);
        let r = inst.validate();
        assert_eq!(r.violations.len(), 1);
        assert!(r.violations[0].message.contains("offline node 0 degree 1.2"));
    }

    #[test]
    fn duplicate_endpoint_flagged() {
        let inst = MatchingInstance::unit(2, vec![Arrival::new(vec![(0, 0.2), (0, 0.2)])]);
        assert!(inst.validate().violations.iter().any(|v| v.kind == "duplicate"));
    }

    #[test]
    fn generators_shapes() {
        let s = gen_uniform_star(4).unwrap();
        assert_eq!(s.arrivals[0].fraction_sum(), 1.0);
        assert!(gen_uniform_star(0).is_err());
        let s1 = gen_uniform_star(1).unwrap();
        assert_eq!(s1.arrivals[0].edges[0].x, 1.0);
        let lb = gen_lb_prefix(2).unwrap();
        assert_eq!(lb.n_offline, 4);
        assert_eq!(lb.arrivals[1].edges[0].i, 2);
        assert_eq!(lb.arrivals[1].edges[1].i, 3);
        let lb3 = gen_lb_prefix(3).unwrap();
        assert_eq!((lb3.n_offline, lb3.n_arrivals()), (6, 3));
        assert!(lb3.arrivals.iter().flat_map(|a| &a.edges).all(|e| e.x == 0.5));
    }

    #[test]
    fn random_seven_validates() {
        let inst = gen_random(5, 5, 1.0, 7).unwrap();
        assert!(inst.validate().is_valid());
        assert_eq!(inst.to_json(), gen_random(5, 5, 1.0, 7).unwrap().to_json());
    }

    #[test]
    fn split_online_capacity() {
        let json = r#"{"n_offline":2,"capacities":[1,1],"arrivals":[{"b":2,"edges":[{"i":0,"x":1.0},{"i":1,"x":1.0}]}]}"#;
        let inst = MatchingInstance::from_json(json).unwrap();
        assert_eq!(inst.n_arrivals(), 2);
        assert_eq!(inst.arrivals[0].edges[0].x, 0.5);
        assert!(inst.validate().is_valid());
    }

    #[test]
    fn multigraph_regular() {
        let mg = gen_multigraph(10, 64, 5, 3).unwrap();
        assert!(mg.validate().is_valid());
        assert!(mg.left_degrees().iter().all(|&d| d == 64));
        assert!(mg.right_degrees().iter().all(|&d| d == 64));
    }

    #[test]
    fn cover_feasible() {
        let c = gen_cover(20, 30, 3, 2, 3, 1).unwrap();
        assert!(c.validate().is_valid());
        assert_eq!(c.alpha(), 2.0);
    }

    proptest! {
        #[test]
        fn roundtrip(n in 1usize..8, t in 0usize..8, density in 0.1f64..1.0, b in 1u32..4, seed in any::<u64>()) {
            let inst = gen_random_b(n, t, density, b, seed).unwrap();
            prop_assert!(inst.validate().is_valid());
            let back = MatchingInstance::from_json(&inst.to_json()).unwrap();
            prop_assert_eq!(back, inst);
        }

        #[test]
        fn stochastic_validates(n in 1usize..8, t in 0usize..8, seed in any::<u64>()) {
            prop_assert!(gen_stochastic(n, t, 0.6, seed).unwrap().validate().is_valid());
        }
    }
}
