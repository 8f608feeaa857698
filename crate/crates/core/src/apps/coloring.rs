//! Online edge coloring of bipartite multigraphs from fair matchings.

use crate::error::{breach, Error, Result};
use crate::instance::{Arrival, Edge, MatchingInstance, MultigraphInstance, ValidationReport};
use crate::odrs::{build_plan, Algorithm, BidderState, OnlineRounder};
use crate::rng::{rng_from_seed, uniform, OdrsRng};
use crate::scaling::{ratio_bound, ScalingParams};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Per-round degree slack in the residual bound Δ − r·C·(1 − slack).
pub const ROUND_SLACK: f64 = 0.1;

/// Guaranteed rounding ratio of the chosen rounder.
pub fn guaranteed_ratio(algorithm: Algorithm, params: &ScalingParams) -> Result<f64> {
    match algorithm {
        Algorithm::Warmup => Ok(1.0 - (-1.0f64).exp()),
        _ => ratio_bound(params),
    }
}

pub fn default_c(n_nodes: usize) -> u32 {
    let l = (n_nodes.max(2) as f64).log2();
    ((l * l).ceil() as u32).max(8)
}

fn check_degrees(mg: &MultigraphInstance) -> Result<()> {
    mg.validate().into_result()
}

/// The multigraph as a fractional matching with x = κ/Δ; offline side = right nodes.
pub fn fractional_view(mg: &MultigraphInstance) -> MatchingInstance {
    let d = mg.delta as f64;
    let arrivals = mg
        .arrivals
        .iter()
        .map(|a| Arrival { p: 1.0, edges: a.edges.iter().map(|e| Edge { i: e.j, x: e.kappa as f64 / d, w: 1.0 }).collect() })
        .collect();
    MatchingInstance::unit(mg.right, arrivals)
}

/// α-fair matching sampler: the rounder applied to κ/Δ with a uniform copy choice.
pub struct FairMatcher {
    pub alpha: f64,
    rounder: OnlineRounder,
    view: MatchingInstance,
    kappa: Vec<Vec<u32>>,
}

/// Matched parallel copy: (left node, edge index within its arrival, copy).
pub type CopyId = (usize, usize, u32);

pub fn fair_matcher(mg: &MultigraphInstance, algorithm: Algorithm, params: &ScalingParams) -> Result<FairMatcher> {
    check_degrees(mg)?;
    let view = fractional_view(mg);
    let rounder = build_plan(&view, algorithm, params)?;
    let kappa = mg.arrivals.iter().map(|a| a.edges.iter().map(|e| e.kappa).collect()).collect();
    Ok(FairMatcher { alpha: 1.0 / guaranteed_ratio(algorithm, params)?, rounder, view, kappa })
}

impl FairMatcher {
    pub fn sample(&self, rng: &mut OdrsRng) -> Result<Vec<CopyId>> {
        let m = self.rounder.sample(rng)?;
        let mut out = Vec::with_capacity(m.pairs.len());
        for p in m.pairs {
            let k = self.view.arrivals[p.arrival].edges.iter().position(|e| e.i == p.offline).expect("matched edge exists");
            let copies = self.kappa[p.arrival][k];
            let c = ((uniform(rng) * copies as f64) as u32).min(copies - 1);
            out.push((p.arrival, k, c));
        }
        Ok(out)
    }

    /// Exact probability of each parallel copy, aligned with the multigraph edges.
    pub fn exact_copy_probs(&self) -> Vec<Vec<f64>> {
        self.rounder
            .exact_edge_probs(&self.view)
            .into_iter()
            .zip(&self.kappa)
            .map(|(row, ks)| row.into_iter().zip(ks).map(|(p, &k)| p / k as f64).collect())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeColoring {
    /// colors[t][k][c] is the color of copy c of edge k of left node t
    pub colors: Vec<Vec<Vec<u32>>>,
    pub palette: usize,
    pub matcher_colors: usize,
    pub rounds: u32,
    pub per_round: usize,
}

impl EdgeColoring {
    pub fn to_csv(&self, mg: &MultigraphInstance) -> String {
        let mut s = String::from("edge,copy,color\n");
        for (t, (a, row)) in mg.arrivals.iter().zip(&self.colors).enumerate() {
            for (e, cs) in a.edges.iter().zip(row) {
                for (c, col) in cs.iter().enumerate() {
                    s.push_str(&format!("{t}-{},{c},{col}\n", e.j));
                }
            }
        }
        s
    }
}

struct Matcher {
    rounder: OnlineRounder,
    state: BidderState,
    colsum: Vec<f64>,
    bound: f64,
    color: u32,
}

fn first_free(a: &BTreeSet<u32>, b: &BTreeSet<u32>) -> u32 {
    (0..).find(|c| !a.contains(c) && !b.contains(c)).expect("unbounded palette")
}

/// Δ/C rounds of ⌈αC⌉ fair matchers on the uncolored residual, then greedy first-free.
/// A matcher color taken by greedy at a right node is withdrawn from that matcher there.
pub fn edge_color_online(mg: &MultigraphInstance, c: u32, algorithm: Algorithm, params: &ScalingParams, seed: u64) -> Result<EdgeColoring> {
    check_degrees(mg)?;
    if c == 0 {
        return Err(Error::Domain("C must be positive".into()));
    }
    let alpha = 1.0 / guaranteed_ratio(algorithm, params)?;
    let rounds = mg.delta / c;
    let per_round = (alpha * c as f64 - 1e-9).ceil() as usize;
    let mut matchers = Vec::with_capacity(rounds as usize * per_round);
    for r in 0..rounds {
        let bound = mg.delta as f64 - r as f64 * c as f64 * (1.0 - ROUND_SLACK);
        for m in 0..per_round {
            matchers.push(Matcher {
                rounder: OnlineRounder::new(algorithm, params, &vec![1; mg.right])?,
                state: BidderState::new(mg.right),
                colsum: vec![0.0; mg.right],
                bound,
                color: (r as usize * per_round + m) as u32,
            });
        }
    }
    let mut rng = rng_from_seed(seed);
    let mut right_used: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); mg.right];
    let mut colors = Vec::with_capacity(mg.left);
    for (t, a) in mg.arrivals.iter().enumerate() {
        let mut left_used = BTreeSet::new();
        let mut row: Vec<Vec<u32>> = a.edges.iter().map(|_| Vec::new()).collect();
        let mut residual: Vec<u32> = a.edges.iter().map(|e| e.kappa).collect();
        for m in &mut matchers {
            let mut edges: Vec<Edge> = Vec::new();
            let mut idx = Vec::new();
            for (k, e) in a.edges.iter().enumerate() {
                if residual[k] > 0 {
                    edges.push(Edge { i: e.j, x: residual[k] as f64 / m.bound, w: 1.0 });
                    idx.push(k);
                }
            }
            let row_sum: f64 = edges.iter().map(|e| e.x).sum();
            if row_sum > 1.0 {
                edges.iter_mut().for_each(|e| e.x /= row_sum);
            }
            for e in &mut edges {
                e.x = if m.colsum[e.i].is_finite() { e.x.min(1.0 - m.colsum[e.i]).max(0.0) } else { 0.0 };
                if e.x < 1e-12 {
                    e.x = 0.0;
                }
                m.colsum[e.i] += e.x;
            }
            m.rounder.push_arrival(&Arrival { p: 1.0, edges: edges.clone() })?;
            if let Some(j) = m.rounder.sample_step(t, &mut m.state, &mut rng)? {
                let pos = edges.iter().position(|e| e.i == j).expect("matched edge offered");
                let k = idx[pos];
                if left_used.contains(&m.color) || right_used[j].contains(&m.color) {
                    breach!("matcher color {} reused at left {t} or right {j}", m.color);
                }
                row[k].push(m.color);
                residual[k] -= 1;
                left_used.insert(m.color);
                right_used[j].insert(m.color);
            }
        }
        for (k, e) in a.edges.iter().enumerate() {
            while residual[k] > 0 {
                let col = first_free(&left_used, &right_used[e.j]);
                if let Some(m) = matchers.get_mut(col as usize) {
                    // matcher `col` must never offer this right node again
                    m.colsum[e.j] = f64::INFINITY;
                }
                row[k].push(col);
                residual[k] -= 1;
                left_used.insert(col);
                right_used[e.j].insert(col);
            }
        }
        colors.push(row);
    }
    let palette = colors.iter().flatten().flatten().collect::<BTreeSet<_>>().len();
    let out = EdgeColoring { colors, palette, matcher_colors: matchers.len(), rounds, per_round };
    let rep = verify_coloring(mg, &out);
    if !rep.valid {
        breach!("coloring is not proper: {}", rep.violations[0].message);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColoringReport {
    pub valid: bool,
    pub violations: Vec<crate::instance::Violation>,
    pub colors_used: usize,
    pub delta: u32,
    pub colors_per_delta: f64,
}

pub fn verify_coloring(mg: &MultigraphInstance, coloring: &EdgeColoring) -> ColoringReport {
    let mut rep = ValidationReport::default();
    let mut right_used: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); mg.right];
    let mut used = BTreeSet::new();
    for (t, a) in mg.arrivals.iter().enumerate() {
        let mut left_used = BTreeSet::new();
        for (k, e) in a.edges.iter().enumerate() {
            let cs = coloring.colors.get(t).and_then(|r| r.get(k)).map(|v| v.as_slice()).unwrap_or(&[]);
            if cs.len() < e.kappa as usize {
                rep.push("uncolored", t, (e.kappa as usize - cs.len()) as f64, format!("edge {t}-{} has {} uncolored copies", e.j, e.kappa as usize - cs.len()));
            }
            for &c in cs {
                used.insert(c);
                if !left_used.insert(c) {
                    rep.push("conflict", t, c as f64, format!("color {c} repeated at left node {t}"));
                }
                if e.j < mg.right && !right_used[e.j].insert(c) {
                    rep.push("conflict", e.j, c as f64, format!("color {c} repeated at right node {}", e.j));
                }
            }
        }
    }
    let delta = mg.delta;
    ColoringReport {
        valid: rep.is_valid(),
        violations: rep.violations,
        colors_used: used.len(),
        delta,
        colors_per_delta: if delta > 0 { used.len() as f64 / delta as f64 } else { 0.0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{MultiArrival, MultiEdge};
    use crate::scaling::Variant;

    fn opt() -> ScalingParams {
        crate::scaling::optimize_params(Variant::Matching).params()
    }

    fn mg(delta: u32, arrivals: Vec<Vec<(usize, u32)>>, right: usize) -> MultigraphInstance {
        MultigraphInstance {
            left: arrivals.len(),
            right,
            delta,
            arrivals: arrivals.into_iter().map(|es| MultiArrival { edges: es.into_iter().map(|(j, kappa)| MultiEdge { j, kappa }).collect() }).collect(),
        }
    }

    #[test]
    fn full_multiplicity_pair() {
        let g = mg(4, vec![vec![(0, 4)]], 1);
        let f = fair_matcher(&g, Algorithm::Odrs, &opt()).unwrap();
        let p = f.exact_copy_probs();
        assert!((p[0][0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn matching_one_color() {
        let g = mg(1, vec![vec![(0, 1)], vec![(1, 1)]], 2);
        let col = edge_color_online(&g, 8, Algorithm::Odrs, &opt(), 1).unwrap();
        assert_eq!(col.palette, 1);
    }

    #[test]
    fn verify_names_violations() {
        let g = mg(2, vec![vec![(0, 2)]], 1);
        let bad = EdgeColoring { colors: vec![vec![vec![0, 0]]], palette: 1, matcher_colors: 0, rounds: 0, per_round: 0 };
        let rep = verify_coloring(&g, &bad);
        assert!(!rep.valid && rep.violations.iter().any(|v| v.kind == "conflict"));
        let short = EdgeColoring { colors: vec![vec![vec![0]]], palette: 1, matcher_colors: 0, rounds: 0, per_round: 0 };
        assert!(verify_coloring(&g, &short).violations.iter().any(|v| v.kind == "uncolored"));
        let good = EdgeColoring { colors: vec![vec![vec![0, 1]]], palette: 2, matcher_colors: 0, rounds: 0, per_round: 0 };
        assert!(verify_coloring(&g, &good).valid);
    }

    #[test]
    fn greedy_only_bound() {
        let g = crate::instance::gen_multigraph(10, 6, 3, 4).unwrap();
        let col = edge_color_online(&g, 8, Algorithm::Odrs, &opt(), 2).unwrap();
        assert!(col.palette <= 2 * 6 - 1);
    }

    #[test]
    fn small_exact_fairness() {
        let g = crate::instance::gen_multigraph(4, 8, 3, 9).unwrap();
        let f = fair_matcher(&g, Algorithm::Odrs, &opt()).unwrap();
        for row in f.exact_copy_probs() {
            for p in row {
                assert!(p >= 1.0 / (f.alpha * 8.0) - 1e-9, "{p}");
            }
        }
    }
}
