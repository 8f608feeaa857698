//! Exact analysis on small instances: bidder-set laws, edge match probabilities,
//! bid-count laws, negative-cylinder scans, and the correlation facts behind the
//! lower bound.

use crate::crs::SupportDistribution;
use crate::error::{breach, Error, Result};
use crate::instance::MatchingInstance;
use crate::level_set::BitDistribution;
use crate::odrs::{build_plan, Algorithm, OnlineRounder};
use crate::rng::{uniform, OdrsRng};
use crate::scaling::ScalingParams;
use serde::{Deserialize, Serialize};

pub const MAX_CYLINDER_N: usize = 12;

fn plan_prefix(inst: &MatchingInstance, algorithm: Algorithm, params: &ScalingParams, upto: usize) -> Result<OnlineRounder> {
    let mut r = OnlineRounder::new(algorithm, params, &inst.capacities)?;
    for a in &inst.arrivals[..upto.min(inst.n_arrivals())] {
        r.push_arrival(a)?;
    }
    Ok(r)
}

/// Exact law of the bidder set at arrival t.
pub fn bid_set_law(inst: &MatchingInstance, algorithm: Algorithm, params: &ScalingParams, t: usize) -> Result<SupportDistribution> {
    if t >= inst.n_arrivals() {
        return Err(Error::Domain(format!("arrival {t} out of range")));
    }
    let r = plan_prefix(inst, algorithm, params, t + 1)?;
    Ok(r.steps()[t].law.clone())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeProb {
    pub arrival: usize,
    pub offline: usize,
    pub x: f64,
    pub prob: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeProbTable {
    pub edges: Vec<EdgeProb>,
    pub min_ratio: f64,
}

pub fn table_from_probs(inst: &MatchingInstance, probs: &[Vec<f64>]) -> EdgeProbTable {
    let mut edges = Vec::new();
    let mut min_ratio = f64::INFINITY;
    for (t, (a, row)) in inst.arrivals.iter().zip(probs).enumerate() {
        for (e, &p) in a.edges.iter().zip(row) {
            if e.x <= 0.0 {
                continue;
            }
            let ratio = p / e.x;
            min_ratio = min_ratio.min(ratio);
            edges.push(EdgeProb { arrival: t, offline: e.i, x: e.x, prob: p, ratio });
        }
    }
    if edges.is_empty() {
        min_ratio = 1.0;
    }
    EdgeProbTable { edges, min_ratio }
}

pub fn edge_match_probs(inst: &MatchingInstance, algorithm: Algorithm, params: &ScalingParams) -> Result<EdgeProbTable> {
    let r = build_plan(inst, algorithm, params)?;
    Ok(table_from_probs(inst, &r.exact_edge_probs(inst)))
}

pub fn rounding_ratio_exact(inst: &MatchingInstance, algorithm: Algorithm, params: &ScalingParams) -> Result<f64> {
    Ok(edge_match_probs(inst, algorithm, params)?.min_ratio)
}

/// ŝ of node `i` after the first `upto` arrivals.
pub fn scaled_prefix(inst: &MatchingInstance, algorithm: Algorithm, params: &ScalingParams, i: usize, upto: usize) -> f64 {
    let s: f64 = inst.arrivals[..upto].iter().flat_map(|a| &a.edges).filter(|e| e.i == i).map(|e| e.x).sum();
    let p = match algorithm {
        Algorithm::Warmup => ScalingParams::identity(params.variant),
        _ => *params,
    };
    crate::scalar::Scalar::snap(&p.hat_cumulative(s))
}

/// Joint law of the indicators [S_i = ⌈ŝ_i⌉] (one bid ahead of ⌊ŝ_i⌋) after the
/// first `upto` arrivals, for the listed nodes.
pub fn bid_count_law(inst: &MatchingInstance, algorithm: Algorithm, params: &ScalingParams, nodes: &[usize], upto: usize) -> Result<BitDistribution<f64>> {
    let r = plan_prefix(inst, algorithm, params, upto)?;
    let lag = r.lag_law(nodes, upto)?;
    let full = (1u64 << nodes.len()) - 1;
    let mut d = BitDistribution::new(nodes.len());
    for (m, &p) in lag.iter().enumerate() {
        if p > 0.0 {
            d.add(full & !(m as u64), p);
        }
    }
    Ok(d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegCylinderReport {
    /// max over I of Pr[all ones on I] − ∏ Pr[X_i = 1]
    pub max_ones_violation: f64,
    pub ones_set: u64,
    /// max over I of Pr[all zeros on I] − ∏ Pr[X_i = 0]
    pub max_zeros_violation: f64,
    pub zeros_set: u64,
}

pub fn neg_cylinder_check(dist: &BitDistribution<f64>) -> Result<NegCylinderReport> {
    let n = dist.n;
    if n > MAX_CYLINDER_N {
        return Err(Error::TooLarge { what: "negative-cylinder scan", got: n, limit: MAX_CYLINDER_N });
    }
    let marg = dist.marginals();
    let mut rep = NegCylinderReport { max_ones_violation: f64::NEG_INFINITY, ones_set: 0, max_zeros_violation: f64::NEG_INFINITY, zeros_set: 0 };
    let size = 1usize << n;
    let mut ones = vec![0.0; size];
    let mut zeros = vec![0.0; size];
    for (&m, &p) in &dist.probs {
        ones[m as usize] += p;
        zeros[(size - 1) & !(m as usize)] += p;
    }
    // superset sums: ones[I] = Pr[X ⊇ I]
    for b in 0..n {
        for s in 0..size {
            if s >> b & 1 == 0 {
                ones[s] += ones[s | 1 << b];
                zeros[s] += zeros[s | 1 << b];
            }
        }
    }
    for s in 1..size {
        if (s as u32).count_ones() < 2 {
            continue;
        }
        let (mut p1, mut p0) = (1.0, 1.0);
        for (i, &mi) in marg.iter().enumerate() {
            if s >> i & 1 == 1 {
                p1 *= mi;
                p0 *= 1.0 - mi;
            }
        }
        let v1 = ones[s] - p1;
        let v0 = zeros[s] - p0;
        if v1 > rep.max_ones_violation {
            rep.max_ones_violation = v1;
            rep.ones_set = s as u64;
        }
        if v0 > rep.max_zeros_violation {
            rep.max_zeros_violation = v0;
            rep.zeros_set = s as u64;
        }
    }
    if n < 2 {
        rep.max_ones_violation = 0.0;
        rep.max_zeros_violation = 0.0;
    }
    Ok(rep)
}

pub fn max_pairwise_cov_dist(dist: &BitDistribution<f64>) -> Option<(usize, usize, f64)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..dist.n {
        for j in i + 1..dist.n {
            let c = dist.covariance(i, j);
            if best.map_or(true, |b| c > b.2) {
                best = Some((i, j, c));
            }
        }
    }
    best
}

/// Sparse joint law of up to 128 Bernoulli variables.
#[derive(Clone, Debug, PartialEq)]
pub struct JointBernoulli {
    pub n: usize,
    pub atoms: Vec<(u128, f64)>,
    pub common_p: Option<f64>,
}

impl JointBernoulli {
    pub fn new(n: usize, atoms: Vec<(u128, f64)>, common_p: Option<f64>) -> Result<Self> {
        if n > 128 {
            return Err(Error::TooLarge { what: "joint Bernoulli variables", got: n, limit: 128 });
        }
        let j = Self { n, atoms, common_p };
        let total: f64 = j.atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("joint probabilities sum to {total}")));
        }
        if let Some(p) = common_p {
            for (i, m) in j.marginals().into_iter().enumerate() {
                if (m - p).abs() > 1e-12 {
                    return Err(Error::Validation(format!("variable {i} has marginal {m}, declared {p}")));
                }
            }
        }
        Ok(j)
    }

    pub fn from_bits(d: &BitDistribution<f64>, common_p: Option<f64>) -> Result<Self> {
        Self::new(d.n, d.probs.iter().map(|(&m, &p)| (m as u128, p)).collect(), common_p)
    }

    pub fn marginals(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n];
        for &(mask, p) in &self.atoms {
            for (i, mi) in m.iter_mut().enumerate() {
                if mask >> i & 1 == 1 {
                    *mi += p;
                }
            }
        }
        m
    }

    pub fn prob_all_ones(&self, set: u128) -> f64 {
        self.atoms.iter().filter(|(m, _)| m & set == set).map(|a| a.1).sum()
    }

    /// Cyclically symmetrized mixture of random base sets, so every variable has the
    /// same marginal. Base sets mix random densities with singletons.
    pub fn random_common(n: usize, bases: usize, rng: &mut OdrsRng) -> Result<Self> {
        let mut raw: Vec<(u128, f64)> = Vec::new();
        let mut weights = Vec::new();
        for k in 0..bases {
            let mut base = 0u128;
            if k % 3 == 2 {
                base = 1;
            } else {
                let rho = 0.05 + 0.9 * uniform(rng);
                for i in 0..n {
                    if uniform(rng) < rho {
                        base |= 1 << i;
                    }
                }
            }
            weights.push(0.05 + uniform(rng));
            raw.push((base, 0.0));
        }
        let wsum: f64 = weights.iter().sum();
        let mut atoms = Vec::with_capacity(bases * n);
        let full: u128 = if n == 128 { u128::MAX } else { (1u128 << n) - 1 };
        for ((base, _), w) in raw.into_iter().zip(weights) {
            for r in 0..n {
                let rot = if r == 0 { base } else { ((base << r) | (base >> (n - r))) & full };
                atoms.push((rot, w / wsum / n as f64));
            }
        }
        let mut j = Self { n, atoms, common_p: None };
        j.common_p = Some(j.marginals().iter().sum::<f64>() / n as f64);
        Ok(j)
    }
}

/// Pair of variables with the largest covariance; checks the −2p/(n−1) floor when
/// a common marginal is declared.
pub fn max_pairwise_cov(joint: &JointBernoulli) -> Result<(usize, usize, f64)> {
    let n = joint.n;
    if n < 2 {
        return Err(Error::Domain("need at least two variables".into()));
    }
    let marg = joint.marginals();
    let e = pair_products(joint, &(0..n).map(|i| 1u128 << i).collect::<Vec<_>>());
    let mut best = (0, 1, f64::NEG_INFINITY);
    for i in 0..n {
        for j in i + 1..n {
            let c = e[i * n + j] - marg[i] * marg[j];
            if c > best.2 {
                best = (i, j, c);
            }
        }
    }
    if let Some(p) = joint.common_p {
        let floor = -2.0 * p / (n as f64 - 1.0);
        if best.2 < floor - 1e-12 {
            breach!("max covariance {} below the floor {floor}", best.2);
        }
    }
    Ok(best)
}

/// E[∏ over groups a ∪ b] for all pairs, row-major.
fn pair_products(joint: &JointBernoulli, groups: &[u128]) -> Vec<f64> {
    let g = groups.len();
    let mut e = vec![0.0; g * g];
    let mut inside = Vec::with_capacity(g);
    for &(m, p) in &joint.atoms {
        inside.clear();
        inside.extend((0..g).filter(|&k| m & groups[k] == groups[k]));
        for (a, &ga) in inside.iter().enumerate() {
            for &gb in &inside[a + 1..] {
                e[ga * g + gb] += p;
            }
        }
    }
    e
}

/// Variables needed for the recursive pairing to certify a 2^r-cylinder within eps.
pub fn cylinder_bound_n(r: u32, p: f64, eps: f64) -> usize {
    let k = 1usize << r;
    if p <= 0.0 || p.powi(k as i32) <= eps {
        return k;
    }
    if r == 1 {
        return (2.0 * p / eps + 1.0).ceil() as usize;
    }
    let inner = eps / (k as f64).exp2();
    cylinder_bound_n(1, p, inner) + 2 * cylinder_bound_n(r - 1, p * p - inner, eps / 2.0)
}

fn pair_up(joint: &JointBernoulli, groups: &[u128], r: u32, q: f64, eps: f64) -> Result<u128> {
    let k = 1usize << r;
    if groups.len() < k {
        return Err(Error::Precondition(format!("{} groups left, need {k}", groups.len())));
    }
    if q <= 0.0 || q.powi(k as i32) <= eps {
        return Ok(groups[..k].iter().fold(0, |a, g| a | g));
    }
    let g = groups.len();
    let e = pair_products(joint, groups);
    let best_pair = |used: &[bool]| {
        let mut best: Option<(usize, usize, f64)> = None;
        for a in 0..g {
            if used[a] {
                continue;
            }
            for b in a + 1..g {
                if !used[b] && best.map_or(true, |x| e[a * g + b] > x.2) {
                    best = Some((a, b, e[a * g + b]));
                }
            }
        }
        best
    };
    let mut used = vec![false; g];
    if r == 1 {
        let (a, b, _) = best_pair(&used).expect("two groups");
        return Ok(groups[a] | groups[b]);
    }
    let inner = eps / (k as f64).exp2();
    let q_next = q * q - inner;
    let needed = cylinder_bound_n(r - 1, q_next, eps / 2.0);
    let mut next = Vec::with_capacity(needed);
    while next.len() < needed {
        let (a, b, _) = best_pair(&used)
            .ok_or_else(|| Error::Precondition(format!("ran out of pairs after {}, need {needed}", next.len())))?;
        used[a] = true;
        used[b] = true;
        next.push(groups[a] | groups[b]);
    }
    pair_up(joint, &next, r - 1, q_next, eps / 2.0)
}

/// Subset of size 2^r with E[∏ Y_i] ≥ p^{2^r} − eps, by recursive pairing.
pub fn find_positive_cylinder(joint: &JointBernoulli, r: u32, eps: f64) -> Result<Vec<usize>> {
    if r == 0 {
        return Err(Error::Domain("r must be at least 1".into()));
    }
    let marg = joint.marginals();
    let p = joint.common_p.unwrap_or_else(|| marg.iter().cloned().fold(f64::INFINITY, f64::min));
    let need = cylinder_bound_n(r, p, eps);
    if joint.n < need {
        return Err(Error::Precondition(format!("n = {} below the required {need}", joint.n)));
    }
    let groups: Vec<u128> = (0..joint.n).map(|i| 1u128 << i).collect();
    let set = pair_up(joint, &groups, r, p, eps)?;
    let idx: Vec<usize> = (0..joint.n).filter(|&i| set >> i & 1 == 1).collect();
    if idx.len() != 1 << r {
        breach!("cylinder has {} variables, expected {}", idx.len(), 1 << r);
    }
    let e = joint.prob_all_ones(set);
    let target = p.powi(1 << r) - eps;
    if e < target - 1e-12 {
        breach!("cylinder expectation {e} below {target}");
    }
    Ok(idx)
}
