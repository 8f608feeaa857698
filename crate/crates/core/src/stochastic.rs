//! Stochastic arrivals: the online LP, its rounding by grouped bids with greedy
//! max-weight acceptance, and exact checks on small instances.

use crate::binpack::first_fit;
use crate::error::{breach, Error, Result};
use crate::instance::MatchingInstance;
use crate::lp::LinearProgram;
use crate::odrs::{MatchPair, Matching};
use crate::rng::{pool, replica_rng, uniform, OdrsRng};
use crate::scalar::Scalar;
use crate::scaling::{ratio_formula, scale_hat, ScalingParams, Variant};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const MAX_STOCHASTIC_EXACT_N: usize = 12;
pub const LP_FEAS_TOL: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct StochasticLp {
    pub lp: LinearProgram<f64>,
    /// (arrival, edge index, offline node) per variable
    pub vars: Vec<(usize, usize, usize)>,
    pub shape: Vec<usize>,
}

pub fn build_lp(inst: &MatchingInstance) -> Result<StochasticLp> {
    let mut vars = Vec::new();
    let mut index = vec![Vec::new(); inst.n_arrivals()];
    for (t, a) in inst.arrivals.iter().enumerate() {
        if !(a.p > 0.0 && a.p <= 1.0) {
            return Err(Error::Validation(format!("arrival {t} has p = {} outside (0,1]", a.p)));
        }
        for (k, e) in a.edges.iter().enumerate() {
            if e.i >= inst.n_offline {
                return Err(Error::Validation(format!("arrival {t} references node {}", e.i)));
            }
            index[t].push(vars.len());
            vars.push((t, k, e.i));
        }
    }
    let mut lp = LinearProgram::new(vars.len());
    for (v, &(t, k, _)) in vars.iter().enumerate() {
        lp.objective[v] = inst.arrivals[t].edges[k].w;
    }
    let mut by_node = vec![Vec::new(); inst.n_offline];
    for (v, &(_, _, i)) in vars.iter().enumerate() {
        by_node[i].push(v);
    }
    for vs in &by_node {
        lp.add_row(vs.iter().map(|&v| (v, 1.0)).collect(), 1.0);
    }
    for (t, a) in inst.arrivals.iter().enumerate() {
        lp.add_row(index[t].iter().map(|&v| (v, 1.0)).collect(), a.p);
    }
    for (v, &(t, _, i)) in vars.iter().enumerate() {
        let p = inst.arrivals[t].p;
        let mut row = vec![(v, 1.0)];
        row.extend(by_node[i].iter().filter(|&&u| vars[u].0 < t).map(|&u| (u, p)));
        lp.add_row(row, p);
    }
    let shape = inst.arrivals.iter().map(|a| a.edges.len()).collect();
    Ok(StochasticLp { lp, vars, shape })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub value: f64,
    /// x* aligned with the instance edges
    pub x: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct LpEntry {
    i: usize,
    t: usize,
    v: f64,
}

#[derive(Serialize, Deserialize)]
struct LpExport {
    value: f64,
    x: Vec<LpEntry>,
}

impl LpSolution {
    pub fn to_json(&self, inst: &MatchingInstance) -> String {
        let mut x = Vec::new();
        for (t, (a, row)) in inst.arrivals.iter().zip(&self.x).enumerate() {
            for (e, &v) in a.edges.iter().zip(row) {
                x.push(LpEntry { i: e.i, t, v });
            }
        }
        serde_json::to_string_pretty(&LpExport { value: self.value, x }).expect("serializable")
    }

    /// Copy of the instance with x* written into the edge fractions.
    pub fn apply(&self, inst: &MatchingInstance) -> MatchingInstance {
        let mut out = inst.clone();
        for (a, row) in out.arrivals.iter_mut().zip(&self.x) {
            for (e, &v) in a.edges.iter_mut().zip(row) {
                e.x = v;
            }
        }
        out
    }
}

pub fn solve_lp(slp: &StochasticLp) -> Result<LpSolution> {
    let opt = slp.lp.solve()?;
    let viol = slp.lp.max_violation(&opt.x);
    if viol > LP_FEAS_TOL {
        breach!("LP solution violates a row by {viol}");
    }
    let mut x: Vec<Vec<f64>> = slp.shape.iter().map(|&k| vec![0.0; k]).collect();
    for (v, &(t, k, _)) in slp.vars.iter().enumerate() {
        x[t][k] = opt.x[v];
    }
    Ok(LpSolution { value: opt.value, x })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub node: usize,
    /// conditional bid probability x̂/(p(1−ŝ))
    pub size: f64,
    pub xhat: f64,
    pub w: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StochasticStep {
    pub p: f64,
    pub cands: Vec<Candidate>,
    /// bins as index lists into `cands`, low bins first
    pub bins: Vec<Vec<usize>>,
    /// ŝ per offline node before this step
    pub shat: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StochasticPlan {
    pub n_offline: usize,
    pub steps: Vec<StochasticStep>,
}

/// Bins and bid sizes for every step; `inst` carries x* in its edge fractions.
pub fn build_stochastic_plan(inst: &MatchingInstance, params: &ScalingParams) -> Result<StochasticPlan> {
    if params.variant != Variant::Matching {
        return Err(Error::Domain("stochastic rounding uses matching parameters".into()));
    }
    let n = inst.n_offline;
    let mut s = vec![0.0; n];
    let mut steps = Vec::with_capacity(inst.n_arrivals());
    for (t, a) in inst.arrivals.iter().enumerate() {
        let shat: Vec<f64> = s.iter().map(|&v| params.hat_cumulative(v).snap()).collect();
        let mut edges: Vec<_> = a.edges.iter().filter(|e| e.x > 0.0).collect();
        edges.sort_by_key(|e| e.i);
        let mut cands = Vec::new();
        let mut low = Vec::new();
        let mut high = Vec::new();
        for e in edges {
            let xhat = scale_hat(e.x, s[e.i], params);
            let denom = a.p * (1.0 - shat[e.i]);
            if denom <= 0.0 {
                return Err(Error::Precondition(format!("node {} saturated before arrival {t}", e.i)));
            }
            let size = xhat / denom;
            if size > 1.0 + 1e-9 {
                return Err(Error::Precondition(format!("bid probability {size} > 1 for node {} at arrival {t}", e.i)));
            }
            let k = cands.len();
            if s[e.i] <= params.theta {
                low.push((k, size.min(1.0)));
            } else {
                high.push(k);
            }
            cands.push(Candidate { node: e.i, size: size.min(1.0), xhat, w: e.w });
        }
        let mut bins: Vec<Vec<usize>> = first_fit(&low)?.into_iter().map(|b| b.items.into_iter().map(|(k, _)| k).collect()).collect();
        bins.extend(high.into_iter().map(|k| vec![k]));
        for e in &a.edges {
            s[e.i] += e.x;
        }
        steps.push(StochasticStep { p: a.p, cands, bins, shat });
    }
    Ok(StochasticPlan { n_offline: n, steps })
}

fn better(a: &Candidate, b: &Candidate) -> bool {
    a.w > b.w || (a.w == b.w && a.node < b.node)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StochasticOutcome {
    pub matching: Matching,
    pub weight: f64,
    pub arrived: Vec<bool>,
}

impl StochasticPlan {
    pub fn sample(&self, rng: &mut OdrsRng) -> StochasticOutcome {
        let mut matched = vec![false; self.n_offline];
        let mut pairs = Vec::new();
        let mut weight = 0.0;
        let mut arrived = Vec::with_capacity(self.steps.len());
        for (t, st) in self.steps.iter().enumerate() {
            let mut best: Option<&Candidate> = None;
            for bin in &st.bins {
                let u = uniform(rng);
                let mut acc = 0.0;
                for &k in bin {
                    acc += st.cands[k].size;
                    if u <= acc {
                        let c = &st.cands[k];
                        if !matched[c.node] && best.map_or(true, |b| better(c, b)) {
                            best = Some(c);
                        }
                        break;
                    }
                }
            }
            let came = uniform(rng) < st.p;
            arrived.push(came);
            if let (true, Some(c)) = (came, best) {
                matched[c.node] = true;
                weight += c.w;
                pairs.push(MatchPair { arrival: t, offline: c.node });
            }
        }
        StochasticOutcome { matching: Matching { pairs }, weight, arrived }
    }

    /// Pr[node wins | matched set] for each candidate at step t, arrival excluded.
    pub fn winner_probs(&self, t: usize, matched: u64) -> Vec<f64> {
        let st = &self.steps[t];
        let mut bin_of = vec![0; st.cands.len()];
        for (b, bin) in st.bins.iter().enumerate() {
            for &k in bin {
                bin_of[k] = b;
            }
        }
        st.cands
            .iter()
            .enumerate()
            .map(|(k, c)| {
                if matched >> c.node & 1 == 1 {
                    return 0.0;
                }
                let mut pr = c.size;
                for (b, bin) in st.bins.iter().enumerate() {
                    if b == bin_of[k] {
                        continue;
                    }
                    let beat: f64 = bin
                        .iter()
                        .map(|&j| &st.cands[j])
                        .filter(|o| matched >> o.node & 1 == 0 && better(o, c))
                        .map(|o| o.size)
                        .sum();
                    pr *= (1.0 - beat).max(0.0);
                }
                pr
            })
            .collect()
    }

    /// Law of the matched set before each step (index T is the final law).
    pub fn exact_mask_laws(&self) -> Result<Vec<Vec<f64>>> {
        let n = self.n_offline;
        if n > MAX_STOCHASTIC_EXACT_N {
            return Err(Error::TooLarge { what: "stochastic exact engine offline nodes", got: n, limit: MAX_STOCHASTIC_EXACT_N });
        }
        let mut law = vec![0.0; 1 << n];
        law[0] = 1.0;
        let mut out = vec![law.clone()];
        for (t, st) in self.steps.iter().enumerate() {
            let mut next = vec![0.0; 1 << n];
            for (m, &pm) in law.iter().enumerate() {
                if pm == 0.0 {
                    continue;
                }
                let wp = self.winner_probs(t, m as u64);
                let mut moved = 0.0;
                for (c, q) in st.cands.iter().zip(wp) {
                    if q > 0.0 {
                        next[m | 1 << c.node] += pm * st.p * q;
                        moved += st.p * q;
                    }
                }
                next[m] += pm * (1.0 - moved);
            }
            law = next;
            out.push(law.clone());
        }
        Ok(out)
    }

    /// Exact Pr[w(M(t)) ≥ z] for each distinct candidate weight z at step t.
    pub fn threshold_probs(&self, t: usize, law: &[f64]) -> Vec<(f64, f64)> {
        let st = &self.steps[t];
        let mut zs: Vec<f64> = st.cands.iter().map(|c| c.w).collect();
        zs.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
        zs.dedup();
        let mut acc = vec![0.0; zs.len()];
        for (m, &pm) in law.iter().enumerate() {
            if pm == 0.0 {
                continue;
            }
            let wp = self.winner_probs(t, m as u64);
            for (zi, &z) in zs.iter().enumerate() {
                let s: f64 = st.cands.iter().zip(&wp).filter(|(c, _)| c.w >= z).map(|(_, q)| q).sum();
                acc[zi] += pm * st.p * s;
            }
        }
        zs.into_iter().zip(acc).collect()
    }
}

pub fn stochastic_round(inst: &MatchingInstance, xstar: &LpSolution, params: &ScalingParams, seed: u64) -> Result<StochasticOutcome> {
    let plan = build_stochastic_plan(&xstar.apply(inst), params)?;
    let mut rng = crate::rng::rng_from_seed(seed);
    Ok(plan.sample(&mut rng))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StochasticExactReport {
    pub alpha: f64,
    /// min over (t, z) of Pr[w(M(t)) ≥ z] − α·Σ_{w ≥ z} x
    pub threshold_slack: f64,
    /// min over (S, t) of ∏ ŝ − Pr[all of S matched]
    pub submult_slack: f64,
    /// min over (i, t) of Pr[free] − (1 − ŝ)
    pub free_slack: f64,
    /// min over (S, t) of Pr[S ∩ bidders ≠ ∅] − (1 − ∏_B (1 − Σ x̂/p))
    pub bidset_slack: f64,
    /// max |LHS − RHS| of the coin identity over random q
    pub coin_identity_gap: f64,
    pub expected_weight: f64,
}

fn superset_sums(law: &[f64], n: usize) -> Vec<f64> {
    let mut f = law.to_vec();
    for b in 0..n {
        for s in 0..1usize << n {
            if s >> b & 1 == 0 {
                f[s] += f[s | 1 << b];
            }
        }
    }
    f
}

/// Exact checks on an instance with x* in its fractions.
pub fn exact_check(inst: &MatchingInstance, params: &ScalingParams, rng: &mut OdrsRng) -> Result<StochasticExactReport> {
    let plan = build_stochastic_plan(inst, params)?;
    let laws = plan.exact_mask_laws()?;
    let n = plan.n_offline;
    let full = 1usize << n;
    let alpha = if params.eps + params.delta > 0.0 { ratio_formula(params.eps, params.delta) } else { 1.0 - (-1.0f64).exp() };
    let mut rep = StochasticExactReport {
        alpha,
        threshold_slack: f64::INFINITY,
        submult_slack: f64::INFINITY,
        free_slack: f64::INFINITY,
        bidset_slack: f64::INFINITY,
        coin_identity_gap: 0.0,
        expected_weight: 0.0,
    };
    for (t, st) in plan.steps.iter().enumerate() {
        let law = &laws[t];
        let a = &inst.arrivals[t];
        for (z, pr) in plan.threshold_probs(t, law) {
            let target: f64 = a.edges.iter().filter(|e| e.w >= z).map(|e| e.x).sum::<f64>() * alpha;
            rep.threshold_slack = rep.threshold_slack.min(pr - target);
        }
        let ups = superset_sums(law, n);
        for s in 1..full {
            let prod: f64 = (0..n).filter(|i| s >> i & 1 == 1).map(|i| st.shat[i]).product();
            rep.submult_slack = rep.submult_slack.min(prod - ups[s]);
        }
        for i in 0..n {
            rep.free_slack = rep.free_slack.min((1.0 - ups[1 << i]) - (1.0 - st.shat[i]));
        }
        // h[R] = Pr[no candidate from R]
        let mut node_bin = vec![None; n];
        for (b, bin) in st.bins.iter().enumerate() {
            for &k in bin {
                node_bin[st.cands[k].node] = Some((b, k));
            }
        }
        let mut h = vec![1.0; full];
        let mut bound = vec![1.0; full];
        for r in 1..full {
            let mut per_bin = vec![0.0; st.bins.len()];
            let mut per_bin_x = vec![0.0; st.bins.len()];
            for i in 0..n {
                if r >> i & 1 == 1 {
                    if let Some((b, k)) = node_bin[i] {
                        per_bin[b] += st.cands[k].size;
                        per_bin_x[b] += st.cands[k].xhat / st.p;
                    }
                }
            }
            h[r] = per_bin.iter().map(|v| (1.0 - v).max(0.0)).product();
            bound[r] = per_bin_x.iter().map(|v| (1.0 - v).max(0.0)).product();
        }
        for s in 1..full {
            let none: f64 = law.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(m, &p)| p * h[s & !m]).sum();
            rep.bidset_slack = rep.bidset_slack.min((1.0 - none) - (1.0 - bound[s]));
        }
        let s = full - 1;
        for _ in 0..4 {
            let q: Vec<f64> = (0..n).map(|_| uniform(rng)).collect();
            let mut lhs = 0.0;
            for (m, &p) in law.iter().enumerate() {
                let free = s & !m;
                lhs += p * (0..n).filter(|i| free >> i & 1 == 1).map(|i| q[i]).product::<f64>();
            }
            let mut rhs = 0.0;
            for a_set in 0..full {
                let pa = ups[a_set];
                let tail: f64 = (0..n).map(|i| if a_set >> i & 1 == 1 { 1.0 - q[i] } else { q[i] }).product();
                rhs += pa * tail;
            }
            rep.coin_identity_gap = rep.coin_identity_gap.max((lhs - rhs).abs());
        }
    }
    for (t, st) in plan.steps.iter().enumerate() {
        for (m, &pm) in laws[t].iter().enumerate() {
            if pm > 0.0 {
                let wp = plan.winner_probs(t, m as u64);
                rep.expected_weight += pm * st.p * st.cands.iter().zip(wp).map(|(c, q)| c.w * q).sum::<f64>();
            }
        }
    }
    if plan.steps.is_empty() {
        rep.threshold_slack = 0.0;
        rep.submult_slack = 0.0;
        rep.free_slack = 0.0;
        rep.bidset_slack = 0.0;
    }
    Ok(rep)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StochasticEval {
    pub lp_value: f64,
    pub runs: usize,
    pub mean_weight: f64,
    pub ci95: f64,
    pub ratio: f64,
    pub exact: Option<StochasticExactReport>,
}

pub fn eval_vs_lp(inst: &MatchingInstance, params: &ScalingParams, runs: usize, seed: u64) -> Result<StochasticEval> {
    if runs < 10_000 {
        return Err(Error::Domain(format!("need at least 10^4 runs, got {runs}")));
    }
    let sol = solve_lp(&build_lp(inst)?)?;
    let with_x = sol.apply(inst);
    let plan = build_stochastic_plan(&with_x, params)?;
    let weights: Vec<f64> = pool().install(|| {
        (0..runs as u64).into_par_iter().map(|r| plan.sample(&mut replica_rng(seed, r)).weight).collect()
    });
    let mean = weights.iter().sum::<f64>() / runs as f64;
    let var = weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (runs as f64 - 1.0);
    let ci95 = 1.96 * (var / runs as f64).sqrt();
    let ratio = if sol.value.abs() < 1e-12 { 1.0 } else { mean / sol.value };
    let exact = if inst.n_offline <= MAX_STOCHASTIC_EXACT_N {
        Some(exact_check(&with_x, params, &mut replica_rng(seed, u64::MAX))?)
    } else {
        None
    };
    Ok(StochasticEval { lp_value: sol.value, runs, mean_weight: mean, ci95, ratio, exact })
}
