//! Multi-stage multi-cover: each vertex rounds its scaled stage values online with
//! level-set rounding, independently of the other vertices.

use crate::error::{breach, Result};
use crate::instance::{CoverInstance, ValidationReport, Violation};
use crate::level_set::{online_step, LevelSetState};
use crate::rng::{pool, replica_rng, rng_from_seed, uniform, OdrsRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverSolution {
    /// y[v][l]: integral purchase of vertex v at stage l
    pub y: Vec<Vec<u64>>,
    pub cost: f64,
    pub alpha: f64,
}

fn sample_cover(cov: &CoverInstance, alpha: f64, rng: &mut OdrsRng) -> Result<CoverSolution> {
    let n = cov.n_vertices();
    let mut states = vec![LevelSetState::<f64>::new(); n];
    let mut y = vec![vec![0u64; cov.k]; n];
    let mut cost = 0.0;
    for l in 0..cov.k {
        for v in 0..n {
            let mut z = alpha * cov.xstar[v][l];
            while z > 0.0 {
                let piece = z.min(1.0);
                z -= piece;
                let (sel, next) = online_step(&states[v], piece, uniform(rng))?;
                states[v] = next;
                if sel {
                    y[v][l] += 1;
                }
            }
            cost += y[v][l] as f64 * cov.stages[l].costs[v];
        }
    }
    Ok(CoverSolution { y, cost, alpha })
}

/// Online rounding of α·x*, stage by stage.
pub fn round_multistage_cover(cov: &CoverInstance, seed: u64) -> Result<CoverSolution> {
    cov.validate().into_result()?;
    let sol = sample_cover(cov, cov.alpha(), &mut rng_from_seed(seed))?;
    let rep = verify_cover(cov, &sol.y);
    if !rep.valid {
        breach!("cover rounding left a demand unmet: {}", rep.violations[0].message);
    }
    Ok(sol)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
    pub cost: f64,
    pub lp_cost: f64,
    pub cost_ratio: f64,
}

pub fn verify_cover(cov: &CoverInstance, y: &[Vec<u64>]) -> CoverReport {
    let mut rep = ValidationReport::default();
    let yf: Vec<Vec<f64>> = y.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
    for (idx, e) in cov.edges.iter().enumerate() {
        let c = cov.coverage(&yf, e);
        if c < e.demand as f64 {
            rep.push("coverage", idx, c, format!("edge {idx} covered {c} < demand {}", e.demand));
        }
    }
    let mut cost = 0.0;
    for (v, row) in yf.iter().enumerate() {
        for (l, &q) in row.iter().enumerate() {
            cost += q * cov.stages[l].costs[v];
        }
    }
    let lp_cost = cov.lp_cost();
    CoverReport {
        valid: rep.is_valid(),
        violations: rep.violations,
        cost,
        lp_cost,
        cost_ratio: if lp_cost > 0.0 { cost / lp_cost } else { 1.0 },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverTrials {
    pub trials: usize,
    pub violations: usize,
    pub alpha: f64,
    pub lp_cost: f64,
    pub mean_cost: f64,
    pub cost_ratio: f64,
    /// standard error of the cost ratio
    pub ratio_se: f64,
}

pub fn cover_trials(cov: &CoverInstance, trials: usize, seed: u64) -> Result<CoverTrials> {
    cov.validate().into_result()?;
    let alpha = cov.alpha();
    let runs: Vec<Result<(f64, bool)>> = pool().install(|| {
        (0..trials as u64)
            .into_par_iter()
            .map(|r| {
                let s = sample_cover(cov, alpha, &mut replica_rng(seed, r))?;
                Ok((s.cost, verify_cover(cov, &s.y).valid))
            })
            .collect()
    });
    let mut costs = Vec::with_capacity(trials);
    let mut violations = 0;
    for r in runs {
        let (c, ok) = r?;
        costs.push(c);
        if !ok {
            violations += 1;
        }
    }
    let n = trials.max(1) as f64;
    let mean = costs.iter().sum::<f64>() / n;
    let var = costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let lp = cov.lp_cost();
    let (ratio, se) = if lp > 0.0 { (mean / lp, (var / n).sqrt() / lp) } else { (1.0, 0.0) };
    Ok(CoverTrials { trials, violations, alpha, lp_cost: lp, mean_cost: mean, cost_ratio: ratio, ratio_se: se })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{gen_cover, HyperEdge, Stage};

    #[test]
    fn alpha_examples() {
        let mk = |d: usize, t: u32| CoverInstance {
            k: 1,
            stages: vec![Stage { costs: vec![1.0; d] }],
            edges: vec![HyperEdge { verts: (0..d).collect(), demand: t }],
            xstar: vec![vec![t as f64 / d as f64]; d],
        };
        assert_eq!(mk(2, 1).alpha(), 2.0);
        assert!((mk(3, 3).alpha() - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn integral_xstar_covers() {
        let cov = CoverInstance {
            k: 2,
            stages: vec![Stage { costs: vec![1.0, 2.0] }, Stage { costs: vec![3.0, 3.0] }],
            edges: vec![HyperEdge { verts: vec![0, 1], demand: 1 }],
            xstar: vec![vec![1.0, 0.0], vec![0.0, 0.0]],
        };
        let s = round_multistage_cover(&cov, 3).unwrap();
        assert_eq!(s.y[0][0], 2);
        assert_eq!(s.cost, 2.0);
    }

    #[test]
    fn random_instances_always_cover() {
        for seed in 0..5 {
            let cov = gen_cover(12, 15, 3, 2, 3, seed).unwrap();
            let t = cover_trials(&cov, 2000, seed).unwrap();
            assert_eq!(t.violations, 0);
        }
    }

    #[test]
    fn one_short_named() {
        let cov = gen_cover(6, 4, 3, 2, 2, 1).unwrap();
        let y = vec![vec![0; 2]; 6];
        let rep = verify_cover(&cov, &y);
        assert!(!rep.valid);
        assert!(rep.violations[0].message.contains("edge 0"));
    }
}
