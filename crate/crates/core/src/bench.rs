//! Monte Carlo harness, the correlation adversary and the three-node harness.

use crate::error::{breach, Error, Result};
use crate::instance::{gen_lb_prefix, Arrival, MatchingInstance};
use crate::odrs::{Matching, PreparedScheme, RoundingScheme};
use crate::rng::{mix, pool, replica_rng, uniform, OdrsRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const MIN_RUNS: usize = 1000;
const CHUNKS: u64 = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeEstimate {
    pub arrival: usize,
    pub offline: usize,
    pub x: f64,
    pub prob: f64,
    /// standard error; zero for exact entries
    pub se: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub algorithm: String,
    pub seed: u64,
    pub n_runs: usize,
    pub exact: bool,
    pub eps: f64,
    pub delta: f64,
    pub edges: Vec<EdgeEstimate>,
    pub min_ratio: f64,
}

impl RoundReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("arrival,offline,x,prob,se,ratio\n");
        for e in &self.edges {
            s.push_str(&format!("{},{},{},{},{},{}\n", e.arrival, e.offline, e.x, e.prob, e.se, e.ratio));
        }
        s
    }

    pub fn from_exact(algorithm: &str, inst: &MatchingInstance, probs: &[Vec<f64>], eps: f64, delta: f64) -> Self {
        let t = crate::exact::table_from_probs(inst, probs);
        let edges = t.edges.into_iter().map(|e| EdgeEstimate { arrival: e.arrival, offline: e.offline, x: e.x, prob: e.prob, se: 0.0, ratio: e.ratio }).collect();
        Self { algorithm: algorithm.into(), seed: 0, n_runs: 0, exact: true, eps, delta, edges, min_ratio: t.min_ratio }
    }
}

/// Replays `sample` for runs 0..n with seeds mix(seed, r), summing per-run u64
/// count vectors. Integer sums make the result independent of scheduling.
pub fn replay_counts<F>(n: usize, seed: u64, width: usize, sample: F) -> Result<Vec<u64>>
where
    F: Fn(&mut OdrsRng, &mut [u64]) -> Result<()> + Sync,
{
    let per = (n as u64).div_ceil(CHUNKS);
    let parts: Vec<Result<Vec<u64>>> = pool().install(|| {
        (0..CHUNKS)
            .into_par_iter()
            .map(|c| {
                let mut counts = vec![0u64; width];
                for r in c * per..((c + 1) * per).min(n as u64) {
                    sample(&mut replica_rng(seed, r), &mut counts)?;
                }
                Ok(counts)
            })
            .collect()
    });
    let mut total = vec![0u64; width];
    for p in parts {
        for (t, v) in total.iter_mut().zip(p?) {
            *t += v;
        }
    }
    Ok(total)
}

fn edge_offsets(inst: &MatchingInstance) -> Vec<usize> {
    let mut off = Vec::with_capacity(inst.n_arrivals() + 1);
    let mut acc = 0;
    for a in &inst.arrivals {
        off.push(acc);
        acc += a.edges.len();
    }
    off.push(acc);
    off
}

fn count_matching(inst: &MatchingInstance, off: &[usize], m: &Matching, counts: &mut [u64]) {
    for p in &m.pairs {
        if let Some(k) = inst.arrivals[p.arrival].edges.iter().position(|e| e.i == p.offline) {
            counts[off[p.arrival] + k] += 1;
        }
    }
}

pub fn monte_carlo_edge_probs(scheme: &dyn RoundingScheme, inst: &MatchingInstance, n: usize, seed: u64) -> Result<RoundReport> {
    if n < MIN_RUNS {
        return Err(Error::Domain(format!("need at least {MIN_RUNS} runs, got {n}")));
    }
    let prepared = scheme.prepare(inst)?;
    let off = edge_offsets(inst);
    let counts = replay_counts(n, seed, off[inst.n_arrivals()], |rng, c| {
        let m = prepared.sample(rng)?;
        count_matching(inst, &off, &m, c);
        Ok(())
    })?;
    let mut edges = Vec::new();
    let mut min_ratio = f64::INFINITY;
    for (t, a) in inst.arrivals.iter().enumerate() {
        for (k, e) in a.edges.iter().enumerate() {
            if e.x <= 0.0 {
                continue;
            }
            let p = counts[off[t] + k] as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let ratio = p / e.x;
            min_ratio = min_ratio.min(ratio);
            edges.push(EdgeEstimate { arrival: t, offline: e.i, x: e.x, prob: p, se, ratio });
        }
    }
    if edges.is_empty() {
        min_ratio = 1.0;
    }
    Ok(RoundReport { algorithm: scheme.name(), seed, n_runs: n, exact: false, eps: 0.0, delta: 0.0, edges, min_ratio })
}

/// Fraction of `trials` Bernoulli(p) streams of length n whose 95% normal interval covers p.
pub fn ci_coverage_selftest(p: f64, n: usize, trials: usize, seed: u64) -> f64 {
    let mut covered = 0;
    for tr in 0..trials as u64 {
        let mut rng = replica_rng(seed, tr);
        let hits = (0..n).filter(|_| uniform(&mut rng) < p).count();
        let est = hits as f64 / n as f64;
        let half = 1.96 * (est * (1.0 - est) / n as f64).sqrt();
        if (est - p).abs() <= half {
            covered += 1;
        }
    }
    covered as f64 / trials as f64
}

/// The constant 2√2 − 2 and the residual of 1 − y − y²/4 there.
pub fn lb_constant() -> (f64, f64) {
    let p = 2.0 * 2f64.sqrt() - 2.0;
    (p, 1.0 - p - p * p / 4.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LbReport {
    pub scheme: String,
    pub n: usize,
    pub n_probe: usize,
    pub n_eval: usize,
    pub seed: u64,
    /// online pair with the largest estimated covariance
    pub online_pair: (usize, usize),
    pub covariance: f64,
    /// offline pair targeted by the last arrival
    pub offline_pair: (usize, usize),
    pub joint_matched: f64,
    pub final_edges: Vec<EdgeEstimate>,
    pub min_ratio: f64,
    pub sigma: f64,
    pub bound: f64,
}

pub fn lb_adversary(scheme: &dyn RoundingScheme, n: usize, n_probe: usize, n_eval: usize, seed: u64) -> Result<LbReport> {
    if n < 3 {
        return Err(Error::Domain("the adversary needs n >= 3".into()));
    }
    if n > 32 {
        return Err(Error::TooLarge { what: "adversary prefix length", got: n, limit: 32 });
    }
    let prefix = gen_lb_prefix(n)?;
    let prepared = scheme.prepare(&prefix)?;
    // per-online and per-online-pair counts, then per offline node and offline pair
    let m = 2 * n;
    let width = n + n * n + m + m * m;
    let counts = replay_counts(n_probe, mix(seed, 0), width, |rng, c| {
        let mt = prepared.sample(rng)?;
        let mut on = 0u32;
        let mut off = 0u64;
        for p in &mt.pairs {
            on |= 1 << p.arrival;
            off |= 1 << p.offline;
        }
        for t in 0..n {
            if on >> t & 1 == 1 {
                c[t] += 1;
                for u in t + 1..n {
                    if on >> u & 1 == 1 {
                        c[n + t * n + u] += 1;
                    }
                }
            }
        }
        let base = n + n * n;
        for i in 0..m {
            if off >> i & 1 == 1 {
                c[base + i] += 1;
                for j in i + 1..m {
                    if off >> j & 1 == 1 {
                        c[base + m + i * m + j] += 1;
                    }
                }
            }
        }
        Ok(())
    })?;
    let np = n_probe as f64;
    let mut best = ((0, 1), f64::NEG_INFINITY);
    for t in 0..n {
        for u in t + 1..n {
            let cov = counts[n + t * n + u] as f64 / np - (counts[t] as f64 / np) * (counts[u] as f64 / np);
            if cov > best.1 {
                best = ((t, u), cov);
            }
        }
    }
    let (t, u) = best.0;
    let base = n + n * n;
    let mut pair = ((2 * t, 2 * u), f64::NEG_INFINITY);
    for i in [2 * t, 2 * t + 1] {
        for j in [2 * u, 2 * u + 1] {
            let jp = counts[base + m + i * m + j] as f64 / np;
            if jp > pair.1 {
                pair = ((i, j), jp);
            }
        }
    }
    let (i, j) = pair.0;
    let mut full = prefix.clone();
    full.arrivals.push(Arrival::new(vec![(i, 0.5), (j, 0.5)]));
    if let Err(e) = full.validate().into_result() {
        breach!("adversary built an infeasible instance: {e}");
    }
    let prepared = scheme.prepare(&full)?;
    let last = n;
    let fc = replay_counts(n_eval, mix(seed, 1), 2, |rng, c| {
        let mt = prepared.sample(rng)?;
        for p in mt.pairs.iter().filter(|p| p.arrival == last) {
            c[if p.offline == i { 0 } else { 1 }] += 1;
        }
        Ok(())
    })?;
    let ne = n_eval as f64;
    let final_edges: Vec<EdgeEstimate> = [i, j]
        .iter()
        .zip(fc)
        .map(|(&off, cnt)| {
            let p = cnt as f64 / ne;
            let se = (p * (1.0 - p) / ne).sqrt();
            EdgeEstimate { arrival: last, offline: off, x: 0.5, prob: p, se, ratio: p / 0.5 }
        })
        .collect();
    let worst = final_edges.iter().min_by(|a, b| a.ratio.total_cmp(&b.ratio)).expect("two edges");
    let (p, _) = lb_constant();
    Ok(LbReport {
        scheme: scheme.name(),
        n,
        n_probe,
        n_eval,
        seed,
        online_pair: (t, u),
        covariance: best.1,
        offline_pair: (i, j),
        joint_matched: pair.1,
        min_ratio: worst.ratio,
        sigma: worst.se / 0.5,
        final_edges,
        bound: p + p / (2.0 * (n as f64 - 1.0)),
    })
}

/// Three offline nodes, each half-matched by its own arrival, then a last arrival
/// splitting half-half between `pair`.
pub fn three_node_instance(pair: (usize, usize)) -> MatchingInstance {
    let mut arrivals: Vec<Arrival> = (0..3).map(|k| Arrival::new(vec![(k, 0.5)])).collect();
    arrivals.push(Arrival::new(vec![(pair.0, 0.5), (pair.1, 0.5)]));
    MatchingInstance::unit(3, arrivals)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreeNodeChoice {
    pub pair: (usize, usize),
    pub exact: Option<f64>,
    pub sampled: Option<f64>,
    pub se: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreeNodeReport {
    pub scheme: String,
    pub choices: Vec<ThreeNodeChoice>,
    /// min over choices of Pr[last arrival matched], exact when available
    pub min_matched: f64,
    pub exact: bool,
}

pub fn three_node_impossibility(scheme: &dyn RoundingScheme, n_mc: Option<usize>, seed: u64) -> Result<ThreeNodeReport> {
    let mut choices = Vec::new();
    for (k, pair) in [(0, 1), (0, 2), (1, 2)].into_iter().enumerate() {
        let inst = three_node_instance(pair);
        inst.validate().into_result()?;
        let prepared = scheme.prepare(&inst)?;
        let exact = prepared.exact_edge_probs().map(|p| p[3].iter().sum::<f64>());
        let (sampled, se) = match n_mc {
            Some(n) => {
                let c = replay_counts(n, mix(seed, k as u64), 1, |rng, c| {
                    if prepared.sample(rng)?.pairs.iter().any(|p| p.arrival == 3) {
                        c[0] += 1;
                    }
                    Ok(())
                })?;
                let p = c[0] as f64 / n as f64;
                (Some(p), Some((p * (1.0 - p) / n as f64).sqrt()))
            }
            None => (None, None),
        };
        choices.push(ThreeNodeChoice { pair, exact, sampled, se });
    }
    let exact = choices.iter().all(|c| c.exact.is_some());
    let min_matched = choices
        .iter()
        .map(|c| if exact { c.exact.unwrap() } else { c.sampled.unwrap_or(f64::NAN) })
        .fold(f64::INFINITY, f64::min);
    Ok(ThreeNodeReport { scheme: scheme.name(), choices, min_matched, exact })
}

/// A scheme that never matches anything.
pub struct NeverMatch;

struct PreparedNever(Vec<usize>);

impl PreparedScheme for PreparedNever {
    fn sample(&self, _rng: &mut OdrsRng) -> Result<Matching> {
        Ok(Matching::default())
    }
    fn exact_edge_probs(&self) -> Option<Vec<Vec<f64>>> {
        Some(self.0.iter().map(|&k| vec![0.0; k]).collect())
    }
}

impl RoundingScheme for NeverMatch {
    fn name(&self) -> String {
        "never".into()
    }
    fn prepare(&self, inst: &MatchingInstance) -> Result<Box<dyn PreparedScheme>> {
        Ok(Box::new(PreparedNever(inst.arrivals.iter().map(|a| a.edges.len()).collect())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::odrs::{Algorithm, OdrsScheme};
    use crate::scaling::{ScalingParams, Variant};

    fn warm() -> OdrsScheme {
        OdrsScheme { algorithm: Algorithm::Warmup, params: ScalingParams::identity(Variant::Matching) }
    }

    #[test]
    fn deterministic_instance_zero_variance() {
        let inst = MatchingInstance::unit(2, vec![Arrival::new(vec![(0, 1.0)]), Arrival::new(vec![(1, 1.0)])]);
        let r = monte_carlo_edge_probs(&warm(), &inst, 1000, 1).unwrap();
        assert!(r.edges.iter().all(|e| e.prob == 1.0 && e.se == 0.0));
    }

    #[test]
    fn same_seed_same_report() {
        let inst = crate::instance::gen_uniform_star(5).unwrap();
        let a = monte_carlo_edge_probs(&warm(), &inst, 5000, 9).unwrap();
        let b = monte_carlo_edge_probs(&warm(), &inst, 5000, 9).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn root_residual() {
        let (p, r) = lb_constant();
        assert!(r.abs() < 1e-12);
        assert!((p - 0.828427).abs() < 1e-6);
    }

    #[test]
    fn never_match_reports_zero() {
        let r = lb_adversary(&NeverMatch, 5, 1000, 1000, 3).unwrap();
        assert_eq!(r.min_ratio, 0.0);
        let t = three_node_impossibility(&NeverMatch, None, 0).unwrap();
        assert_eq!(t.min_matched, 0.0);
    }

    #[test]
    fn ci_selftest_in_band() {
        let c = ci_coverage_selftest(0.3, 1000, 1000, 4);
        assert!((0.93..=0.97).contains(&c), "{c}");
    }

    #[test]
    fn too_few_runs() {
        let inst = crate::instance::gen_uniform_star(3).unwrap();
        assert!(matches!(monte_carlo_edge_probs(&warm(), &inst, 10, 0), Err(Error::Domain(_))));
    }
}
