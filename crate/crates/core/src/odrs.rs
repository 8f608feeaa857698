//! Online dependent rounding for (b-)matchings. Each step buckets the arriving
//! node's neighbors by first-fit, draws at most one candidate per bin, lets
//! lagging candidates bid, and resolves contention among bidders with a CRS
//! built for the exact law of the bidder set.

use crate::binpack::first_fit;
use crate::crs::{build_selector, SelectionRule, SupportDistribution};
use crate::error::{breach, Error, Result};
use crate::instance::{Arrival, MatchingInstance};
use crate::rng::{uniform, OdrsRng};
use crate::scalar::{CompensatedSum, Scalar};
use crate::scaling::{ScalingParams, Variant};
use serde::{Deserialize, Serialize};

pub const MAX_BIDDERS: usize = 20;
const PRUNE: f64 = 1e-15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Warmup,
    Odrs,
    OdrsB,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "warmup" => Ok(Algorithm::Warmup),
            "odrs" => Ok(Algorithm::Odrs),
            "odrs-b" | "odrs_b" => Ok(Algorithm::OdrsB),
            other => Err(Error::Domain(format!("unknown algorithm {other}"))),
        }
    }
}

impl Algorithm {
    pub fn variant(self) -> Variant {
        match self {
            Algorithm::OdrsB => Variant::BMatching,
            _ => Variant::Matching,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MatchPair {
    pub arrival: usize,
    pub offline: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Matching {
    pub pairs: Vec<MatchPair>,
}

impl Matching {
    /// Each arrival used at most once, each offline node at most its capacity.
    pub fn check(&self, inst: &MatchingInstance) -> Result<()> {
        let mut per_arrival = vec![0u32; inst.n_arrivals()];
        let mut per_node = vec![0u32; inst.n_offline];
        for p in &self.pairs {
            per_arrival[p.arrival] += 1;
            per_node[p.offline] += 1;
            if !inst.arrivals[p.arrival].edges.iter().any(|e| e.i == p.offline) {
                breach!("matched non-edge ({}, {})", p.arrival, p.offline);
            }
        }
        if let Some(t) = per_arrival.iter().position(|&c| c > 1) {
            breach!("arrival {t} matched {} times", per_arrival[t]);
        }
        for (i, (&c, &b)) in per_node.iter().zip(&inst.capacities).enumerate() {
            if c > b {
                breach!("offline node {i} matched {c} times, capacity {b}");
            }
        }
        Ok(())
    }
}

fn snap(v: f64) -> f64 {
    Scalar::snap(&v)
}

fn frac(v: f64) -> f64 {
    v - v.floor()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Member {
    /// Position in the step's node list.
    pub pos: usize,
    pub size: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BinKind {
    Low,
    High,
    /// Singleton whose scaled degree crosses an integer; a non-lagging node bids w.p. `q`.
    Crossing { q: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinLayout {
    pub kind: BinKind,
    pub members: Vec<Member>,
}

/// Deterministic per-arrival structure: active nodes, their fractions and bins.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLayout {
    pub nodes: Vec<usize>,
    pub x: Vec<f64>,
    pub xhat: Vec<f64>,
    pub shat_before: Vec<f64>,
    pub shat_after: Vec<f64>,
    pub bins: Vec<BinLayout>,
}

impl StepLayout {
    pub fn low_bins(&self) -> usize {
        self.bins.iter().filter(|b| b.kind == BinKind::Low).count()
    }
}

#[derive(Clone, Debug)]
pub struct StepPlan {
    pub layout: StepLayout,
    pub law: SupportDistribution,
    pub rule: Option<SelectionRule>,
}

/// Lag bit per node: set while the bid count equals ⌊ŝ⌋.
#[derive(Clone, Debug, PartialEq)]
pub struct BidderState {
    pub lag: Vec<bool>,
    pub bids: Vec<u32>,
    pub matched: Vec<u32>,
}

impl BidderState {
    pub fn new(n: usize) -> Self {
        Self { lag: vec![true; n], bids: vec![0; n], matched: vec![0; n] }
    }
}

/// The online rounder. Arrivals are pushed one at a time; the plan for arrival t
/// depends only on arrivals 0..=t.
#[derive(Clone, Debug)]
pub struct OnlineRounder {
    pub algorithm: Algorithm,
    pub params: ScalingParams,
    capacities: Vec<u32>,
    prefix: Vec<CompensatedSum<f64>>,
    history: Vec<Vec<(usize, usize)>>,
    steps: Vec<StepPlan>,
    low_bin_limit: Option<usize>,
}

impl OnlineRounder {
    pub fn new(algorithm: Algorithm, params: &ScalingParams, capacities: &[u32]) -> Result<Self> {
        let params = match algorithm {
            Algorithm::Warmup => ScalingParams::identity(Variant::Matching),
            Algorithm::Odrs | Algorithm::OdrsB => {
                if params.variant != algorithm.variant() {
                    return Err(Error::Domain(format!("{algorithm:?} needs {:?} parameters", algorithm.variant())));
                }
                *params
            }
        };
        if algorithm == Algorithm::Odrs && capacities.iter().any(|&b| b != 1) {
            return Err(Error::Domain("odrs handles unit capacities; use odrs-b".into()));
        }
        let n = capacities.len();
        Ok(Self {
            algorithm,
            params,
            capacities: capacities.to_vec(),
            prefix: vec![CompensatedSum::new(); n],
            history: vec![Vec::new(); n],
            steps: Vec::new(),
            low_bin_limit: None,
        })
    }

    /// Asserts the bin-count bound of the downscaled regime at every step.
    pub fn with_downscale_bound(mut self, gamma: f64) -> Self {
        self.low_bin_limit = Some((2.0 * (1.0 + self.params.delta) / gamma).ceil() as usize + 1);
        self
    }

    pub fn n_offline(&self) -> usize {
        self.capacities.len()
    }

    pub fn steps(&self) -> &[StepPlan] {
        &self.steps
    }

    fn hat(&self, s: f64) -> f64 {
        snap(self.params.hat_cumulative(s))
    }

    fn layout(&mut self, arrival: &Arrival) -> Result<StepLayout> {
        let mut edges: Vec<(usize, f64)> = arrival.edges.iter().filter(|e| e.x > 0.0).map(|e| (e.i, e.x)).collect();
        edges.sort_by_key(|e| e.0);
        let mut layout = StepLayout { nodes: vec![], x: vec![], xhat: vec![], shat_before: vec![], shat_after: vec![], bins: vec![] };
        let mut low = Vec::new();
        let mut high = Vec::new();
        let mut crossing = Vec::new();
        let cut = self.params.theta;
        for (i, x) in edges {
            if i >= self.n_offline() {
                return Err(Error::Validation(format!("edge to unknown offline node {i}")));
            }
            let s_b = self.prefix[i].value().snap();
            self.prefix[i].add(x);
            let s_a = self.prefix[i].value().snap();
            if s_a > self.capacities[i] as f64 + 1e-9 {
                return Err(Error::Validation(format!("offline node {i} degree {s_a} exceeds capacity")));
            }
            let (h_b, h_a) = (self.hat(s_b), self.hat(s_a));
            let xhat = (h_a - h_b).max(0.0);
            if xhat <= 0.0 {
                continue;
            }
            let pos = layout.nodes.len();
            layout.nodes.push(i);
            layout.x.push(x);
            layout.xhat.push(xhat);
            layout.shat_before.push(h_b);
            layout.shat_after.push(h_a);
            if h_a.floor() > h_b.floor() {
                let q = if frac(h_b) > 0.0 { frac(h_a) / frac(h_b) } else { 0.0 };
                crossing.push((pos, q.clamp(0.0, 1.0)));
            } else {
                let size = xhat / (1.0 - frac(h_b));
                if size > 1.0 + 1e-9 {
                    breach!("bid probability {size} of node {i} exceeds 1");
                }
                if self.algorithm == Algorithm::Warmup {
                    layout.bins.push(BinLayout { kind: BinKind::Low, members: vec![Member { pos, size: size.min(1.0) }] });
                } else if frac(s_b) <= cut {
                    low.push((pos, size));
                } else {
                    high.push((pos, size));
                }
            }
        }
        for (items, kind) in [(low, BinKind::Low), (high, BinKind::High)] {
            let bins = first_fit(&items).map_err(|e| Error::InvariantBreach(e.to_string()))?;
            for b in bins {
                layout.bins.push(BinLayout {
                    kind: kind.clone(),
                    members: b.items.into_iter().map(|(pos, size)| Member { pos, size }).collect(),
                });
            }
        }
        for (pos, q) in crossing {
            layout.bins.push(BinLayout { kind: BinKind::Crossing { q }, members: vec![Member { pos, size: 1.0 }] });
        }
        if let Some(limit) = self.low_bin_limit {
            if layout.low_bins() > limit {
                breach!("{} low bins exceed the downscaled bound {limit}", layout.low_bins());
            }
        }
        Ok(layout)
    }

    /// Adds the next arrival and prepares its bidder law and selection rule.
    pub fn push_arrival(&mut self, arrival: &Arrival) -> Result<&StepPlan> {
        let layout = self.layout(arrival)?;
        let t = self.steps.len();
        let law = self.bid_law_for(&layout, t)?;
        let rule = if layout.nodes.is_empty() { None } else { Some(build_selector(&law, &layout.x)?) };
        for (b, bin) in layout.bins.iter().enumerate() {
            for m in &bin.members {
                self.history[layout.nodes[m.pos]].push((t, b));
            }
        }
        self.steps.push(StepPlan { layout, law, rule });
        Ok(&self.steps[t])
    }

    /// Law of the lag bits of `nodes` just before step `upto` (bit k set = nodes[k] lagging).
    pub fn lag_law(&self, nodes: &[usize], upto: usize) -> Result<Vec<f64>> {
        let k = nodes.len();
        if k > MAX_BIDDERS {
            return Err(Error::TooLarge { what: "exact bidder law", got: k, limit: MAX_BIDDERS });
        }
        let mut events: Vec<(usize, usize)> =
            nodes.iter().flat_map(|&i| self.history[i].iter().copied()).filter(|&(t, _)| t < upto).collect();
        events.sort();
        events.dedup();
        let mut law = vec![0.0; 1 << k];
        law[(1 << k) - 1] = 1.0;
        for (t, b) in events {
            let layout = &self.steps[t].layout;
            let bin = &layout.bins[b];
            let local: Vec<(usize, &Member)> = bin
                .members
                .iter()
                .filter_map(|m| nodes.iter().position(|&i| i == layout.nodes[m.pos]).map(|kk| (kk, m)))
                .collect();
            let mut next = vec![0.0; 1 << k];
            match bin.kind {
                BinKind::Crossing { q } => {
                    let bit = 1usize << local[0].0;
                    for (m, &p) in law.iter().enumerate().filter(|(_, &p)| p > 0.0) {
                        if m & bit != 0 {
                            next[m] += p;
                        } else {
                            next[m] += p * q;
                            next[m | bit] += p * (1.0 - q);
                        }
                    }
                }
                _ => {
                    let none = 1.0 - local.iter().map(|(_, m)| m.size).sum::<f64>();
                    for (m, &p) in law.iter().enumerate().filter(|(_, &p)| p > 0.0) {
                        next[m] += p * none;
                        for &(kk, mem) in &local {
                            next[m & !(1 << kk)] += p * mem.size;
                        }
                    }
                }
            }
            law = next;
        }
        Ok(law)
    }

    fn bid_law_for(&self, layout: &StepLayout, t: usize) -> Result<SupportDistribution> {
        let k = layout.nodes.len();
        let mut v = self.lag_law(&layout.nodes, t)?;
        // Bits of each processed bin switch meaning from "lagging" to "bids now".
        for bin in &layout.bins {
            let mut next = vec![0.0; 1 << k];
            match bin.kind {
                BinKind::Crossing { q } => {
                    let bit = 1usize << bin.members[0].pos;
                    for (m, &p) in v.iter().enumerate().filter(|(_, &p)| p > 0.0) {
                        let rest = m & !bit;
                        if m & bit != 0 {
                            next[rest | bit] += p;
                        } else {
                            next[rest | bit] += p * q;
                            next[rest] += p * (1.0 - q);
                        }
                    }
                }
                _ => {
                    let bmask = bin.members.iter().fold(0usize, |a, m| a | 1 << m.pos);
                    for (m, &p) in v.iter().enumerate().filter(|(_, &p)| p > 0.0) {
                        let rest = m & !bmask;
                        let mut none = 1.0;
                        for mem in &bin.members {
                            if m >> mem.pos & 1 == 1 {
                                next[rest | 1 << mem.pos] += p * mem.size;
                                none -= mem.size;
                            }
                        }
                        next[rest] += p * none;
                    }
                }
            }
            v = next;
        }
        let kept: f64 = v.iter().filter(|&&p| p >= PRUNE).sum();
        let atoms = v.iter().enumerate().filter(|(_, &p)| p >= PRUNE).map(|(m, &p)| (m as u64, p / kept)).collect();
        SupportDistribution::new(layout.nodes.clone(), atoms)
    }

    /// Samples step t given the running state; returns the matched node if any.
    pub fn sample_step(&self, t: usize, state: &mut BidderState, rng: &mut OdrsRng) -> Result<Option<usize>> {
        let plan = &self.steps[t];
        let layout = &plan.layout;
        let mut realized = 0u64;
        for bin in &layout.bins {
            let u = uniform(rng);
            match bin.kind {
                BinKind::Crossing { q } => {
                    let pos = bin.members[0].pos;
                    let i = layout.nodes[pos];
                    if state.lag[i] {
                        realized |= 1 << pos;
                        state.bids[i] += 1;
                    } else if u < q {
                        realized |= 1 << pos;
                        state.bids[i] += 1;
                    } else {
                        state.lag[i] = true;
                    }
                }
                _ => {
                    let mut acc = 0.0;
                    for mem in &bin.members {
                        acc += mem.size;
                        if u < acc {
                            let i = layout.nodes[mem.pos];
                            if state.lag[i] {
                                realized |= 1 << mem.pos;
                                state.lag[i] = false;
                                state.bids[i] += 1;
                            }
                            break;
                        }
                    }
                }
            }
        }
        for (pos, &i) in layout.nodes.iter().enumerate() {
            let h = layout.shat_after[pos];
            let b = state.bids[i] as f64;
            if b < h.floor() || b > h.ceil() || (frac(h) > 0.0 && state.lag[i] != (b == h.floor())) {
                breach!("bid count {b} of node {i} inconsistent with scaled degree {h}");
            }
        }
        let u = uniform(rng);
        let winner = match &plan.rule {
            Some(rule) => rule.select(realized, u)?,
            None => None,
        };
        if let Some(pos) = winner {
            let i = layout.nodes[pos];
            state.matched[i] += 1;
            if state.matched[i] > state.bids[i] || state.matched[i] > self.capacities[i] {
                breach!("node {i} matched {} times with {} bids", state.matched[i], state.bids[i]);
            }
            return Ok(Some(i));
        }
        Ok(None)
    }

    pub fn sample(&self, rng: &mut OdrsRng) -> Result<Matching> {
        let mut state = BidderState::new(self.n_offline());
        let mut pairs = Vec::new();
        for t in 0..self.steps.len() {
            if let Some(i) = self.sample_step(t, &mut state, rng)? {
                pairs.push(MatchPair { arrival: t, offline: i });
            }
        }
        Ok(Matching { pairs })
    }

    /// Exact Pr[(i,t) matched] aligned with `inst.arrivals[t].edges`.
    pub fn exact_edge_probs(&self, inst: &MatchingInstance) -> Vec<Vec<f64>> {
        inst.arrivals
            .iter()
            .zip(&self.steps)
            .map(|(a, plan)| {
                let marg = plan.rule.as_ref().map(|r| r.selection_marginals(&plan.law)).unwrap_or_default();
                a.edges
                    .iter()
                    .map(|e| plan.layout.nodes.iter().position(|&i| i == e.i).map(|p| marg[p]).unwrap_or(0.0))
                    .collect()
            })
            .collect()
    }
}

pub fn build_plan(inst: &MatchingInstance, algorithm: Algorithm, params: &ScalingParams) -> Result<OnlineRounder> {
    let mut r = OnlineRounder::new(algorithm, params, &inst.capacities)?;
    for a in &inst.arrivals {
        r.push_arrival(a)?;
    }
    Ok(r)
}

pub fn warmup_round(inst: &MatchingInstance, rng: &mut OdrsRng) -> Result<Matching> {
    build_plan(inst, Algorithm::Warmup, &ScalingParams::identity(Variant::Matching))?.sample(rng)
}

pub fn odrs_round(inst: &MatchingInstance, params: &ScalingParams, rng: &mut OdrsRng) -> Result<Matching> {
    build_plan(inst, Algorithm::Odrs, params)?.sample(rng)
}

pub fn odrs_round_b(inst: &MatchingInstance, params: &ScalingParams, rng: &mut OdrsRng) -> Result<Matching> {
    build_plan(inst, Algorithm::OdrsB, params)?.sample(rng)
}

pub fn downscale_for_polytime(inst: &MatchingInstance, gamma: f64) -> Result<MatchingInstance> {
    if !(gamma > 0.0 && gamma < 0.5) {
        return Err(Error::Domain(format!("gamma {gamma} outside (0, 0.5)")));
    }
    Ok(inst.scaled(1.0 - gamma))
}

/// A rounding algorithm as seen by the harness: prepared once per instance, then sampled.
pub trait PreparedScheme: Sync {
    fn sample(&self, rng: &mut OdrsRng) -> Result<Matching>;
    fn exact_edge_probs(&self) -> Option<Vec<Vec<f64>>> {
        None
    }
}

pub trait RoundingScheme: Sync {
    fn name(&self) -> String;
    fn prepare(&self, inst: &MatchingInstance) -> Result<Box<dyn PreparedScheme>>;
}

#[derive(Clone, Debug)]
pub struct OdrsScheme {
    pub algorithm: Algorithm,
    pub params: ScalingParams,
}

struct PreparedOdrs {
    rounder: OnlineRounder,
    inst: MatchingInstance,
}

impl PreparedScheme for PreparedOdrs {
    fn sample(&self, rng: &mut OdrsRng) -> Result<Matching> {
        self.rounder.sample(rng)
    }
    fn exact_edge_probs(&self) -> Option<Vec<Vec<f64>>> {
        Some(self.rounder.exact_edge_probs(&self.inst))
    }
}

impl RoundingScheme for OdrsScheme {
    fn name(&self) -> String {
        format!("{:?}", self.algorithm).to_lowercase()
    }
    fn prepare(&self, inst: &MatchingInstance) -> Result<Box<dyn PreparedScheme>> {
        let rounder = build_plan(inst, self.algorithm, &self.params)?;
        Ok(Box::new(PreparedOdrs { rounder, inst: inst.clone() }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::gen_uniform_star;
    use crate::rng::rng_from_seed;

    fn opt() -> ScalingParams {
        ScalingParams::new(0.0480, 0.0643, Variant::Matching).unwrap()
    }

    #[test]
    fn single_edge_always_matched() {
        let inst = MatchingInstance::unit(1, vec![Arrival::new(vec![(0, 1.0)])]);
        let mut rng = rng_from_seed(0);
        for _ in 0..100 {
            assert_eq!(warmup_round(&inst, &mut rng).unwrap().pairs.len(), 1);
        }
    }

    #[test]
    fn two_large_sizes_two_bins() {
        let inst = MatchingInstance::unit(2, vec![Arrival::new(vec![(0, 0.6), (1, 0.4)])]);
        let p = ScalingParams::identity(Variant::Matching);
        let r = build_plan(&inst, Algorithm::Odrs, &p).unwrap();
        assert_eq!(r.steps()[0].layout.bins.len(), 1);
        let inst = MatchingInstance::unit(2, vec![Arrival::new(vec![(0, 0.6)]), Arrival::new(vec![(0, 0.0), (1, 0.6)])]);
        let r = build_plan(&inst, Algorithm::Odrs, &p).unwrap();
        assert_eq!(r.steps()[1].layout.nodes, vec![1]);
    }

    #[test]
    fn one_bin_law() {
        let inst = MatchingInstance::unit(2, vec![Arrival::new(vec![(0, 0.3), (1, 0.5)])]);
        let r = build_plan(&inst, Algorithm::Odrs, &ScalingParams::identity(Variant::Matching)).unwrap();
        let law = &r.steps()[0].law;
        let get = |m: u64| law.atoms.iter().find(|a| a.0 == m).map(|a| a.1).unwrap_or(0.0);
        assert!((get(0) - 0.2).abs() < 1e-15);
        assert!((get(1) - 0.3).abs() < 1e-15);
        assert!((get(2) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn b_matching_double_unit() {
        let inst = MatchingInstance::new(vec![2], vec![Arrival::new(vec![(0, 1.0)]), Arrival::new(vec![(0, 1.0)])]);
        let p = ScalingParams::new(0.03, 0.04, Variant::BMatching).unwrap();
        let mut rng = rng_from_seed(5);
        for _ in 0..100 {
            assert_eq!(odrs_round_b(&inst, &p, &mut rng).unwrap().pairs.len(), 2);
        }
    }

    #[test]
    fn warmup_star_bid_law_is_product() {
        let inst = gen_uniform_star(3).unwrap();
        let r = build_plan(&inst, Algorithm::Warmup, &ScalingParams::identity(Variant::Matching)).unwrap();
        let law = &r.steps()[0].law;
        for &(m, p) in &law.atoms {
            let k = (m as u32).count_ones() as i32;
            let want = (1.0f64 / 3.0).powi(k) * (2.0f64 / 3.0).powi(3 - k);
            assert!((p - want).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_wrong_shapes() {
        let inst = MatchingInstance::new(vec![2], vec![Arrival::new(vec![(0, 1.0)])]);
        assert!(build_plan(&inst, Algorithm::Odrs, &opt()).is_err());
        assert!(build_plan(&inst, Algorithm::OdrsB, &opt()).is_err());
        assert!(downscale_for_polytime(&inst, 0.6).is_err());
    }

    #[test]
    fn downscaled_bin_bound() {
        let inst = downscale_for_polytime(&crate::instance::gen_random(12, 10, 0.8, 3).unwrap(), 0.2).unwrap();
        let p = opt();
        let mut r = OnlineRounder::new(Algorithm::Odrs, &p, &inst.capacities).unwrap().with_downscale_bound(0.2);
        for a in &inst.arrivals {
            assert!(r.push_arrival(a).unwrap().layout.low_bins() <= 12);
        }
        let star = downscale_for_polytime(&gen_uniform_star(10).unwrap(), 0.1).unwrap();
        assert!(star.arrivals[0].edges.iter().all(|e| (e.x - 0.09).abs() < 1e-15));
    }

    #[test]
    fn algorithm_parse() {
        assert_eq!("odrs-b".parse::<Algorithm>().unwrap(), Algorithm::OdrsB);
        assert!("nope".parse::<Algorithm>().is_err());
    }
}
