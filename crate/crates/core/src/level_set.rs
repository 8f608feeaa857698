//! Level-set rounding of a stream of fractions: every prefix count lands on the
//! floor or ceiling of the prefix sum, marginals are preserved, and the online and
//! offline (pivotal) procedures produce the same law.

use crate::error::{breach, Error, Result};
use crate::rng::{uniform, OdrsRng};
use crate::scalar::{CompensatedSum, Scalar};
use std::collections::BTreeMap;

pub const MAX_EXACT_N: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct LevelSetState<T> {
    sum: CompensatedSum<T>,
    pub count: u64,
}

impl<T: Scalar> LevelSetState<T> {
    pub fn new() -> Self {
        Self { sum: CompensatedSum::new(), count: 0 }
    }

    pub fn with(s_prev: T, count: u64) -> Self {
        let mut sum = CompensatedSum::new();
        sum.add(s_prev);
        Self { sum, count }
    }

    pub fn s_prev(&self) -> T {
        self.sum.value().snap()
    }

    fn count_t(&self) -> T {
        T::from_u64(self.count).expect("count fits")
    }

    /// Probability that the next element with fraction `x` is selected.
    pub fn selection_probability(&self, x: &T) -> Result<T> {
        let s_prev = self.s_prev();
        let mut next = self.sum.clone();
        next.add(x.clone());
        let s_t = next.value().snap();
        let fl_prev = s_prev.floor();
        let fl_t = s_t.floor();
        let ce_t = s_t.ceil();
        let c = self.count_t();
        let p = if c == ce_t {
            T::zero()
        } else if c < fl_t {
            T::one()
        } else if c == fl_t && fl_t == fl_prev {
            x.clone() / (fl_prev + T::one() - s_prev.clone())
        } else if c == fl_t && fl_t > fl_prev && !s_prev.is_integral() {
            (s_t.clone() - fl_t) / (s_prev.clone() - fl_prev)
        } else {
            T::zero()
        };
        let tol = T::from_f64_lossy(1e-9);
        if p < -tol.clone() || p > T::one() + tol {
            breach!("selection probability {:?} outside [0,1] (s_prev={:?}, x={:?}, count={})", p, s_prev, x, self.count);
        }
        Ok(T::max_of(T::zero(), T::min_of(T::one(), p)))
    }

    /// Successor state after `x` with the given selection outcome; checks the
    /// prefix-count invariant.
    pub fn advance(&self, x: T, selected: bool) -> Result<Self> {
        let mut next = self.clone();
        next.sum.add(x);
        if selected {
            next.count += 1;
        }
        let s = next.s_prev();
        let c = next.count_t();
        if c < s.floor() || c > s.ceil() {
            breach!("prefix count {} outside [floor, ceil] of {:?}", next.count, s);
        }
        Ok(next)
    }
}

impl<T: Scalar> Default for LevelSetState<T> {
    fn default() -> Self {
        Self::new()
    }
}

pub fn online_step<T: Scalar>(state: &LevelSetState<T>, x: T, u: f64) -> Result<(bool, LevelSetState<T>)> {
    let p = state.selection_probability(&x)?;
    let selected = u < p.to_f64_lossy();
    let next = state.advance(x, selected)?;
    Ok((selected, next))
}

/// Appends ⌈Σx⌉ − Σx when the sum is not integral. Returns whether a dummy was added.
pub fn pad<T: Scalar>(x: &[T]) -> (Vec<T>, bool) {
    let mut sum = CompensatedSum::new();
    for v in x {
        sum.add(v.clone());
    }
    let s = sum.value().snap();
    let mut out = x.to_vec();
    if s.is_integral() {
        (out, false)
    } else {
        out.push(s.ceil() - s);
        (out, true)
    }
}

fn check_fractions<T: Scalar>(x: &[T]) -> Result<()> {
    let tol = T::from_f64_lossy(1e-9);
    for (i, v) in x.iter().enumerate() {
        if *v < -tol.clone() || *v > T::one() + tol.clone() {
            return Err(Error::Domain(format!("fraction {i} = {v:?} outside [0,1]")));
        }
    }
    Ok(())
}

pub fn online_round<T: Scalar>(x: &[T], rng: &mut OdrsRng) -> Result<Vec<bool>> {
    check_fractions(x)?;
    let (y, padded) = pad(x);
    let mut state = LevelSetState::new();
    let mut out = Vec::with_capacity(y.len());
    for v in y {
        let (sel, next) = online_step(&state, v, uniform(rng))?;
        out.push(sel);
        state = next;
    }
    if padded {
        out.pop();
    }
    Ok(out)
}

/// The pairwise merge: preserves a + b and each marginal.
pub fn step_pair<T: Scalar>(a: T, b: T, u: f64) -> (T, T) {
    let s = a.clone() + b.clone();
    if s.is_zero() {
        return (T::zero(), T::zero());
    }
    if s < T::one() {
        let p = a / s.clone();
        if u < p.to_f64_lossy() {
            (s, T::zero())
        } else {
            (T::zero(), s)
        }
    } else {
        let two = T::one() + T::one();
        let p = (T::one() - b) / (two - s.clone());
        if u < p.to_f64_lossy() {
            (T::one(), s - T::one())
        } else {
            (s - T::one(), T::one())
        }
    }
}

fn lowest_fractional<T: Scalar>(y: &[T]) -> Vec<usize> {
    y.iter().enumerate().filter(|(_, v)| !v.is_integral()).map(|(i, _)| i).take(2).collect()
}

fn snap_all<T: Scalar>(y: &mut [T]) {
    for v in y.iter_mut() {
        *v = v.snap();
    }
}

pub fn offline_pivotal<T: Scalar>(x: &[T], rng: &mut OdrsRng) -> Result<Vec<bool>> {
    check_fractions(x)?;
    let (mut y, padded) = pad(x);
    snap_all(&mut y);
    let n = y.len();
    let mut steps = 0;
    loop {
        let f = lowest_fractional(&y);
        if f.is_empty() {
            break;
        }
        if f.len() == 1 {
            breach!("single fractional entry {:?} left; sum not integral", y[f[0]]);
        }
        steps += 1;
        if steps > n.saturating_sub(1) {
            breach!("pivotal rounding exceeded {} merges", n - 1);
        }
        let (a, b) = step_pair(y[f[0]].clone(), y[f[1]].clone(), uniform(rng));
        y[f[0]] = a.snap();
        y[f[1]] = b.snap();
    }
    let mut out: Vec<bool> = y.iter().map(|v| v.is_one()).collect();
    if padded {
        out.pop();
    }
    Ok(out)
}

/// Select j iff (s_{j−1}, s_j] contains a point of ℕ + τ.
pub fn threshold_round<T: Scalar>(x: &[T], tau: T) -> Vec<bool> {
    let mut sum = CompensatedSum::new();
    let mut prev = T::zero();
    x.iter()
        .map(|v| {
            sum.add(v.clone());
            let s = sum.value().snap();
            let hit = (s.clone() - tau.clone()).floor() > (prev.clone() - tau.clone()).floor();
            prev = s;
            hit
        })
        .collect()
}

/// Explicit law over n-bit masks; bit i is element i.
#[derive(Clone, Debug, PartialEq)]
pub struct BitDistribution<T> {
    pub n: usize,
    pub probs: BTreeMap<u64, T>,
}

impl<T: Scalar> BitDistribution<T> {
    pub fn new(n: usize) -> Self {
        Self { n, probs: BTreeMap::new() }
    }

    pub fn add(&mut self, mask: u64, p: T) {
        let e = self.probs.entry(mask).or_insert_with(T::zero);
        *e = e.clone() + p;
    }

    pub fn total(&self) -> T {
        self.probs.values().fold(T::zero(), |a, b| a + b.clone())
    }

    pub fn marginals(&self) -> Vec<T> {
        let mut m = vec![T::zero(); self.n];
        for (&mask, p) in &self.probs {
            for (i, mi) in m.iter_mut().enumerate() {
                if mask >> i & 1 == 1 {
                    *mi = mi.clone() + p.clone();
                }
            }
        }
        m
    }

    pub fn prob_all_ones(&self, set: u64) -> T {
        self.probs.iter().filter(|(&m, _)| m & set == set).fold(T::zero(), |a, (_, p)| a + p.clone())
    }

    pub fn prob_all_zeros(&self, set: u64) -> T {
        self.probs.iter().filter(|(&m, _)| m & set == 0).fold(T::zero(), |a, (_, p)| a + p.clone())
    }

    pub fn covariance(&self, i: usize, j: usize) -> T {
        let m = self.marginals();
        self.prob_all_ones(1 << i | 1 << j) - m[i].clone() * m[j].clone()
    }

    pub fn total_variation(&self, other: &Self) -> T {
        let mut keys: Vec<u64> = self.probs.keys().chain(other.probs.keys()).copied().collect();
        keys.sort();
        keys.dedup();
        let half = T::from_f64_lossy(0.5);
        keys.iter()
            .map(|k| {
                let a = self.probs.get(k).cloned().unwrap_or_else(T::zero);
                let b = other.probs.get(k).cloned().unwrap_or_else(T::zero);
                (a - b).abs()
            })
            .fold(T::zero(), |a, b| a + b)
            * half
    }

    /// Drops element `idx` by summing over its value.
    pub fn marginalize_out(&self, idx: usize) -> Self {
        let mut out = Self::new(self.n - 1);
        let low = (1u64 << idx) - 1;
        for (&m, p) in &self.probs {
            let nm = (m & low) | ((m >> (idx + 1)) << idx);
            out.add(nm, p.clone());
        }
        out
    }

    /// Law of the number of ones among the first `k` elements.
    pub fn prefix_count_law(&self, k: usize) -> BTreeMap<u32, T> {
        let mask = if k >= 64 { u64::MAX } else { (1u64 << k) - 1 };
        let mut out = BTreeMap::new();
        for (&m, p) in &self.probs {
            let e = out.entry((m & mask).count_ones()).or_insert_with(T::zero);
            *e = e.clone() + p.clone();
        }
        out
    }

    pub fn to_f64(&self) -> BitDistribution<f64> {
        BitDistribution { n: self.n, probs: self.probs.iter().map(|(&m, p)| (m, p.to_f64_lossy())).collect() }
    }

    pub fn mask_string(&self, mask: u64) -> String {
        (0..self.n).map(|i| if mask >> i & 1 == 1 { '1' } else { '0' }).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> =
            self.probs.iter().map(|(&m, p)| (self.mask_string(m), serde_json::json!(p.to_f64_lossy()))).collect();
        serde_json::Value::Object(map)
    }
}

fn check_exact_size(n: usize) -> Result<()> {
    if n > MAX_EXACT_N {
        return Err(Error::TooLarge { what: "exact level-set law", got: n, limit: MAX_EXACT_N });
    }
    Ok(())
}

fn strip_padding<T: Scalar>(d: BitDistribution<T>, padded: bool) -> BitDistribution<T> {
    if padded {
        d.marginalize_out(d.n - 1)
    } else {
        d
    }
}

pub fn exact_dist_online<T: Scalar>(x: &[T]) -> Result<BitDistribution<T>> {
    check_exact_size(x.len())?;
    check_fractions(x)?;
    let (y, padded) = pad(x);
    let mut paths: Vec<(u64, LevelSetState<T>, T)> = vec![(0, LevelSetState::new(), T::one())];
    for (t, v) in y.iter().enumerate() {
        let mut next = Vec::with_capacity(paths.len() * 2);
        for (mask, st, pr) in paths {
            let p = st.selection_probability(v)?;
            if !p.is_zero() {
                next.push((mask | 1 << t, st.advance(v.clone(), true)?, pr.clone() * p.clone()));
            }
            if !p.is_one() {
                next.push((mask, st.advance(v.clone(), false)?, pr * (T::one() - p)));
            }
        }
        paths = next;
    }
    let mut d = BitDistribution::new(y.len());
    for (m, _, p) in paths {
        d.add(m, p);
    }
    Ok(strip_padding(d, padded))
}

fn offline_branch<T: Scalar>(y: Vec<T>, pr: T, depth: usize, out: &mut BitDistribution<T>) -> Result<()> {
    let f = lowest_fractional(&y);
    if f.is_empty() {
        let mask = y.iter().enumerate().filter(|(_, v)| v.is_one()).fold(0u64, |m, (i, _)| m | 1 << i);
        out.add(mask, pr);
        return Ok(());
    }
    if f.len() == 1 {
        breach!("single fractional entry {:?} left; sum not integral", y[f[0]]);
    }
    if depth >= y.len() {
        breach!("pivotal rounding exceeded {} merges", y.len() - 1);
    }
    let (i, j) = (f[0], f[1]);
    let (a, b) = (y[i].clone(), y[j].clone());
    let s = a.clone() + b.clone();
    let two = T::one() + T::one();
    let (p_first, first, second) = if s < T::one() {
        (a / s.clone(), (s.clone(), T::zero()), (T::zero(), s))
    } else {
        ((T::one() - b) / (two - s.clone()), (T::one(), s.clone() - T::one()), (s - T::one(), T::one()))
    };
    for (p, (na, nb)) in [(p_first.clone(), first), (T::one() - p_first, second)] {
        if p.is_zero() {
            continue;
        }
        let mut ny = y.clone();
        ny[i] = na.snap();
        ny[j] = nb.snap();
        offline_branch(ny, pr.clone() * p, depth + 1, out)?;
    }
    Ok(())
}

pub fn exact_dist_offline<T: Scalar>(x: &[T]) -> Result<BitDistribution<T>> {
    check_exact_size(x.len())?;
    check_fractions(x)?;
    let (mut y, padded) = pad(x);
    snap_all(&mut y);
    let mut d = BitDistribution::new(y.len());
    offline_branch(y, T::one(), 0, &mut d)?;
    Ok(strip_padding(d, padded))
}

/// Law of `threshold_round` over a uniform threshold.
pub fn exact_dist_threshold<T: Scalar>(x: &[T]) -> Result<BitDistribution<T>> {
    check_exact_size(x.len())?;
    let mut cuts = vec![T::zero(), T::one()];
    let mut sum = CompensatedSum::new();
    for v in x {
        sum.add(v.clone());
        let s = sum.value().snap();
        cuts.push(s.clone() - s.floor());
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).expect("ordered"));
    cuts.dedup();
    let half = T::from_f64_lossy(0.5);
    let mut d = BitDistribution::new(x.len());
    for w in cuts.windows(2) {
        let len = w[1].clone() - w[0].clone();
        if len <= T::zero() {
            continue;
        }
        let tau = (w[0].clone() + w[1].clone()) * half.clone();
        let sel = threshold_round(x, tau);
        let mask = sel.iter().enumerate().filter(|(_, &b)| b).fold(0u64, |m, (i, _)| m | 1 << i);
        d.add(mask, len);
    }
    Ok(d)
}
