//! Contention resolution for an explicit random subset R: every element i wins
//! with probability exactly alpha·v_i, alpha being the balance ratio.

use crate::error::{Error, Result};
use crate::flow::{quantize, FlowNetwork, Rounding};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const MAX_ACTIVE: usize = 20;
const TINY_ATOM: f64 = 1e-15;

/// Law of a random subset of `elements`; atom masks index positions in `elements`.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportDistribution {
    pub elements: Vec<usize>,
    pub atoms: Vec<(u64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct RawAtom {
    set: Vec<usize>,
    p: f64,
}

#[derive(Serialize, Deserialize)]
struct RawSupport {
    elements: Vec<usize>,
    atoms: Vec<RawAtom>,
}

impl SupportDistribution {
    pub fn new(elements: Vec<usize>, atoms: Vec<(u64, f64)>) -> Result<Self> {
        if elements.len() > 64 {
            return Err(Error::TooLarge { what: "support elements", got: elements.len(), limit: 64 });
        }
        let d = Self { elements, atoms };
        d.check()?;
        Ok(d)
    }

    fn check(&self) -> Result<()> {
        let n = self.elements.len();
        let all = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        let mut total = 0.0;
        for &(m, p) in &self.atoms {
            if m & !all != 0 {
                return Err(Error::Validation(format!("atom mask {m:#b} outside {n} elements")));
            }
            if !(p >= 0.0) {
                return Err(Error::Validation(format!("atom probability {p} negative")));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("atom probabilities sum to {total}")));
        }
        Ok(())
    }

    /// Independent inclusion with the given probabilities.
    pub fn product(elements: Vec<usize>, probs: &[f64]) -> Result<Self> {
        let k = probs.len();
        if k > MAX_ACTIVE {
            return Err(Error::TooLarge { what: "product support", got: k, limit: MAX_ACTIVE });
        }
        let mut atoms = Vec::new();
        for m in 0..(1u64 << k) {
            let p: f64 = (0..k).map(|i| if m >> i & 1 == 1 { probs[i] } else { 1.0 - probs[i] }).product();
            if p > 0.0 {
                atoms.push((m, p));
            }
        }
        Self::new(elements, atoms)
    }

    pub fn position(&self, id: usize) -> Option<usize> {
        self.elements.iter().position(|&e| e == id)
    }

    pub fn inclusion_probs(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.elements.len()];
        for &(mask, p) in &self.atoms {
            for (i, mi) in m.iter_mut().enumerate() {
                if mask >> i & 1 == 1 {
                    *mi += p;
                }
            }
        }
        m
    }

    /// Pr[R ∩ S ≠ ∅] for a position mask S.
    pub fn hit_prob(&self, s: u64) -> f64 {
        self.atoms.iter().filter(|(m, _)| m & s != 0).map(|a| a.1).sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let raw = RawSupport {
            elements: self.elements.clone(),
            atoms: self
                .atoms
                .iter()
                .map(|&(m, p)| RawAtom {
                    set: (0..self.elements.len()).filter(|i| m >> i & 1 == 1).map(|i| self.elements[i]).collect(),
                    p,
                })
                .collect(),
        };
        serde_json::to_value(raw).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawSupport = serde_json::from_str(text)?;
        let mut atoms = Vec::with_capacity(raw.atoms.len());
        for a in raw.atoms {
            let mut m = 0u64;
            for id in a.set {
                let pos = raw
                    .elements
                    .iter()
                    .position(|&e| e == id)
                    .ok_or_else(|| Error::Validation(format!("atom names undeclared element {id}")))?;
                m |= 1 << pos;
            }
            atoms.push((m, a.p));
        }
        Self::new(raw.elements, atoms)
    }
}

fn active_positions(dist: &SupportDistribution, v: &[f64]) -> Result<Vec<usize>> {
    if v.len() != dist.elements.len() {
        return Err(Error::Domain(format!("{} weights for {} elements", v.len(), dist.elements.len())));
    }
    if v.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::Domain("weights must be non-negative".into()));
    }
    let active: Vec<usize> = (0..v.len()).filter(|&i| v[i] > 0.0).collect();
    if active.is_empty() {
        return Err(Error::Domain("all weights are zero".into()));
    }
    if active.len() > MAX_ACTIVE {
        return Err(Error::TooLarge {
            what: "active CRS elements (use the downscaled polytime regime)",
            got: active.len(),
            limit: MAX_ACTIVE,
        });
    }
    Ok(active)
}

fn project(mask: u64, active: &[usize]) -> usize {
    active.iter().enumerate().filter(|(_, &p)| mask >> p & 1 == 1).fold(0, |acc, (k, _)| acc | 1 << k)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BalanceRatio {
    pub alpha: f64,
    /// Minimizing set as a position mask.
    pub argmin: u64,
}

pub fn balance_ratio_detail(dist: &SupportDistribution, v: &[f64]) -> Result<BalanceRatio> {
    let active = active_positions(dist, v)?;
    let k = active.len();
    let full = (1usize << k) - 1;
    let mut g = vec![0.0; 1 << k];
    let mut total = 0.0;
    for &(m, p) in &dist.atoms {
        g[project(m, &active)] += p;
        total += p;
    }
    // g[T] becomes Pr[R ∩ active ⊆ T]
    for b in 0..k {
        for t in 0..=full {
            if t >> b & 1 == 1 {
                g[t] += g[t ^ 1 << b];
            }
        }
    }
    let mut vs = vec![0.0; 1 << k];
    let mut best = BalanceRatio { alpha: f64::INFINITY, argmin: 0 };
    for s in 1..=full {
        let low = s.trailing_zeros() as usize;
        vs[s] = vs[s & (s - 1)] + v[active[low]];
        let hit = (total - g[full ^ s]).max(0.0);
        let r = hit / vs[s];
        if r < best.alpha {
            let argmin = (0..k).filter(|&b| s >> b & 1 == 1).fold(0u64, |m, b| m | 1 << active[b]);
            best = BalanceRatio { alpha: r, argmin };
        }
    }
    Ok(best)
}

pub fn balance_ratio(dist: &SupportDistribution, v: &[f64]) -> Result<f64> {
    Ok(balance_ratio_detail(dist, v)?.alpha)
}

/// Per-realization selection probabilities over element positions.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionRule {
    pub elements: Vec<usize>,
    pub alpha: f64,
    pub v: Vec<f64>,
    pub rows: BTreeMap<u64, Vec<(usize, f64)>>,
}

pub fn build_selector(dist: &SupportDistribution, v: &[f64]) -> Result<SelectionRule> {
    let active = active_positions(dist, v)?;
    let alpha = balance_ratio(dist, v)?;
    let mut merged: BTreeMap<u64, f64> = BTreeMap::new();
    for &(m, p) in &dist.atoms {
        *merged.entry(m).or_insert(0.0) += p;
    }
    let is_active = |pos: usize| v[pos] > 0.0;
    let mut rows: BTreeMap<u64, Vec<(usize, f64)>> = BTreeMap::new();
    let flow_atoms: Vec<(u64, f64)> = merged
        .iter()
        .filter(|(&m, &p)| {
            let members: Vec<usize> = (0..v.len()).filter(|&i| m >> i & 1 == 1 && is_active(i)).collect();
            if p < TINY_ATOM || members.is_empty() {
                let share = if members.is_empty() { 0.0 } else { 1.0 / members.len() as f64 };
                rows.insert(m, members.into_iter().map(|i| (i, share)).collect());
                false
            } else {
                true
            }
        })
        .map(|(&m, &p)| (m, p))
        .collect();

    let a = flow_atoms.len();
    let k = active.len();
    let (src, sink) = (0, 1 + a + k);
    let mut net = FlowNetwork::new(sink + 1);
    let mut src_edges = Vec::with_capacity(a);
    let mut mid_edges: Vec<Vec<(usize, usize)>> = Vec::with_capacity(a);
    for (ai, &(m, p)) in flow_atoms.iter().enumerate() {
        src_edges.push(net.add_edge_int(src, 1 + ai, quantize(p, Rounding::Nearest).max(1)));
        let mut mids = Vec::new();
        for (ki, &pos) in active.iter().enumerate() {
            if m >> pos & 1 == 1 {
                mids.push((pos, net.add_infinite_edge(1 + ai, 1 + a + ki)));
            }
        }
        mid_edges.push(mids);
    }
    let mut target = 0.0;
    for (ki, &pos) in active.iter().enumerate() {
        net.add_edge_int(1 + a + ki, sink, quantize(alpha * v[pos], Rounding::Down));
        target += alpha * v[pos];
    }
    let value = net.max_flow(src, sink);
    if value < target - 1e-6 {
        return Err(Error::InvariantBreach(format!("CRS flow {value} below alpha·Σv = {target}")));
    }
    for (ai, &(m, _)) in flow_atoms.iter().enumerate() {
        let cap = net.capacity_int(src_edges[ai]) as f64;
        let row = mid_edges[ai]
            .iter()
            .map(|&(pos, e)| (pos, net.flow_int(e) as f64 / cap))
            .filter(|&(_, q)| q > 0.0)
            .collect();
        rows.insert(m, row);
    }
    Ok(SelectionRule { elements: dist.elements.clone(), alpha, v: v.to_vec(), rows })
}

impl SelectionRule {
    /// Winner position for the realized bidder mask, or None.
    pub fn select(&self, realized: u64, u: f64) -> Result<Option<usize>> {
        if realized == 0 {
            return Ok(None);
        }
        let row = self.rows.get(&realized).ok_or(Error::UnmodeledRealization(realized))?;
        let mut acc = 0.0;
        for &(pos, q) in row {
            acc += q;
            if u < acc {
                if realized >> pos & 1 == 0 {
                    return Err(Error::InvariantBreach(format!("selected {pos} outside realized set")));
                }
                return Ok(Some(pos));
            }
        }
        Ok(None)
    }

    pub fn selection_marginals(&self, dist: &SupportDistribution) -> Vec<f64> {
        let mut out = vec![0.0; self.elements.len()];
        for &(m, p) in &dist.atoms {
            if let Some(row) = self.rows.get(&m) {
                for &(pos, q) in row {
                    out[pos] += p * q;
                }
            }
        }
        out
    }
}
