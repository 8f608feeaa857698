//! Group-discount / individual-markup scaling of fractions, the sufficient
//! feasibility condition on (eps, delta), the closed-form ratio and its optimizer.

use crate::error::{Error, Result};
use num_traits::Float;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Matching,
    BMatching,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matching" => Ok(Variant::Matching),
            "b-matching" | "b_matching" => Ok(Variant::BMatching),
            other => Err(Error::Domain(format!("unknown variant {other}"))),
        }
    }
}

const FEAS_TOL: f64 = 1e-12;

fn c<T: Float>(v: f64) -> T {
    T::from(v).expect("representable")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingParams<T = f64> {
    pub eps: T,
    pub delta: T,
    pub variant: Variant,
    /// Threshold on the original fractional degree separating low from high nodes.
    pub theta: T,
    pub theta1: T,
    pub theta2: T,
}

impl<T: Float> ScalingParams<T> {
    /// Derived thresholds without the feasibility check.
    pub fn unchecked(eps: T, delta: T, variant: Variant) -> Self {
        let s = eps + delta;
        let (theta, theta1, theta2) = match variant {
            Variant::Matching => {
                let th = if s > T::zero() { delta / s } else { T::one() };
                (th, T::zero(), th)
            }
            Variant::BMatching => {
                if s > T::zero() {
                    let d3 = c::<T>(3.0) + c::<T>(2.0) * delta;
                    let t1 = eps / (d3 * s);
                    let t2 = (eps + c::<T>(3.0) * delta + c::<T>(2.0) * delta * delta) / (d3 * s);
                    (t2, t1, t2)
                } else {
                    (T::one(), T::zero(), T::one())
                }
            }
        };
        ScalingParams { eps, delta, variant, theta, theta1, theta2 }
    }

    pub fn new(eps: T, delta: T, variant: Variant) -> Result<Self> {
        if !(eps >= T::zero() && eps < T::one() && delta >= T::zero() && delta <= T::one()) {
            return Err(Error::Domain(format!(
                "eps {:?} must lie in [0,1) and delta {:?} in [0,1]",
                eps.to_f64(),
                delta.to_f64()
            )));
        }
        check_feasible(eps, delta, variant)?;
        Ok(Self::unchecked(eps, delta, variant))
    }

    pub fn identity(variant: Variant) -> Self {
        Self::unchecked(T::zero(), T::zero(), variant)
    }

    /// Threshold the core step applies to the scaled degree.
    pub fn core_theta(&self) -> T {
        match self.variant {
            Variant::Matching => self.theta * (T::one() - self.eps),
            Variant::BMatching => self.theta2 * (T::one() - self.eps) + self.theta1 * (self.delta + self.eps),
        }
    }

    fn unit_map(&self, f: T) -> T {
        let lo = T::one() + self.delta;
        let mid = T::one() - self.eps;
        match self.variant {
            Variant::Matching => f * mid + (self.eps + self.delta) * (f - self.theta).max(T::zero()),
            Variant::BMatching => {
                let (t1, t2) = (self.theta1, self.theta2);
                if f < t1 {
                    f * lo
                } else if f < t2 {
                    t1 * lo + (f - t1) * mid
                } else {
                    t1 * lo + (t2 - t1) * mid + (f - t2) * lo
                }
            }
        }
    }

    /// Scaled prefix ŝ as a function of the original prefix s.
    pub fn hat_cumulative(&self, s: T) -> T {
        match self.variant {
            Variant::Matching => self.unit_map(s),
            Variant::BMatching => {
                let fl = s.floor();
                let f = s - fl;
                let v = fl + self.unit_map(f);
                if f.is_zero() {
                    fl
                } else {
                    v
                }
            }
        }
    }
}

/// x̂ for a node whose original prefix is `s` receiving fraction `x` (matching map).
pub fn scale_hat<T: Float>(x: T, s: T, params: &ScalingParams<T>) -> T {
    let p = ScalingParams { variant: Variant::Matching, ..*params };
    p.hat_cumulative(s + x) - p.hat_cumulative(s)
}

/// x̂ under the b-matching map; rates apply to the fractional position.
pub fn scale_hat_b<T: Float>(x: T, s: T, params: &ScalingParams<T>) -> T {
    let p = ScalingParams::unchecked(params.eps, params.delta, Variant::BMatching);
    p.hat_cumulative(s + x) - p.hat_cumulative(s)
}

pub fn f_eps_delta<T: Float>(z: T, eps: T, delta: T) -> T {
    (-z * (T::one() + delta)).exp() - (T::one() - z * (T::one() - eps))
}

pub fn f_prime<T: Float>(z: T, eps: T, delta: T) -> T {
    -(T::one() + delta) * (-z * (T::one() + delta)).exp() + (T::one() - eps)
}

/// Point at which the sufficient condition is evaluated.
pub fn feasibility_point<T: Float>(eps: T, delta: T, variant: Variant) -> T {
    let s = eps + delta;
    if s <= T::zero() {
        return T::zero();
    }
    match variant {
        Variant::Matching => eps / (c::<T>(2.0) * s),
        Variant::BMatching => eps / ((c::<T>(3.0) + c::<T>(2.0) * delta) * s),
    }
}

pub fn check_feasible<T: Float>(eps: T, delta: T, variant: Variant) -> Result<()> {
    let z = feasibility_point(eps, delta, variant);
    let f = f_eps_delta(z, eps, delta);
    let fp = f_prime(z, eps, delta);
    let tol = c::<T>(FEAS_TOL);
    if f < -tol {
        return Err(Error::InfeasibleParams(format!("f(z*) = {:e} < 0 at z* = {:e}", f.to_f64().unwrap(), z.to_f64().unwrap())));
    }
    if fp < -tol {
        return Err(Error::InfeasibleParams(format!("f'(z*) = {:e} < 0 at z* = {:e}", fp.to_f64().unwrap(), z.to_f64().unwrap())));
    }
    Ok(())
}

pub fn is_feasible<T: Float>(eps: T, delta: T, variant: Variant) -> bool {
    eps >= T::zero() && delta >= T::zero() && eps < T::one() && check_feasible(eps, delta, variant).is_ok()
}

/// 1 − exp(−1 − δ + (ε+δ)/(1−ε))·(1−ε)/(1+δ), without the feasibility check.
pub fn ratio_formula<T: Float>(eps: T, delta: T) -> T {
    let one = T::one();
    one - (-one - delta + (eps + delta) / (one - eps)).exp() * (one - eps) / (one + delta)
}

pub fn ratio_bound<T: Float>(params: &ScalingParams<T>) -> Result<T> {
    check_feasible(params.eps, params.delta, params.variant)?;
    Ok(ratio_formula(params.eps, params.delta))
}

/// g(y) = 1 − exp(−(1−y)(1+δ))·(1 − y(1−ε)).
pub fn markup_g<T: Float>(y: T, eps: T, delta: T) -> T {
    let one = T::one();
    one - (-(one - y) * (one + delta)).exp() * (one - y * (one - eps))
}

pub fn markup_minimizer<T: Float>(eps: T, delta: T) -> T {
    (eps + delta) / ((T::one() - eps) * (T::one() + delta))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizedParams {
    pub eps: f64,
    pub delta: f64,
    pub alpha: f64,
    pub variant: Variant,
}

impl OptimizedParams {
    pub fn params(&self) -> ScalingParams {
        ScalingParams::unchecked(self.eps, self.delta, self.variant)
    }
}

/// Smallest feasible eps for the given delta: scan up in 1e−3 steps, then bisect.
fn boundary_eps(delta: f64, variant: Variant) -> Option<f64> {
    if is_feasible(0.0, delta, variant) {
        return Some(0.0);
    }
    let hi = (1..=400).map(|k| k as f64 * 1e-3).find(|&e| is_feasible(e, delta, variant))?;
    let (mut lo, mut hi) = (hi - 1e-3, hi);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if is_feasible(mid, delta, variant) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Grid search (step 1e−3 on [0,0.2]²), then refinement along the feasibility
/// boundary: the ratio decreases in eps, so for each delta eps is pushed to its
/// smallest feasible value and delta is searched with step halving down to 1e−9.
pub fn optimize_params(variant: Variant) -> OptimizedParams {
    let mut best = (0.0, 0.0, ratio_formula(0.0, 0.0));
    for a in 0..=200 {
        for b in 0..=200 {
            let (e, d) = (a as f64 * 1e-3, b as f64 * 1e-3);
            if is_feasible(e, d, variant) {
                let v = ratio_formula(e, d);
                if v > best.2 {
                    best = (e, d, v);
                }
            }
        }
    }
    let along = |d: f64| boundary_eps(d, variant).map(|e| (e, d, ratio_formula(e, d)));
    if let Some(b) = along(best.1) {
        if b.2 > best.2 {
            best = b;
        }
    }
    let mut step = 1e-3;
    while step >= 1e-9 {
        let mut moved = false;
        for d in [best.1 + step, best.1 - step] {
            if !(0.0..=1.0).contains(&d) {
                continue;
            }
            if let Some(c) = along(d) {
                if c.2 > best.2 {
                    best = c;
                    moved = true;
                    break;
                }
            }
        }
        if !moved {
            step /= 2.0;
        }
    }
    OptimizedParams { eps: best.0, delta: best.1, alpha: best.2, variant }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matching_examples() {
        let p = ScalingParams::new(0.0480, 0.0643, Variant::Matching).unwrap();
        assert!((p.theta - 0.0643 / 0.1123).abs() < 1e-15);
        assert!((scale_hat(0.3, 0.0, &p) - 0.2856).abs() < 1e-12);
        assert!((scale_hat(0.1, 0.6, &p) - 0.10643).abs() < 1e-12);
        let id = ScalingParams::<f64>::identity(Variant::Matching);
        assert_eq!(scale_hat(0.37, 0.21, &id), 0.37);
        assert!(ratio_bound(&p).unwrap() >= 0.652);
    }

    #[test]
    fn f_values() {
        assert_eq!(f_eps_delta(0.0, 0.3, 0.1), 0.0);
        assert!((f_eps_delta(1.0f64, 0.0, 0.0) - (-1.0f64).exp()).abs() < 1e-15);
        let z = feasibility_point(0.0480, 0.0643, Variant::Matching);
        assert!(f_eps_delta(z, 0.0480, 0.0643) >= 0.0);
        assert!(f_prime(z, 0.0480, 0.0643) >= 0.0);
    }

    #[test]
    fn identity_ratio() {
        let p = ScalingParams::new(0.0, 0.0, Variant::Matching).unwrap();
        assert!((ratio_bound(&p).unwrap() - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn infeasible_named() {
        let e = ScalingParams::new(0.0, 0.1, Variant::Matching).unwrap_err();
        assert!(e.to_string().contains("f'(z*)"));
    }

    #[test]
    fn b_matching_thresholds() {
        let p = ScalingParams::<f64>::unchecked(0.0347, 0.0425, Variant::BMatching);
        assert!(0.0 <= p.theta1 && p.theta1 <= p.theta2 && p.theta2 <= 1.0);
        assert!((p.theta2 - p.theta1 - 0.0425 / (0.0347 + 0.0425)).abs() < 1e-12);
        let avg = (p.theta2 - p.theta1) * (1.0 - p.eps) + (1.0 - p.theta2 + p.theta1) * (1.0 + p.delta);
        assert!((avg - 1.0).abs() < 1e-12);
        assert!((p.hat_cumulative(3.0) - 3.0).abs() < 1e-12);
        assert!((p.hat_cumulative(2.999999) - 3.0).abs() < 1e-5);
        let span = scale_hat_b(p.theta2 - p.theta1, 1.0 + p.theta1, &p);
        assert!((span - (p.theta2 - p.theta1) * (1.0 - p.eps)).abs() < 1e-12);
        assert!((p.hat_cumulative(1.0 + p.theta2) - 1.0 - p.core_theta()).abs() < 1e-12);
        assert!(ratio_formula(0.0347, 0.0425) >= 0.646);
        assert!((scale_hat_b(0.4, 1.3, &ScalingParams::identity(Variant::BMatching)) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn optimizer_targets() {
        let m = optimize_params(Variant::Matching);
        assert!(m.alpha >= 0.6519);
        assert!((m.eps - 0.0480).abs() <= 0.003 && (m.delta - 0.0643).abs() <= 0.003);
        let b = optimize_params(Variant::BMatching);
        assert!(b.alpha >= 0.6459);
        assert!((b.eps - 0.0347).abs() <= 0.003 && (b.delta - 0.0425).abs() <= 0.003);
        assert!(ScalingParams::new(b.eps, b.delta, Variant::BMatching).is_ok());
    }

    #[test]
    fn f32_scaling() {
        let p = ScalingParams::<f32>::new(0.048, 0.0643, Variant::Matching).unwrap();
        assert!((scale_hat(0.3f32, 0.0, &p) - 0.2856).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn minimizer_is_minimum(y in -1.0f64..2.0) {
            let (e, d) = (0.0480, 0.0643);
            prop_assert!(markup_g(y, e, d) >= markup_g(markup_minimizer(e, d), e, d) - 1e-15);
        }

        #[test]
        fn hat_prefix_bounded(s in 0.0f64..1.0, x in 0.0f64..1.0) {
            let p = ScalingParams::new(0.0480, 0.0643, Variant::Matching).unwrap();
            let z = (s + x).min(1.0);
            prop_assert!(p.hat_cumulative(z) <= z + 1e-15);
            prop_assert!(scale_hat(z - s.min(z), s.min(z), &p) >= 0.0);
        }

        #[test]
        fn b_map_keeps_floors(s in 0.0f64..5.0) {
            let p = ScalingParams::<f64>::unchecked(0.0347, 0.0425, Variant::BMatching);
            let h = p.hat_cumulative(s);
            prop_assert_eq!(h.floor(), s.floor());
            prop_assert!(h >= s.floor() && h <= s.ceil());
        }
    }
}
