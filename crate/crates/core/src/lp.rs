//! Dense primal simplex for max c·x s.t. Ax ≤ b, x ≥ 0 with b ≥ 0 (the origin is
//! feasible, so no phase one). Bland's rule for anti-cycling.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram<T> {
    pub objective: Vec<T>,
    pub rows: Vec<Vec<(usize, T)>>,
    pub rhs: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpOptimum<T> {
    pub x: Vec<T>,
    pub value: T,
    pub pivots: usize,
}

impl<T: Scalar> LinearProgram<T> {
    pub fn new(n_vars: usize) -> Self {
        Self { objective: vec![T::zero(); n_vars], rows: Vec::new(), rhs: Vec::new() }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, T)>, rhs: T) {
        self.rows.push(coeffs);
        self.rhs.push(rhs);
    }

    /// Largest violation of any row or sign constraint at x.
    pub fn max_violation(&self, x: &[T]) -> T {
        let mut worst = T::zero();
        for v in x {
            if -v.clone() > worst {
                worst = -v.clone();
            }
        }
        for (row, b) in self.rows.iter().zip(&self.rhs) {
            let lhs = row.iter().fold(T::zero(), |acc, (j, a)| acc + a.clone() * x[*j].clone());
            let d = lhs - b.clone();
            if d > worst {
                worst = d;
            }
        }
        worst
    }

    pub fn solve(&self) -> Result<LpOptimum<T>> {
        let n = self.n_vars();
        let m = self.rows.len();
        if self.rhs.iter().any(|b| *b < T::zero()) {
            return Err(Error::Precondition("simplex needs a nonnegative right-hand side".into()));
        }
        let width = n + m + 1;
        let mut tab = vec![T::zero(); (m + 1) * width];
        for (r, row) in self.rows.iter().enumerate() {
            for (j, a) in row {
                if *j >= n {
                    return Err(Error::Validation(format!("row {r} references variable {j}")));
                }
                let cell = &mut tab[r * width + j];
                *cell = cell.clone() + a.clone();
            }
            tab[r * width + n + r] = T::one();
            tab[r * width + n + m] = self.rhs[r].clone();
        }
        // objective row holds reduced costs c_j - z_j
        for (j, c) in self.objective.iter().enumerate() {
            tab[m * width + j] = c.clone();
        }
        let mut basis: Vec<usize> = (n..n + m).collect();
        let tol = T::cmp_tol();
        let mut pivots = 0usize;
        loop {
            let Some(enter) = (0..n + m).find(|&j| tab[m * width + j] > tol) else {
                break;
            };
            let mut leave: Option<(usize, T)> = None;
            for r in 0..m {
                let a = tab[r * width + enter].clone();
                if a > tol {
                    let ratio = tab[r * width + n + m].clone() / a;
                    let better = match &leave {
                        None => true,
                        Some((lr, best)) => ratio < *best || (ratio == *best && basis[r] < basis[*lr]),
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((pr, _)) = leave else {
                return Err(Error::Domain("linear program is unbounded".into()));
            };
            let piv = tab[pr * width + enter].clone();
            for j in 0..width {
                let v = tab[pr * width + j].clone() / piv.clone();
                tab[pr * width + j] = v;
            }
            for r in 0..=m {
                if r == pr {
                    continue;
                }
                let f = tab[r * width + enter].clone();
                if f.is_zero() {
                    continue;
                }
                for j in 0..width {
                    let v = tab[r * width + j].clone() - f.clone() * tab[pr * width + j].clone();
                    tab[r * width + j] = v;
                }
            }
            basis[pr] = enter;
            pivots += 1;
        }
        let mut x = vec![T::zero(); n];
        for (r, &b) in basis.iter().enumerate() {
            if b < n {
                let v = tab[r * width + n + m].clone();
                x[b] = if v < T::zero() { T::zero() } else { v };
            }
        }
        let value = self.objective.iter().zip(&x).fold(T::zero(), |acc, (c, v)| acc + c.clone() * v.clone());
        Ok(LpOptimum { x, value, pivots })
    }
}
