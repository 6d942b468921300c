//! Liouville-space generators kept in factored form.
//!
//! A generator is stored as a sum of sandwich terms `c * L rho R`. That keeps
//! construction cheap and lets the sector code assemble only the blocks it
//! needs. [`SuperOperator::to_csr`] gives the full `dim^2 x dim^2` matrix in the
//! column-stacking convention `vec(L rho R) = (R^T (x) L) vec(rho)`, meant for
//! small spaces and tests.

use std::sync::Arc;

use faer::{Mat, MatRef};

use crate::operator::SparseOperator;
use crate::sparse::Csr;
use crate::{Error, Result, C64};

#[derive(Clone, Debug)]
pub struct SandwichTerm {
    pub coef: C64,
    pub left: Arc<SparseOperator>,
    pub right: Arc<SparseOperator>,
    left_id: bool,
    right_id: bool,
}

impl SandwichTerm {
    pub fn new(coef: C64, left: Arc<SparseOperator>, right: Arc<SparseOperator>) -> Self {
        let left_id = left.is_identity();
        let right_id = right.is_identity();
        Self { coef, left, right, left_id, right_id }
    }

    /// Shift in `N(row) - N(col)` that this term applies to a density-matrix
    /// element, when both factors have definite excitation shifts.
    pub fn sector_shift(&self) -> Option<i32> {
        Some(self.left.excitation_shift()? + self.right.excitation_shift()?)
    }

    fn apply_into(&self, rho: MatRef<'_, C64>, out: &mut Mat<C64>) {
        let lr = if self.left_id { None } else { Some(self.left.csr().mul_dense(rho)) };
        let lr_ref = lr.as_ref().map_or(rho, |m| m.as_ref());
        if self.right_id {
            for j in 0..out.ncols() {
                for i in 0..out.nrows() {
                    out[(i, j)] += self.coef * lr_ref[(i, j)];
                }
            }
        } else {
            let full = self.right.csr().dense_mul(lr_ref);
            for j in 0..out.ncols() {
                for i in 0..out.nrows() {
                    out[(i, j)] += self.coef * full[(i, j)];
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct SuperOperator {
    dim: usize,
    terms: Vec<SandwichTerm>,
}

impl SuperOperator {
    pub fn zero(dim: usize) -> Self {
        Self { dim, terms: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[SandwichTerm] {
        &self.terms
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Adds `coef * left rho right`. Zero coefficients and empty factors are skipped.
    pub fn push(&mut self, coef: C64, left: Arc<SparseOperator>, right: Arc<SparseOperator>) {
        assert_eq!(left.dim(), self.dim);
        assert_eq!(right.dim(), self.dim);
        if coef == C64::new(0.0, 0.0) || left.is_zero() || right.is_zero() {
            return;
        }
        self.terms.push(SandwichTerm::new(coef, left, right));
    }

    pub fn extend(&mut self, other: &SuperOperator) {
        assert_eq!(self.dim, other.dim);
        self.terms.extend(other.terms.iter().cloned());
    }

    pub fn plus(&self, other: &SuperOperator) -> SuperOperator {
        let mut out = self.clone();
        out.extend(other);
        out
    }

    pub fn scaled(&self, s: C64) -> SuperOperator {
        let mut out = self.clone();
        for t in &mut out.terms {
            t.coef *= s;
        }
        out
    }

    pub fn apply(&self, rho: MatRef<'_, C64>) -> Mat<C64> {
        assert_eq!((rho.nrows(), rho.ncols()), (self.dim, self.dim));
        let mut out = Mat::<C64>::zeros(self.dim, self.dim);
        for t in &self.terms {
            t.apply_into(rho, &mut out);
        }
        out
    }

    /// Full Liouville-space matrix acting on column-stacked density matrices.
    pub fn to_csr(&self) -> Csr {
        let d = self.dim;
        let mut trips = Vec::new();
        for t in &self.terms {
            let l_cols = t.left.csr().transpose();
            for k in 0..d {
                for l in 0..d {
                    for (i, lv) in l_cols.row(k) {
                        for (j, rv) in t.right.csr().row(l) {
                            trips.push((i + j * d, k + l * d, t.coef * lv * rv));
                        }
                    }
                }
            }
        }
        Csr::from_triplets(d * d, d * d, trips)
    }

    /// True if every term maps each excitation sector into itself.
    pub fn conserves_excitation(&self) -> bool {
        self.terms.iter().all(|t| t.sector_shift() == Some(0))
    }
}

fn arc(op: &SparseOperator) -> Arc<SparseOperator> {
    Arc::new(op.clone())
}

/// `-i [H, rho]` with `H` checked Hermitian to 1e-12 relative.
pub fn commutator_superop(h: &SparseOperator) -> Result<SuperOperator> {
    if !h.is_hermitian() {
        return Err(Error::NotHermitian { deviation: h.hermiticity_deviation() });
    }
    Ok(commutator_unchecked(h))
}

/// `-i (X rho - rho X)` for an arbitrary `X`; used for the two halves of a
/// Hermitian coupling when they are tracked as separate channels.
pub fn commutator_unchecked(x: &SparseOperator) -> SuperOperator {
    let id = identity_like(x);
    let xa = arc(x);
    let mut s = SuperOperator::zero(x.dim());
    s.push(C64::new(0.0, -1.0), xa.clone(), id.clone());
    s.push(C64::new(0.0, 1.0), id, xa);
    s
}

/// `rate * (C rho C^dag - 1/2 {C^dag C, rho})`.
pub fn lindblad_dissipator(c: &SparseOperator, rate: f64) -> Result<SuperOperator> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::InvalidParameter(format!("dissipation rate must be >= 0, got {rate}")));
    }
    Ok(pair_dissipator(c, &c.adjoint(), C64::new(rate, 0.0)))
}

/// `rate * (B rho A - 1/2 A B rho - 1/2 rho A B)`, the general two-operator
/// form that reduces to a Lindblad term for `A = B^dag`.
pub fn pair_dissipator(b: &SparseOperator, a: &SparseOperator, rate: C64) -> SuperOperator {
    let id = identity_like(b);
    let ab = Arc::new(a * b);
    let mut s = SuperOperator::zero(b.dim());
    s.push(rate, arc(b), arc(a));
    s.push(-0.5 * rate, ab.clone(), id.clone());
    s.push(-0.5 * rate, id, ab);
    s
}

pub(crate) fn identity_like(op: &SparseOperator) -> Arc<SparseOperator> {
    Arc::new(SparseOperator::identity_of_dim(op.dim()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::Mode;
    use crate::space::{Space, SpaceSpec};

    #[test]
    fn apply_matches_full_matrix() {
        let s = Space::new(SpaceSpec::new(1, 2, 1).unwrap()).unwrap();
        let a = SparseOperator::annihilator(&s, Mode::One);
        let l = lindblad_dissipator(&a, 0.7).unwrap();
        let d = s.dim();
        let rho = Mat::<C64>::from_fn(d, d, |i, j| C64::new((i + 2 * j) as f64, (i as f64) - (j as f64)));
        let out = l.apply(rho.as_ref());
        let full = l.to_csr();
        let v: Vec<C64> = (0..d * d).map(|k| rho[(k % d, k / d)]).collect();
        let w = full.matvec(&v);
        for k in 0..d * d {
            assert!((w[k] - out[(k % d, k / d)]).norm() < 1e-12);
        }
    }

    #[test]
    fn negative_rate_rejected() {
        let s = Space::new(SpaceSpec::new(1, 1, 1).unwrap()).unwrap();
        let a = SparseOperator::annihilator(&s, Mode::One);
        assert!(lindblad_dissipator(&a, -1.0).is_err());
    }
}
