//! Sparse Hilbert-space operators on a truncated [`Space`].

use std::ops::{Add, Mul};

use faer::Mat;

use crate::sparse::Csr;
use crate::space::Space;
use crate::{Error, Result, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    One,
    Two,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::One, Mode::Two];

    pub fn index(self) -> usize {
        match self {
            Mode::One => 0,
            Mode::Two => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Emitter {
    One,
    Two,
}

impl Emitter {
    pub fn index(self) -> usize {
        match self {
            Emitter::One => 0,
            Emitter::Two => 1,
        }
    }

    /// Emitters present in a space with `n` dots.
    pub fn present(n: usize) -> impl Iterator<Item = Emitter> {
        [Emitter::One, Emitter::Two].into_iter().take(n)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseOperator {
    mat: Csr,
    /// Change in total excitation number, when the operator has a definite one.
    exc_shift: Option<i32>,
}

impl SparseOperator {
    pub fn from_csr(mat: Csr) -> Self {
        Self { mat, exc_shift: None }
    }

    fn with_shift(mat: Csr, shift: i32) -> Self {
        Self { mat, exc_shift: Some(shift) }
    }

    pub fn identity(space: &Space) -> Self {
        Self::identity_of_dim(space.dim())
    }

    pub fn identity_of_dim(dim: usize) -> Self {
        Self::with_shift(Csr::identity(dim), 0)
    }

    pub fn zero(space: &Space) -> Self {
        Self::with_shift(Csr::zeros(space.dim(), space.dim()), 0)
    }

    pub fn annihilator(space: &Space, mode: Mode) -> Self {
        let m = mode.index();
        let trips = (0..space.dim())
            .filter_map(|i| {
                let n = space.state(i).photons[m];
                space
                    .shifted(i, None, Some((m, -1)))
                    .map(|j| (j, i, C64::new((n as f64).sqrt(), 0.0)))
            })
            .collect();
        Self::with_shift(Csr::from_triplets(space.dim(), space.dim(), trips), -1)
    }

    pub fn creator(space: &Space, mode: Mode) -> Self {
        Self::annihilator(space, mode).adjoint()
    }

    pub fn number(space: &Space, mode: Mode) -> Self {
        let m = mode.index();
        let trips = (0..space.dim())
            .map(|i| (i, i, C64::new(space.state(i).photons[m] as f64, 0.0)))
            .collect();
        Self::with_shift(Csr::from_triplets(space.dim(), space.dim(), trips), 0)
    }

    /// Lowering operator of one emitter. Errors if the space has fewer dots.
    pub fn qd_lowering(space: &Space, emitter: Emitter) -> Result<Self> {
        let k = emitter.index();
        if k >= space.n_emitters() {
            return Err(Error::InvalidParameter(format!(
                "emitter {} not present in a {}-emitter space",
                k + 1,
                space.n_emitters()
            )));
        }
        let trips = (0..space.dim())
            .filter(|&i| space.state(i).qd[k] == 1)
            .filter_map(|i| space.shifted(i, Some((k, 0)), None).map(|j| (j, i, C64::new(1.0, 0.0))))
            .collect();
        Ok(Self::with_shift(Csr::from_triplets(space.dim(), space.dim(), trips), -1))
    }

    pub fn qd_raising(space: &Space, emitter: Emitter) -> Result<Self> {
        Ok(Self::qd_lowering(space, emitter)?.adjoint())
    }

    pub fn csr(&self) -> &Csr {
        &self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn excitation_shift(&self) -> Option<i32> {
        self.exc_shift
    }

    pub fn adjoint(&self) -> Self {
        Self { mat: self.mat.adjoint(), exc_shift: self.exc_shift.map(|s| -s) }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { mat: self.mat.scale(s), exc_shift: self.exc_shift }
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    /// Sum of two operators. The excitation shift survives only when both
    /// terms agree on it (or one of them is empty).
    pub fn plus(&self, other: &Self) -> Self {
        let shift = match (self.mat.nnz(), other.mat.nnz()) {
            (0, _) => other.exc_shift,
            (_, 0) => self.exc_shift,
            _ if self.exc_shift == other.exc_shift => self.exc_shift,
            _ => None,
        };
        Self { mat: self.mat.add(&other.mat), exc_shift: shift }
    }

    pub fn times(&self, other: &Self) -> Self {
        let shift = match (self.exc_shift, other.exc_shift) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
        Self { mat: self.mat.mul(&other.mat), exc_shift: shift }
    }

    pub fn to_dense(&self) -> Mat<C64> {
        self.mat.to_dense()
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        self.mat.max_abs_diff(&self.mat.adjoint())
    }

    /// Hermitian to a relative tolerance of 1e-12 on the largest entry.
    pub fn is_hermitian(&self) -> bool {
        self.hermiticity_deviation() <= 1e-12 * self.mat.max_abs().max(1.0)
    }

    pub fn is_identity(&self) -> bool {
        self.mat.is_identity()
    }

    pub fn is_zero(&self) -> bool {
        self.mat.nnz() == 0
    }

    /// Recomputes the excitation shift from the entries, for operators built
    /// from raw matrices.
    pub fn infer_excitation_shift(&mut self, space: &Space) {
        let mut shift = None;
        for (r, c, _) in self.mat.iter() {
            let d = space.excitation(r) as i32 - space.excitation(c) as i32;
            match shift {
                None => shift = Some(d),
                Some(s) if s != d => {
                    self.exc_shift = None;
                    return;
                }
                _ => {}
            }
        }
        self.exc_shift = Some(shift.unwrap_or(0));
    }
}

impl Add for &SparseOperator {
    type Output = SparseOperator;
    fn add(self, rhs: Self) -> SparseOperator {
        self.plus(rhs)
    }
}

impl Mul for &SparseOperator {
    type Output = SparseOperator;
    fn mul(self, rhs: Self) -> SparseOperator {
        self.times(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::SpaceSpec;

    #[test]
    fn sigma_squares_to_zero() {
        let s = Space::new(SpaceSpec::new(2, 1, 1).unwrap()).unwrap();
        let sm = SparseOperator::qd_lowering(&s, Emitter::Two).unwrap();
        assert!((&sm * &sm).is_zero());
        assert_eq!(sm.excitation_shift(), Some(-1));
    }

    #[test]
    fn missing_emitter_is_an_error() {
        let s = Space::new(SpaceSpec::new(1, 1, 1).unwrap()).unwrap();
        assert!(SparseOperator::qd_lowering(&s, Emitter::Two).is_err());
    }

    #[test]
    fn number_is_adag_a() {
        let s = Space::new(SpaceSpec::new(1, 3, 2).unwrap()).unwrap();
        let a = SparseOperator::annihilator(&s, Mode::One);
        let n = &a.adjoint() * &a;
        assert!(n.csr().max_abs_diff(SparseOperator::number(&s, Mode::One).csr()) < 1e-14);
    }
}
