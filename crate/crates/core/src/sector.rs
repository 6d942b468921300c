//! Excitation-number sectors of Liouville space and a block-tridiagonal
//! direct solver on them.
//!
//! Every generator in this model commutes with the total excitation number
//! superoperator, so an element `rho_ij` only ever couples to elements with
//! the same `k = N(i) - N(j)`. Within a sector, grouping elements by `N(j)`
//! gives blocks that are coupled only to their neighbours (pump and decay
//! move `N` by one), which is what [`BlockLu`] exploits.

use std::ops::Range;

use faer::linalg::solvers::PartialPivLu;
use faer::prelude::Solve;
use faer::{Mat, MatRef};

use crate::space::Space;
use crate::sparse::Csr;
use crate::superop::SuperOperator;
use crate::{Error, Result, C64};

const ABSENT: u32 = u32::MAX;

#[derive(Clone, Debug)]
pub struct Sector {
    shift: i32,
    dim: usize,
    pairs: Vec<(u32, u32)>,
    offsets: Vec<usize>,
    col_exc: Vec<usize>,
    lookup: Vec<u32>,
}

impl Sector {
    /// The sector of elements `rho_ij` with `N(i) - N(j) = shift`, or `None`
    /// if it is empty in this truncation.
    pub fn new(space: &Space, shift: i32) -> Option<Self> {
        let d = space.dim();
        let mut pairs = Vec::new();
        let mut offsets = vec![0];
        let mut col_exc = Vec::new();
        let mut lookup = vec![ABSENT; d * d];
        for e in 0..=space.max_excitation() {
            let er = e as i64 + shift as i64;
            if er < 0 || er as usize > space.max_excitation() {
                continue;
            }
            let rows = space.excitation_class(er as usize);
            let cols = space.excitation_class(e);
            if rows.is_empty() || cols.is_empty() {
                continue;
            }
            for &j in cols {
                for &i in rows {
                    lookup[i + j * d] = pairs.len() as u32;
                    pairs.push((i as u32, j as u32));
                }
            }
            offsets.push(pairs.len());
            col_exc.push(e);
        }
        if pairs.is_empty() {
            return None;
        }
        Some(Self { shift, dim: d, pairs, offsets, col_exc, lookup })
    }

    pub fn all(space: &Space) -> Vec<Sector> {
        let m = space.max_excitation() as i32;
        (-m..=m).filter_map(|k| Sector::new(space, k)).collect()
    }

    pub fn shift(&self) -> i32 {
        self.shift
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn hilbert_dim(&self) -> usize {
        self.dim
    }

    pub fn n_blocks(&self) -> usize {
        self.col_exc.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn block_range(&self, b: usize) -> Range<usize> {
        self.offsets[b]..self.offsets[b + 1]
    }

    /// Excitation number of the column index shared by block `b`.
    pub fn block_col_excitation(&self, b: usize) -> usize {
        self.col_exc[b]
    }

    pub fn block_of(&self, idx: usize) -> usize {
        self.offsets.partition_point(|&o| o <= idx) - 1
    }

    pub fn pair(&self, idx: usize) -> (usize, usize) {
        let (i, j) = self.pairs[idx];
        (i as usize, j as usize)
    }

    pub fn index_of(&self, i: usize, j: usize) -> Option<usize> {
        match self.lookup[i + j * self.dim] {
            ABSENT => None,
            v => Some(v as usize),
        }
    }

    pub fn gather(&self, rho: MatRef<'_, C64>) -> Vec<C64> {
        self.pairs.iter().map(|&(i, j)| rho[(i as usize, j as usize)]).collect()
    }

    pub fn scatter(&self, x: &[C64], rho: &mut Mat<C64>) {
        for (&(i, j), v) in self.pairs.iter().zip(x) {
            rho[(i as usize, j as usize)] = *v;
        }
    }

    /// Largest entry of `rho` that falls in this sector.
    pub fn weight(&self, rho: MatRef<'_, C64>) -> f64 {
        self.pairs
            .iter()
            .fold(0.0_f64, |m, &(i, j)| m.max(rho[(i as usize, j as usize)].norm()))
    }
}

/// A generator restricted to one sector.
#[derive(Clone, Debug)]
pub struct SectorMatrix {
    csr: Csr,
    offsets: Vec<usize>,
}

impl SectorMatrix {
    /// Restricts `op` to `sector`. Every term must conserve excitation number
    /// and only couple neighbouring blocks.
    pub fn assemble(op: &SuperOperator, sector: &Sector) -> Result<Self> {
        let n = sector.len();
        let mut prepared = Vec::with_capacity(op.terms().len());
        for t in op.terms() {
            if t.sector_shift() != Some(0) {
                return Err(Error::InvalidParameter(
                    "generator term does not conserve excitation number".into(),
                ));
            }
            prepared.push((t.coef, t.left.csr().transpose(), t.right.csr()));
        }
        // Column-by-column build with a dense accumulator, then transpose.
        let mut acc = vec![C64::new(0.0, 0.0); n];
        let mut mark = vec![usize::MAX; n];
        let mut touched = Vec::new();
        let mut trips_t = Vec::new();
        for s in 0..n {
            let (p, q) = sector.pair(s);
            let bs = sector.block_of(s);
            touched.clear();
            for (coef, lt, r) in &prepared {
                for (i, lv) in lt.row(p) {
                    let cl = *coef * lv;
                    for (j, rv) in r.row(q) {
                        let t = sector.index_of(i, j).ok_or_else(|| {
                            Error::InvalidParameter("generator maps outside its sector".into())
                        })?;
                        if mark[t] != s {
                            mark[t] = s;
                            acc[t] = C64::new(0.0, 0.0);
                            touched.push(t);
                        }
                        acc[t] += cl * rv;
                    }
                }
            }
            for &t in &touched {
                if acc[t] != C64::new(0.0, 0.0) {
                    let bt = sector.block_of(t);
                    if bt.abs_diff(bs) > 1 {
                        return Err(Error::InvalidParameter(
                            "generator couples non-neighbouring excitation blocks".into(),
                        ));
                    }
                    trips_t.push((t, s, acc[t]));
                }
            }
        }
        Ok(Self { csr: Csr::from_triplets(n, n, trips_t), offsets: sector.offsets().to_vec() })
    }

    pub fn csr(&self) -> &Csr {
        &self.csr
    }

    pub fn len(&self) -> usize {
        self.csr.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_blocks(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        self.csr.matvec(x)
    }

    /// Principal submatrix over the indices with `keep[i]`. The block
    /// structure carries over with shrunken blocks; emptied blocks vanish.
    pub fn restrict(&self, keep: &[bool]) -> Self {
        let mut map = vec![None; self.len()];
        let mut rows = Vec::new();
        let mut offsets = vec![0];
        for b in 0..self.n_blocks() {
            for i in self.range(b) {
                if keep[i] {
                    map[i] = Some(rows.len());
                    rows.push(i);
                }
            }
            if rows.len() > *offsets.last().unwrap() {
                offsets.push(rows.len());
            }
        }
        let csr = self.csr.select(&rows, &map, rows.len());
        Self { csr, offsets }
    }

    /// `M + s I`
    pub fn with_diagonal_shift(&self, s: C64) -> Self {
        let n = self.len();
        let diag = Csr::from_triplets(n, n, (0..n).map(|i| (i, i, s)).collect());
        Self { csr: self.csr.add(&diag), offsets: self.offsets.clone() }
    }

    fn range(&self, b: usize) -> Range<usize> {
        self.offsets[b]..self.offsets[b + 1]
    }

    /// Sparse block `(br, bc)` in local indices.
    pub fn block(&self, br: usize, bc: usize) -> Csr {
        let rows = self.range(br);
        let cols = self.range(bc);
        let mut trips = Vec::new();
        for (lr, r) in rows.clone().enumerate() {
            for (c, v) in self.csr.row(r) {
                if cols.contains(&c) {
                    trips.push((lr, c - cols.start, v));
                }
            }
        }
        Csr::from_triplets(rows.len(), cols.len(), trips)
    }

    /// Bytes held by the dense block factors plus the largest transient.
    pub fn lu_memory_bytes(&self, first_block: usize) -> usize {
        let sizes: Vec<usize> = (first_block..self.n_blocks()).map(|b| self.range(b).len()).collect();
        let held: usize = sizes.iter().map(|m| m * m).sum();
        let transient = sizes.windows(2).map(|w| w[0] * w[1]).max().unwrap_or(0);
        16 * (held + 2 * transient)
    }

    /// Factors `alpha I + beta M` restricted to blocks `first_block..`.
    pub fn factor(&self, alpha: C64, beta: C64, first_block: usize) -> Result<BlockLu> {
        let nb = self.n_blocks();
        if first_block >= nb {
            return Err(Error::InvalidParameter("no blocks left to factor".into()));
        }
        let mut lus = Vec::with_capacity(nb - first_block);
        let mut upper = Vec::with_capacity(nb - first_block);
        let mut lower = Vec::with_capacity(nb - first_block);
        let mut w_prev: Option<Mat<C64>> = None;
        let mut min_pivot = f64::INFINITY;
        for b in first_block..nb {
            let m = self.range(b).len();
            let diag = self.block(b, b).scale(beta);
            let mut s = diag.to_dense();
            for i in 0..m {
                s[(i, i)] += alpha;
            }
            let low = if b > first_block { self.block(b, b - 1).scale(beta) } else { Csr::zeros(m, 0) };
            if let Some(w) = &w_prev {
                let corr = low.mul_dense(w.as_ref());
                s -= &corr;
            }
            let lu = s.partial_piv_lu();
            let u = lu.U();
            for i in 0..m {
                let p = u[(i, i)].norm();
                if !p.is_finite() {
                    return Err(Error::Singular { nullity: 0, detail: "non-finite pivot".into() });
                }
                min_pivot = min_pivot.min(p);
            }
            let up = if b + 1 < nb { self.block(b, b + 1).scale(beta) } else { Csr::zeros(m, 0) };
            w_prev = if b + 1 < nb {
                let mut w = up.to_dense();
                lu.solve_in_place(w.as_mut());
                Some(w)
            } else {
                None
            };
            lus.push(lu);
            upper.push(up);
            lower.push(low);
        }
        Ok(BlockLu { first: first_block, offsets: self.offsets.clone(), lus, upper, lower, min_pivot })
    }
}

/// Block LU of a block-tridiagonal matrix. Only the diagonal-block factors
/// are kept; the Schur coupling `S^-1 C x` is recomputed during the
/// back substitution.
pub struct BlockLu {
    first: usize,
    offsets: Vec<usize>,
    lus: Vec<PartialPivLu<C64>>,
    upper: Vec<Csr>,
    lower: Vec<Csr>,
    min_pivot: f64,
}

impl BlockLu {
    pub fn first_block(&self) -> usize {
        self.first
    }

    /// Smallest pivot magnitude met during factorization.
    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    /// Solves in place over the factored blocks; entries before the first
    /// factored block are left untouched.
    pub fn solve_in_place(&self, x: &mut [C64]) {
        let nb = self.offsets.len() - 1;
        let rng = |b: usize| self.offsets[b]..self.offsets[b + 1];
        for b in self.first..nb {
            let k = b - self.first;
            let r = rng(b);
            let mut seg = Mat::<C64>::from_fn(r.len(), 1, |i, _| x[r.start + i]);
            if b > self.first {
                let prev = rng(b - 1);
                let mut t = vec![C64::new(0.0, 0.0); r.len()];
                self.lower[k].matvec_acc(C64::new(1.0, 0.0), &x[prev], &mut t);
                for i in 0..r.len() {
                    seg[(i, 0)] -= t[i];
                }
            }
            self.lus[k].solve_in_place(seg.as_mut());
            for i in 0..r.len() {
                x[r.start + i] = seg[(i, 0)];
            }
        }
        for b in (self.first..nb.saturating_sub(1)).rev() {
            let k = b - self.first;
            let r = rng(b);
            let next = rng(b + 1);
            let mut t = Mat::<C64>::zeros(r.len(), 1);
            let tv = self.upper[k].matvec(&x[next]);
            for i in 0..r.len() {
                t[(i, 0)] = tv[i];
            }
            self.lus[k].solve_in_place(t.as_mut());
            for i in 0..r.len() {
                x[r.start + i] -= t[(i, 0)];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{Mode, SparseOperator};
    use crate::space::SpaceSpec;
    use crate::superop::{commutator_superop, lindblad_dissipator};

    #[test]
    fn sectors_partition_liouville_space() {
        let s = Space::new(SpaceSpec::new(2, 2, 1).unwrap()).unwrap();
        let total: usize = Sector::all(&s).iter().map(Sector::len).sum();
        assert_eq!(total, s.dim() * s.dim());
    }

    #[test]
    fn block_solve_matches_dense() {
        let s = Space::new(SpaceSpec::new(1, 3, 1).unwrap()).unwrap();
        let a = SparseOperator::annihilator(&s, Mode::One);
        let n = SparseOperator::number(&s, Mode::One);
        let mut l = lindblad_dissipator(&a, 0.4).unwrap();
        l.extend(&lindblad_dissipator(&a.adjoint(), 0.1).unwrap());
        l.extend(&commutator_superop(&n.scale_re(0.7)).unwrap());
        let sec = Sector::new(&s, 0).unwrap();
        let m = SectorMatrix::assemble(&l, &sec).unwrap();
        let alpha = C64::new(1.0, 0.2);
        let beta = C64::new(-0.3, 0.0);
        let lu = m.factor(alpha, beta, 0).unwrap();
        let rhs: Vec<C64> = (0..m.len()).map(|i| C64::new(i as f64 * 0.1, 1.0)).collect();
        let mut x = rhs.clone();
        lu.solve_in_place(&mut x);
        let mx = m.matvec(&x);
        for i in 0..m.len() {
            let r = alpha * x[i] + beta * mx[i] - rhs[i];
            assert!(r.norm() < 1e-12, "row {i}: {r}");
        }
    }
}
