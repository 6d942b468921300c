//! Compressed sparse row storage for complex matrices.
//!
//! Everything downstream (operators, Liouville-space generators, sector
//! matrices) is built on this one format. Rows are sorted by column index and
//! never hold duplicate entries or explicit zeros.

use faer::{Mat, MatRef};
use num_complex::Complex64 as C64;

#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<C64>,
}

impl Csr {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            vals: vec![C64::new(1.0, 0.0); n],
        }
    }

    /// Builds a matrix from unordered triplets. Duplicate positions are summed
    /// and entries that end up exactly zero are dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, mut trips: Vec<(usize, usize, C64)>) -> Self {
        trips.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(trips.len());
        let mut vals: Vec<C64> = Vec::with_capacity(trips.len());
        let mut last: Option<(usize, usize)> = None;
        let mut rows_of: Vec<usize> = Vec::with_capacity(trips.len());
        for (r, c, v) in trips {
            debug_assert!(r < nrows && c < ncols, "triplet ({r},{c}) out of bounds");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                vals.push(v);
                rows_of.push(r);
                last = Some((r, c));
            }
        }
        let mut k = 0;
        let mut keep_cols = Vec::with_capacity(col_idx.len());
        let mut keep_vals = Vec::with_capacity(vals.len());
        for ((r, c), v) in rows_of.iter().zip(&col_idx).zip(&vals) {
            if *v != C64::new(0.0, 0.0) {
                row_ptr[r + 1] += 1;
                keep_cols.push(*c);
                keep_vals.push(*v);
                k += 1;
            }
        }
        debug_assert_eq!(k, keep_cols.len());
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { nrows, ncols, row_ptr, col_idx: keep_cols, vals: keep_vals }
    }

    pub fn from_dense(m: MatRef<'_, C64>, tol: f64) -> Self {
        let mut trips = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let v = m[(i, j)];
                if v.norm() > tol {
                    trips.push((i, j, v));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), trips)
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.col_idx[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        match self.col_idx[a..b].binary_search(&c) {
            Ok(k) => self.vals[a + k],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn transpose(&self) -> Self {
        let trips = self.iter().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, trips)
    }

    pub fn adjoint(&self) -> Self {
        let trips = self.iter().map(|(r, c, v)| (c, r, v.conj())).collect();
        Self::from_triplets(self.ncols, self.nrows, trips)
    }

    pub fn scale(&self, s: C64) -> Self {
        let trips = self.iter().map(|(r, c, v)| (r, c, v * s)).collect();
        Self::from_triplets(self.nrows, self.ncols, trips)
    }

    pub fn add(&self, other: &Csr) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let trips = self.iter().chain(other.iter()).collect();
        Self::from_triplets(self.nrows, self.ncols, trips)
    }

    /// Sparse-sparse product using a dense accumulator row.
    pub fn mul(&self, other: &Csr) -> Self {
        assert_eq!(self.ncols, other.nrows);
        let mut acc = vec![C64::new(0.0, 0.0); other.ncols];
        let mut mark = vec![usize::MAX; other.ncols];
        let mut touched = Vec::new();
        let mut trips = Vec::new();
        for r in 0..self.nrows {
            touched.clear();
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    if mark[c] != r {
                        mark[c] = r;
                        acc[c] = C64::new(0.0, 0.0);
                        touched.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            for &c in &touched {
                trips.push((r, c, acc[c]));
            }
        }
        Self::from_triplets(self.nrows, other.ncols, trips)
    }

    /// `y += alpha * A x`
    pub fn matvec_acc(&self, alpha: C64, x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (r, yr) in y.iter_mut().enumerate() {
            let mut s = C64::new(0.0, 0.0);
            for (c, v) in self.row(r) {
                s += v * x[c];
            }
            *yr += alpha * s;
        }
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.nrows];
        self.matvec_acc(C64::new(1.0, 0.0), x, &mut y);
        y
    }

    pub fn to_dense(&self) -> Mat<C64> {
        let mut m = Mat::<C64>::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            m[(r, c)] = v;
        }
        m
    }

    /// `self * m` for dense `m`.
    pub fn mul_dense(&self, m: MatRef<'_, C64>) -> Mat<C64> {
        assert_eq!(self.ncols, m.nrows());
        let mut out = Mat::<C64>::zeros(self.nrows, m.ncols());
        for j in 0..m.ncols() {
            let col = m.col(j);
            for r in 0..self.nrows {
                let mut s = C64::new(0.0, 0.0);
                for (c, v) in self.row(r) {
                    s += v * col[c];
                }
                out[(r, j)] = s;
            }
        }
        out
    }

    /// `m * self` for dense `m`.
    pub fn dense_mul(&self, m: MatRef<'_, C64>) -> Mat<C64> {
        assert_eq!(m.ncols(), self.nrows);
        let mut out = Mat::<C64>::zeros(m.nrows(), self.ncols);
        for k in 0..self.nrows {
            for (c, v) in self.row(k) {
                for i in 0..m.nrows() {
                    out[(i, c)] += m[(i, k)] * v;
                }
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Csr) -> f64 {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        self.add(&other.scale(C64::new(-1.0, 0.0)))
            .vals
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.norm()))
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0_f64, |m, v| m.max(v.norm()))
    }

    /// Submatrix over the given rows (in order) and the columns for which
    /// `col_map` yields a new index.
    pub fn select(&self, rows: &[usize], col_map: &[Option<usize>], new_ncols: usize) -> Csr {
        let mut trips = Vec::new();
        for (nr, &r) in rows.iter().enumerate() {
            for (c, v) in self.row(r) {
                if let Some(nc) = col_map[c] {
                    trips.push((nr, nc, v));
                }
            }
        }
        Csr::from_triplets(rows.len(), new_ncols, trips)
    }

    pub fn is_identity(&self) -> bool {
        self.nrows == self.ncols
            && self.nnz() == self.nrows
            && self.iter().all(|(r, c, v)| r == c && v == C64::new(1.0, 0.0))
    }
}
