//! Compressed-row complex sparse matrices.
//!
//! Just enough sparse algebra for operator construction and superoperator
//! assembly: triplet assembly, Kronecker products, sparse-sparse products,
//! adjoints and matrix-vector products. Entries that cancel to exactly zero
//! are dropped so that structural comparisons stay meaningful.

use ndarray::Array2;
use num_complex::Complex64 as C64;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<C64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![C64::new(1.0, 0.0); n],
        }
    }

    /// Assemble from `(row, col, value)` triplets. Duplicates are summed.
    pub fn from_triplets<I>(nrows: usize, ncols: usize, triplets: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, C64)>,
    {
        let mut t: Vec<(usize, usize, C64)> = triplets.into_iter().collect();
        for &(r, c, _) in &t {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
        }
        t.sort_unstable_by_key(|&(r, c, _)| (r, c));

        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut values = Vec::with_capacity(t.len());
        let mut k = 0;
        while k < t.len() {
            let (r, c, mut v) = t[k];
            k += 1;
            while k < t.len() && t[k].0 == r && t[k].1 == c {
                v += t[k].2;
                k += 1;
            }
            if v != C64::new(0.0, 0.0) {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn from_dense(a: &Array2<C64>) -> Self {
        let (n, m) = a.dim();
        Self::from_triplets(
            n,
            m,
            a.indexed_iter()
                .filter(|(_, v)| **v != C64::new(0.0, 0.0))
                .map(|((i, j), v)| (i, j, *v)),
        )
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        let (lo, hi) = (self.indptr[row], self.indptr[row + 1]);
        match self.indices[lo..hi].binary_search(&col) {
            Ok(p) => self.values[lo + p],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    /// Stored entries of one row as `(col, value)`.
    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let (lo, hi) = (self.indptr[row], self.indptr[row + 1]);
        self.indices[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    /// All stored entries as `(row, col, value)` in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn scale(&self, s: C64) -> Self {
        if s == C64::new(0.0, 0.0) {
            return Self::zeros(self.nrows, self.ncols);
        }
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(
            (self.nrows, self.ncols),
            (other.nrows, other.ncols),
            "sparse add: shape mismatch"
        );
        Self::from_triplets(
            self.nrows,
            self.ncols,
            self.triplets().chain(other.triplets()),
        )
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    /// Sparse-sparse product (row-wise Gustavson accumulation).
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(
            self.ncols, other.nrows,
            "sparse matmul: inner dimension mismatch"
        );
        let zero = C64::new(0.0, 0.0);
        let mut acc = vec![zero; other.ncols];
        let mut seen = vec![usize::MAX; other.ncols];
        let mut cols: Vec<usize> = Vec::new();
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for r in 0..self.nrows {
            cols.clear();
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    if seen[c] != r {
                        seen[c] = r;
                        acc[c] = zero;
                        cols.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            cols.sort_unstable();
            for &c in &cols {
                if acc[c] != zero {
                    indices.push(c);
                    values.push(acc[c]);
                }
            }
            indptr[r + 1] = indices.len();
        }
        Self {
            nrows: self.nrows,
            ncols: other.ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(
            self.ncols,
            self.nrows,
            self.triplets().map(|(r, c, v)| (c, r, v)),
        )
    }

    pub fn conj(&self) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = v.conj());
        out
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_triplets(
            self.ncols,
            self.nrows,
            self.triplets().map(|(r, c, v)| (c, r, v.conj())),
        )
    }

    /// Kronecker product `self ⊗ other`: entry `(ra·m + rb, ca·n + cb)` is
    /// `self[ra, ca] · other[rb, cb]` where `other` is `m × n`.
    pub fn kron(&self, other: &Self) -> Self {
        let (m, n) = (other.nrows, other.ncols);
        let triplets = self.triplets().flat_map(|(ra, ca, a)| {
            other
                .triplets()
                .map(move |(rb, cb, b)| (ra * m + rb, ca * n + cb, a * b))
        });
        Self::from_triplets(self.nrows * m, self.ncols * n, triplets.collect::<Vec<_>>())
    }

    /// `y = A x`.
    pub fn mul_vec_into(&self, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (r, yr) in y.iter_mut().enumerate() {
            let (lo, hi) = (self.indptr[r], self.indptr[r + 1]);
            let mut s = C64::new(0.0, 0.0);
            for k in lo..hi {
                s += self.values[k] * x[self.indices[k]];
            }
            *yr = s;
        }
    }

    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `A · X` for dense `X`.
    pub fn mul_dense(&self, x: &Array2<C64>) -> Array2<C64> {
        assert_eq!(x.nrows(), self.ncols);
        let mut out = Array2::zeros((self.nrows, x.ncols()));
        for r in 0..self.nrows {
            for (k, a) in self.row(r) {
                let src = x.row(k);
                let mut dst = out.row_mut(r);
                dst.zip_mut_with(&src, |d, s| *d += a * s);
            }
        }
        out
    }

    /// `X · A` for dense `X`.
    pub fn dense_mul(&self, x: &Array2<C64>) -> Array2<C64> {
        assert_eq!(x.ncols(), self.nrows);
        let mut out = Array2::zeros((x.nrows(), self.ncols));
        for (k, c, a) in self.triplets() {
            let src = x.column(k);
            let mut dst = out.column_mut(c);
            dst.zip_mut_with(&src, |d, s| *d += a * s);
        }
        out
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let mut out = Array2::zeros((self.nrows, self.ncols));
        for (r, c, v) in self.triplets() {
            out[[r, c]] = v;
        }
        out
    }

    /// Largest elementwise modulus of `self − other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.sub(other)
            .values
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Induced 1-norm (largest absolute column sum).
    pub fn norm_one(&self) -> f64 {
        let mut colsum = vec![0.0; self.ncols];
        for (_, c, v) in self.triplets() {
            colsum[c] += v.norm();
        }
        colsum.into_iter().fold(0.0, f64::max)
    }

    /// Principal submatrix on `keep` (ordered list of row/column indices).
    pub fn principal_submatrix(&self, keep: &[usize]) -> Self {
        let mut pos = vec![usize::MAX; self.ncols.max(self.nrows)];
        for (new, &old) in keep.iter().enumerate() {
            pos[old] = new;
        }
        let triplets = keep.iter().enumerate().flat_map(|(new_r, &old_r)| {
            let pos = &pos;
            self.row(old_r)
                .filter(move |(c, _)| pos[*c] != usize::MAX)
                .map(move |(c, v)| (new_r, pos[c], v))
        });
        Self::from_triplets(keep.len(), keep.len(), triplets.collect::<Vec<_>>())
    }

    /// Column-major flattened copy as faer triplets input.
    pub(crate) fn to_faer(&self) -> faer::sparse::SparseColMat<usize, C64> {
        let t: Vec<_> = self
            .triplets()
            .map(|(r, c, v)| faer::sparse::Triplet::new(r, c, v))
            .collect();
        faer::sparse::SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &t)
            .expect("sparse matrix with merged duplicates converts")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn triplets_merge_and_drop_cancellations() {
        let m = SparseMatrix::from_triplets(
            2,
            2,
            vec![
                (0, 1, c(1.0, 0.0)),
                (0, 1, c(2.0, 1.0)),
                (1, 0, c(1.0, 0.0)),
                (1, 0, c(-1.0, 0.0)),
            ],
        );
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 1), c(3.0, 1.0));
        assert_eq!(m.get(1, 0), c(0.0, 0.0));
    }

    #[test]
    fn matmul_matches_dense() {
        let a = SparseMatrix::from_triplets(
            3,
            2,
            vec![
                (0, 0, c(1.0, 1.0)),
                (1, 1, c(2.0, 0.0)),
                (2, 0, c(0.0, -1.0)),
            ],
        );
        let b = SparseMatrix::from_triplets(2, 3, vec![(0, 2, c(3.0, 0.0)), (1, 0, c(1.0, 2.0))]);
        let dense = a.to_dense().dot(&b.to_dense());
        assert_eq!(a.matmul(&b).to_dense(), dense);
    }

    #[test]
    fn kron_index_layout() {
        let a = SparseMatrix::from_triplets(2, 2, vec![(0, 1, c(2.0, 0.0))]);
        let b = SparseMatrix::from_triplets(3, 3, vec![(2, 0, c(0.0, 1.0))]);
        let k = a.kron(&b);
        assert_eq!((k.nrows(), k.ncols()), (6, 6));
        assert_eq!(k.get(2, 3), c(0.0, 2.0));
        assert_eq!(k.nnz(), 1);
    }

    #[test]
    fn dense_products() {
        let a = SparseMatrix::from_triplets(2, 2, vec![(0, 1, c(1.0, 0.0)), (1, 1, c(0.0, 1.0))]);
        let x = Array2::from_shape_fn((2, 2), |(i, j)| c(i as f64, j as f64));
        assert_eq!(a.mul_dense(&x), a.to_dense().dot(&x));
        assert_eq!(a.dense_mul(&x), x.dot(&a.to_dense()));
    }

    #[test]
    fn principal_submatrix_picks_entries() {
        let a = SparseMatrix::from_triplets(
            3,
            3,
            vec![
                (0, 0, c(1.0, 0.0)),
                (0, 2, c(2.0, 0.0)),
                (2, 0, c(3.0, 0.0)),
                (1, 1, c(4.0, 0.0)),
            ],
        );
        let s = a.principal_submatrix(&[2, 0]);
        assert_eq!(s.get(0, 1), c(3.0, 0.0));
        assert_eq!(s.get(1, 0), c(2.0, 0.0));
        assert_eq!(s.get(1, 1), c(1.0, 0.0));
    }
}
