//! Truncated three-mode Fock space and operators on it.
//!
//! Modes are ordered `[a, s, b]` (antisymmetric optical, symmetric optical,
//! mechanical). The composite index of `|n_a n_s n_b⟩` is
//! `(n_a·D_s + n_s)·D_b + n_b`, i.e. mode `a` varies slowest.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    A,
    S,
    B,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::A, Mode::S, Mode::B];

    pub fn index(self) -> usize {
        match self {
            Mode::A => 0,
            Mode::S => 1,
            Mode::B => 2,
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(Mode::A),
            "s" => Ok(Mode::S),
            "b" => Ok(Mode::B),
            other => Err(Error::UnknownMode(other.to_string())),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::A => "a",
            Mode::S => "s",
            Mode::B => "b",
        })
    }
}

/// Basis state occupations `[n_a, n_s, n_b]`.
pub type Occupations = [usize; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HilbertSpace {
    dims: [usize; 3],
}

impl HilbertSpace {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.len() != 3 {
            return Err(Error::InvalidDimension {
                dims: dims.to_vec(),
                reason: "exactly three modes [a, s, b] are required".into(),
            });
        }
        if let Some(d) = dims.iter().find(|&&d| d < 2) {
            return Err(Error::InvalidDimension {
                dims: dims.to_vec(),
                reason: format!("every mode needs dimension >= 2, got {d}"),
            });
        }
        Ok(Self {
            dims: [dims[0], dims[1], dims[2]],
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn dim(&self, mode: Mode) -> usize {
        self.dims[mode.index()]
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }

    /// Composite index of `|n_a n_s n_b⟩`.
    pub fn index(&self, n: Occupations) -> usize {
        debug_assert!(n.iter().zip(self.dims).all(|(&k, d)| k < d));
        (n[0] * self.dims[1] + n[1]) * self.dims[2] + n[2]
    }

    pub fn occupations(&self, index: usize) -> Occupations {
        let nb = index % self.dims[2];
        let rest = index / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], nb]
    }

    pub fn contains(&self, n: Occupations) -> bool {
        n.iter().zip(self.dims).all(|(&k, d)| k < d)
    }

    fn check_same(&self, other: &HilbertSpace) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::SpaceMismatch {
                left: self.dims,
                right: other.dims,
            })
        }
    }
}

/// Sparse operator on a [`HilbertSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct QOperator {
    space: HilbertSpace,
    matrix: SparseMatrix,
}

impl QOperator {
    pub fn from_matrix(space: HilbertSpace, matrix: SparseMatrix) -> Result<Self> {
        let n = space.total_dim();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::InvalidDimension {
                dims: vec![matrix.nrows(), matrix.ncols()],
                reason: format!("operator matrix must be {n} x {n}"),
            });
        }
        Ok(Self { space, matrix })
    }

    pub fn identity(space: HilbertSpace) -> Self {
        Self {
            space,
            matrix: SparseMatrix::identity(space.total_dim()),
        }
    }

    pub fn zero(space: HilbertSpace) -> Self {
        let n = space.total_dim();
        Self {
            space,
            matrix: SparseMatrix::zeros(n, n),
        }
    }

    /// Annihilation operator of `mode`; the top rung of the ladder is dropped.
    pub fn annihilation(space: HilbertSpace, mode: Mode) -> Self {
        let k = mode.index();
        let triplets = (0..space.total_dim()).filter_map(|col| {
            let mut n = space.occupations(col);
            if n[k] == 0 {
                return None;
            }
            let amp = (n[k] as f64).sqrt();
            n[k] -= 1;
            Some((space.index(n), col, C64::new(amp, 0.0)))
        });
        Self {
            space,
            matrix: SparseMatrix::from_triplets(
                space.total_dim(),
                space.total_dim(),
                triplets.collect::<Vec<_>>(),
            ),
        }
    }

    pub fn creation(space: HilbertSpace, mode: Mode) -> Self {
        Self::annihilation(space, mode).adjoint()
    }

    /// Number operator, built diagonally.
    pub fn number(space: HilbertSpace, mode: Mode) -> Self {
        let k = mode.index();
        let triplets = (0..space.total_dim()).map(|i| {
            let n = space.occupations(i)[k];
            (i, i, C64::new(n as f64, 0.0))
        });
        Self {
            space,
            matrix: SparseMatrix::from_triplets(
                space.total_dim(),
                space.total_dim(),
                triplets.collect::<Vec<_>>(),
            ),
        }
    }

    /// Projector `|n⟩⟨n|` onto one basis state.
    pub fn projector(space: HilbertSpace, n: Occupations) -> Self {
        let i = space.index(n);
        let d = space.total_dim();
        Self {
            space,
            matrix: SparseMatrix::from_triplets(d, d, [(i, i, C64::new(1.0, 0.0))]),
        }
    }

    pub fn space(&self) -> HilbertSpace {
        self.space
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn add(&self, other: &QOperator) -> Result<Self> {
        self.space.check_same(&other.space)?;
        Ok(Self {
            space: self.space,
            matrix: self.matrix.add(&other.matrix),
        })
    }

    pub fn sub(&self, other: &QOperator) -> Result<Self> {
        self.space.check_same(&other.space)?;
        Ok(Self {
            space: self.space,
            matrix: self.matrix.sub(&other.matrix),
        })
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            space: self.space,
            matrix: self.matrix.scale(s),
        }
    }

    pub fn mul(&self, other: &QOperator) -> Result<Self> {
        self.space.check_same(&other.space)?;
        Ok(Self {
            space: self.space,
            matrix: self.matrix.matmul(&other.matrix),
        })
    }

    pub fn adjoint(&self) -> Self {
        Self {
            space: self.space,
            matrix: self.matrix.adjoint(),
        }
    }

    /// `[self, other]`.
    pub fn commutator(&self, other: &QOperator) -> Result<Self> {
        self.mul(other)?.sub(&other.mul(self)?)
    }

    /// `⟨bra| self |ket⟩` for basis states.
    pub fn element(&self, bra: Occupations, ket: Occupations) -> C64 {
        self.matrix
            .get(self.space.index(bra), self.space.index(ket))
    }

    /// `tr(self · ρ)`.
    pub fn expectation(&self, rho: &DensityMatrix) -> Result<C64> {
        self.space.check_same(&rho.space)?;
        Ok(trace_product(&self.matrix, &rho.matrix))
    }

    /// Apply to a state vector in the composite basis.
    pub fn apply(&self, psi: &[C64]) -> Vec<C64> {
        self.matrix.mul_vec(psi)
    }

    /// `self · X · self†` for a dense matrix `X`.
    pub fn sandwich(&self, x: &Array2<C64>) -> Array2<C64> {
        self.matrix.adjoint().dense_mul(&self.matrix.mul_dense(x))
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.matrix.max_abs_diff(&self.matrix.adjoint()) <= tol
    }
}

/// `tr(A · X)` for sparse `A` and dense `X`.
pub(crate) fn trace_product(a: &SparseMatrix, x: &Array2<C64>) -> C64 {
    a.triplets().map(|(r, c, v)| v * x[[c, r]]).sum()
}

/// Density operator: Hermitian, unit trace, positive up to a numerical floor.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    space: HilbertSpace,
    matrix: Array2<C64>,
}

impl DensityMatrix {
    pub const HERMITICITY_TOL: f64 = 1e-10;
    pub const TRACE_TOL: f64 = 1e-10;
    pub const POSITIVITY_FLOOR: f64 = -1e-8;

    /// Validates every density-matrix invariant.
    pub fn new(space: HilbertSpace, matrix: Array2<C64>) -> Result<Self> {
        let rho = Self::from_raw(space, matrix)?;
        rho.validate()?;
        Ok(rho)
    }

    /// Shape-checked but otherwise unvalidated.
    pub(crate) fn from_raw(space: HilbertSpace, matrix: Array2<C64>) -> Result<Self> {
        let n = space.total_dim();
        if matrix.dim() != (n, n) {
            return Err(Error::InvalidDimension {
                dims: vec![matrix.nrows(), matrix.ncols()],
                reason: format!("density matrix must be {n} x {n}"),
            });
        }
        Ok(Self { space, matrix })
    }

    /// Pure basis state `|n⟩⟨n|`.
    pub fn basis_state(space: HilbertSpace, n: Occupations) -> Self {
        let d = space.total_dim();
        let mut m = Array2::zeros((d, d));
        let i = space.index(n);
        m[[i, i]] = C64::new(1.0, 0.0);
        Self { space, matrix: m }
    }

    pub fn vacuum(space: HilbertSpace) -> Self {
        Self::basis_state(space, [0, 0, 0])
    }

    /// `|ψ⟩⟨ψ|` after normalizing `ψ`.
    pub fn from_pure(space: HilbertSpace, psi: &[C64]) -> Result<Self> {
        let n = space.total_dim();
        if psi.len() != n {
            return Err(Error::InvalidDimension {
                dims: vec![psi.len()],
                reason: format!("state vector must have length {n}"),
            });
        }
        let norm2: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if norm2 <= 0.0 {
            return Err(Error::InvalidState {
                check: "nonzero norm",
                value: norm2,
            });
        }
        let m = Array2::from_shape_fn((n, n), |(i, j)| psi[i] * psi[j].conj() / norm2);
        Self::new(space, m)
    }

    pub fn space(&self) -> HilbertSpace {
        self.space
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.diag().sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let n = self.matrix.nrows();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.matrix[[i, j]] - self.matrix[[j, i]].conj()).norm());
            }
        }
        worst
    }

    /// Eigenvalues of the Hermitian part, ascending.
    ///
    /// States with a conserved charge are block diagonal, so each connected
    /// block of the sparsity pattern is diagonalised on its own.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let n = self.matrix.nrows();
        let mut parent: Vec<usize> = (0..n).collect();
        fn root(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for ((i, j), z) in self.matrix.indexed_iter() {
            if i < j && (*z != C64::new(0.0, 0.0) || self.matrix[[j, i]] != C64::new(0.0, 0.0)) {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            let r = root(&mut parent, i);
            blocks[r].push(i);
        }
        let mut out: Vec<f64> = blocks
            .iter()
            .filter(|b| !b.is_empty())
            .flat_map(|b| {
                let m = faer::Mat::<C64>::from_fn(b.len(), b.len(), |p, q| {
                    let (i, j) = (b[p], b[q]);
                    0.5 * (self.matrix[[i, j]] + self.matrix[[j, i]].conj())
                });
                m.self_adjoint_eigenvalues(faer::Side::Lower)
                    .expect("Hermitian eigenvalue iteration converges")
            })
            .collect();
        out.sort_by(f64::total_cmp);
        out
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        let herm = self.hermiticity_error();
        if !(herm <= Self::HERMITICITY_TOL) {
            return Err(Error::InvalidState {
                check: "hermiticity",
                value: herm,
            });
        }
        let tr = (self.trace() - C64::new(1.0, 0.0)).norm();
        if !(tr <= Self::TRACE_TOL) {
            return Err(Error::InvalidState {
                check: "unit trace",
                value: tr,
            });
        }
        let min = self.min_eigenvalue();
        if !(min >= Self::POSITIVITY_FLOOR) {
            return Err(Error::InvalidState {
                check: "positivity",
                value: min,
            });
        }
        Ok(())
    }

    /// Population of a basis state.
    pub fn population(&self, n: Occupations) -> f64 {
        let i = self.space.index(n);
        self.matrix[[i, i]].re
    }

    /// Largest population found on the top Fock level of any mode.
    pub fn top_level_population(&self) -> f64 {
        let dims = self.space.dims();
        let mut marginals = [0.0; 3];
        for i in 0..self.space.total_dim() {
            let n = self.space.occupations(i);
            let p = self.matrix[[i, i]].re;
            for k in 0..3 {
                if n[k] == dims[k] - 1 {
                    marginals[k] += p;
                }
            }
        }
        marginals.into_iter().fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn space(d: [usize; 3]) -> HilbertSpace {
        HilbertSpace::new(&d).unwrap()
    }

    #[test]
    fn make_space_examples() {
        assert_eq!(space([4, 4, 4]).total_dim(), 64);
        assert_eq!(space([4, 4, 6]).total_dim(), 96);
        assert_eq!(space([2, 2, 2]).index([1, 1, 1]), 7);
    }

    #[test]
    fn make_space_rejects_bad_dims() {
        assert!(matches!(
            HilbertSpace::new(&[4, 1, 4]),
            Err(Error::InvalidDimension { .. })
        ));
        assert!(matches!(
            HilbertSpace::new(&[4, 4]),
            Err(Error::InvalidDimension { .. })
        ));
    }

    #[test]
    fn mode_labels() {
        assert_eq!("s".parse::<Mode>().unwrap(), Mode::S);
        assert!(matches!("x".parse::<Mode>(), Err(Error::UnknownMode(_))));
    }

    #[test]
    fn ladder_elements() {
        let sp = space([2, 2, 3]);
        let b = QOperator::annihilation(sp, Mode::B);
        assert!((b.element([0, 0, 1], [0, 0, 2]) - C64::new(2f64.sqrt(), 0.0)).norm() < 1e-15);
        assert_eq!(b.matrix().nnz(), (3 - 1) * 2 * 2);

        let sp = space([3, 3, 3]);
        let ca = QOperator::annihilation(sp, Mode::A);
        let na = QOperator::creation(sp, Mode::A).mul(&ca).unwrap();
        assert_eq!(na.element([1, 0, 0], [1, 0, 0]), C64::new(1.0, 0.0));
        assert_eq!(ca.matrix().nnz(), 2 * 9);
    }

    #[test]
    fn vacuum_annihilated_by_a() {
        let sp = space([3, 2, 4]);
        let ca = QOperator::annihilation(sp, Mode::A);
        for ns in 0..2 {
            for nb in 0..4 {
                let mut psi = vec![C64::new(0.0, 0.0); sp.total_dim()];
                psi[sp.index([0, ns, nb])] = C64::new(1.0, 0.0);
                assert!(ca.apply(&psi).iter().all(|z| z.norm() == 0.0));
            }
        }
    }

    #[test]
    fn number_is_adag_a() {
        // Same sparsity pattern; values agree up to the rounding of √n·√n.
        let sp = space([3, 4, 5]);
        for m in Mode::ALL {
            let c = QOperator::annihilation(sp, m);
            let n = c.adjoint().mul(&c).unwrap();
            let diag = QOperator::number(sp, m);
            let pattern = |op: &QOperator| {
                op.matrix()
                    .triplets()
                    .map(|(r, c, _)| (r, c))
                    .collect::<Vec<_>>()
            };
            assert_eq!(pattern(&n), pattern(&diag));
            assert!(n.matrix().max_abs_diff(diag.matrix()) <= 4.0 * f64::EPSILON * 5.0);
        }
    }

    #[test]
    fn distinct_modes_commute() {
        let sp = space([3, 3, 4]);
        for m1 in Mode::ALL {
            for m2 in Mode::ALL {
                if m1 == m2 {
                    continue;
                }
                let c1 = QOperator::annihilation(sp, m1);
                for c2 in [QOperator::annihilation(sp, m2), QOperator::creation(sp, m2)] {
                    assert_eq!(c1.commutator(&c2).unwrap().matrix().nnz(), 0);
                }
            }
        }
    }

    #[test]
    fn truncated_commutator() {
        let sp = space([4, 2, 2]);
        let ca = QOperator::annihilation(sp, Mode::A);
        let comm = ca.commutator(&ca.adjoint()).unwrap();
        for i in 0..sp.total_dim() {
            let n = sp.occupations(i);
            let expect = if n[0] < 3 { 1.0 } else { -3.0 };
            assert!((comm.matrix().get(i, i) - C64::new(expect, 0.0)).norm() < 1e-14);
        }
        assert_eq!(comm.matrix().nnz(), sp.total_dim());
    }

    #[test]
    fn space_mismatch_is_error() {
        let a = QOperator::identity(space([2, 2, 2]));
        let b = QOperator::identity(space([2, 2, 3]));
        assert!(matches!(a.add(&b), Err(Error::SpaceMismatch { .. })));
        assert!(matches!(a.mul(&b), Err(Error::SpaceMismatch { .. })));
        let rho = DensityMatrix::vacuum(space([2, 2, 3]));
        assert!(a.expectation(&rho).is_err());
    }

    #[test]
    fn identity_expectation_and_adjoint_involution() {
        let sp = space([2, 3, 2]);
        let psi: Vec<C64> = (0..sp.total_dim())
            .map(|i| C64::new(1.0 + i as f64, 0.5 * i as f64))
            .collect();
        let rho = DensityMatrix::from_pure(sp, &psi).unwrap();
        let one = QOperator::identity(sp).expectation(&rho).unwrap();
        assert!((one - C64::new(1.0, 0.0)).norm() < 1e-12);

        let x = QOperator::annihilation(sp, Mode::S)
            .mul(&QOperator::creation(sp, Mode::B))
            .unwrap()
            .scale(C64::new(0.3, -1.2));
        assert_eq!(x.adjoint().adjoint(), x);
    }

    #[test]
    fn density_validation_rejects() {
        let sp = space([2, 2, 2]);
        let mut m = DensityMatrix::vacuum(sp).into_matrix();
        m[[0, 0]] = C64::new(2.0, 0.0);
        assert!(matches!(
            DensityMatrix::new(sp, m.clone()),
            Err(Error::InvalidState {
                check: "unit trace",
                ..
            })
        ));
        m[[0, 0]] = C64::new(1.5, 0.0);
        m[[1, 1]] = C64::new(-0.5, 0.0);
        assert!(matches!(
            DensityMatrix::new(sp, m.clone()),
            Err(Error::InvalidState {
                check: "positivity",
                ..
            })
        ));
        m[[1, 1]] = C64::new(0.0, 0.0);
        m[[0, 0]] = C64::new(1.0, 0.0);
        m[[0, 1]] = C64::new(0.1, 0.0);
        assert!(matches!(
            DensityMatrix::new(sp, m),
            Err(Error::InvalidState {
                check: "hermiticity",
                ..
            })
        ));
    }

    #[test]
    fn blockwise_spectrum_matches_dense() {
        let sp = space([2, 2, 3]);
        let d = sp.total_dim();
        let mut m = Array2::<C64>::zeros((d, d));
        // two coupled pairs and a lone diagonal entry
        for (i, j, w) in [(0usize, 5usize, 0.3), (2, 7, 0.2), (4, 4, 0.0)] {
            m[[i, i]] += C64::new(w + 0.1, 0.0);
            m[[j, j]] += C64::new(0.1, 0.0);
            if i != j {
                m[[i, j]] = C64::new(0.05, 0.04);
                m[[j, i]] = C64::new(0.05, -0.04);
            }
        }
        let tr: C64 = m.diag().sum();
        m.mapv_inplace(|z| z / tr);
        let rho = DensityMatrix::from_raw(sp, m.clone()).unwrap();
        let dense = faer::Mat::<C64>::from_fn(d, d, |i, j| m[[i, j]])
            .self_adjoint_eigenvalues(faer::Side::Lower)
            .unwrap();
        let blockwise = rho.eigenvalues();
        assert_eq!(blockwise.len(), d);
        for (a, b) in blockwise.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    proptest! {
        #[test]
        fn index_round_trip(da in 2usize..6, ds in 2usize..6, db in 2usize..8) {
            let sp = space([da, ds, db]);
            for i in 0..sp.total_dim() {
                prop_assert_eq!(sp.index(sp.occupations(i)), i);
            }
        }
    }
}
