//! The driven two-mode optomechanical system: Hamiltonian, Lindblad
//! Liouvillian and reflected-field operator.
//!
//! Rates are measured in units of the optical amplitude decay rate, so
//! `kappa` defaults to 1.
//!
//! # Superoperator convention
//!
//! Density matrices are vectorised by stacking columns: entry `ρ[i, j]` sits
//! at position `i + j·D`. With this layout `vec(A ρ B) = (Bᵀ ⊗ A) vec(ρ)`,
//! and every module that touches vectorised states relies on it.

use std::sync::OnceLock;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{HilbertSpace, Mode, QOperator};
use crate::sparse::SparseMatrix;
use crate::steady::DEFAULT_TAIL_THRESHOLD;

/// Largest `Omega/kappa` accepted without the strong-drive override.
pub const WEAK_DRIVE_LIMIT: f64 = 0.1;

/// Physical parameters of the effective three-mode model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Three-wave mixing coupling `g`.
    pub g: f64,
    /// Optical amplitude decay rate (energy decay `2κ`).
    pub kappa: f64,
    /// Mechanical energy decay rate.
    pub gamma: f64,
    /// Laser detuning from the antisymmetric mode, `ω_L − ω_a`.
    pub delta: f64,
    /// Drive amplitude on the antisymmetric mode.
    pub omega: f64,
    /// Thermal phonon occupation of the mechanical bath.
    pub n_th: f64,
    /// Fock truncation `[a, s, b]`.
    pub dims: [usize; 3],
    #[serde(default)]
    pub allow_strong_drive: bool,
}

impl SystemParams {
    /// Zero-temperature parameters with `κ = 1` and default truncation.
    pub fn new(g: f64, gamma: f64, delta: f64, omega: f64) -> Self {
        Self {
            g,
            kappa: 1.0,
            gamma,
            delta,
            omega,
            n_th: 0.0,
            dims: default_dims(0.0),
            allow_strong_drive: false,
        }
    }

    /// Sets `n_th` and resets the truncation to the matching default.
    pub fn with_thermal(mut self, n_th: f64) -> Self {
        self.n_th = n_th;
        self.dims = default_dims(n_th);
        self
    }

    pub fn with_dims(mut self, dims: [usize; 3]) -> Self {
        self.dims = dims;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    /// Normalisation `n_0 = (Ω/κ)²`.
    pub fn n0(&self) -> f64 {
        (self.omega / self.kappa).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.g, self.kappa, self.gamma, self.delta, self.omega, self.n_th,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParams("parameters must be finite".into()));
        }
        if self.kappa <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "kappa must be > 0, got {}",
                self.kappa
            )));
        }
        for (name, v) in [
            ("g", self.g),
            ("gamma", self.gamma),
            ("omega", self.omega),
            ("n_th", self.n_th),
        ] {
            if v < 0.0 {
                return Err(Error::InvalidParams(format!(
                    "{name} must be >= 0, got {v}"
                )));
            }
        }
        let ratio = self.omega / self.kappa;
        if ratio > WEAK_DRIVE_LIMIT && !self.allow_strong_drive {
            return Err(Error::StrongDrive {
                ratio,
                limit: WEAK_DRIVE_LIMIT,
            });
        }
        HilbertSpace::new(&self.dims)?;
        Ok(())
    }

    pub fn space(&self) -> Result<HilbertSpace> {
        HilbertSpace::new(&self.dims)
    }
}

/// `[4, 4, 4]` at zero temperature. With a thermal bath the phonon mode
/// keeps `⌈6·N_th⌉ + 4` levels or enough for the thermal tail beyond the
/// top level to fall below the default tail threshold, whichever is larger.
pub fn default_dims(n_th: f64) -> [usize; 3] {
    if n_th > 0.0 {
        let q = n_th / (1.0 + n_th);
        let tail = (DEFAULT_TAIL_THRESHOLD.ln() / q.ln()).ceil() as usize + 1;
        [4, 4, ((6.0 * n_th).ceil() as usize + 4).max(tail)]
    } else {
        [4, 4, 4]
    }
}

fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// `H = −Δ(c_a†c_a + c_s†c_s) + (g/2)(c_a†c_s b + b†c_s†c_a) + Ω(c_a† + c_a)`.
pub fn hamiltonian(params: &SystemParams, space: HilbertSpace) -> QOperator {
    let ca = QOperator::annihilation(space, Mode::A);
    let cs = QOperator::annihilation(space, Mode::S);
    let b = QOperator::annihilation(space, Mode::B);

    let photons = QOperator::number(space, Mode::A)
        .add(&QOperator::number(space, Mode::S))
        .expect("same space");
    let exchange = ca
        .adjoint()
        .mul(&cs)
        .and_then(|x| x.mul(&b))
        .expect("same space");
    let exchange = exchange.add(&exchange.adjoint()).expect("same space");
    let drive = ca.add(&ca.adjoint()).expect("same space");

    photons
        .scale(re(-params.delta))
        .add(&exchange.scale(re(0.5 * params.g)))
        .and_then(|h| h.add(&drive.scale(re(params.omega))))
        .expect("same space")
}

/// Collapse operators with their rates `r` in `r·D[o]`, `D[o]ρ = 2oρo† − o†oρ − ρo†o`.
pub fn dissipators(params: &SystemParams, space: HilbertSpace) -> Vec<(f64, QOperator)> {
    let b = QOperator::annihilation(space, Mode::B);
    vec![
        (params.kappa, QOperator::annihilation(space, Mode::A)),
        (params.kappa, QOperator::annihilation(space, Mode::S)),
        (0.5 * params.gamma * (params.n_th + 1.0), b.clone()),
        (0.5 * params.gamma * params.n_th, b.adjoint()),
    ]
}

/// Reflected field `c_R = c_a + i(Ω/κ)·1`.
pub fn reflected_operator(params: &SystemParams, space: HilbertSpace) -> QOperator {
    QOperator::annihilation(space, Mode::A)
        .add(&QOperator::identity(space).scale(C64::new(0.0, params.omega / params.kappa)))
        .expect("same space")
}

/// Master-equation generator. The full superoperator on column-stacked `ρ`
/// is assembled only on request; coherence blocks and `L(ρ)` are built
/// straight from the operator terms.
#[derive(Debug, Clone)]
pub struct Liouvillian {
    space: HilbertSpace,
    hamiltonian: SparseMatrix,
    channels: Vec<Channel>,
    superop: OnceLock<SparseMatrix>,
}

/// One `r·D[o]` term with `o†o` cached.
#[derive(Debug, Clone)]
struct Channel {
    rate: f64,
    op: SparseMatrix,
    op_dag_op: SparseMatrix,
}

pub fn liouvillian(params: &SystemParams, space: HilbertSpace) -> Liouvillian {
    let channels = dissipators(params, space)
        .into_iter()
        .filter(|(rate, _)| *rate != 0.0)
        .map(|(rate, op)| {
            let op = op.matrix().clone();
            let op_dag_op = op.adjoint().matmul(&op);
            Channel {
                rate,
                op,
                op_dag_op,
            }
        })
        .collect();
    Liouvillian {
        space,
        hamiltonian: hamiltonian(params, space).matrix().clone(),
        channels,
        superop: OnceLock::new(),
    }
}

/// Column-stacked vector of a square matrix.
pub fn vectorize(rho: &Array2<C64>) -> Vec<C64> {
    rho.t().iter().copied().collect()
}

/// Inverse of [`vectorize`].
pub fn unvectorize(v: &[C64], dim: usize) -> Array2<C64> {
    assert_eq!(v.len(), dim * dim);
    Array2::from_shape_fn((dim, dim), |(i, j)| v[i + j * dim])
}

impl Liouvillian {
    pub fn space(&self) -> HilbertSpace {
        self.space
    }

    /// Full `D² × D²` superoperator, assembled on first use.
    pub fn superop(&self) -> &SparseMatrix {
        self.superop.get_or_init(|| {
            let d = self.space.total_dim();
            let id = SparseMatrix::identity(d);
            let h = &self.hamiltonian;
            // −i(1⊗H − Hᵀ⊗1)
            let mut superop = id
                .kron(h)
                .sub(&h.transpose().kron(&id))
                .scale(C64::new(0.0, -1.0));
            for ch in &self.channels {
                let term = ch
                    .op
                    .conj()
                    .kron(&ch.op)
                    .scale(re(2.0))
                    .sub(&id.kron(&ch.op_dag_op))
                    .sub(&ch.op_dag_op.transpose().kron(&id));
                superop = superop.add(&term.scale(re(ch.rate)));
            }
            superop
        })
    }

    /// `L(ρ)` for a dense matrix.
    pub fn apply(&self, rho: &Array2<C64>) -> Array2<C64> {
        let h = &self.hamiltonian;
        let mut out = (h.mul_dense(rho) - h.dense_mul(rho)).mapv(|z| z * C64::new(0.0, -1.0));
        for ch in &self.channels {
            let jump = ch.op.adjoint().dense_mul(&ch.op.mul_dense(rho));
            let anti = ch.op_dag_op.mul_dense(rho) + ch.op_dag_op.dense_mul(rho);
            out = out + (jump.mapv(|z| 2.0 * z) - anti).mapv(|z| z * ch.rate);
        }
        out
    }

    /// Largest `|Σ_i L[(i,i), c]|` over columns, relative to the column norm.
    ///
    /// Zero (to rounding) exactly when the trace functional is a left null
    /// vector of the superoperator. Columns outside the `k = 0` block never
    /// reach a diagonal entry, so only that block is scanned.
    pub fn trace_defect(&self) -> f64 {
        let sector = self.sector(0);
        let n = sector.len();
        let mut on_diagonal = vec![false; n];
        for (p, _) in sector.diagonal_positions() {
            on_diagonal[p] = true;
        }
        let mut trace_row = vec![C64::new(0.0, 0.0); n];
        let mut col_norm = vec![0.0f64; n];
        for (r, c, v) in sector.block().triplets() {
            col_norm[c] += v.norm_sqr();
            if on_diagonal[r] {
                trace_row[c] += v;
            }
        }
        trace_row
            .iter()
            .zip(&col_norm)
            .map(|(t, nrm)| t.norm() / nrm.sqrt().max(1.0))
            .fold(0.0, f64::max)
    }

    /// Operator-space coherence block with charge difference `k`.
    pub fn sector(&self, k: i64) -> CoherenceSector {
        CoherenceSector::new(self, k)
    }
}

/// `n_s − n_b` is conserved by `H` and shifted by ±1 (or 0) by every jump
/// operator, so `L` never mixes elements `|m⟩⟨n|` with different
/// `q(m) − q(n)`. The steady state and every conditional state produced by
/// the detectors in this crate live in the `k = 0` block.
pub fn charge(n: [usize; 3]) -> i64 {
    n[1] as i64 - n[2] as i64
}

/// Restriction of the Liouvillian to one charge-difference block.
#[derive(Debug, Clone)]
pub struct CoherenceSector {
    dim: usize,
    indices: Vec<usize>,
    block: SparseMatrix,
}

impl CoherenceSector {
    fn new(l: &Liouvillian, k: i64) -> Self {
        let d = l.space.total_dim();
        let q: Vec<i64> = (0..d).map(|i| charge(l.space.occupations(i))).collect();
        let indices: Vec<usize> = (0..d * d).filter(|&v| q[v % d] - q[v / d] == k).collect();
        let mut position = vec![usize::MAX; d * d];
        for (p, &v) in indices.iter().enumerate() {
            position[v] = p;
        }

        let h = &l.hamiltonian;
        let h_cols = h.transpose();
        let terms: Vec<_> = l
            .channels
            .iter()
            .map(|ch| {
                (
                    ch.rate,
                    ch.op.transpose(),
                    ch.op_dag_op.transpose(),
                    &ch.op_dag_op,
                )
            })
            .collect();
        let minus_i = C64::new(0.0, -1.0);
        let mut triplets = Vec::new();
        // Column (i, j) lists where ρ[i, j] is sent.
        for (col, &v) in indices.iter().enumerate() {
            let (i, j) = (v % d, v / d);
            let mut push = |r: usize, c: usize, z: C64| {
                let p = position[r + c * d];
                debug_assert!(p != usize::MAX, "generator leaves its coherence block");
                triplets.push((p, col, z));
            };
            for (r, x) in h_cols.row(i) {
                push(r, j, minus_i * x);
            }
            for (c, x) in h.row(j) {
                push(i, c, -minus_i * x);
            }
            for (rate, op_cols, m_cols, m) in &terms {
                for (r, a) in op_cols.row(i) {
                    for (c, b) in op_cols.row(j) {
                        push(r, c, 2.0 * rate * a * b.conj());
                    }
                }
                for (r, a) in m_cols.row(i) {
                    push(r, j, -rate * a);
                }
                for (c, a) in m.row(j) {
                    push(i, c, -rate * a);
                }
            }
        }
        let n = indices.len();
        let block = SparseMatrix::from_triplets(n, n, triplets);
        Self {
            dim: d,
            indices,
            block,
        }
    }

    /// Positions of the block's entries inside the full stacked vector.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn block(&self) -> &SparseMatrix {
        &self.block
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Restrict a dense matrix to the block, returning the dropped weight
    /// (largest modulus outside the block).
    pub fn restrict(&self, rho: &Array2<C64>) -> (Vec<C64>, f64) {
        let full = vectorize(rho);
        let mut inside = vec![false; full.len()];
        for &i in &self.indices {
            inside[i] = true;
        }
        let outside = full
            .iter()
            .zip(&inside)
            .filter(|(_, &ins)| !ins)
            .map(|(z, _)| z.norm())
            .fold(0.0, f64::max);
        (self.indices.iter().map(|&i| full[i]).collect(), outside)
    }

    /// Embed a block vector back into a dense `D × D` matrix.
    pub fn embed(&self, v: &[C64]) -> Array2<C64> {
        let mut full = vec![C64::new(0.0, 0.0); self.dim * self.dim];
        for (&i, &z) in self.indices.iter().zip(v) {
            full[i] = z;
        }
        unvectorize(&full, self.dim)
    }

    /// Positions (within the block) of the diagonal entries `ρ[i, i]`.
    pub fn diagonal_positions(&self) -> Vec<(usize, usize)> {
        self.indices
            .iter()
            .enumerate()
            .filter(|(_, &v)| v % (self.dim + 1) == 0)
            .map(|(p, &v)| (p, v / (self.dim + 1)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::DensityMatrix;

    fn coupled(delta_over_g: f64) -> SystemParams {
        SystemParams::new(20.0, 0.2, 20.0 * delta_over_g, 0.01)
    }

    #[test]
    fn hamiltonian_diagonal_limit() {
        let p = SystemParams::new(0.0, 0.2, 1.0, 0.0);
        let sp = p.space().unwrap();
        let h = hamiltonian(&p, sp);
        assert_eq!(h.element([1, 0, 0], [1, 0, 0]), re(-1.0));
        assert_eq!(h.element([1, 2, 0], [1, 2, 0]), re(-3.0));
        assert_eq!(h.element([0, 0, 3], [0, 0, 3]), re(0.0));
    }

    #[test]
    fn hamiltonian_coupling_elements() {
        let p = SystemParams::new(20.0, 0.2, 3.0, 0.05).with_dims([3, 3, 3]);
        let sp = p.space().unwrap();
        let h = hamiltonian(&p, sp);
        assert!((h.element([0, 1, 1], [1, 0, 0]) - re(10.0)).norm() < 1e-13);
        // ladder factors √2·√1·√1 times g/2
        assert!((h.element([1, 1, 1], [2, 0, 0]) - re(20.0 / 2f64.sqrt())).norm() < 1e-12);
        assert!((h.element([1, 0, 0], [0, 0, 0]) - re(0.05)).norm() < 1e-15);
    }

    #[test]
    fn hamiltonian_is_hermitian() {
        for (g, d, o) in [(20.0, 3.3, 0.01), (8.0, -1.0, 0.1), (0.0, 0.0, 0.0)] {
            let p = SystemParams::new(g, 0.02, d, o);
            let h = hamiltonian(&p, p.space().unwrap());
            assert!(h.is_hermitian(1e-12));
        }
    }

    #[test]
    fn vacuum_is_steady_without_drive() {
        let p = SystemParams::new(20.0, 0.2, 4.0, 0.0);
        let sp = p.space().unwrap();
        let l = liouvillian(&p, sp);
        let out = l.apply(DensityMatrix::vacuum(sp).matrix());
        assert!(out.iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn trace_functional_is_left_null_vector() {
        for p in [
            coupled(0.5),
            coupled(0.0).with_thermal(1.0),
            SystemParams::new(8.0, 0.02, 5.0, 0.01),
        ] {
            let l = liouvillian(&p, p.space().unwrap());
            assert!(l.trace_defect() <= 1e-10, "defect {}", l.trace_defect());
        }
    }

    #[test]
    fn superoperator_matches_direct_master_equation() {
        let p = SystemParams::new(3.0, 0.4, 0.7, 0.3)
            .with_thermal(0.5)
            .with_dims([3, 2, 3]);
        let sp = p.space().unwrap();
        let l = liouvillian(&p, sp);
        let d = sp.total_dim();
        let rho = Array2::from_shape_fn((d, d), |(i, j)| {
            C64::new(
                ((i * 7 + j * 3) % 5) as f64 * 0.1,
                ((i + 2 * j) % 3) as f64 * 0.05,
            )
        });
        let h = hamiltonian(&p, sp).matrix().to_dense();
        let mut direct = (h.dot(&rho) - rho.dot(&h)).mapv(|z| z * C64::new(0.0, -1.0));
        for (rate, op) in dissipators(&p, sp) {
            let o = op.matrix().to_dense();
            let od = o.t().mapv(|z| z.conj());
            let odo = od.dot(&o);
            let term = o.dot(&rho).dot(&od).mapv(|z| z * 2.0) - odo.dot(&rho) - rho.dot(&odo);
            direct = direct + term.mapv(|z| z * rate);
        }
        let diff = (&l.apply(&rho) - &direct)
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12, "diff {diff}");
        let stacked = unvectorize(&l.superop().mul_vec(&vectorize(&rho)), d);
        let diff = (&stacked - &direct)
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12, "superoperator diff {diff}");
    }

    #[test]
    fn reflected_operator_offset() {
        let p = SystemParams::new(20.0, 0.2, 0.0, 0.01);
        let sp = p.space().unwrap();
        let cr = reflected_operator(&p, sp);
        assert!((cr.element([0, 0, 0], [0, 0, 0]) - C64::new(0.0, 0.01)).norm() < 1e-16);
        let n_r = cr
            .adjoint()
            .mul(&cr)
            .unwrap()
            .expectation(&DensityMatrix::vacuum(sp))
            .unwrap();
        assert!((n_r.re - 1e-4).abs() < 1e-18);

        let p0 = p.with_omega(0.0);
        assert_eq!(
            reflected_operator(&p0, sp),
            QOperator::annihilation(sp, Mode::A)
        );
    }

    #[test]
    fn sectors_do_not_leak() {
        let p = SystemParams::new(5.0, 0.3, 1.0, 0.05)
            .with_thermal(0.7)
            .with_dims([3, 3, 4]);
        let sp = p.space().unwrap();
        let l = liouvillian(&p, sp);
        let d = sp.total_dim();
        let q: Vec<i64> = (0..d).map(|i| charge(sp.occupations(i))).collect();
        for (r, c, _) in l.superop().triplets() {
            let kr = q[r % d] - q[r / d];
            let kc = q[c % d] - q[c / d];
            assert_eq!(kr, kc);
        }
        let s0 = l.sector(0);
        assert_eq!(s0.diagonal_positions().len(), d);
        for k in [-2, 0, 1] {
            let s = l.sector(k);
            let reference = l.superop().principal_submatrix(s.indices());
            assert!(s.block().max_abs_diff(&reference) < 1e-14, "sector {k}");
        }
    }

    #[test]
    fn validation_guards() {
        assert!(SystemParams::new(20.0, 0.2, 0.0, 0.01).validate().is_ok());
        assert!(matches!(
            SystemParams::new(20.0, 0.2, 0.0, 0.5).validate(),
            Err(Error::StrongDrive { .. })
        ));
        let mut p = SystemParams::new(20.0, 0.2, 0.0, 0.5);
        p.allow_strong_drive = true;
        assert!(p.validate().is_ok());
        assert!(SystemParams::new(-1.0, 0.2, 0.0, 0.01).validate().is_err());
        let mut p = SystemParams::new(1.0, 0.2, 0.0, 0.01);
        p.kappa = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn default_truncations() {
        assert_eq!(default_dims(0.0), [4, 4, 4]);
        assert_eq!(default_dims(2.0), [4, 4, 47]);
        assert_eq!(default_dims(1.0), [4, 4, 28]);
        assert_eq!(default_dims(0.1), [4, 4, 9]);
        // the thermal weight left above the top level is below the threshold
        for n_th in [0.1, 1.0, 2.0, 5.0] {
            let top = default_dims(n_th)[2] - 1;
            let q: f64 = n_th / (1.0 + n_th);
            assert!(q.powi(top as i32) / (1.0 + n_th) < DEFAULT_TAIL_THRESHOLD);
        }
    }
}
