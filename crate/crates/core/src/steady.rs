//! Steady state of the master equation and equal-time observables.

use std::fmt;

use faer::prelude::*;
use faer::sparse::SparseColMat;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, HilbertSpace, Mode, QOperator};
use crate::model::{liouvillian, reflected_operator, CoherenceSector, Liouvillian, SystemParams};
use crate::sparse::SparseMatrix;

/// Relative residual `‖L ρ‖ / ‖L‖` accepted from the solver.
pub const RESIDUAL_TOL: f64 = 1e-10;
/// Occupations below this make a normalised correlation undefined.
pub const MIN_OCCUPATION: f64 = 1e-300;
/// Default ceiling for the top-Fock-level population.
pub const DEFAULT_TAIL_THRESHOLD: f64 = 1e-8;

/// Row flags attached to computed observables.
#[derive(Debug, Clone, PartialEq)]
pub enum Flag {
    /// Top Fock level population above the configured threshold.
    Tail,
    /// A normalised correlation had a vanishing denominator.
    Undefined(&'static str),
    /// The point could not be solved at all.
    Failed(String),
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Flag::Tail => f.write_str("tail"),
            Flag::Undefined(name) => write!(f, "undefined_{name}"),
            Flag::Failed(msg) => write!(f, "failed({msg})"),
        }
    }
}

/// Join flags for a table cell; `ok` when there are none.
pub fn format_flags(flags: &[Flag]) -> String {
    if flags.is_empty() {
        "ok".to_string()
    } else {
        flags
            .iter()
            .map(|f| f.to_string())
            .collect::<Vec<_>>()
            .join(";")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyObservables {
    pub n_a: f64,
    pub n_s: f64,
    pub n_r: f64,
    pub g2_aa: f64,
    pub g2_ss: f64,
    pub g2_rr: f64,
    pub g2_tot: f64,
    /// Largest top-level population of any mode.
    pub trunc_tail: f64,
    pub flags: Vec<Flag>,
}

impl SteadyObservables {
    pub fn failed(reason: String) -> Self {
        Self {
            n_a: f64::NAN,
            n_s: f64::NAN,
            n_r: f64::NAN,
            g2_aa: f64::NAN,
            g2_ss: f64::NAN,
            g2_rr: f64::NAN,
            g2_tot: f64::NAN,
            trunc_tail: f64::NAN,
            flags: vec![Flag::Failed(reason)],
        }
    }

    pub fn trusted(&self) -> bool {
        self.flags.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyOptions {
    pub tail_threshold: f64,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        Self {
            tail_threshold: DEFAULT_TAIL_THRESHOLD,
        }
    }
}

/// Steady state with the achieved relative residual.
#[derive(Debug, Clone)]
pub struct SteadySolution {
    pub rho: DensityMatrix,
    pub residual: f64,
}

pub fn steady_state(l: &Liouvillian) -> Result<DensityMatrix> {
    solve_steady_state(l).map(|s| s.rho)
}

/// Solve `L ρ = 0`, `tr ρ = 1`.
///
/// The equation for `ρ[0,0]` is replaced by the trace constraint inside the
/// `k = 0` coherence block and the bordered system is factorised with a
/// sparse LU. If that system turns out singular or inaccurate, inverse
/// iteration near zero is used instead; two independent starts that settle
/// on different null vectors mark the null space as degenerate.
pub fn solve_steady_state(l: &Liouvillian) -> Result<SteadySolution> {
    let space = l.space();
    let sector = l.sector(0);
    let block = sector.block();
    let norm = block.norm_one().max(f64::MIN_POSITIVE);

    // No drive and no thermal heating: the vacuum is annihilated by L.
    // `ρ[0, 0]` is the first entry of the block.
    if column_is_zero(block, 0) {
        let rho = DensityMatrix::vacuum(space);
        return Ok(SteadySolution { rho, residual: 0.0 });
    }

    let bordered = bordered_solve(&sector);
    let candidate = match bordered {
        Some(x) => {
            let rho = finish(space, &sector, &x)?;
            let residual = relative_residual(l, &rho, norm);
            if residual <= RESIDUAL_TOL {
                Some(SteadySolution { rho, residual })
            } else {
                None
            }
        }
        None => None,
    };
    if let Some(sol) = candidate {
        sol.rho.validate()?;
        return Ok(sol);
    }

    // Fallback: inverse iteration from two independent starts.
    let starts = [start_vector(&sector, 0), start_vector(&sector, 1)];
    let mut found: Vec<DensityMatrix> = Vec::new();
    let mut best_residual = f64::INFINITY;
    for s in starts {
        match inverse_iteration(block, s, norm) {
            Some(v) => {
                let rho = finish(space, &sector, &v)?;
                let residual = relative_residual(l, &rho, norm);
                best_residual = best_residual.min(residual);
                if residual <= RESIDUAL_TOL {
                    found.push(rho);
                }
            }
            None => continue,
        }
    }
    match found.len() {
        0 => Err(Error::SolverFailure {
            residual: best_residual,
        }),
        _ => {
            let diff = found
                .get(1)
                .map(|other| {
                    (found[0].matrix() - other.matrix())
                        .iter()
                        .map(|z| z.norm())
                        .fold(0.0, f64::max)
                })
                .unwrap_or(0.0);
            if diff > 1e-6 {
                return Err(Error::DegenerateSteadyState);
            }
            let rho = found.swap_remove(0);
            rho.validate()?;
            let residual = relative_residual(l, &rho, norm);
            Ok(SteadySolution { rho, residual })
        }
    }
}

fn column_is_zero(m: &SparseMatrix, col: usize) -> bool {
    m.triplets().all(|(_, c, _)| c != col)
}

fn relative_residual(l: &Liouvillian, rho: &DensityMatrix, norm: f64) -> f64 {
    let r = l.apply(rho.matrix());
    r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() / norm
}

/// Hermitise, renormalise and embed a block solution.
fn finish(space: HilbertSpace, sector: &CoherenceSector, x: &[C64]) -> Result<DensityMatrix> {
    let m = sector.embed(x);
    let mut m = (&m + &m.t().mapv(|z| z.conj())).mapv(|z| 0.5 * z);
    let tr: C64 = m.diag().sum();
    if !(tr.norm() > 0.0) || !tr.re.is_finite() {
        return Err(Error::SolverFailure {
            residual: f64::INFINITY,
        });
    }
    m.mapv_inplace(|z| z / tr);
    DensityMatrix::from_raw(space, m)
}

fn bordered_solve(sector: &CoherenceSector) -> Option<Vec<C64>> {
    let block = sector.block();
    let n = block.nrows();
    let diag = sector.diagonal_positions();
    // Row of the ρ[0,0] equation.
    let pivot_row = diag.iter().find(|(_, i)| *i == 0).map(|(p, _)| *p)?;

    let mut triplets: Vec<faer::sparse::Triplet<usize, usize, C64>> = block
        .triplets()
        .filter(|(r, _, _)| *r != pivot_row)
        .map(|(r, c, v)| faer::sparse::Triplet::new(r, c, v))
        .collect();
    triplets.extend(
        diag.iter()
            .map(|&(p, _)| faer::sparse::Triplet::new(pivot_row, p, C64::new(1.0, 0.0))),
    );
    let a = SparseColMat::<usize, C64>::try_new_from_triplets(n, n, &triplets).ok()?;
    let lu = a.sp_lu().ok()?;

    let mut rhs = Mat::<C64>::zeros(n, 1);
    rhs[(pivot_row, 0)] = C64::new(1.0, 0.0);
    let mut x = lu.solve(&rhs);

    if condition_estimate(&a, &lu) > MAX_CONDITION {
        return None;
    }

    // Two rounds of iterative refinement recover accuracy in the
    // many-decades-small multi-photon coherences.
    for _ in 0..2 {
        let xv: Vec<C64> = (0..n).map(|i| x[(i, 0)]).collect();
        let ax = sparse_mul(&a, &xv);
        let mut r = Mat::<C64>::zeros(n, 1);
        for i in 0..n {
            r[(i, 0)] = rhs[(i, 0)] - ax[i];
        }
        let d = lu.solve(&r);
        for i in 0..n {
            x[(i, 0)] += d[(i, 0)];
        }
    }
    let x: Vec<C64> = (0..n).map(|i| x[(i, 0)]).collect();
    x.iter()
        .all(|z| z.re.is_finite() && z.im.is_finite())
        .then_some(x)
}

/// Bordered systems beyond this 1-norm condition estimate are treated as
/// singular.
const MAX_CONDITION: f64 = 1e12;

/// `‖A‖₁ · ‖A⁻¹ y‖ / ‖y‖` after a few inverse power steps.
fn condition_estimate(
    a: &SparseColMat<usize, C64>,
    lu: &faer::sparse::linalg::solvers::Lu<usize, C64>,
) -> f64 {
    let n = a.nrows();
    let a_ref = a.as_ref();
    let norm_a = (0..n)
        .map(|j| a_ref.val_of_col(j).iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut y = Mat::<C64>::from_fn(n, 1, |i, _| {
        C64::new(
            1.0 + ((i * 7919) % 13) as f64 / 13.0,
            ((i * 104729) % 7) as f64 / 7.0,
        )
    });
    let mut growth = 0.0;
    for _ in 0..4 {
        let ny = (0..n).map(|i| y[(i, 0)].norm_sqr()).sum::<f64>().sqrt();
        let z = lu.solve(&y);
        let nz = (0..n).map(|i| z[(i, 0)].norm_sqr()).sum::<f64>().sqrt();
        if !nz.is_finite() {
            return f64::INFINITY;
        }
        growth = nz / ny;
        y = z;
    }
    norm_a * growth
}

fn sparse_mul(a: &SparseColMat<usize, C64>, x: &[C64]) -> Vec<C64> {
    let mut y = vec![C64::new(0.0, 0.0); a.nrows()];
    let a = a.as_ref();
    for j in 0..a.ncols() {
        let xj = x[j];
        for (i, v) in a.row_idx_of_col(j).zip(a.val_of_col(j)) {
            y[i] += *v * xj;
        }
    }
    y
}

fn start_vector(sector: &CoherenceSector, seed: u64) -> Vec<C64> {
    // Deterministic pseudo-random start (splitmix64).
    let mut state = 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(seed + 1);
    let mut next = || {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        ((z ^ (z >> 31)) >> 11) as f64 / (1u64 << 53) as f64
    };
    (0..sector.len())
        .map(|_| C64::new(next() - 0.5, next() - 0.5))
        .collect()
}

fn inverse_iteration(block: &SparseMatrix, mut v: Vec<C64>, norm: f64) -> Option<Vec<C64>> {
    let n = block.nrows();
    let shift = C64::new(1e-9 * norm, 0.0);
    let triplets: Vec<_> = block
        .triplets()
        .chain((0..n).map(|i| (i, i, -shift)))
        .collect();
    let shifted = SparseMatrix::from_triplets(n, n, triplets).to_faer();
    let lu = shifted.sp_lu().ok()?;
    for _ in 0..50 {
        let mut rhs = Mat::<C64>::zeros(n, 1);
        for i in 0..n {
            rhs[(i, 0)] = v[i];
        }
        let w = lu.solve(&rhs);
        let nrm = (0..n).map(|i| w[(i, 0)].norm_sqr()).sum::<f64>().sqrt();
        if !(nrm.is_finite() && nrm > 0.0) {
            return None;
        }
        v = (0..n).map(|i| w[(i, 0)] / nrm).collect();
        let bv = block.mul_vec(&v);
        let res = bv.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() / norm;
        if res <= 1e-3 * RESIDUAL_TOL {
            return Some(v);
        }
    }
    Some(v)
}

/// `⟨c†c⟩`.
fn mean_number(c: &QOperator, rho: &DensityMatrix) -> Result<f64> {
    Ok(c.adjoint().mul(c)?.expectation(rho)?.re)
}

/// `⟨c†c†cc⟩ / ⟨c†c⟩²`.
pub fn g2_equal_time(c: &QOperator, rho: &DensityMatrix) -> Result<f64> {
    let n = mean_number(c, rho)?;
    if !(n.abs() >= MIN_OCCUPATION) {
        return Err(Error::UndefinedCorrelation { mean: n });
    }
    let cc = c.mul(c)?;
    let num = cc.adjoint().mul(&cc)?.expectation(rho)?.re;
    Ok(num / (n * n))
}

/// `⟨N(N−1)⟩ / ⟨N⟩²` for `N = n_a + n_s`.
pub fn g2_total(rho: &DensityMatrix) -> Result<f64> {
    let space = rho.space();
    let n_tot = QOperator::number(space, Mode::A).add(&QOperator::number(space, Mode::S))?;
    let mean = n_tot.expectation(rho)?.re;
    if !(mean.abs() >= MIN_OCCUPATION) {
        return Err(Error::UndefinedCorrelation { mean });
    }
    let fact = n_tot.mul(&n_tot.sub(&QOperator::identity(space))?)?;
    Ok(fact.expectation(rho)?.re / (mean * mean))
}

/// Equal-time observables; undefined correlations become `NaN` plus a flag.
pub fn observables(
    rho: &DensityMatrix,
    params: &SystemParams,
    opts: &SteadyOptions,
) -> Result<SteadyObservables> {
    let space = rho.space();
    let ca = QOperator::annihilation(space, Mode::A);
    let cs = QOperator::annihilation(space, Mode::S);
    let cr = reflected_operator(params, space);

    let mut flags = Vec::new();
    let mut g2 = |name: &'static str, r: Result<f64>| -> Result<f64> {
        match r {
            Ok(v) => Ok(v),
            Err(Error::UndefinedCorrelation { .. }) => {
                flags.push(Flag::Undefined(name));
                Ok(f64::NAN)
            }
            Err(e) => Err(e),
        }
    };
    let g2_aa = g2("g2_aa", g2_equal_time(&ca, rho))?;
    let g2_ss = g2("g2_ss", g2_equal_time(&cs, rho))?;
    let g2_rr = g2("g2_RR", g2_equal_time(&cr, rho))?;
    let g2_tot = g2("g2_tot", g2_total(rho))?;

    let trunc_tail = rho.top_level_population();
    if trunc_tail > opts.tail_threshold {
        flags.push(Flag::Tail);
    }
    Ok(SteadyObservables {
        n_a: mean_number(&ca, rho)?,
        n_s: mean_number(&cs, rho)?,
        n_r: mean_number(&cr, rho)?,
        g2_aa,
        g2_ss,
        g2_rr,
        g2_tot,
        trunc_tail,
        flags,
    })
}

/// One solved parameter point.
#[derive(Debug, Clone)]
pub struct SteadyPoint {
    pub params: SystemParams,
    pub rho: DensityMatrix,
    pub residual: f64,
    pub observables: SteadyObservables,
}

/// Validate parameters, build the Liouvillian, solve, and evaluate.
pub fn solve_point(params: &SystemParams, opts: &SteadyOptions) -> Result<SteadyPoint> {
    params.validate()?;
    let space = params.space()?;
    let l = liouvillian(params, space);
    let sol = solve_steady_state(&l)?;
    let observables = observables(&sol.rho, params, opts)?;
    Ok(SteadyPoint {
        params: *params,
        rho: sol.rho,
        residual: sol.residual,
        observables,
    })
}

/// One row of a detuning sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub delta: f64,
    pub observables: SteadyObservables,
    /// `NaN` for failed points.
    pub residual: f64,
}

/// Steady observables over a detuning grid. Points are solved
/// independently (in parallel); failures become flagged rows.
pub fn sweep(
    params: &SystemParams,
    delta_grid: &[f64],
    opts: &SteadyOptions,
) -> Result<Vec<SweepRow>> {
    if delta_grid.is_empty() {
        return Err(Error::InvalidGrid("detuning grid is empty".into()));
    }
    Ok(delta_grid
        .par_iter()
        .map(|&delta| {
            let p = params.with_delta(delta);
            match solve_point(&p, opts) {
                Ok(pt) => SweepRow {
                    delta,
                    observables: pt.observables,
                    residual: pt.residual,
                },
                Err(e) => SweepRow {
                    delta,
                    observables: SteadyObservables::failed(e.to_string()),
                    residual: f64::NAN,
                },
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{hamiltonian, SystemParams};

    fn solve(p: &SystemParams) -> SteadyPoint {
        solve_point(p, &SteadyOptions::default()).unwrap()
    }

    #[test]
    fn undriven_vacuum() {
        let p = SystemParams::new(20.0, 0.2, 3.0, 0.0);
        let pt = solve(&p);
        assert_eq!(pt.rho, DensityMatrix::vacuum(p.space().unwrap()));
        assert!(pt.observables.g2_aa.is_nan());
        assert!(pt.observables.flags.contains(&Flag::Undefined("g2_aa")));
    }

    #[test]
    fn linear_cavity_occupation_and_coherence() {
        // g = 0: driven mode is a coherent state with n_a = Ω²/(κ² + Δ²).
        for delta in [0.0, 0.7, -2.0] {
            let p = SystemParams::new(0.0, 0.2, delta, 0.01);
            let pt = solve(&p);
            let expect = 1e-4 / (1.0 + delta * delta);
            assert!(
                (pt.observables.n_a / expect - 1.0).abs() < 1e-9,
                "n_a {}",
                pt.observables.n_a
            );
            assert!((pt.observables.g2_aa - 1.0).abs() < 1e-6);
            assert!(pt.residual <= RESIDUAL_TOL);
        }
    }

    #[test]
    fn resonant_transmission_value() {
        // Ω² ≪ κγ keeps the slowly decaying heralded phonon population small.
        let p = SystemParams::new(20.0, 0.002, 10.0, 0.001);
        let pt = solve(&p);
        let ratio = pt.observables.n_a / p.n0();
        // (1 + x²/4)/(1 + x²) at x = 20
        assert!((ratio - 101.0 / 401.0).abs() < 2e-3, "n_a/n0 = {ratio}");
    }

    #[test]
    fn reflected_field_expansion() {
        let p = SystemParams::new(20.0, 0.2, 7.0, 0.01);
        let pt = solve(&p);
        let space = p.space().unwrap();
        let ca = QOperator::annihilation(space, Mode::A);
        let mean = ca.expectation(&pt.rho).unwrap();
        let offset = C64::new(0.0, p.omega / p.kappa);
        let expect = (mean + offset).norm_sqr() + (pt.observables.n_a - mean.norm_sqr());
        assert!((pt.observables.n_r - expect).abs() < 1e-10);
    }

    #[test]
    fn degenerate_null_space_reported() {
        // No mechanical damping and no coupling: any phonon state is stationary.
        let p = SystemParams::new(0.0, 0.0, 0.0, 0.01).with_dims([3, 3, 3]);
        let l = liouvillian(&p, p.space().unwrap());
        assert!(matches!(
            solve_steady_state(&l),
            Err(Error::DegenerateSteadyState)
        ));
    }

    #[test]
    fn steady_state_is_valid_density_matrix() {
        let p = SystemParams::new(8.0, 0.02, 8.0 / 2f64.sqrt(), 0.01);
        let pt = solve(&p);
        assert!(pt.rho.validate().is_ok());
        let h = hamiltonian(&p, p.space().unwrap());
        assert!(h.expectation(&pt.rho).unwrap().im.abs() < 1e-12);
    }

    #[test]
    fn sweep_matches_single_point_and_is_symmetric() {
        let p = SystemParams::new(20.0, 0.2, 0.0, 0.01);
        let grid = [-13.0, -4.0, 4.0, 13.0];
        let rows = sweep(&p, &grid, &SteadyOptions::default()).unwrap();
        let direct = solve(&p.with_delta(4.0));
        assert_eq!(rows[2].observables, direct.observables);
        for (lo, hi) in [(0, 3), (1, 2)] {
            let (a, b) = (&rows[lo].observables, &rows[hi].observables);
            assert!((a.n_a / b.n_a - 1.0).abs() < 1e-8);
            assert!((a.g2_aa / b.g2_aa - 1.0).abs() < 1e-8);
        }
        assert!(sweep(&p, &[], &SteadyOptions::default()).is_err());
    }

    #[test]
    fn sweep_flags_failures_without_aborting() {
        let p = SystemParams::new(0.0, 0.0, 0.0, 0.01).with_dims([3, 3, 3]);
        let rows = sweep(&p, &[0.0, 1.0], &SteadyOptions::default()).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows
            .iter()
            .all(|r| matches!(r.observables.flags[0], Flag::Failed(_))));
        assert!(rows[0].residual.is_nan());
    }
}
