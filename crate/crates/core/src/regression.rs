//! Two-time intensity correlations by the quantum regression theorem.
//!
//! `g²_12(τ) = tr(c₂†c₂ · e^{Lτ}[c₁ ρ c₁†]) / (⟨c₁†c₁⟩⟨c₂†c₂⟩)`: the
//! unnormalized post-detection matrix is propagated under the Liouvillian
//! and the second intensity is read off at every delay.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{trace_product, DensityMatrix, HilbertSpace, Mode, QOperator};
use crate::krylov::{Krylov, ShiftInvert, DEFAULT_BASIS, DEFAULT_TOL};
use crate::model::{
    liouvillian, reflected_operator, vectorize, CoherenceSector, Liouvillian, SystemParams,
};
use crate::steady::{solve_steady_state, MIN_OCCUPATION};

/// Tolerance used when comparing against the classical bounds.
pub const BOUND_TOL: f64 = 1e-9;

/// A photodetector channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    A,
    S,
    /// Reflected field `c_a + iΩ/κ`.
    R,
    /// Both optical modes on one detector.
    Tot,
}

impl Channel {
    pub fn label(self) -> &'static str {
        match self {
            Channel::A => "a",
            Channel::S => "s",
            Channel::R => "R",
            Channel::Tot => "tot",
        }
    }

    /// Jump operators and the intensity observable `Σ c†c`.
    pub fn operators(
        self,
        params: &SystemParams,
        space: HilbertSpace,
    ) -> Result<(Vec<QOperator>, QOperator)> {
        let jumps = match self {
            Channel::A => vec![QOperator::annihilation(space, Mode::A)],
            Channel::S => vec![QOperator::annihilation(space, Mode::S)],
            Channel::R => vec![reflected_operator(params, space)],
            Channel::Tot => vec![
                QOperator::annihilation(space, Mode::A),
                QOperator::annihilation(space, Mode::S),
            ],
        };
        let mut intensity = QOperator::zero(space);
        for c in &jumps {
            intensity = intensity.add(&c.adjoint().mul(c)?)?;
        }
        Ok((jumps, intensity))
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Ordered detector pair (first detection, second detection).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Pair {
    pub first: Channel,
    pub second: Channel,
}

impl Pair {
    pub const fn new(first: Channel, second: Channel) -> Self {
        Self { first, second }
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.first, self.second) {
            (Channel::Tot, Channel::Tot) => f.write_str("tot"),
            (a, b) => write!(f, "{a}{b}"),
        }
    }
}

impl FromStr for Pair {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "tot" {
            return Ok(Pair::new(Channel::Tot, Channel::Tot));
        }
        let channel = |c: char| match c {
            'a' => Ok(Channel::A),
            's' => Ok(Channel::S),
            'R' => Ok(Channel::R),
            _ => Err(Error::UnknownMode(s.to_string())),
        };
        let mut chars = s.chars();
        match (chars.next(), chars.next(), chars.next()) {
            (Some(a), Some(b), None) => Ok(Pair::new(channel(a)?, channel(b)?)),
            _ => Err(Error::UnknownMode(s.to_string())),
        }
    }
}

impl TryFrom<String> for Pair {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Pair> for String {
    fn from(p: Pair) -> String {
        p.to_string()
    }
}

/// State after a detection on one channel.
#[derive(Debug, Clone)]
pub struct ConditionalState {
    pub rho: DensityMatrix,
    pub channel: Channel,
    /// Detection weight `tr(Σ c ρ c†) = ⟨Σ c†c⟩`.
    pub norm: f64,
}

fn jump_matrix(jumps: &[QOperator], rho: &Array2<C64>) -> Array2<C64> {
    jumps
        .iter()
        .map(|c| c.sandwich(rho))
        .reduce(|a, b| a + b)
        .expect("channel has at least one jump operator")
}

/// `ρ_c = Σ c ρ c† / tr(Σ c ρ c†)`.
pub fn conditional_state(
    rho: &DensityMatrix,
    params: &SystemParams,
    channel: Channel,
) -> Result<ConditionalState> {
    let (jumps, _) = channel.operators(params, rho.space())?;
    let x = jump_matrix(&jumps, rho.matrix());
    let norm = x.diag().iter().map(|z| z.re).sum::<f64>();
    if !(norm > MIN_OCCUPATION) {
        return Err(Error::NoDetection { probability: norm });
    }
    let rho_c = DensityMatrix::new(rho.space(), x.mapv(|z| z / norm))?;
    Ok(ConditionalState {
        rho: rho_c,
        channel,
        norm,
    })
}

/// Per-point report for `g²(τ) ≤ g²(0)` and `|g²(τ) − 1| ≤ |g²(0) − 1|`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundViolation {
    pub first: bool,
    pub second: bool,
}

/// Flag points that break either classical inequality.
pub fn classical_bounds(values: &[f64], g2_zero: f64) -> Vec<BoundViolation> {
    let tol = BOUND_TOL * g2_zero.abs().max(1.0);
    values
        .iter()
        .map(|&v| BoundViolation {
            first: v > g2_zero + tol,
            second: (v - 1.0).abs() > (g2_zero - 1.0).abs() + tol,
        })
        .collect()
}

/// Delays with `g²(τ)` and the classical-bound report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationSeries {
    pub pair: Pair,
    pub tau: Vec<f64>,
    pub values: Vec<f64>,
    pub g2_zero: f64,
    pub violations: Vec<BoundViolation>,
}

impl CorrelationSeries {
    pub fn new(pair: Pair, tau: Vec<f64>, values: Vec<f64>, g2_zero: f64) -> Self {
        let violations = classical_bounds(&values, g2_zero);
        Self {
            pair,
            tau,
            values,
            g2_zero,
            violations,
        }
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    /// Interior local minima `(τ, g²)`.
    pub fn local_minima(&self) -> Vec<(f64, f64)> {
        self.values
            .windows(3)
            .enumerate()
            .filter(|(_, w)| w[1] < w[0] && w[1] <= w[2])
            .map(|(i, w)| (self.tau[i + 1], w[1]))
            .collect()
    }
}

/// Check a delay grid: non-empty, starts at 0, strictly increasing.
pub fn check_tau_grid(tau: &[f64]) -> Result<()> {
    match tau.first() {
        None => Err(Error::InvalidGrid("delay grid is empty".into())),
        Some(&t0) if t0 != 0.0 => Err(Error::InvalidGrid(format!(
            "delay grid starts at {t0}, not 0"
        ))),
        _ if tau.iter().any(|t| !t.is_finite()) => {
            Err(Error::InvalidGrid("non-finite delay".into()))
        }
        _ if tau.windows(2).any(|w| w[1] <= w[0]) => Err(Error::InvalidGrid(
            "delays must be strictly increasing".into(),
        )),
        _ => Ok(()),
    }
}

/// Linear spacing `0.02/g` up to `20/κ`, then logarithmic up to `tau_max`
/// (default `5/γ`). With `g = 0` the linear step is `0.02/κ`.
pub fn default_tau_grid(params: &SystemParams, tau_max: Option<f64>) -> Result<Vec<f64>> {
    const PER_DECADE: f64 = 100.0;
    let kappa = params.kappa;
    let linear_end = 20.0 / kappa;
    let tau_max = match tau_max {
        Some(t) => t,
        None if params.gamma > 0.0 => (5.0 / params.gamma).max(linear_end),
        None => linear_end,
    };
    if !(tau_max > 0.0 && tau_max.is_finite()) {
        return Err(Error::InvalidGrid(format!(
            "tau_max must be positive, got {tau_max}"
        )));
    }
    let dt = if params.g > 0.0 {
        0.02 / params.g
    } else {
        0.02 / kappa
    };
    let end = linear_end.min(tau_max);
    let n = (end / dt).ceil() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|i| i as f64 * end / n as f64).collect();
    if tau_max > linear_end {
        let decades = (tau_max / linear_end).log10();
        let m = (decades * PER_DECADE).ceil().max(1.0) as usize;
        grid.extend((1..=m).map(|i| linear_end * (tau_max / linear_end).powf(i as f64 / m as f64)));
        *grid.last_mut().expect("non-empty") = tau_max;
    }
    Ok(grid)
}

/// Delays beyond this many multiples of `1/‖L‖₁`, and past the optical
/// transient, go to the shift-invert propagator, one shift per decade.
const STIFF_HORIZON: f64 = 500.0;
const OPTICAL_SETTLING: f64 = 20.0;

/// Steady state plus the machinery to propagate operators under `L`.
#[derive(Debug, Clone)]
pub struct CorrelationEngine {
    params: SystemParams,
    liouvillian: Liouvillian,
    sector: CoherenceSector,
    steady: DensityMatrix,
    residual: f64,
    tol: f64,
}

impl CorrelationEngine {
    /// Build `L` and solve for its steady state.
    pub fn new(params: &SystemParams) -> Result<Self> {
        params.validate()?;
        let l = liouvillian(params, params.space()?);
        let sol = solve_steady_state(&l)?;
        Ok(Self::from_parts(params, l, sol.rho, sol.residual))
    }

    /// Reuse an existing Liouvillian and its steady state.
    pub fn from_parts(
        params: &SystemParams,
        l: Liouvillian,
        steady: DensityMatrix,
        residual: f64,
    ) -> Self {
        let sector = l.sector(0);
        Self {
            params: *params,
            liouvillian: l,
            sector,
            steady,
            residual,
            tol: DEFAULT_TOL,
        }
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn steady(&self) -> &DensityMatrix {
        &self.steady
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn liouvillian(&self) -> &Liouvillian {
        &self.liouvillian
    }

    fn settle(&self) -> f64 {
        OPTICAL_SETTLING / self.params.kappa
    }

    pub fn conditional_state(&self, channel: Channel) -> Result<ConditionalState> {
        conditional_state(&self.steady, &self.params, channel)
    }

    /// `e^{Lτ} X` at each delay, for any operator-space matrix `X`.
    pub fn propagate(&self, x: &Array2<C64>, tau: &[f64]) -> Result<Vec<Array2<C64>>> {
        let d = self.liouvillian.space().total_dim();
        let scale = x.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let (v, outside) = self.sector.restrict(x);
        if outside <= 1e-15 * scale {
            let out = evolve(
                self.sector.block(),
                &v,
                tau,
                self.settle(),
                self.tol,
                |k, v, t| k.propagate(v, t),
                |s, v, t| s.propagate(v, t),
            )?;
            Ok(out.iter().map(|v| self.sector.embed(v)).collect())
        } else {
            let full = vectorize(x);
            let out = evolve(
                self.liouvillian.superop(),
                &full,
                tau,
                self.settle(),
                self.tol,
                |k, v, t| k.propagate(v, t),
                |s, v, t| s.propagate(v, t),
            )?;
            Ok(out
                .iter()
                .map(|v| crate::model::unvectorize(v, d))
                .collect())
        }
    }

    /// Two-time correlation for an ordered detector pair.
    pub fn g2(&self, pair: Pair, tau: &[f64]) -> Result<CorrelationSeries> {
        check_tau_grid(tau)?;
        let space = self.liouvillian.space();
        let (jumps, first_intensity) = pair.first.operators(&self.params, space)?;
        let (_, second_intensity) = pair.second.operators(&self.params, space)?;
        let rho = self.steady.matrix();
        let n1 = trace_product(first_intensity.matrix(), rho).re;
        let n2 = trace_product(second_intensity.matrix(), rho).re;
        for n in [n1, n2] {
            if !(n.abs() >= MIN_OCCUPATION) {
                return Err(Error::UndefinedCorrelation { mean: n });
            }
        }
        let x0 = jump_matrix(&jumps, rho);
        let norm = n1 * n2;
        let values = self.readout(&x0, second_intensity.matrix(), tau)?;
        let values: Vec<f64> = values.into_iter().map(|v| v / norm).collect();
        let g2_zero = values[0];
        Ok(CorrelationSeries::new(pair, tau.to_vec(), values, g2_zero))
    }

    /// `tr(O e^{Lτ} X)` without materializing the dense matrices.
    fn readout(
        &self,
        x0: &Array2<C64>,
        o: &crate::sparse::SparseMatrix,
        tau: &[f64],
    ) -> Result<Vec<f64>> {
        let d = self.liouvillian.space().total_dim();
        let scale = x0.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let (v, outside) = self.sector.restrict(x0);
        if outside > 1e-15 * scale {
            return Ok(self
                .propagate(x0, tau)?
                .iter()
                .map(|x| trace_product(o, x).re)
                .collect());
        }
        // tr(O X) = Σ O[r, c] X[c, r]; X[c, r] sits at stacked index c + r·d.
        let mut position = vec![usize::MAX; d * d];
        for (p, &i) in self.sector.indices().iter().enumerate() {
            position[i] = p;
        }
        let weights: Vec<(usize, C64)> = o
            .triplets()
            .filter_map(|(r, c, z)| {
                let p = position[c + r * d];
                (p != usize::MAX).then_some((p, z))
            })
            .collect();
        let out = evolve(
            self.sector.block(),
            &v,
            tau,
            self.settle(),
            self.tol,
            |k, v, t| k.functional(v, t, &weights),
            |s, v, t| s.functional(v, t, &weights),
        )?;
        Ok(out.iter().map(|z| z.re).collect())
    }
}

/// Krylov stepping up to the stiff horizon, shift-invert beyond it.
fn evolve<T>(
    a: &crate::sparse::SparseMatrix,
    v: &[C64],
    tau: &[f64],
    settle: f64,
    tol: f64,
    stepped: impl Fn(&Krylov, &[C64], &[f64]) -> Result<Vec<T>>,
    inverted: impl Fn(&ShiftInvert, &[C64], &[f64]) -> Result<Vec<T>>,
) -> Result<Vec<T>> {
    let norm = a.norm_one();
    let horizon = if norm > 0.0 {
        (STIFF_HORIZON / norm).max(settle)
    } else {
        f64::INFINITY
    };
    let split = tau.partition_point(|&t| t <= horizon);
    let mut out = stepped(
        &Krylov::with_settings(a, DEFAULT_BASIS, tol),
        v,
        &tau[..split],
    )?;
    let mut rest = &tau[split..];
    while let Some(&start) = rest.first() {
        let end = rest.partition_point(|&t| t < 10.0 * start);
        let shift = start / 4.0;
        let si = ShiftInvert::new(a, shift, tol)?;
        out.extend(inverted(&si, v, &rest[..end])?);
        rest = &rest[end..];
    }
    Ok(out)
}

/// Convenience wrapper: steady state, then `g²(τ)` for one pair.
pub fn g2_tau(params: &SystemParams, pair: Pair, tau: &[f64]) -> Result<CorrelationSeries> {
    CorrelationEngine::new(params)?.g2(pair, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::steady::{observables, SteadyOptions};

    fn delayed(delta_over_g: f64) -> SystemParams {
        SystemParams::new(8.0, 0.02, 8.0 * delta_over_g, 0.01)
    }

    #[test]
    fn pair_labels_round_trip() {
        for s in ["aa", "ss", "RR", "as", "sa", "tot"] {
            assert_eq!(s.parse::<Pair>().unwrap().to_string(), s);
        }
        assert!("ab".parse::<Pair>().is_err());
        assert!("aaa".parse::<Pair>().is_err());
    }

    #[test]
    fn single_photon_jump_gives_vacuum() {
        let space = HilbertSpace::new(&[4, 4, 4]).unwrap();
        let rho = DensityMatrix::basis_state(space, [1, 0, 0]);
        let p = SystemParams::new(8.0, 0.02, 0.0, 0.01);
        let c = conditional_state(&rho, &p, Channel::A).unwrap();
        assert!((c.norm - 1.0).abs() < 1e-15);
        assert!((c.rho.population([0, 0, 0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn vacuum_has_no_detection() {
        let space = HilbertSpace::new(&[4, 4, 4]).unwrap();
        let rho = DensityMatrix::vacuum(space);
        let p = SystemParams::new(8.0, 0.02, 0.0, 0.01);
        assert!(matches!(
            conditional_state(&rho, &p, Channel::A),
            Err(Error::NoDetection { .. })
        ));
    }

    #[test]
    fn constant_series_has_no_violations() {
        let v = vec![1.7; 20];
        assert!(classical_bounds(&v, 1.7)
            .iter()
            .all(|b| !b.first && !b.second));
        let v = [0.5, 0.6, 0.5 + 1e-12];
        assert!(classical_bounds(&v, 0.5).iter().all(|b| !b.second));
        assert!(classical_bounds(&v, 0.5)[1].first);
    }

    #[test]
    fn grid_shape() {
        let p = delayed(0.0);
        let g = default_tau_grid(&p, None).unwrap();
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 0.0025).abs() < 1e-12);
        assert!((g.last().unwrap() - 250.0).abs() < 1e-9);
        check_tau_grid(&g).unwrap();
        assert!(check_tau_grid(&[0.1, 0.2]).is_err());
        assert!(check_tau_grid(&[0.0, 0.2, 0.2]).is_err());
    }

    #[test]
    fn anchor_matches_equal_time_value() {
        let p = delayed(0.0);
        let eng = CorrelationEngine::new(&p).unwrap();
        let obs = observables(eng.steady(), &p, &SteadyOptions::default()).unwrap();
        let s = eng
            .g2(Pair::new(Channel::A, Channel::A), &[0.0, 0.1])
            .unwrap();
        assert!((s.g2_zero - obs.g2_aa).abs() <= 1e-6 * obs.g2_aa);
        let s = eng
            .g2(Pair::new(Channel::S, Channel::S), &[0.0, 0.1])
            .unwrap();
        assert!((s.g2_zero - obs.g2_ss).abs() <= 1e-6 * obs.g2_ss);
    }

    #[test]
    fn steady_state_is_a_fixed_point() {
        let p = delayed(0.5);
        let eng = CorrelationEngine::new(&p).unwrap();
        let space = eng.steady().space();
        let na = QOperator::number(space, Mode::A);
        let ns = QOperator::number(space, Mode::S);
        let rho = eng.steady().matrix();
        let before = [
            trace_product(na.matrix(), rho),
            trace_product(ns.matrix(), rho),
        ];
        let out = eng.propagate(rho, &[0.0, 1.0, 50.0, 500.0]).unwrap();
        for x in out {
            let after = [
                trace_product(na.matrix(), &x),
                trace_product(ns.matrix(), &x),
            ];
            for (b, a) in before.iter().zip(after) {
                assert!((a - b).norm() <= 1e-8 * b.norm(), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn uncoupled_cavity_is_coherent() {
        let p = SystemParams::new(0.0, 0.02, 0.3, 0.01);
        let tau = default_tau_grid(&p, Some(30.0)).unwrap();
        let s = g2_tau(&p, Pair::new(Channel::A, Channel::A), &tau).unwrap();
        for v in &s.values {
            assert!((v - 1.0).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn long_delays_relax_to_one() {
        let p = delayed(1.0 / 2f64.sqrt());
        let eng = CorrelationEngine::new(&p).unwrap();
        let tau = default_tau_grid(&p, Some(12.0 / p.gamma)).unwrap();
        for pair in ["aa", "ss", "as", "sa"] {
            let s = eng.g2(pair.parse().unwrap(), &tau).unwrap();
            for (t, v) in s.tau.iter().zip(&s.values) {
                if *t >= 10.0 / p.gamma {
                    assert!((v - 1.0).abs() <= 0.01, "{pair} τ={t} g2={v}");
                }
            }
            assert!(s.values.iter().all(|v| *v >= -1e-9));
        }
    }

    #[test]
    fn stiff_route_matches_stepping() {
        let p = delayed(0.5);
        let eng = CorrelationEngine::new(&p).unwrap();
        let (jumps, _) = Channel::A.operators(&p, eng.steady().space()).unwrap();
        let (v, _) = eng
            .sector
            .restrict(&jump_matrix(&jumps, eng.steady().matrix()));
        let a = eng.sector.block();
        let tau = [0.0, 0.5, 30.0, 80.0, 200.0, 600.0];
        assert!(STIFF_HORIZON / a.norm_one() < 30.0 && eng.settle() < 30.0);
        let stepped = Krylov::with_settings(a, DEFAULT_BASIS, 1e-10)
            .propagate(&v, &tau)
            .unwrap();
        let routed = evolve(
            a,
            &v,
            &tau,
            eng.settle(),
            1e-10,
            |k, v, t| k.propagate(v, t),
            |s, v, t| s.propagate(v, t),
        )
        .unwrap();
        let size: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for ((t, x), y) in tau.iter().zip(&stepped).zip(&routed) {
            let err: f64 = x
                .iter()
                .zip(y)
                .map(|(p, q)| (p - q).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(err <= 1e-8 * size, "τ={t} err={err:e}");
        }
    }

    #[test]
    fn heralded_phonon_state() {
        let p = delayed(1.0 / 2f64.sqrt());
        let eng = CorrelationEngine::new(&p).unwrap();
        let c = eng.conditional_state(Channel::S).unwrap();
        let (one, vacuum) = (c.rho.population([0, 0, 1]), c.rho.population([0, 0, 0]));
        assert!(one > 0.98);
        // |000⟩ comes from |010⟩, fed by phonon decay of |011⟩ at rate γ
        // and emptied at 2κ
        let ratio = vacuum / one;
        assert!(
            (ratio - p.gamma / (2.0 * p.kappa)).abs() < 0.02 * ratio,
            "{ratio}"
        );
        // coherent part of the heralded state
        let s = crate::analytic::steady_amplitudes(&p).unwrap();
        use crate::analytic::Level;
        let w = |l| s.get(l).norm_sqr();
        let pure = w(Level::L011) / (w(Level::L011) + w(Level::L111) + 2.0 * w(Level::L022));
        assert!(pure > 0.99);
    }
}
