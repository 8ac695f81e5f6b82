//! Closed-form weak-drive amplitude model.
//!
//! The state is truncated to at most two photons and evolved under the
//! non-Hermitian Hamiltonian `H − iκ(n_a + n_s)`, which yields intensities to
//! order `Ω²` and intensity correlations to order `Ω⁴`. This is independent
//! of the master-equation route and serves as its oracle.

use std::f64::consts::SQRT_2;

use faer::Mat;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expm::expm;
use crate::fock::Mode;
use crate::model::SystemParams;
use crate::regression::{Channel, CorrelationSeries, Pair};
use crate::steady::{Flag, SteadyObservables, MIN_OCCUPATION};

const I: C64 = C64::new(0.0, 1.0);

fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// `R_K(ω) = [K² + (Δ − ω)²][K² + (Δ + ω)²]`.
pub fn r_factor(k: f64, omega: f64, delta: f64) -> f64 {
    (k * k + (delta - omega).powi(2)) * (k * k + (delta + omega).powi(2))
}

/// Complex drive and coupling ratios of the amplitude model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticContext {
    /// `Ω / κ̃`
    pub alpha: C64,
    /// `g / (4κ̃)`
    pub x: C64,
    /// `κ − iΔ`
    pub kappa_tilde: C64,
}

impl AnalyticContext {
    pub fn new(params: &SystemParams) -> Result<Self> {
        params.validate()?;
        let kappa_tilde = C64::new(params.kappa, -params.delta);
        Ok(Self {
            alpha: re(params.omega) / kappa_tilde,
            x: re(params.g) / (4.0 * kappa_tilde),
            kappa_tilde,
        })
    }
}

/// Basis states of the nine-level model, `|n_a n_s n_b⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    L000,
    L100,
    L011,
    L200,
    L111,
    L022,
    L001,
    L101,
    L012,
}

impl Level {
    pub const ALL: [Level; 9] = [
        Level::L000,
        Level::L100,
        Level::L011,
        Level::L200,
        Level::L111,
        Level::L022,
        Level::L001,
        Level::L101,
        Level::L012,
    ];

    pub fn occupations(self) -> [usize; 3] {
        match self {
            Level::L000 => [0, 0, 0],
            Level::L100 => [1, 0, 0],
            Level::L011 => [0, 1, 1],
            Level::L200 => [2, 0, 0],
            Level::L111 => [1, 1, 1],
            Level::L022 => [0, 2, 2],
            Level::L001 => [0, 0, 1],
            Level::L101 => [1, 0, 1],
            Level::L012 => [0, 1, 2],
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// Labelled amplitudes at a time `τ`, or in the steady state (`time = None`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplitudeState {
    amplitudes: [C64; 9],
    pub time: Option<f64>,
}

impl AmplitudeState {
    pub fn zero(time: Option<f64>) -> Self {
        Self {
            amplitudes: [C64::new(0.0, 0.0); 9],
            time,
        }
    }

    pub fn get(&self, level: Level) -> C64 {
        self.amplitudes[level.slot()]
    }

    pub fn set(&mut self, level: Level, value: C64) {
        self.amplitudes[level.slot()] = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = (Level, C64)> + '_ {
        Level::ALL.iter().map(|&l| (l, self.get(l)))
    }
}

/// Steady amplitudes of the six-level subspace seeded by `|0 0 n⟩`:
/// `|00n⟩, |10n⟩, |0,1,n+1⟩, |20n⟩, |1,1,n+1⟩, |0,2,n+2⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Subspace {
    pub phonons: usize,
    pub a00: C64,
    pub a10: C64,
    pub a01: C64,
    pub a20: C64,
    pub a11: C64,
    pub a02: C64,
}

impl Subspace {
    /// Solve the subspace equations with the time derivatives set to zero.
    /// `phonons = 0` gives the zero-temperature amplitudes.
    pub fn steady(ctx: &AnalyticContext, phonons: usize) -> Self {
        let AnalyticContext { alpha, x, .. } = *ctx;
        let n1 = (phonons + 1) as f64;
        let n2 = (phonons + 2) as f64;
        let x2 = x * x;
        let one = 1.0 + 4.0 * x2 * n1;
        let two = one * (1.0 + 2.0 * x2 * (2.0 * n1 + 1.0));
        Self {
            phonons,
            a00: re(1.0),
            a10: -I * alpha / one,
            a01: -alpha * 2.0 * x * n1.sqrt() / one,
            a20: -(alpha * alpha / SQRT_2) * (1.0 + 2.0 * x2) / two,
            a11: I * alpha * alpha * 2.0 * x * n1.sqrt() / two,
            a02: alpha * alpha * 4.0 * x2 * (n1 * n2 / 2.0).sqrt() / two,
        }
    }

    /// Individual terms of each amplitude equation; their row sums are the
    /// time derivatives.
    fn equation_terms(&self, params: &SystemParams) -> [Vec<C64>; 6] {
        let kt = C64::new(params.kappa, -params.delta);
        let g = params.g;
        let om = params.omega;
        let n1 = (self.phonons + 1) as f64;
        let n2 = (self.phonons + 2) as f64;
        let c1 = 0.5 * g * n1.sqrt();
        let ca = g * (n1 / 2.0).sqrt();
        let cb = g * (n2 / 2.0).sqrt();
        [
            vec![],
            vec![-I * c1 * self.a01, -I * om * self.a00, -kt * self.a10],
            vec![-I * c1 * self.a10, -kt * self.a01],
            vec![
                -I * ca * self.a11,
                -I * SQRT_2 * om * self.a10,
                -2.0 * kt * self.a20,
            ],
            vec![
                -I * ca * self.a20,
                -I * cb * self.a02,
                -I * om * self.a01,
                -2.0 * kt * self.a11,
            ],
            vec![-I * cb * self.a11, -2.0 * kt * self.a02],
        ]
    }

    /// Time derivatives of the six amplitudes.
    pub fn derivatives(&self, params: &SystemParams) -> [C64; 6] {
        self.equation_terms(params).map(|t| t.iter().sum())
    }

    /// Largest derivative relative to the largest term of its equation.
    pub fn fixed_point_residual(&self, params: &SystemParams) -> f64 {
        self.equation_terms(params)
            .iter()
            .filter(|t| !t.is_empty())
            .map(|t| {
                let scale = t.iter().map(|z| z.norm()).fold(0.0, f64::max);
                let sum: C64 = t.iter().sum();
                if scale == 0.0 {
                    0.0
                } else {
                    sum.norm() / scale
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Steady six-level amplitudes at zero temperature (`γ` neglected).
pub fn steady_amplitudes(params: &SystemParams) -> Result<AmplitudeState> {
    let ctx = AnalyticContext::new(params)?;
    let s = Subspace::steady(&ctx, 0);
    let mut out = AmplitudeState::zero(None);
    out.set(Level::L000, s.a00);
    out.set(Level::L100, s.a10);
    out.set(Level::L011, s.a01);
    out.set(Level::L200, s.a20);
    out.set(Level::L111, s.a11);
    out.set(Level::L022, s.a02);
    Ok(out)
}

/// Weighted sums over phonon subspaces of the moments entering the
/// equal-time observables.
fn accumulate(params: &SystemParams, weights: &[(usize, f64)]) -> Result<SteadyObservables> {
    let ctx = AnalyticContext::new(params)?;
    let beta = params.omega / params.kappa;
    let (mut n_a, mut n_s, mut n_r) = (0.0, 0.0, 0.0);
    let (mut aa, mut ss, mut rr, mut tot) = (0.0, 0.0, 0.0, 0.0);
    for &(n, zeta) in weights {
        let s = Subspace::steady(&ctx, n);
        let reflected = s.a10 + I * beta;
        let rr_amp = -beta * beta + 2.0 * I * beta * s.a10 + SQRT_2 * s.a20;
        n_a += zeta * s.a10.norm_sqr();
        n_s += zeta * s.a01.norm_sqr();
        n_r += zeta * reflected.norm_sqr();
        aa += zeta * s.a20.norm_sqr();
        ss += zeta * s.a02.norm_sqr();
        rr += zeta * rr_amp.norm_sqr();
        tot += zeta * (s.a20.norm_sqr() + s.a11.norm_sqr() + s.a02.norm_sqr());
    }
    let mut flags = Vec::new();
    let mut ratio = |name: &'static str, num: f64, mean: f64| {
        if mean.abs() >= MIN_OCCUPATION {
            num / (mean * mean)
        } else {
            flags.push(Flag::Undefined(name));
            f64::NAN
        }
    };
    let g2_aa = ratio("g2_aa", 2.0 * aa, n_a);
    let g2_ss = ratio("g2_ss", 2.0 * ss, n_s);
    let g2_rr = ratio("g2_RR", rr, n_r);
    let g2_tot = ratio("g2_tot", 2.0 * tot, n_a + n_s);
    Ok(SteadyObservables {
        n_a,
        n_s,
        n_r,
        g2_aa,
        g2_ss,
        g2_rr,
        g2_tot,
        trunc_tail: 0.0,
        flags,
    })
}

/// Observables from the exact amplitude ratios of the six-level model.
pub fn exact_observables(params: &SystemParams) -> Result<SteadyObservables> {
    accumulate(params, &[(0, 1.0)])
}

/// The `R_K` forms, valid for `κ/g ≪ 1` where marked approximate.
/// `g²_tot` has no such form and is taken from the amplitude ratios.
pub fn closed_form_observables(params: &SystemParams) -> Result<SteadyObservables> {
    let exact = exact_observables(params)?;
    let (k, g, d) = (params.kappa, params.g, params.delta);
    let n0 = params.n0();
    let r = |kk: f64, w: f64| r_factor(kk, w, d);
    let half = r(k, g / 2.0);
    let three = r(k, 6f64.sqrt() * g / 4.0);
    let reflected_width = r(k / 2.0, g / 2.0);

    let n_a = n0 * k * k * r(k, 0.0).sqrt() / half;
    let n_s = n0 * g * g * k * k / (4.0 * half);
    let n_r = n0 * reflected_width.powi(2) / half.powi(2);

    let mut flags = Vec::new();
    let mut defined = |name: &'static str, v: f64| {
        if v.is_finite() {
            v
        } else {
            flags.push(Flag::Undefined(name));
            f64::NAN
        }
    };
    let g2_aa = defined("g2_aa", r(k, g / 8f64.sqrt()) * half / (r(k, 0.0) * three));
    let g2_ss = if g > 0.0 {
        defined("g2_ss", 2.0 * half / three)
    } else {
        defined("g2_ss", f64::NAN)
    };
    let g2_rr = if g > 0.0 {
        let width = 16.0 * k.powi(3) / (g * g);
        let shift = g / 2.0 - 2.0 * k * k / g;
        defined("g2_RR", half * r(width, shift) / reflected_width.powi(2))
    } else {
        defined("g2_RR", f64::NAN)
    };
    let g2_tot = exact.g2_tot;
    if g2_tot.is_nan() {
        flags.push(Flag::Undefined("g2_tot"));
    }
    Ok(SteadyObservables {
        n_a,
        n_s,
        n_r,
        g2_aa,
        g2_ss,
        g2_rr,
        g2_tot,
        trunc_tail: 0.0,
        flags,
    })
}

/// Thermal phonon weights `ζ_n = N^n / (1 + N)^{n+1}`, `n = 0..=n_max`.
pub fn thermal_weights(n_th: f64, n_max: usize) -> Vec<(usize, f64)> {
    (0..=n_max)
        .map(|n| (n, n_th.powi(n as i32) / (1.0 + n_th).powi(n as i32 + 1)))
        .collect()
}

/// Smallest cutoff whose weights sum to at least `1 − tol`.
pub fn thermal_cutoff(n_th: f64, tol: f64) -> usize {
    if n_th <= 0.0 {
        return 0;
    }
    // missing weight after n_max is (N / (1 + N))^{n_max + 1}
    let q = n_th / (1.0 + n_th);
    ((tol.ln() / q.ln()).ceil() as usize).saturating_sub(1)
}

/// Required completeness of the thermal weights.
pub const THERMAL_WEIGHT_TOL: f64 = 1e-8;

/// Thermal average over uncoupled phonon subspaces.
pub fn thermal_observables(params: &SystemParams, n_max: usize) -> Result<SteadyObservables> {
    let weights = thermal_weights(params.n_th, n_max);
    let total: f64 = weights.iter().map(|(_, z)| z).sum();
    if total < 1.0 - THERMAL_WEIGHT_TOL {
        return Err(Error::ThermalCutoff {
            n_max,
            weight: total,
        });
    }
    accumulate(params, &weights)
}

/// Second-order two-photon Rabi frequency for `|0⟩ → |2_0⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPhotonRabi {
    pub value: f64,
    /// An intermediate one-photon state is resonant with the drive.
    pub divergent: bool,
}

/// `Σ_± ⟨2_0|H_dr|1_±⟩⟨1_±|H_dr|0⟩ / ω_±` with `ω_± = −Δ ± g/2`, from the
/// explicit undriven eigenstates and `H_dr = Ω(c_a† + c_a)`.
pub fn two_photon_rabi(params: &SystemParams) -> Result<TwoPhotonRabi> {
    if !(params.g > 0.0) {
        return Err(Error::InvalidParams(
            "two-photon Rabi frequency needs g > 0".into(),
        ));
    }
    // components in the basis |000⟩, |100⟩, |011⟩, |200⟩, |111⟩, |022⟩
    let h = 1.0 / SQRT_2;
    let ground = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let plus = [0.0, h, h, 0.0, 0.0, 0.0];
    let minus = [0.0, h, -h, 0.0, 0.0, 0.0];
    let t = 1.0 / 3f64.sqrt();
    let two_zero = [0.0, 0.0, 0.0, SQRT_2 * t, 0.0, -t];
    let drive = |v: &[f64; 6]| -> [f64; 6] {
        // Ω(c_a† + c_a) restricted to the six levels
        let om = params.omega;
        [
            om * v[1],
            om * (v[0] + SQRT_2 * v[3]),
            om * v[4],
            om * SQRT_2 * v[1],
            om * v[2],
            0.0,
        ]
    };
    let dot = |a: &[f64; 6], b: &[f64; 6]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut value = 0.0;
    let mut divergent = false;
    for (state, energy) in [
        (plus, -params.delta + params.g / 2.0),
        (minus, -params.delta - params.g / 2.0),
    ] {
        let numerator = dot(&two_zero, &drive(&state)) * dot(&state, &drive(&ground));
        if energy.abs() <= 1e-12 * params.g {
            divergent = true;
            continue;
        }
        value += numerator / energy;
    }
    if divergent {
        value = f64::INFINITY;
    }
    Ok(TwoPhotonRabi { value, divergent })
}

/// Generator and initial amplitudes of the post-detection evolution.
fn conditional_system(
    params: &SystemParams,
    mode: Mode,
) -> Result<([Level; 3], [[C64; 3]; 3], [C64; 3])> {
    let ctx = AnalyticContext::new(params)?;
    let s = Subspace::steady(&ctx, 0);
    let kt = ctx.kappa_tilde;
    let om = params.omega;
    let zero = C64::new(0.0, 0.0);
    match mode {
        Mode::A => {
            let c = -I * params.g / 2.0;
            Ok((
                [Level::L000, Level::L100, Level::L011],
                [[zero, zero, zero], [-I * om, -kt, c], [zero, c, -kt]],
                [s.a10, SQRT_2 * s.a20, s.a11],
            ))
        }
        Mode::S => {
            let c = -I * params.g / SQRT_2;
            Ok((
                [Level::L001, Level::L101, Level::L012],
                [
                    [re(-params.gamma / 2.0), zero, zero],
                    [-I * om, -kt, c],
                    [zero, c, -kt],
                ],
                [s.a01, s.a11, SQRT_2 * s.a02],
            ))
        }
        Mode::B => Err(Error::UnknownMode("b".into())),
    }
}

/// Unnormalized amplitudes after a detection on `mode` (`a` or `s`), at
/// each delay.
pub fn conditional_amplitudes(
    params: &SystemParams,
    mode: Mode,
    tau: &[f64],
) -> Result<Vec<AmplitudeState>> {
    let (levels, m, y0) = conditional_system(params, mode)?;
    Ok(tau
        .iter()
        .map(|&t| {
            let e = expm(&Mat::<C64>::from_fn(3, 3, |i, j| m[i][j] * t));
            let mut state = AmplitudeState::zero(Some(t));
            for (i, level) in levels.iter().enumerate() {
                state.set(*level, (0..3).map(|j| e[(i, j)] * y0[j]).sum());
            }
            state
        })
        .collect())
}

/// `g²_aa(τ) = |A_100(τ)|² / |Ā_100|⁴` or `g²_ss(τ) = |A_012(τ)|² / |Ā_011|⁴`.
///
/// The `s` variant omits the refilling of the unconditioned state and so
/// only describes `τ ≪ 1/γ`; at long delays it decays to zero.
pub fn conditional_g2_tau(
    params: &SystemParams,
    mode: Mode,
    tau: &[f64],
) -> Result<CorrelationSeries> {
    crate::regression::check_tau_grid(tau)?;
    let steady = steady_amplitudes(params)?;
    let (level, mean, channel) = match mode {
        Mode::A => (Level::L100, steady.get(Level::L100).norm_sqr(), Channel::A),
        Mode::S => (Level::L012, steady.get(Level::L011).norm_sqr(), Channel::S),
        Mode::B => return Err(Error::UnknownMode("b".into())),
    };
    if !(mean >= MIN_OCCUPATION) {
        return Err(Error::UndefinedCorrelation { mean });
    }
    let values: Vec<f64> = conditional_amplitudes(params, mode, tau)?
        .iter()
        .map(|s| s.get(level).norm_sqr() / (mean * mean))
        .collect();
    let g2_zero = values[0];
    Ok(CorrelationSeries::new(
        Pair::new(channel, channel),
        tau.to_vec(),
        values,
        g2_zero,
    ))
}

/// Local minima of the conditional `g²(τ)` on `(0, tau_max]`, located on a
/// grid of spacing `step` and refined by golden-section search.
pub fn conditional_minima(
    params: &SystemParams,
    mode: Mode,
    tau_max: f64,
    step: f64,
) -> Result<Vec<(f64, f64)>> {
    if !(tau_max > 0.0 && step > 0.0 && step < tau_max) {
        return Err(Error::InvalidGrid(format!(
            "tau_max {tau_max} and step {step}"
        )));
    }
    let n = (tau_max / step).ceil() as usize;
    let grid: Vec<f64> = (0..=n).map(|i| i as f64 * tau_max / n as f64).collect();
    let series = conditional_g2_tau(params, mode, &grid)?;
    let eval =
        |t: f64| -> Result<f64> { Ok(conditional_g2_tau(params, mode, &[0.0, t])?.values[1]) };
    let mut out = Vec::new();
    for (i, w) in series.values.windows(3).enumerate() {
        if !(w[1] < w[0] && w[1] <= w[2]) {
            continue;
        }
        let (mut lo, mut hi) = (grid[i], grid[i + 2]);
        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = hi - ratio * (hi - lo);
        let mut d = lo + ratio * (hi - lo);
        let (mut fc, mut fd) = (eval(c)?, eval(d)?);
        while hi - lo > 1e-12 * tau_max {
            if fc < fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - ratio * (hi - lo);
                fc = eval(c)?;
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + ratio * (hi - lo);
                fd = eval(d)?;
            }
        }
        let t = 0.5 * (lo + hi);
        out.push((t, eval(t)?));
    }
    Ok(out)
}
