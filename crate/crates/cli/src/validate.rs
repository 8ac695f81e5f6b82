//! Invariant suite run at three reference parameter sets: strong coupling
//! (g = 20, γ = 0.2), thermal (g = 20, γ = 0.001, N = 2) and delayed
//! correlations (g = 8, γ = 0.02).

use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64 as C64;

use optomech::analytic::{thermal_cutoff, AnalyticContext, Subspace, THERMAL_WEIGHT_TOL};
use optomech::model::{default_dims, liouvillian};
use optomech::regression::{Channel, CorrelationEngine, Pair};
use optomech::steady::{observables, solve_point, SteadyObservables, SteadyOptions};
use optomech::{HilbertSpace, Mode, QOperator, SystemParams};

use crate::commands::Outcome;
use crate::config::RunConfig;
use crate::error::Result;

const TRACE_TOL: f64 = 1e-10;
const RESIDUAL_TOL: f64 = 1e-10;
const HERMITICITY_TOL: f64 = 1e-10;
const POSITIVITY_FLOOR: f64 = -1e-8;
const OMEGA_SPREAD: f64 = 0.01;
const TRUNCATION_CHANGE: f64 = 1e-3;
const REFLECTED_TOL: f64 = 1e-10;
const ANCHOR_TOL: f64 = 1e-6;
const FIXED_POINT_TOL: f64 = 1e-8;
const LONG_TIME_TOL: f64 = 0.01;
const AMPLITUDE_TOL: f64 = 1e-12;
const COHERENT_TOL: f64 = 1e-6;
const SYMMETRY_TOL: f64 = 1e-6;

/// One canonical parameter set and the detunings (per `g`) it is probed at.
#[derive(Debug, Clone)]
pub struct ParameterSet {
    pub name: &'static str,
    pub params: SystemParams,
    pub detunings: Vec<f64>,
}

/// The coupled sets at the detunings 0, g/√8, g/2 and √6g/4; the delayed set
/// at 0 and g/√2.
pub fn canonical_sets(cfg: &RunConfig) -> Vec<ParameterSet> {
    let features = vec![0.0, 1.0 / 8f64.sqrt(), 0.5, 6f64.sqrt() / 4.0];
    let sets = [
        (
            "coupled",
            SystemParams::new(20.0, 0.2, 0.0, cfg.omega),
            features.clone(),
        ),
        (
            "thermal",
            SystemParams::new(20.0, 0.001, 0.0, cfg.omega).with_thermal(2.0),
            features,
        ),
        (
            "delayed",
            SystemParams::new(8.0, 0.02, 0.0, cfg.omega),
            vec![0.0, 1.0 / 2f64.sqrt()],
        ),
    ];
    sets.into_iter()
        .map(|(name, mut params, detunings)| {
            params.dims = cfg.dims.unwrap_or_else(|| default_dims(params.n_th));
            params.allow_strong_drive = cfg.allow_strong_drive;
            ParameterSet {
                name,
                params,
                detunings,
            }
        })
        .collect()
}

/// Outcome of one invariant on one parameter set.
#[derive(Debug, Clone)]
pub struct Check {
    pub set: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn line(&self) -> String {
        format!(
            "{} {:<7} {:<22} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.set,
            self.name,
            self.detail
        )
    }
}

/// Worst value of a metric that must stay at or below `limit`.
struct Tracker {
    name: &'static str,
    limit: f64,
    worst: f64,
    at: String,
    errors: Vec<String>,
}

impl Tracker {
    fn new(name: &'static str, limit: f64) -> Self {
        Self {
            name,
            limit,
            worst: f64::NEG_INFINITY,
            at: String::new(),
            errors: Vec::new(),
        }
    }

    fn record(&mut self, value: f64, at: impl FnOnce() -> String) {
        if value.is_nan() {
            self.errors.push(format!("not a number at {}", at()));
        } else if value > self.worst {
            self.worst = value;
            self.at = at();
        }
    }

    fn error(&mut self, msg: String) {
        self.errors.push(msg);
    }

    fn finish(self, set: &'static str) -> Check {
        let passed = self.errors.is_empty() && self.worst <= self.limit;
        let detail = if !self.errors.is_empty() {
            self.errors.join("; ")
        } else {
            format!(
                "worst {:.3e} at {} (limit {:e})",
                self.worst, self.at, self.limit
            )
        };
        Check {
            set,
            name: self.name,
            passed,
            detail,
        }
    }
}

fn relative(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Normalised occupations and correlations, in reporting order.
fn reported(o: &SteadyObservables, n0: f64) -> [(&'static str, f64); 7] {
    [
        ("n_a/n0", o.n_a / n0),
        ("n_s/n0", o.n_s / n0),
        ("n_R/n0", o.n_r / n0),
        ("g2_aa", o.g2_aa),
        ("g2_ss", o.g2_ss),
        ("g2_RR", o.g2_rr),
        ("g2_tot", o.g2_tot),
    ]
}

fn populations(m: &Array2<C64>, space: HilbertSpace) -> [f64; 3] {
    let mut n = [0.0; 3];
    for i in 0..space.total_dim() {
        let occ = space.occupations(i);
        let p = m[[i, i]].re;
        for k in 0..3 {
            n[k] += occ[k] as f64 * p;
        }
    }
    n
}

fn check_set(set: &ParameterSet, opts: &SteadyOptions) -> Vec<Check> {
    let mut trace = Tracker::new("trace_preservation", TRACE_TOL);
    let mut residual = Tracker::new("steady_residual", RESIDUAL_TOL);
    let mut hermitian = Tracker::new("hermiticity", HERMITICITY_TOL);
    let mut positivity = Tracker::new("positivity", -POSITIVITY_FLOOR);
    let mut nonneg = Tracker::new("nonnegative_values", 0.0);
    let mut tail = Tracker::new("truncation_tail", opts.tail_threshold);
    let mut omega = Tracker::new("omega_independence", OMEGA_SPREAD);
    let mut truncation = Tracker::new("truncation_stability", TRUNCATION_CHANGE);
    let mut reflected = Tracker::new("reflected_identity", REFLECTED_TOL);
    let mut anchor = Tracker::new("regression_anchor", ANCHOR_TOL);
    let mut fixed = Tracker::new("propagation_fixed_point", FIXED_POINT_TOL);
    let mut long_time = Tracker::new("long_time_limit", LONG_TIME_TOL);
    let mut amplitudes = Tracker::new("amplitude_fixed_point", AMPLITUDE_TOL);
    let mut symmetry = Tracker::new("detuning_symmetry", SYMMETRY_TOL);

    let base = set.params;
    for &x in &set.detunings {
        let p = base.with_delta(x * base.g);
        let here = move || format!("Δ/g={x:.4}");

        let engine = match CorrelationEngine::new(&p) {
            Ok(e) => e,
            Err(e) => {
                residual.error(format!("{}: {e}", here()));
                continue;
            }
        };
        let rho = engine.steady();
        trace.record(engine.liouvillian().trace_defect(), here);
        residual.record(engine.residual(), here);
        hermitian.record(rho.hermiticity_error(), here);
        positivity.record(-rho.min_eigenvalue(), here);

        let o = match observables(rho, &p, opts) {
            Ok(o) => o,
            Err(e) => {
                nonneg.error(format!("{}: {e}", here()));
                continue;
            }
        };
        let n0 = p.n0();
        let values = reported(&o, n0);
        let lowest = values
            .iter()
            .map(|(_, v)| *v)
            .filter(|v| !v.is_nan())
            .fold(f64::INFINITY, f64::min);
        nonneg.record(-lowest, here);
        tail.record(o.trunc_tail, here);

        // Ω-independence of n_a/n_0 and every g²(0)
        let mut drives = vec![(p.omega, o.clone())];
        for factor in [0.5, 2.0] {
            let q = p.with_omega(p.omega * factor);
            match solve_point(&q, opts) {
                Ok(pt) => drives.push((q.omega, pt.observables)),
                Err(e) => omega.error(format!("{} Ω={}: {e}", here(), q.omega)),
            }
        }
        for k in [0usize, 3, 4, 5, 6] {
            for (i, (wi, oi)) in drives.iter().enumerate() {
                for (wj, oj) in &drives[i + 1..] {
                    let (name, a) = reported(oi, wi * wi)[k];
                    let b = reported(oj, wj * wj)[k].1;
                    omega.record(relative(a, b), || {
                        format!("{} {name} Ω={wi}:{a:.6e} vs Ω={wj}:{b:.6e}", here())
                    });
                }
            }
        }

        // every mode one level larger
        let d = p.dims;
        let bigger = p.with_dims([d[0] + 1, d[1] + 1, d[2] + 1]);
        match solve_point(&bigger, opts) {
            Ok(pt) => {
                for ((name, a), (_, b)) in values.iter().zip(reported(&pt.observables, n0)) {
                    truncation.record(relative(*a, b), || {
                        format!(
                            "{} {name} {d:?}:{a:.6e} vs {:?}:{b:.6e}",
                            here(),
                            bigger.dims
                        )
                    });
                }
            }
            Err(e) => truncation.error(format!("{} {:?}: {e}", here(), bigger.dims)),
        }

        // n_R from the operator expansion of c_R = c_a + iΩ/κ
        let space = rho.space();
        let ca = QOperator::annihilation(space, Mode::A);
        match ca.expectation(rho) {
            Ok(mean) => {
                let coherent = (mean + C64::new(0.0, p.omega / p.kappa)).norm_sqr();
                let expanded = coherent + o.n_a - mean.norm_sqr();
                reflected.record(relative(o.n_r, expanded), here);
            }
            Err(e) => reflected.error(format!("{}: {e}", here())),
        }

        for (pair, value) in [("aa", o.g2_aa), ("ss", o.g2_ss)] {
            let pair: Pair = pair.parse().expect("valid pair");
            match engine.g2(pair, &[0.0]) {
                Ok(s) => anchor.record(relative(s.values[0], value), || {
                    format!("{} {pair}", here())
                }),
                Err(e) => anchor.error(format!("{} {pair}: {e}", here())),
            }
        }

        let delays = [0.0, 1.0 / p.kappa, 1.0 / p.gamma];
        match engine.propagate(rho.matrix(), &delays) {
            Ok(states) => {
                let start = populations(rho.matrix(), space);
                for (t, m) in delays.iter().zip(&states) {
                    let now = populations(m, space);
                    for k in 0..3 {
                        let scale = start[k].abs().max(f64::MIN_POSITIVE);
                        fixed.record((now[k] - start[k]).abs() / scale, || {
                            format!("{} τ={t}", here())
                        });
                    }
                }
            }
            Err(e) => fixed.error(format!("{}: {e}", here())),
        }

        let late = [0.0, 10.0 / p.gamma, 20.0 / p.gamma];
        for pair in ["aa", "ss"] {
            let pair: Pair = pair.parse().expect("valid pair");
            match engine.g2(pair, &late) {
                Ok(s) => {
                    for (t, v) in s.tau.iter().zip(&s.values).skip(1) {
                        long_time.record((v - 1.0).abs(), || format!("{} {pair} τ={t}", here()));
                    }
                }
                Err(e) => long_time.error(format!("{} {pair}: {e}", here())),
            }
        }

        match AnalyticContext::new(&p) {
            Ok(ctx) => {
                let top = if p.n_th > 0.0 {
                    thermal_cutoff(p.n_th, THERMAL_WEIGHT_TOL)
                } else {
                    0
                };
                for n in 0..=top {
                    let r = Subspace::steady(&ctx, n).fixed_point_residual(&p);
                    amplitudes.record(r, || format!("{} subspace {n}", here()));
                }
            }
            Err(e) => amplitudes.error(format!("{}: {e}", here())),
        }

        if x != 0.0 {
            match solve_point(&p.with_delta(-p.delta), opts) {
                Ok(pt) => symmetry.record(relative(o.n_a, pt.observables.n_a), here),
                Err(e) => symmetry.error(format!("{}: {e}", here())),
            }
        }
    }

    let mut checks: Vec<Check> = [
        trace, residual, hermitian, positivity, nonneg, tail, omega, truncation, reflected, anchor,
        fixed, long_time, amplitudes, symmetry,
    ]
    .into_iter()
    .map(|t| t.finish(set.name))
    .collect();
    checks.push(coherent_limit(set, opts));
    checks
}

/// `g = 0` leaves a driven linear cavity: every driven-mode correlation is 1.
/// The reflected field vanishes on resonance, so it is probed detuned.
fn coherent_limit(set: &ParameterSet, opts: &SteadyOptions) -> Check {
    let mut t = Tracker::new("coherent_limit", COHERENT_TOL);
    let tau = [0.0, 0.5, 1.0, 2.0, 5.0];
    for delta in [0.0, 1.0] {
        let mut p = set.params.with_delta(delta * set.params.kappa);
        p.g = 0.0;
        let mut run = || -> optomech::Result<()> {
            let engine = CorrelationEngine::new(&p)?;
            let o = observables(engine.steady(), &p, opts)?;
            t.record((o.g2_aa - 1.0).abs(), || format!("Δ/κ={delta} g2_aa(0)"));
            let mut pairs = vec![Pair::new(Channel::A, Channel::A)];
            if delta != 0.0 {
                t.record((o.g2_rr - 1.0).abs(), || format!("Δ/κ={delta} g2_RR(0)"));
                pairs.push(Pair::new(Channel::R, Channel::R));
            }
            for pair in pairs {
                let s = engine.g2(pair, &tau)?;
                for (tau, v) in s.tau.iter().zip(&s.values) {
                    t.record((v - 1.0).abs(), || format!("Δ/κ={delta} {pair}(τ={tau})"));
                }
            }
            Ok(())
        };
        if let Err(e) = run() {
            t.error(format!("Δ/κ={delta}: {e}"));
        }
    }
    t.finish(set.name)
}

/// Run every invariant on every canonical set.
pub fn validate(cfg: &RunConfig) -> Result<Outcome> {
    let start = Instant::now();
    // the guard applies before any work is done
    let mut guard = SystemParams::new(20.0, 0.2, 0.0, cfg.omega);
    guard.allow_strong_drive = cfg.allow_strong_drive;
    if let Some(d) = cfg.dims {
        guard.dims = d;
    }
    guard.validate()?;
    liouvillian(&guard, guard.space()?);

    let opts = SteadyOptions {
        tail_threshold: cfg.tail_threshold,
    };
    let checks: Vec<Check> = canonical_sets(cfg)
        .iter()
        .flat_map(|s| check_set(s, &opts))
        .collect();
    let failed: Vec<&Check> = checks.iter().filter(|c| !c.passed).collect();

    let mut report: Vec<String> = checks.iter().map(Check::line).collect();
    let summary = format!(
        "validate: {} checks, {} passed, {} failed in {:.1} s",
        checks.len(),
        checks.len() - failed.len(),
        failed.len(),
        start.elapsed().as_secs_f64()
    );
    report.push(summary);
    let failure = (!failed.is_empty()).then(|| {
        let names: Vec<String> = failed
            .iter()
            .map(|c| format!("{}/{}", c.set, c.name))
            .collect();
        format!("failed invariants: {}", names.join(", "))
    });
    Ok(Outcome {
        tables: Vec::new(),
        report,
        failure,
    })
}
