//! `sweep`, `thermal`, `tau` and `compare`.

use optomech::analytic::{
    conditional_g2_tau, exact_observables, thermal_cutoff, thermal_observables, THERMAL_WEIGHT_TOL,
};
use optomech::regression::{default_tau_grid, Channel, CorrelationEngine};
use optomech::steady::{self, format_flags, SteadyObservables, SteadyOptions, SweepRow};
use optomech::{Mode, SystemParams};

use crate::config::{Command, Header, RunConfig};
use crate::error::{CliError, Result};
use crate::table::{flag, num, Table};

/// Tables produced by a command, plus a one-line-per-fact report.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub report: Vec<String>,
    /// Set when the run finished but its checks did not pass.
    pub failure: Option<String>,
}

const STEADY_COLUMNS: [&str; 9] = [
    "n_a_over_n0",
    "n_s_over_n0",
    "n_R_over_n0",
    "g2_aa",
    "g2_ss",
    "g2_RR",
    "g2_tot",
    "trunc_tail",
    "flags",
];

fn steady_columns(cfg: &RunConfig) -> Vec<&'static str> {
    std::iter::once(cfg.axis_label())
        .chain(STEADY_COLUMNS)
        .collect()
}

fn steady_row(axis: f64, o: &SteadyObservables, n0: f64) -> Vec<String> {
    vec![
        num(axis),
        num(o.n_a / n0),
        num(o.n_s / n0),
        num(o.n_r / n0),
        num(o.g2_aa),
        num(o.g2_ss),
        num(o.g2_rr),
        num(o.g2_tot),
        num(o.trunc_tail),
        format_flags(&o.flags),
    ]
}

/// Six-level amplitudes at zero temperature, the phonon-subspace sum otherwise.
pub fn analytic_observables(params: &SystemParams) -> optomech::Result<SteadyObservables> {
    if params.n_th > 0.0 {
        thermal_observables(params, thermal_cutoff(params.n_th, THERMAL_WEIGHT_TOL))
    } else {
        exact_observables(params)
    }
}

fn steady_sweep(cfg: &RunConfig) -> Result<(Vec<f64>, Vec<SweepRow>)> {
    let axis = cfg.grid()?.values();
    let unit = cfg.axis_unit();
    let deltas: Vec<f64> = axis.iter().map(|x| x * unit).collect();
    let opts = SteadyOptions {
        tail_threshold: cfg.tail_threshold,
    };
    let rows = steady::sweep(&cfg.params(0.0), &deltas, &opts)?;
    if rows.iter().all(|r| r.residual.is_nan()) {
        let reason = format_flags(&rows[0].observables.flags);
        return Err(CliError::TotalFailure(reason));
    }
    Ok((axis, rows))
}

fn insert(h: &mut Header, key: &str, value: impl Into<toml::Value>) {
    h.diagnostics.insert(key.to_string(), value.into());
}

/// `sweep` and `thermal`: numeric table, plus the analytic companion on request.
pub fn steady_tables(cfg: &RunConfig) -> Result<Outcome> {
    cfg.check()?;
    let (axis, rows) = steady_sweep(cfg)?;
    let n0 = cfg.params(0.0).n0();

    let mut header = Header::new("numeric", cfg);
    let failed = rows.iter().filter(|r| r.residual.is_nan()).count();
    let flagged = rows.iter().filter(|r| !r.observables.trusted()).count();
    let max_residual = rows
        .iter()
        .map(|r| r.residual)
        .filter(|r| !r.is_nan())
        .fold(0.0, f64::max);
    let max_tail = rows
        .iter()
        .map(|r| r.observables.trunc_tail)
        .filter(|t| !t.is_nan())
        .fold(0.0, f64::max);
    insert(&mut header, "points", rows.len() as i64);
    insert(&mut header, "failed_points", failed as i64);
    insert(&mut header, "flagged_points", flagged as i64);
    insert(&mut header, "max_relative_residual", max_residual);
    insert(&mut header, "max_trunc_tail", max_tail);

    let columns = steady_columns(cfg);
    let mut numeric = Table::new(header, &columns);
    for (x, r) in axis.iter().zip(&rows) {
        numeric.push(steady_row(*x, &r.observables, n0));
    }
    let mut report = vec![format!(
        "{}: {} points, {failed} failed, {flagged} flagged, max residual {max_residual:e}",
        cfg.command,
        rows.len()
    )];

    let mut tables = vec![numeric];
    if cfg.with_analytic {
        let mut header = Header::new("analytic", cfg);
        if cfg.nth > 0.0 {
            insert(
                &mut header,
                "phonon_subspaces",
                thermal_cutoff(cfg.nth, THERMAL_WEIGHT_TOL) as i64 + 1,
            );
        }
        let mut analytic = Table::new(header, &columns);
        for (x, r) in axis.iter().zip(&rows) {
            let o = analytic_observables(&cfg.params(r.delta))
                .unwrap_or_else(|e| SteadyObservables::failed(e.to_string()));
            analytic.push(steady_row(*x, &o, n0));
        }
        report.push(format!("analytic companion: {} points", rows.len()));
        tables.push(analytic);
    }
    Ok(Outcome {
        tables,
        report,
        failure: None,
    })
}

fn analytic_mode(cfg: &RunConfig) -> Result<Option<Mode>> {
    if !cfg.with_analytic {
        return Ok(None);
    }
    let pair = cfg.pair.expect("checked");
    match (pair.first, pair.second) {
        (Channel::A, Channel::A) => Ok(Some(Mode::A)),
        (Channel::S, Channel::S) => Ok(Some(Mode::S)),
        _ => Err(CliError::Usage(format!(
            "no analytic delayed correlation for pair `{pair}` (only aa, ss)"
        ))),
    }
}

/// `tau`: delayed correlation for one detector pair.
pub fn tau_table(cfg: &RunConfig) -> Result<Outcome> {
    cfg.check()?;
    let mode = analytic_mode(cfg)?;
    let pair = cfg.pair.expect("checked");
    let params = cfg.params(cfg.delta()?);
    let tau = default_tau_grid(&params, cfg.tau_max)?;
    let engine = CorrelationEngine::new(&params)?;
    let series = engine.g2(pair, &tau)?;
    let analytic = mode
        .map(|m| conditional_g2_tau(&params, m, &tau))
        .transpose()?;

    let first = series.violations.iter().filter(|v| v.first).count();
    let second = series.violations.iter().filter(|v| v.second).count();
    let mut header = Header::new("numeric", cfg);
    insert(&mut header, "points", tau.len() as i64);
    insert(&mut header, "steady_relative_residual", engine.residual());
    insert(
        &mut header,
        "trunc_tail",
        engine.steady().top_level_population(),
    );
    insert(&mut header, "g2_zero", series.g2_zero);
    insert(&mut header, "bound1_violations", first as i64);
    insert(&mut header, "bound2_violations", second as i64);

    let mut columns = vec!["tau_kappa", "g2", "bound1_violated", "bound2_violated"];
    if analytic.is_some() {
        columns.push("g2_analytic");
    }
    let mut table = Table::new(header, &columns);
    for (i, (&t, &v)) in series.tau.iter().zip(&series.values).enumerate() {
        let b = series.violations[i];
        let mut row = vec![num(t), num(v), flag(b.first), flag(b.second)];
        if let Some(a) = &analytic {
            row.push(num(a.values[i]));
        }
        table.push(row);
    }
    let report = vec![format!(
        "tau {pair}: {} delays, g2(0) = {:e}, bound violations {first} / {second}",
        tau.len(),
        series.g2_zero
    )];
    Ok(Outcome {
        tables: vec![table],
        report,
        failure: None,
    })
}

/// Agreement rule: relative for occupations, relative with an absolute
/// floor for correlations (antiresonance zeros are ill-conditioned).
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub occupation: f64,
    pub correlation: f64,
    pub correlation_floor: f64,
}

impl Tolerance {
    pub fn for_config(cfg: &RunConfig) -> Self {
        if cfg.nth > 0.0 {
            Tolerance {
                occupation: 0.05,
                correlation: 0.05,
                correlation_floor: 0.02,
            }
        } else {
            Tolerance {
                occupation: 0.02,
                correlation: 0.05,
                correlation_floor: 0.02,
            }
        }
    }

    pub fn occupation_ok(&self, numeric: f64, analytic: f64) -> bool {
        (numeric - analytic).abs() <= self.occupation * analytic.abs()
    }

    pub fn correlation_ok(&self, numeric: f64, analytic: f64) -> bool {
        (numeric - analytic).abs()
            <= (self.correlation * analytic.abs()).max(self.correlation_floor)
    }
}

/// `compare`: numeric and analytic side by side with per-point verdicts.
pub fn compare_table(cfg: &RunConfig) -> Result<Outcome> {
    cfg.check()?;
    let (axis, rows) = steady_sweep(cfg)?;
    let n0 = cfg.params(0.0).n0();
    let tol = Tolerance::for_config(cfg);

    let names = ["n_a_over_n0", "n_s_over_n0", "g2_aa", "g2_ss"];
    let mut columns = vec![cfg.axis_label()];
    let labels: Vec<[String; 2]> = names
        .iter()
        .map(|n| [format!("{n}_numeric"), format!("{n}_analytic")])
        .collect();
    for l in &labels {
        columns.push(l[0].as_str());
        columns.push(l[1].as_str());
    }
    columns.push("agrees");

    let mut worst = [0.0f64; 4];
    let mut disagreeing = Vec::new();
    let mut body = Vec::new();
    for (x, r) in axis.iter().zip(&rows) {
        let o = &r.observables;
        let a = analytic_observables(&cfg.params(r.delta))?;
        let pairs = [
            (o.n_a / n0, a.n_a / n0),
            (o.n_s / n0, a.n_s / n0),
            (o.g2_aa, a.g2_aa),
            (o.g2_ss, a.g2_ss),
        ];
        let mut ok = o.trusted();
        for (k, &(nv, av)) in pairs.iter().enumerate() {
            let good = if k < 2 {
                tol.occupation_ok(nv, av)
            } else {
                tol.correlation_ok(nv, av)
            };
            ok &= good;
            worst[k] = worst[k].max((nv / av - 1.0).abs());
        }
        if !ok {
            disagreeing.push(*x);
        }
        let mut row = vec![num(*x)];
        for (nv, av) in pairs {
            row.push(num(nv));
            row.push(num(av));
        }
        row.push(flag(ok));
        body.push(row);
    }

    let mut header = Header::new("comparison", cfg);
    insert(&mut header, "occupation_tolerance", tol.occupation);
    insert(&mut header, "correlation_tolerance", tol.correlation);
    insert(&mut header, "correlation_floor", tol.correlation_floor);
    insert(&mut header, "disagreeing_points", disagreeing.len() as i64);
    let mut table = Table::new(header, &columns);
    for row in body {
        table.push(row);
    }

    let mut report: Vec<String> = names
        .iter()
        .zip(worst)
        .map(|(n, w)| format!("{n}: largest relative deviation {w:.3e}"))
        .collect();
    let failure = (!disagreeing.is_empty()).then(|| {
        let shown: Vec<String> = disagreeing
            .iter()
            .take(8)
            .map(|x| format!("{x:.4}"))
            .collect();
        format!(
            "{} of {} points outside tolerance at {} = {}{}",
            disagreeing.len(),
            rows.len(),
            cfg.axis_label(),
            shown.join(", "),
            if disagreeing.len() > 8 { ", ..." } else { "" }
        )
    });
    report.push(match &failure {
        Some(f) => format!("compare FAILED: {f}"),
        None => format!("compare passed at all {} points", rows.len()),
    });
    Ok(Outcome {
        tables: vec![table],
        report,
        failure,
    })
}

pub fn run_command(cfg: &RunConfig) -> Result<Outcome> {
    match cfg.command {
        Command::Sweep | Command::Thermal => steady_tables(cfg),
        Command::Tau => tau_table(cfg),
        Command::Compare => compare_table(cfg),
        Command::Validate => crate::validate::validate(cfg),
    }
}
