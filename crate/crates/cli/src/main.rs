use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use optomech::model::default_dims;
use optomech::regression::Pair;
use optomech_cli::{execute, CliError, Command, GridSpec, Header, Result, RunConfig};

/// Weakly driven two-mode optomechanics.
///
/// Rates are in units of the optical loss κ. Tables go to stdout (or
/// --out) as CSV under a `#`-prefixed TOML header that reproduces the run
/// when passed back through --config.
#[derive(Parser)]
#[command(name = "optomech", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Zero-temperature steady-state observables over a detuning grid.
    Sweep(RunArgs),
    /// Steady-state observables with a thermal phonon bath.
    Thermal(RunArgs),
    /// Delayed two-photon correlation for one detector pair.
    Tau(RunArgs),
    /// Numeric against analytic observables, point by point.
    Compare(RunArgs),
    /// Invariant suite at the canonical parameter sets.
    Validate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Start from the header of a previous output (or a bare TOML file).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    g: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Drive amplitude.
    #[arg(long)]
    omega: Option<f64>,
    /// Thermal phonon number.
    #[arg(long)]
    nth: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    delta_over_g: Option<f64>,
    /// Detuning when g = 0.
    #[arg(long, allow_hyphen_values = true)]
    delta_over_kappa: Option<f64>,
    /// min:max:points, in units of g (of κ when g = 0).
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<GridSpec>,
    /// Detector pair such as aa, ss, as, RR, tot.
    #[arg(long)]
    pair: Option<Pair>,
    /// Fock truncation a,s,b.
    #[arg(long, value_parser = parse_dims)]
    dims: Option<[usize; 3]>,
    #[arg(long)]
    tau_max: Option<f64>,
    /// Also write the analytic prediction.
    #[arg(long)]
    with_analytic: bool,
    #[arg(long)]
    allow_strong_drive: bool,
    #[arg(long)]
    tail_threshold: Option<f64>,
    /// Output file (stdout if absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_dims(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    parts.try_into().map_err(|_| format!("`{s}` is not a,s,b"))
}

fn resolve(command: Command, args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let run = Header::read(path)?.run;
            if run.command != command {
                return Err(CliError::Usage(format!(
                    "{} holds a `{}` run, not `{command}`",
                    path.display(),
                    run.command
                )));
            }
            run
        }
        None => RunConfig::defaults(command),
    };
    let nth_before = cfg.nth;
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = args.$field { cfg.$field = v; }
        )*};
    }
    set!(g, gamma, omega, nth, tail_threshold);
    if args.delta_over_g.is_some() {
        cfg.delta_over_g = args.delta_over_g;
    }
    if args.delta_over_kappa.is_some() {
        cfg.delta_over_kappa = args.delta_over_kappa;
        cfg.delta_over_g = None;
    }
    if args.grid.is_some() {
        cfg.grid = args.grid;
    }
    if args.pair.is_some() {
        cfg.pair = args.pair;
    }
    if args.tau_max.is_some() {
        cfg.tau_max = args.tau_max;
    }
    cfg.with_analytic |= args.with_analytic;
    cfg.allow_strong_drive |= args.allow_strong_drive;
    match args.dims {
        Some(d) => cfg.dims = Some(d),
        None if cfg.nth != nth_before && command != Command::Validate => {
            cfg.dims = Some(default_dims(cfg.nth))
        }
        None => {}
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match &cli.command {
        Sub::Sweep(a) => (Command::Sweep, a),
        Sub::Thermal(a) => (Command::Thermal, a),
        Sub::Tau(a) => (Command::Tau, a),
        Sub::Compare(a) => (Command::Compare, a),
        Sub::Validate(a) => (Command::Validate, a),
    };
    match resolve(command, args).and_then(|cfg| execute(&cfg, args.out.as_deref())) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(hint) = e.hint() {
                eprintln!("hint: {hint}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
