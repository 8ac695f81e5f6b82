//! Command-line front end: run configuration, CSV tables with a TOML
//! header, and the invariant suite behind `optomech validate`.

pub mod commands;
pub mod config;
pub mod error;
pub mod table;
pub mod validate;

use std::io::Write;
use std::path::{Path, PathBuf};

pub use commands::{run_command, Outcome};
pub use config::{Command, GridSpec, Header, RunConfig};
pub use error::{CliError, Result};

/// `out.csv` becomes `out.analytic.csv`.
pub fn companion_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.analytic.csv"))
}

/// Run `cfg`, write its tables and print its report to stderr.
pub fn execute(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    if cfg.with_analytic
        && out.is_none()
        && matches!(cfg.command, Command::Sweep | Command::Thermal)
    {
        return Err(CliError::Usage(
            "--with-analytic writes a second table and needs --out".into(),
        ));
    }
    let outcome = run_command(cfg)?;
    for (i, table) in outcome.tables.iter().enumerate() {
        match (out, i) {
            (Some(path), 0) => table.write(path)?,
            (Some(path), _) => table.write(&companion_path(path))?,
            (None, _) => {
                let text = table.to_csv()?;
                std::io::stdout()
                    .write_all(text.as_bytes())
                    .map_err(|source| CliError::Io {
                        path: "<stdout>".into(),
                        source,
                    })?;
            }
        }
    }
    for line in &outcome.report {
        eprintln!("{line}");
    }
    match outcome.failure {
        Some(f) => Err(CliError::Validation(f)),
        None => Ok(()),
    }
}
