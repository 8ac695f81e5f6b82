//! Run configuration and the `#`-prefixed TOML header that carries it.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use optomech::model::default_dims;
use optomech::regression::Pair;
use optomech::steady::DEFAULT_TAIL_THRESHOLD;
use optomech::SystemParams;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Sweep,
    Thermal,
    Tau,
    Compare,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Sweep => "sweep",
            Command::Thermal => "thermal",
            Command::Tau => "tau",
            Command::Compare => "compare",
            Command::Validate => "validate",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Evenly spaced detuning grid `min:max:points`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.min];
        }
        let step = (self.max - self.min) / (self.points - 1) as f64;
        (0..self.points)
            .map(|i| {
                if i + 1 == self.points {
                    self.max
                } else {
                    self.min + i as f64 * step
                }
            })
            .collect()
    }

    pub fn spacing(&self) -> f64 {
        if self.points > 1 {
            (self.max - self.min) / (self.points - 1) as f64
        } else {
            0.0
        }
    }
}

impl FromStr for GridSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || CliError::Usage(format!("grid `{s}` is not min:max:points"));
        let parts: Vec<&str> = s.split(':').collect();
        let [min, max, points] = parts.as_slice() else {
            return Err(bad());
        };
        let grid = GridSpec {
            min: min.trim().parse().map_err(|_| bad())?,
            max: max.trim().parse().map_err(|_| bad())?,
            points: points.trim().parse().map_err(|_| bad())?,
        };
        grid.check()?;
        Ok(grid)
    }
}

impl GridSpec {
    fn check(&self) -> Result<()> {
        if self.points == 0 || !self.min.is_finite() || !self.max.is_finite() {
            return Err(CliError::Usage(format!(
                "grid {self:?} is empty or not finite"
            )));
        }
        if self.points > 1 && self.max <= self.min {
            return Err(CliError::Usage(format!(
                "grid maximum {} must exceed minimum {}",
                self.max, self.min
            )));
        }
        Ok(())
    }
}

/// Everything needed to reproduce one run. Rates are in units of `κ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub g: f64,
    pub gamma: f64,
    pub omega: f64,
    pub nth: f64,
    /// Single detuning for `tau`, in units of `g`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_over_g: Option<f64>,
    /// Single detuning in units of `κ`, used when `g = 0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_over_kappa: Option<f64>,
    /// Detuning grid, in units of `g` (or `κ` when `g = 0`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<Pair>,
    /// Fock truncation; `validate` applies it to every parameter set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_max: Option<f64>,
    #[serde(default)]
    pub with_analytic: bool,
    #[serde(default)]
    pub allow_strong_drive: bool,
    pub tail_threshold: f64,
}

impl RunConfig {
    /// Default parameters for each command.
    pub fn defaults(command: Command) -> Self {
        let (g, gamma, omega, nth, grid) = match command {
            Command::Sweep => (20.0, 0.2, 0.01, 0.0, Some((-1.0, 1.0, 401))),
            Command::Thermal => (20.0, 0.001, 0.001, 2.0, Some((-1.0, 1.0, 81))),
            Command::Compare => (20.0, 0.002, 0.001, 0.0, Some((-1.0, 1.0, 401))),
            Command::Tau => (8.0, 0.02, 0.01, 0.0, None),
            Command::Validate => (20.0, 0.2, 0.01, 0.0, None),
        };
        Self {
            command,
            g,
            gamma,
            omega,
            nth,
            delta_over_g: (command == Command::Tau).then_some(0.0),
            delta_over_kappa: None,
            grid: grid.map(|(min, max, points)| GridSpec { min, max, points }),
            pair: (command == Command::Tau).then(|| Pair::from_str("aa").expect("valid pair")),
            dims: (command != Command::Validate).then(|| default_dims(nth)),
            tau_max: None,
            with_analytic: false,
            allow_strong_drive: false,
            tail_threshold: DEFAULT_TAIL_THRESHOLD,
        }
    }

    /// Detunings are given per `g` unless the coupling vanishes.
    pub fn axis_label(&self) -> &'static str {
        if self.g > 0.0 {
            "delta_over_g"
        } else {
            "delta_over_kappa"
        }
    }

    /// Detuning unit in units of `κ`.
    pub fn axis_unit(&self) -> f64 {
        if self.g > 0.0 {
            self.g
        } else {
            1.0
        }
    }

    /// The single detuning `Δ/κ` of a `tau` run.
    pub fn delta(&self) -> Result<f64> {
        match (self.g > 0.0, self.delta_over_g, self.delta_over_kappa) {
            (true, Some(d), None) => Ok(d * self.g),
            (true, None, None) => Ok(0.0),
            (false, None, Some(d)) => Ok(d),
            (false, None, None) => Ok(0.0),
            (false, Some(_), _) => Err(CliError::Usage(
                "with g = 0 give the detuning as --delta-over-kappa".into(),
            )),
            (true, _, Some(_)) => Err(CliError::Usage(
                "with g > 0 give the detuning as --delta-over-g".into(),
            )),
        }
    }

    pub fn params(&self, delta: f64) -> SystemParams {
        let mut p = SystemParams::new(self.g, self.gamma, delta, self.omega).with_thermal(self.nth);
        if let Some(dims) = self.dims {
            p = p.with_dims(dims);
        }
        p.allow_strong_drive = self.allow_strong_drive;
        p
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let grid = self
            .grid
            .ok_or_else(|| CliError::Usage(format!("`{}` needs --grid", self.command)))?;
        grid.check()?;
        Ok(grid)
    }

    /// Rejects impossible combinations before any work is done.
    pub fn check(&self) -> Result<()> {
        self.params(self.delta()?).validate()?;
        if !(self.tail_threshold > 0.0) {
            return Err(CliError::Usage(format!(
                "tail threshold must be positive, got {}",
                self.tail_threshold
            )));
        }
        match self.command {
            Command::Sweep | Command::Compare => {
                self.grid()?;
            }
            Command::Thermal => {
                self.grid()?;
                if !(self.nth > 0.0) {
                    return Err(CliError::Usage("`thermal` needs --nth > 0".into()));
                }
            }
            Command::Tau => {
                if self.pair.is_none() {
                    return Err(CliError::Usage("`tau` needs --pair".into()));
                }
            }
            Command::Validate => {}
        }
        Ok(())
    }
}

/// The header block written above every table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub generator: String,
    /// `numeric` or `analytic`.
    pub source: String,
    pub run: RunConfig,
    #[serde(default)]
    pub diagnostics: toml::Table,
}

impl Header {
    pub fn new(source: &str, run: &RunConfig) -> Self {
        Self {
            generator: format!("optomech {}", env!("CARGO_PKG_VERSION")),
            source: source.to_string(),
            run: run.clone(),
            diagnostics: toml::Table::new(),
        }
    }

    /// TOML with every line prefixed by `# `.
    pub fn render(&self) -> Result<String> {
        let body = toml::to_string(self)?;
        Ok(body
            .lines()
            .map(|l| {
                if l.is_empty() {
                    "#".to_string()
                } else {
                    format!("# {l}")
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
            + "\n")
    }

    /// Parse the leading `#` block of a table, or a bare TOML file.
    pub fn parse(text: &str) -> Result<Self> {
        let commented: Vec<&str> = text.lines().take_while(|l| l.starts_with('#')).collect();
        let toml_text = if commented.is_empty() {
            text.to_string()
        } else {
            commented
                .iter()
                .map(|l| l.strip_prefix("# ").unwrap_or(l.trim_start_matches('#')))
                .collect::<Vec<_>>()
                .join("\n")
        };
        Ok(toml::from_str(&toml_text)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }
}
