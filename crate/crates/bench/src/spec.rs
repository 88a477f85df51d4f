//! Sweep descriptions as read from TOML.

use std::path::Path;

use anyhow::{bail, Context, Result};
use mtl_asymptotics::ExperimentConfig;
use serde::{Deserialize, Serialize};

/// The parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// `k / n_1`; the other tasks follow from their own sample sizes.
    Kappa,
    /// Number of tasks; needs equal sample sizes.
    #[serde(rename = "T", alias = "tasks")]
    Tasks,
    Rho,
    Gamma2,
    /// Alignment strength of the separate formulation.
    #[serde(rename = "R", alias = "r_strength")]
    RStrength,
}

impl Axis {
    pub fn label(self) -> &'static str {
        match self {
            Axis::Kappa => "kappa",
            Axis::Tasks => "T",
            Axis::Rho => "rho",
            Axis::Gamma2 => "gamma2",
            Axis::RStrength => "R",
        }
    }
}

/// Which training program the simulation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    #[default]
    Multitask,
    Separate,
}

/// `R` of the separate formulation: fixed, or matched to the infinite-task
/// error at each grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RChoice {
    Fixed(f64),
    Named(RName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RName {
    Auto,
}

/// Which task rows a point produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Report {
    /// One row per task.
    All,
    /// Only task 0.
    First,
    /// One row (task 0) averaging all tasks within each trial; only for
    /// equal sample sizes, where tasks are exchangeable.
    Pooled,
}

/// What a plan entry runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    #[default]
    Sweep,
    Compare,
    RhoCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub name: String,
    #[serde(default)]
    pub kind: RunKind,
    pub axis: Axis,
    pub grid: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub formulation: Formulation,
    #[serde(default)]
    pub r_strength: Option<RChoice>,
    #[serde(default = "yes")]
    pub emit_theory: bool,
    /// Defaults to `false` for `gamma2` sweeps and `true` otherwise.
    #[serde(default)]
    pub emit_simulation: Option<bool>,
    #[serde(default)]
    pub report: Option<Report>,
    /// Append an `axis = inf` row with the infinite-task prediction.
    #[serde(default)]
    pub limit_row: bool,
    pub base: ExperimentConfig,
}

fn default_trials() -> usize {
    25
}

fn yes() -> bool {
    true
}

impl SweepSpec {
    pub fn simulate(&self) -> bool {
        self.emit_simulation.unwrap_or(self.axis != Axis::Gamma2)
    }

    pub fn report(&self) -> Report {
        self.report.unwrap_or(if self.base.is_symmetric() { Report::Pooled } else { Report::All })
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            bail!("sweep name {:?} must be a plain file stem", self.name);
        }
        if self.grid.is_empty() {
            bail!("sweep {}: the grid is empty", self.name);
        }
        if self.grid.windows(2).any(|w| !(w[0] < w[1])) {
            bail!("sweep {}: the grid must be strictly increasing", self.name);
        }
        if self.grid.iter().any(|v| !v.is_finite()) {
            bail!("sweep {}: grid values must be finite", self.name);
        }
        if self.trials == 0 {
            bail!("sweep {}: trials must be at least 1", self.name);
        }
        self.base.validate().with_context(|| format!("sweep {}: base configuration", self.name))?;
        match self.axis {
            Axis::Tasks => {
                if !self.base.is_symmetric() {
                    bail!("sweep {}: a T sweep needs equal sample sizes", self.name);
                }
                if self.grid.iter().any(|&v| v < 1.0 || v.fract() != 0.0) {
                    bail!("sweep {}: T values must be positive integers", self.name);
                }
            }
            Axis::RStrength if self.formulation != Formulation::Separate => {
                bail!("sweep {}: an R sweep needs formulation = \"separate\"", self.name);
            }
            Axis::Kappa if self.grid.iter().any(|&v| v <= 0.0) => {
                bail!("sweep {}: kappa values must be positive", self.name);
            }
            _ => {}
        }
        if self.formulation == Formulation::Separate && self.axis != Axis::RStrength && self.r_strength.is_none() {
            bail!("sweep {}: the separate formulation needs r_strength (a number or \"auto\")", self.name);
        }
        if self.report() == Report::Pooled && !self.base.is_symmetric() && self.axis != Axis::Tasks {
            bail!("sweep {}: pooled reporting needs equal sample sizes", self.name);
        }
        if self.kind == RunKind::Compare && self.axis != Axis::Tasks {
            bail!("sweep {}: a comparison runs over T", self.name);
        }
        if self.kind == RunKind::RhoCurve && self.axis != Axis::Rho {
            bail!("sweep {}: an R(rho) curve runs over rho", self.name);
        }
        for (i, &v) in self.grid.iter().enumerate() {
            self.config_at(v).with_context(|| format!("sweep {}: grid point {i} ({v})", self.name))?;
        }
        Ok(())
    }

    /// The experiment at one grid value.
    pub fn config_at(&self, value: f64) -> Result<ExperimentConfig> {
        let mut c = self.base.clone();
        match self.axis {
            Axis::Kappa => {
                let k = (value * c.samples_per_task[0] as f64).round() as usize;
                if k == 0 || k > c.ambient_dim {
                    bail!("kappa = {value} gives k = {k} outside [1, p = {}]", c.ambient_dim);
                }
                c.known_dim = k;
            }
            Axis::Tasks => {
                let t = value as usize;
                c.num_tasks = t;
                c.samples_per_task = vec![c.samples_per_task[0]; t];
            }
            Axis::Rho => c.rho = value,
            Axis::Gamma2 => c.gamma2 = value,
            Axis::RStrength => {
                if !(0.0..=1.0).contains(&value) {
                    bail!("R = {value} outside [0, 1]");
                }
            }
        }
        c.validate()?;
        Ok(c)
    }
}

/// A plan file holds one spec at top level or a list under `[[run]]`.
pub fn parse_plan(text: &str) -> Result<Vec<SweepSpec>> {
    let value: toml::Table = toml::from_str(text).context("cannot parse the sweep plan")?;
    let runs: Vec<SweepSpec> = match value.get("run") {
        Some(list) => {
            if value.len() != 1 {
                bail!("a plan with [[run]] entries cannot have other top-level keys");
            }
            list.clone().try_into().context("invalid [[run]] entry")?
        }
        None => vec![toml::Value::Table(value).try_into().context("invalid sweep spec")?],
    };
    if runs.is_empty() {
        bail!("the plan has no runs");
    }
    for r in &runs {
        r.validate()?;
    }
    Ok(runs)
}

pub fn load_plan(path: &Path) -> Result<Vec<SweepSpec>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_plan(&text).with_context(|| format!("in {}", path.display()))
}
