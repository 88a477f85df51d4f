//! Sweep harness for the multi-task asymptotics toolkit: theory and
//! simulation over parameter grids, CSV persistence, SVG overlays.

pub mod compare;
pub mod plot;
pub mod rho_curve;
pub mod spec;
pub mod sweep;

use anyhow::{bail, Result};

pub use spec::{load_plan, parse_plan, Axis, SweepSpec};
pub use sweep::{run_sweep, ResultRow, RunOptions};

/// Figure presets shipped with the binary.
pub const PRESETS: [(&str, &str); 8] = [
    ("fig2a", include_str!("../presets/fig2a.toml")),
    ("fig2b", include_str!("../presets/fig2b.toml")),
    ("fig4a", include_str!("../presets/fig4a.toml")),
    ("fig4b", include_str!("../presets/fig4b.toml")),
    ("fig5a", include_str!("../presets/fig5a.toml")),
    ("fig5b", include_str!("../presets/fig5b.toml")),
    ("fig6", include_str!("../presets/fig6.toml")),
    ("fig7", include_str!("../presets/fig7.toml")),
];

pub fn preset(name: &str) -> Result<Vec<SweepSpec>> {
    match PRESETS.iter().find(|(n, _)| *n == name) {
        Some((_, text)) => parse_plan(text),
        None => {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            bail!("unknown preset {name:?}; available: {}", names.join(", "))
        }
    }
}

/// Command-line overrides applied to every spec of a plan.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub no_theory: bool,
    pub no_sim: bool,
}

impl Overrides {
    pub fn apply(&self, spec: &mut SweepSpec) {
        if let Some(seed) = self.seed {
            spec.base.seed = seed;
        }
        if let Some(trials) = self.trials {
            spec.trials = trials;
        }
        if self.no_theory {
            spec.emit_theory = false;
        }
        if self.no_sim {
            spec.emit_simulation = Some(false);
        }
    }
}

/// Runs each spec according to its kind; returns the files written.
pub fn run_plan(specs: &[SweepSpec], opts: &RunOptions) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    for s in specs {
        s.validate()?;
        match s.kind {
            spec::RunKind::Sweep => {
                let out = run_sweep(s, opts)?;
                if out.resumed_points > 0 {
                    log::info!("{}: resumed {} completed points", s.name, out.resumed_points);
                }
                written.push(out.csv_path);
                written.extend(out.plot_path);
            }
            spec::RunKind::Compare => {
                let rep = compare::compare_formulations(s, opts)?;
                written.extend([rep.multitask.csv_path, rep.separate.csv_path, rep.report_path]);
                written.extend(rep.multitask.plot_path);
                written.extend(rep.separate.plot_path);
            }
            spec::RunKind::RhoCurve => {
                let curve = rho_curve::rho_curve(s, opts)?;
                written.push(curve.csv_path);
                written.extend(curve.plot_path);
            }
        }
    }
    Ok(written)
}
