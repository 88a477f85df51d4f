//! `R(rho)` over a grid of similarities.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Result};
use mtl_asymptotics::generr::solve_r_of_rho;
use mtl_asymptotics::theory::SaddleSolver;
use rayon::prelude::*;
use serde::Serialize;

use crate::spec::SweepSpec;
use crate::sweep::{header_comment, scalar_params, RunOptions};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhoPoint {
    pub rho: f64,
    pub r_strength: Option<f64>,
    pub gap: Option<f64>,
    pub target_error: Option<f64>,
    pub evaluations: usize,
    pub status: String,
}

#[derive(Debug, Clone)]
pub struct RhoCurve {
    pub points: Vec<RhoPoint>,
    pub csv_path: PathBuf,
    pub plot_path: Option<PathBuf>,
}

pub fn rho_points(spec: &SweepSpec, solver: &SaddleSolver) -> Vec<RhoPoint> {
    spec.grid
        .par_iter()
        .map(|&rho| {
            let mut c = spec.base.clone();
            c.rho = rho;
            match solve_r_of_rho(solver, &scalar_params(&c, 0)) {
                Ok(fp) => RhoPoint {
                    rho,
                    r_strength: Some(fp.r_strength),
                    gap: Some(fp.gap),
                    target_error: Some(fp.target_error),
                    evaluations: fp.evaluations,
                    status: "ok".into(),
                },
                Err(e) => RhoPoint {
                    rho,
                    r_strength: None,
                    gap: None,
                    target_error: None,
                    evaluations: 0,
                    status: format!("failed: {}", e.to_string().replace([',', '\n'], " ")),
                },
            }
        })
        .collect()
}

/// Writes `<name>.csv` and `<name>.svg`.
pub fn rho_curve(spec: &SweepSpec, opts: &RunOptions) -> Result<RhoCurve> {
    if spec.grid.iter().any(|r| !(0.0..=1.0).contains(r)) {
        bail!("rho-curve {}: rho values must lie in [0, 1]", spec.name);
    }
    if !spec.base.is_symmetric() {
        bail!("rho-curve {}: needs equal sample sizes", spec.name);
    }
    fs::create_dir_all(&opts.out_dir)?;
    let solver = SaddleSolver::new(opts.solver)?;
    let points = rho_points(spec, &solver);
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in &points {
        w.serialize(p)?;
    }
    let mut out = format!("{}\n", header_comment()).into_bytes();
    out.extend(w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?);
    let csv_path = opts.out_dir.join(format!("{}.csv", spec.name));
    fs::write(&csv_path, out)?;
    let plot_path = if opts.plot {
        let p = opts.out_dir.join(format!("{}.svg", spec.name));
        let xy: Vec<(f64, f64)> = points.iter().filter_map(|p| p.r_strength.map(|r| (p.rho, r))).collect();
        match crate::plot::rho_curve(&p, &spec.name, &xy) {
            Ok(()) => Some(p),
            Err(e) => {
                log::warn!("plot for {} failed: {e:#}", spec.name);
                None
            }
        }
    } else {
        None
    };
    Ok(RhoCurve { points, csv_path, plot_path })
}
