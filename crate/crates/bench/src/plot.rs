//! SVG overlay of theory curves and simulation means.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{anyhow, Result};
use plotters::prelude::*;

use crate::spec::SweepSpec;
use crate::sweep::ResultRow;

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
    RGBColor(23, 190, 207),
];

fn bounds(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo > hi {
        return None;
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1.0) };
    Some((lo - pad, hi + pad))
}

/// Theory as lines, simulation as points with one-standard-error bars, the
/// infinite-task row (if any) as a dashed horizontal line.
pub fn overlay(path: &Path, spec: &SweepSpec, rows: &[ResultRow]) -> Result<()> {
    let finite: Vec<&ResultRow> = rows.iter().filter(|r| r.axis.is_finite()).collect();
    let limit = rows.iter().find(|r| r.axis.is_infinite()).and_then(|r| r.theory_err);
    let x_range = bounds(finite.iter().map(|r| r.axis)).ok_or_else(|| anyhow!("nothing to plot"))?;
    let ys = finite
        .iter()
        .flat_map(|r| {
            let se = r.sim_err_stderr.unwrap_or(0.0);
            [r.theory_err, r.sim_err_mean.map(|m| m - se), r.sim_err_mean.map(|m| m + se)]
        })
        .flatten()
        .chain(limit);
    let y_range = bounds(ys).ok_or_else(|| anyhow!("no values to plot"))?;
    let tasks: BTreeSet<usize> = finite.iter().map(|r| r.task).collect();

    let root = SVGBackend::new(path, (800, 560)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(&spec.name, ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(44)
        .y_label_area_size(64)
        .build_cartesian_2d(x_range.0..x_range.1, y_range.0..y_range.1)?;
    chart.configure_mesh().x_desc(spec.axis.label()).y_desc("generalization error").draw()?;

    for (i, &task) in tasks.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mine: Vec<&&ResultRow> = finite.iter().filter(|r| r.task == task).collect();
        let theory: Vec<(f64, f64)> = mine.iter().filter_map(|r| r.theory_err.map(|e| (r.axis, e))).collect();
        if !theory.is_empty() {
            chart
                .draw_series(LineSeries::new(theory, color.stroke_width(2)))?
                .label(format!("theory, task {task}"))
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        }
        let sim: Vec<(f64, f64, f64)> =
            mine.iter().filter_map(|r| r.sim_err_mean.map(|m| (r.axis, m, r.sim_err_stderr.unwrap_or(0.0)))).collect();
        if !sim.is_empty() {
            chart.draw_series(sim.iter().map(|&(x, m, se)| PathElement::new(vec![(x, m - se), (x, m + se)], color)))?;
            chart
                .draw_series(sim.iter().map(|&(x, m, _)| Circle::new((x, m), 4, color.filled())))?
                .label(format!("simulation, task {task}"))
                .legend(move |(x, y)| Circle::new((x + 9, y), 4, color.filled()));
        }
    }
    if let Some(level) = limit {
        let dashes = DashedLineSeries::new(vec![(x_range.0, level), (x_range.1, level)], 8, 6, BLACK.stroke_width(1));
        chart
            .draw_series(dashes)?
            .label("infinite-task limit")
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], BLACK));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.85)).border_style(BLACK).draw()?;
    root.present()?;
    Ok(())
}

/// `R(rho)` with the diagonal `R = rho` for reference.
pub fn rho_curve(path: &Path, title: &str, points: &[(f64, f64)]) -> Result<()> {
    let root = SVGBackend::new(path, (640, 560)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(44)
        .y_label_area_size(56)
        .build_cartesian_2d(0.0..1.0, 0.0..1.0)?;
    chart.configure_mesh().x_desc("rho").y_desc("R").draw()?;
    let color = PALETTE[0];
    chart
        .draw_series(LineSeries::new(points.iter().copied(), color.stroke_width(2)))?
        .label("R(rho)")
        .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    chart.draw_series(points.iter().map(|&p| Circle::new(p, 4, color.filled())))?;
    chart
        .draw_series(DashedLineSeries::new(vec![(0.0, 0.0), (1.0, 1.0)], 8, 6, BLACK.stroke_width(1)))?
        .label("R = rho")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], BLACK));
    chart.configure_series_labels().background_style(WHITE.mix(0.85)).border_style(BLACK).draw()?;
    root.present()?;
    Ok(())
}
