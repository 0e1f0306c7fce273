//! Static SVG of the convergence study: statistic (a) and the max gap
//! against `N` on a log axis.

use mfg_reflect::nplayer::StudyRow;
use plotters::prelude::*;

use crate::output::CliResult;

fn panel<DB: DrawingBackend>(
    area: &DrawingArea<DB, plotters::coord::Shift>,
    title: &str,
    points: &[(f64, f64)],
) -> CliResult<()>
where
    DB::ErrorType: 'static,
{
    let (xlo, xhi) = points.iter().fold((f64::INFINITY, 0.0f64), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (ylo, yhi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let pad = ((yhi - ylo).abs() * 0.1).max(yhi.abs() * 0.05).max(1e-12);
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(70)
        .build_cartesian_2d((xlo * 0.8..xhi * 1.25).log_scale(), (ylo - pad)..(yhi + pad))
        .map_err(|e| e.to_string())?;
    chart
        .configure_mesh()
        .x_desc("N")
        .y_label_formatter(&|v| format!("{v:.2e}"))
        .draw()
        .map_err(|e| e.to_string())?;
    chart
        .draw_series(LineSeries::new(points.iter().copied(), &BLUE))
        .map_err(|e| e.to_string())?;
    chart
        .draw_series(points.iter().map(|&p| Circle::new(p, 4, BLUE.filled())))
        .map_err(|e| e.to_string())?;
    Ok(())
}

/// Seed means per population size, rendered as one SVG document.
pub fn convergence_svg(means: &[(usize, StudyRow)]) -> CliResult<String> {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (1000, 420)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| e.to_string())?;
        let halves = root.split_evenly((1, 2));
        let a: Vec<(f64, f64)> = means.iter().map(|(n, r)| (*n as f64, r.w2_pathspace)).collect();
        let g: Vec<(f64, f64)> = means.iter().map(|(n, r)| (*n as f64, r.max_gap)).collect();
        panel(&halves[0], "path-space W2, players vs copies", &a)?;
        panel(&halves[1], "max deviation gain", &g)?;
        root.present().map_err(|e| e.to_string())?;
    }
    Ok(svg)
}
