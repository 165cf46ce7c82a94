//! SVG charts of sweep results.

use std::path::Path;

use plotters::prelude::*;

use djscc::evaluation::{Scheme, SweepResult, SweepRow};
use djscc::training::DatasetKind;

use crate::error::CliError;

const SIZE: (u32, u32) = (720, 480);

fn plot_err(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(format!("plotting failed: {e}"))
}

/// Series present in `result`, in a stable order.
fn series(result: &SweepResult) -> Vec<(DatasetKind, Scheme, Vec<&SweepRow>)> {
    let mut out = Vec::new();
    for dataset in [DatasetKind::Mnist, DatasetKind::Cifar10] {
        for scheme in [Scheme::Djscc, Scheme::Webee] {
            let mut rows = result.series(dataset, scheme);
            if !rows.is_empty() {
                rows.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
                out.push((dataset, scheme, rows));
            }
        }
    }
    out
}

fn colour(dataset: DatasetKind, scheme: Scheme) -> RGBColor {
    match (dataset, scheme) {
        (DatasetKind::Mnist, Scheme::Djscc) => RGBColor(31, 119, 180),
        (DatasetKind::Mnist, Scheme::Webee) => RGBColor(255, 127, 14),
        (DatasetKind::Cifar10, Scheme::Djscc) => RGBColor(44, 160, 44),
        (DatasetKind::Cifar10, Scheme::Webee) => RGBColor(214, 39, 40),
    }
}

/// One line per (dataset, scheme) of `metric` against SNR.
pub fn metric_vs_snr(
    result: &SweepResult,
    path: &Path,
    title: &str,
    y_label: &str,
    metric: impl Fn(&SweepRow) -> f64,
) -> Result<(), CliError> {
    let lines = series(result);
    let xs = result.rows.iter().map(|r| r.snr_db);
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
        (a.min(x), b.max(x))
    });
    let ys: Vec<f64> = result.rows.iter().map(&metric).collect();
    let (y0, y1) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| {
            (a.min(y), b.max(y))
        });
    let pad = ((y1 - y0) * 0.05).max(1e-3);
    let (x0, x1) = if x1 > x0 {
        (x0, x1)
    } else {
        (x0 - 1.0, x1 + 1.0)
    };

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, (y0 - pad).min(0.0)..y1 + pad)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("SNR (dB)")
        .y_desc(y_label)
        .draw()
        .map_err(plot_err)?;
    for (dataset, scheme, rows) in lines {
        let c = colour(dataset, scheme);
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.snr_db, metric(r))).collect();
        chart
            .draw_series(LineSeries::new(pts.clone(), c.stroke_width(2)))
            .map_err(plot_err)?
            .label(format!("{} / {}", scheme.name(), dataset.name()))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], c.stroke_width(2)));
        chart
            .draw_series(pts.into_iter().map(|p| Circle::new(p, 3, c.filled())))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Bars of wire bits per image for every (dataset, scheme) in `result`.
pub fn bits_per_image(result: &SweepResult, path: &Path) -> Result<(), CliError> {
    let bars: Vec<(String, f64, RGBColor)> = series(result)
        .into_iter()
        .map(|(d, s, rows)| {
            (
                format!("{} / {}", s.name(), d.name()),
                rows[0].bits_per_image as f64,
                colour(d, s),
            )
        })
        .collect();
    let top = bars.iter().map(|b| b.1).fold(1.0, f64::max) * 1.1;
    let n = bars.len();

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let names: Vec<String> = bars.iter().map(|b| b.0.clone()).collect();
    let mut chart = ChartBuilder::on(&root)
        .caption("Bits per image", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(0.0..n.max(1) as f64, 0.0..top)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n.max(1) * 2 + 1)
        .x_label_formatter(&|x: &f64| {
            let i = x.floor() as usize;
            if (x - i as f64 - 0.5).abs() < 1e-6 && i < names.len() {
                names[i].clone()
            } else {
                String::new()
            }
        })
        .y_desc("bits")
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(bars.iter().enumerate().map(|(i, (_, v, c))| {
            Rectangle::new([(i as f64 + 0.15, 0.0), (i as f64 + 0.85, *v)], c.filled())
        }))
        .map_err(plot_err)?;
    chart
        .draw_series(bars.iter().enumerate().map(|(i, (_, v, _))| {
            Text::new(
                format!("{v}"),
                (i as f64 + 0.4, *v + top * 0.02),
                ("sans-serif", 14),
            )
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}
