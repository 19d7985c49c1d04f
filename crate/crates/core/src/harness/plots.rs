use std::path::Path;

use plotters::prelude::*;

use super::{Aggregate, Method, SeparationReport};
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::evolve::Direction;
use crate::features::ScoreKind;

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Validation(format!("plotting: {e}"))
}

fn method_color(m: Method) -> RGBColor {
    match m {
        Method::Maple => RGBColor(31, 119, 180),
        Method::Seed => RGBColor(214, 39, 40),
    }
}

fn label_color(l: Label) -> RGBColor {
    match l {
        Label::Supports => RGBColor(44, 160, 44),
        Label::Refutes => RGBColor(214, 39, 40),
        Label::NotEnoughInfo => RGBColor(127, 127, 127),
    }
}

/// Mean macro F1 against shots per method, with ±1 std bars.
pub fn plot_f1_curves(aggregates: &[Aggregate], path: &Path, title: &str) -> Result<()> {
    let max_n = aggregates.iter().map(|a| a.n).max().unwrap_or(1);
    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{title}: macro F1 by shots"), ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(0.5f64..max_n as f64 + 0.5, 0.0f64..1.0)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("shots per class")
        .y_desc("macro F1")
        .x_labels(max_n.min(10))
        .draw()
        .map_err(plot_err)?;
    for method in [Method::Maple, Method::Seed] {
        let pts: Vec<&Aggregate> = aggregates.iter().filter(|a| a.method == method).collect();
        if pts.is_empty() {
            continue;
        }
        let color = method_color(method);
        chart
            .draw_series(LineSeries::new(pts.iter().map(|a| (a.n as f64, a.macro_f1_mean)), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(method.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
        chart
            .draw_series(pts.iter().map(|a| {
                let x = a.n as f64;
                PathElement::new(
                    vec![(x, a.macro_f1_mean - a.macro_f1_std), (x, a.macro_f1_mean + a.macro_f1_std)],
                    color,
                )
            }))
            .map_err(plot_err)?;
        chart
            .draw_series(pts.iter().map(|a| Circle::new((a.n as f64, a.macro_f1_mean), 3, color.filled())))
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

/// Per-class mean `s_em` across checkpoints, one panel per direction.
pub fn plot_separation(report: &SeparationReport, path: &Path) -> Result<()> {
    let root = SVGBackend::new(path, (900, 380)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((1, 2));
    let max_epoch = report.final_epoch.max(1) as f64;
    let (lo, hi) = report
        .stats
        .iter()
        .filter(|s| s.kind == ScoreKind::EvidenceMutation)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.mean), hi.max(s.mean)));
    let (lo, hi) = if lo.is_finite() { (lo - 0.05, hi + 0.05) } else { (-1.0, 1.0) };
    for (panel, direction) in panels.iter().zip(Direction::ALL) {
        let mut chart = ChartBuilder::on(panel)
            .caption(format!("{}: mean s_em by class", direction.tag()), ("sans-serif", 16))
            .margin(10)
            .x_label_area_size(32)
            .y_label_area_size(44)
            .build_cartesian_2d(0.0f64..max_epoch, lo..hi)
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc("epoch").draw().map_err(plot_err)?;
        for label in Label::ALL {
            let pts: Vec<(f64, f64)> = report
                .stats
                .iter()
                .filter(|s| s.direction == direction && s.kind == ScoreKind::EvidenceMutation && s.label == label)
                .map(|s| (s.epoch as f64, s.mean))
                .collect();
            if pts.is_empty() {
                continue;
            }
            let color = label_color(label);
            chart
                .draw_series(LineSeries::new(pts, color.stroke_width(2)))
                .map_err(plot_err)?
                .label(label.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_plot_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f1.svg");
        let aggs: Vec<Aggregate> = (1..=5)
            .flat_map(|n| {
                [Method::Maple, Method::Seed].map(|method| Aggregate {
                    method,
                    n,
                    count: 100,
                    macro_f1_mean: 0.3 + 0.02 * n as f64,
                    macro_f1_std: 0.05,
                    accuracy_mean: 0.4,
                    accuracy_std: 0.05,
                    classwise_f1_mean: [0.3; 3],
                    single_row: false,
                })
            })
            .collect();
        plot_f1_curves(&aggs, &path, "toy").unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("MAPLE"));
    }
}
