//! SVG line plots from a metrics CSV: per-composition probabilities,
//! probability spread, and per-composition accuracy, each against epoch.

use std::path::Path;

use adda_core::error::{Error, Result};
use adda_core::metrics::MetricsTable;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 120.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

fn axis_bounds(series: &[Series]) -> ((f64, f64), (f64, f64)) {
    let mut x = (f64::INFINITY, f64::NEG_INFINITY);
    let mut y = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &(px, py) in &s.points {
            x = (x.0.min(px), x.1.max(px));
            y = (y.0.min(py), y.1.max(py));
        }
    }
    if !x.0.is_finite() {
        x = (0.0, 1.0);
        y = (0.0, 1.0);
    }
    if (x.1 - x.0).abs() < 1e-12 {
        x = (x.0 - 0.5, x.1 + 0.5);
    }
    if (y.1 - y.0).abs() < 1e-12 {
        y = (y.0 - 0.1, y.1 + 0.1);
    }
    (x, y)
}

fn render(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let ((x0, x1), (y0, y1)) = axis_bounds(series);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |v: f64| MARGIN_L + (v - x0) / (x1 - x0) * plot_w;
    let sy = |v: f64| MARGIN_T + plot_h - (v - y0) / (y1 - y0) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">{title}</text>\n",
        MARGIN_L + plot_w / 2.0
    ));
    svg.push_str(&format!(
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{plot_w}\" height=\"{plot_h}\" \
         fill=\"none\" stroke=\"#333\"/>\n"
    ));

    for t in 0..=4 {
        let fx = x0 + (x1 - x0) * f64::from(t) / 4.0;
        let fy = y0 + (y1 - y0) * f64::from(t) / 4.0;
        let px = sx(fx);
        let py = sy(fy);
        svg.push_str(&format!(
            "<line x1=\"{px}\" y1=\"{}\" x2=\"{px}\" y2=\"{}\" stroke=\"#333\"/>\n",
            MARGIN_T + plot_h,
            MARGIN_T + plot_h + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{px}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            MARGIN_T + plot_h + 18.0,
            trim_num(fx)
        ));
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{py}\" x2=\"{MARGIN_L}\" y2=\"{py}\" stroke=\"#333\"/>\n",
            MARGIN_L - 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            MARGIN_L - 8.0,
            py + 4.0,
            trim_num(fy)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>\n",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{y_label}</text>\n",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0
    ));

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if s.points.len() == 1 {
            let (px, py) = s.points[0];
            svg.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"/>\n",
                sx(px),
                sy(py)
            ));
        } else if !s.points.is_empty() {
            let pts: Vec<String> = s
                .points
                .iter()
                .map(|&(px, py)| format!("{:.2},{:.2}", sx(px), sy(py)))
                .collect();
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                pts.join(" ")
            ));
        }
        let ly = MARGIN_T + 14.0 * (i as f64 + 1.0);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            WIDTH - MARGIN_R + 8.0,
            WIDTH - MARGIN_R + 28.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            WIDTH - MARGIN_R + 32.0,
            ly + 4.0,
            s.label
        ));
    }

    svg.push_str("</svg>\n");
    svg
}

fn trim_num(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() { "0".into() } else { s.to_string() }
}

fn comp_series(table: &MetricsTable, field: impl Fn(&adda_core::metrics::EpochStats, usize) -> f32)
    -> Vec<Series>
{
    (0..table.n_comps)
        .map(|c| Series {
            label: format!("comp {c}"),
            points: table
                .rows
                .iter()
                .filter(|r| field(r, c).is_finite())
                .map(|r| (f64::from(r.epoch), f64::from(field(r, c))))
                .collect(),
        })
        .collect()
}

/// Writes the three plots into `out_dir` and returns their paths.
pub fn write_plots(table: &MetricsTable, out_dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    if table.rows.is_empty() {
        return Err(Error::Csv { line: 2, message: "metrics file has no data rows".into() });
    }

    let probs = comp_series(table, |r, c| r.probs[c]);
    let acc = comp_series(table, |r, c| r.acc[c]);
    let std_series = vec![Series {
        label: "p_std".into(),
        points: table
            .rows
            .iter()
            .map(|r| (f64::from(r.epoch), f64::from(r.p_std)))
            .collect(),
    }];

    let jobs = [
        ("probabilities.svg", "Sampling probability per composition", "p_i", probs),
        ("p_std.svg", "Probability spread", "std(p)", std_series),
        ("accuracy.svg", "Pretext accuracy per composition", "acc_i", acc),
    ];

    let mut written = Vec::new();
    for (file, title, ylab, series) in jobs {
        let path = out_dir.join(file);
        std::fs::write(&path, render(title, "epoch", ylab, &series))?;
        written.push(path);
    }
    Ok(written)
}
