//! Standalone SVG line plots: stacked panels sharing a time axis, with
//! per-panel legends, tick labels, and auto-ranged axes.

const MARGIN_LEFT: f64 = 70.0;
const PLOT_W: f64 = 620.0;
const LEGEND_X: f64 = 706.0;
const WIDTH: f64 = 850.0;
const TITLE_H: f64 = 24.0;
const PLOT_H: f64 = 190.0;
const AXIS_H: f64 = 46.0;
const TOP: f64 = 16.0;

pub const PALETTE: [&str; 6] =
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub color: &'static str,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

/// Data range padded for display: 5% of the span, or ±1 when the data are
/// constant.
fn auto_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (-1.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 1.0, hi + 1.0)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn fmt_tick(v: f64, span: f64) -> String {
    if span >= 100.0 {
        format!("{v:.0}")
    } else if span >= 10.0 {
        format!("{v:.1}")
    } else if span >= 1.0 {
        format!("{v:.2}")
    } else if span >= 0.01 {
        format!("{v:.3}")
    } else {
        format!("{v:.5}")
    }
}

pub fn render_svg(t: &[f64], panels: &[Panel]) -> String {
    let height = TOP + panels.len() as f64 * (TITLE_H + PLOT_H + AXIS_H) + 8.0;
    let (t_lo, t_hi) = auto_range(t.iter().copied());
    let x_px = |v: f64| MARGIN_LEFT + (v - t_lo) / (t_hi - t_lo) * PLOT_W;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{height}\" \
         viewBox=\"0 0 {WIDTH} {height}\" font-family=\"sans-serif\">\n"
    ));
    svg.push_str(&format!("<rect width=\"{WIDTH}\" height=\"{height}\" fill=\"#ffffff\"/>\n"));

    for (p, panel) in panels.iter().enumerate() {
        let y0 = TOP + p as f64 * (TITLE_H + PLOT_H + AXIS_H);
        let py0 = y0 + TITLE_H;
        let (v_lo, v_hi) =
            auto_range(panel.series.iter().flat_map(|s| s.values.iter().copied()));
        let y_px = |v: f64| py0 + PLOT_H - (v - v_lo) / (v_hi - v_lo) * PLOT_H;

        svg.push_str("<g class=\"panel\">\n");
        svg.push_str(&format!(
            "<text x=\"{MARGIN_LEFT}\" y=\"{:.1}\" font-size=\"14\" font-weight=\"bold\">{}</text>\n",
            y0 + 14.0,
            panel.title
        ));
        svg.push_str(&format!(
            "<text x=\"8\" y=\"{:.1}\" font-size=\"11\">{}</text>\n",
            py0 + 10.0,
            panel.y_label
        ));
        svg.push_str(&format!(
            "<rect x=\"{MARGIN_LEFT}\" y=\"{py0:.1}\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" \
             fill=\"none\" stroke=\"#888888\"/>\n"
        ));

        for k in 0..5 {
            let frac = k as f64 / 4.0;
            let v = v_lo + frac * (v_hi - v_lo);
            let y = y_px(v);
            svg.push_str(&format!(
                "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{MARGIN_LEFT}\" y2=\"{y:.1}\" stroke=\"#888888\"/>\n",
                MARGIN_LEFT - 4.0
            ));
            svg.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
                MARGIN_LEFT - 7.0,
                y + 3.5,
                fmt_tick(v, v_hi - v_lo)
            ));

            let tv = t_lo + frac * (t_hi - t_lo);
            let x = x_px(tv);
            let base = py0 + PLOT_H;
            svg.push_str(&format!(
                "<line x1=\"{x:.1}\" y1=\"{base:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#888888\"/>\n",
                base + 4.0
            ));
            svg.push_str(&format!(
                "<text x=\"{x:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
                base + 16.0,
                fmt_tick(tv, t_hi - t_lo)
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">t [s]</text>\n",
            MARGIN_LEFT + PLOT_W / 2.0,
            py0 + PLOT_H + 34.0
        ));

        for series in &panel.series {
            let points: Vec<String> = t
                .iter()
                .zip(&series.values)
                .map(|(tv, v)| format!("{:.2},{:.2}", x_px(*tv), y_px(*v)))
                .collect();
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                series.color,
                points.join(" ")
            ));
        }
        for (i, series) in panel.series.iter().enumerate() {
            let ly = py0 + 10.0 + 18.0 * i as f64;
            svg.push_str(&format!(
                "<line x1=\"{LEGEND_X}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" \
                 stroke=\"{}\" stroke-width=\"2\"/>\n",
                LEGEND_X + 20.0,
                series.color
            ));
            svg.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\">{}</text>\n",
                LEGEND_X + 25.0,
                ly + 4.0,
                series.name
            ));
        }
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    svg
}
