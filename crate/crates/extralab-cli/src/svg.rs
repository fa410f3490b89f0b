//! Static convergence plots: one polyline per trace on a log10 vertical
//! axis, self-contained SVG with no external references.

use std::io;
use std::path::Path;

use extralab::metrics::{IterationRecord, Trace};

/// Quantity on the horizontal axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XAxis {
    GradRounds,
    CommRounds,
}

/// Quantity on the (log-scaled) vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YAxis {
    ObjectiveGap,
    ConsensusViolation,
    Rho,
}

impl XAxis {
    fn label(self) -> &'static str {
        match self {
            XAxis::GradRounds => "gradient rounds",
            XAxis::CommRounds => "communication rounds",
        }
    }

    fn pick(self, r: &IterationRecord) -> f64 {
        match self {
            XAxis::GradRounds => r.grad_rounds as f64,
            XAxis::CommRounds => r.comm_rounds as f64,
        }
    }
}

impl YAxis {
    fn label(self) -> &'static str {
        match self {
            YAxis::ObjectiveGap => "objective gap",
            YAxis::ConsensusViolation => "consensus violation",
            YAxis::Rho => "rho",
        }
    }

    fn pick(self, r: &IterationRecord) -> Option<f64> {
        match self {
            YAxis::ObjectiveGap => Some(r.objective_gap),
            YAxis::ConsensusViolation => Some(r.consensus_violation),
            YAxis::Rho => r.rho,
        }
    }
}

/// Values at or below this are drawn at the clip floor and flagged in a
/// footnote; a log axis cannot hold zeros or negatives.
const CLIP: f64 = 1e-16;

const PLOT_LEFT: f64 = 64.0;
const PLOT_TOP: f64 = 24.0;
const PLOT_WIDTH: f64 = 560.0;
const PLOT_HEIGHT: f64 = 360.0;
const LEGEND_LEFT: f64 = 648.0;
const CANVAS_WIDTH: f64 = 820.0;
const CANVAS_HEIGHT: f64 = 440.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn escape_xml(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Series {
    name: String,
    points: Vec<(f64, f64)>, // (x, log10 y after clipping)
    clipped: usize,
}

/// Renders the plot as an SVG document string. Traces with no usable
/// points for the chosen axes are skipped.
pub fn render_svg(traces: &[(&str, &Trace)], x_axis: XAxis, y_axis: YAxis) -> String {
    let mut series = Vec::new();
    for (name, trace) in traces {
        let mut points = Vec::new();
        let mut clipped = 0;
        for record in &trace.records {
            let Some(y) = y_axis.pick(record) else {
                continue;
            };
            if !y.is_finite() {
                continue;
            }
            let clamped = if y <= CLIP {
                clipped += 1;
                CLIP
            } else {
                y
            };
            points.push((x_axis.pick(record), clamped.log10()));
        }
        if !points.is_empty() {
            series.push(Series {
                name: (*name).to_owned(),
                points,
                clipped,
            });
        }
    }

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {CANVAS_WIDTH} {CANVAS_HEIGHT}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "  <rect width=\"{CANVAS_WIDTH}\" height=\"{CANVAS_HEIGHT}\" fill=\"white\"/>\n"
    ));

    if series.is_empty() {
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" fill=\"#333\">no data for these axes</text>\n",
            PLOT_LEFT,
            PLOT_TOP + 20.0
        ));
        svg.push_str("</svg>\n");
        return svg;
    }

    let x_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold(0.0f64, f64::max)
        .max(1.0);
    let (mut dec_min, mut dec_max) = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    dec_min = dec_min.floor();
    dec_max = dec_max.ceil();
    if dec_max - dec_min < 1.0 {
        dec_max = dec_min + 1.0;
    }

    let to_px = |x: f64, dec: f64| -> (f64, f64) {
        let px = PLOT_LEFT + x / x_max * PLOT_WIDTH;
        let py = PLOT_TOP + (dec_max - dec) / (dec_max - dec_min) * PLOT_HEIGHT;
        (px, py)
    };

    // horizontal decade grid
    let decades = (dec_max - dec_min) as i64;
    let decade_step = (decades as usize).div_ceil(8).max(1) as i64;
    let mut dec = dec_min as i64;
    while dec <= dec_max as i64 {
        let (_, py) = to_px(0.0, dec as f64);
        svg.push_str(&format!(
            "  <line x1=\"{PLOT_LEFT}\" y1=\"{py:.1}\" x2=\"{:.1}\" y2=\"{py:.1}\" \
             stroke=\"#ddd\" stroke-width=\"1\"/>\n",
            PLOT_LEFT + PLOT_WIDTH
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" fill=\"#333\">1e{dec}</text>\n",
            PLOT_LEFT - 6.0,
            py + 4.0
        ));
        dec += decade_step;
    }

    // x ticks: five intervals rounded to two significant digits
    let raw_step = x_max / 5.0;
    let mag = 10f64.powf(raw_step.log10().floor());
    let x_step = ((raw_step / mag).ceil() * mag).max(1.0);
    let mut tick = 0.0;
    while tick <= x_max + 0.5 * x_step {
        let shown = tick.min(x_max);
        let (px, _) = to_px(shown, 0.0);
        svg.push_str(&format!(
            "  <line x1=\"{px:.1}\" y1=\"{PLOT_TOP}\" x2=\"{px:.1}\" y2=\"{:.1}\" \
             stroke=\"#eee\" stroke-width=\"1\"/>\n",
            PLOT_TOP + PLOT_HEIGHT
        ));
        svg.push_str(&format!(
            "  <text x=\"{px:.1}\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"#333\">{shown:.0}</text>\n",
            PLOT_TOP + PLOT_HEIGHT + 16.0
        ));
        if shown >= x_max {
            break;
        }
        tick += x_step;
    }

    // axes frame
    svg.push_str(&format!(
        "  <rect x=\"{PLOT_LEFT}\" y=\"{PLOT_TOP}\" width=\"{PLOT_WIDTH}\" height=\"{PLOT_HEIGHT}\" \
         fill=\"none\" stroke=\"#333\" stroke-width=\"1\"/>\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"#000\">{}</text>\n",
        PLOT_LEFT + PLOT_WIDTH / 2.0,
        PLOT_TOP + PLOT_HEIGHT + 36.0,
        x_axis.label()
    ));
    svg.push_str(&format!(
        "  <text x=\"16\" y=\"{:.1}\" transform=\"rotate(-90 16 {:.1})\" \
         text-anchor=\"middle\" fill=\"#000\">{} (log scale)</text>\n",
        PLOT_TOP + PLOT_HEIGHT / 2.0,
        PLOT_TOP + PLOT_HEIGHT / 2.0,
        y_axis.label()
    ));

    let mut any_clipped = 0usize;
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let dash = if i >= PALETTE.len() {
            " stroke-dasharray=\"6 3\""
        } else {
            ""
        };
        any_clipped += s.clipped;
        let coords: Vec<String> = s
            .points
            .iter()
            .map(|&(x, dec)| {
                let (px, py) = to_px(x, dec);
                format!("{px:.1},{py:.1}")
            })
            .collect();
        svg.push_str(&format!(
            "  <polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash}/>\n",
            coords.join(" ")
        ));
        if s.points.len() == 1 {
            let (px, py) = to_px(s.points[0].0, s.points[0].1);
            svg.push_str(&format!(
                "  <circle cx=\"{px:.1}\" cy=\"{py:.1}\" r=\"2.5\" fill=\"{color}\"/>\n"
            ));
        }
        // legend row
        let ly = PLOT_TOP + 10.0 + i as f64 * 20.0;
        svg.push_str(&format!(
            "  <line x1=\"{LEGEND_LEFT}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" \
             stroke=\"{color}\" stroke-width=\"1.5\"{dash}/>\n",
            LEGEND_LEFT + 26.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" fill=\"#000\">{}</text>\n",
            LEGEND_LEFT + 32.0,
            ly + 4.0,
            escape_xml(&s.name)
        ));
    }

    if any_clipped > 0 {
        svg.push_str(&format!(
            "  <text x=\"{PLOT_LEFT}\" y=\"{:.1}\" fill=\"#666\" font-size=\"11\">\
             {any_clipped} value(s) at or below 1e-16 clipped to the axis floor</text>\n",
            CANVAS_HEIGHT - 8.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Renders and writes the plot to `path`.
pub fn emit_svg(
    traces: &[(&str, &Trace)],
    x_axis: XAxis,
    y_axis: YAxis,
    path: &Path,
) -> io::Result<()> {
    std::fs::write(path, render_svg(traces, x_axis, y_axis))
}
