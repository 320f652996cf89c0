//! Minimal deterministic SVG line charts. No text shaping, no dependencies:
//! the same data always renders to the same bytes, so plots diff cleanly and
//! reruns are byte-identical.

pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
}

pub struct Chart<'a> {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Draw a dashed horizontal rule at y = 0.
    pub zero_line: bool,
    /// Raw comment blocks (manifest reference, embedded data table).
    pub comments: &'a [String],
}

const W: f64 = 720.0;
const H: f64 = 480.0;
const ML: f64 = 78.0; // left margin: room for y tick labels
const MR: f64 = 24.0;
const MT: f64 = 46.0;
const MB: f64 = 58.0;

pub fn render(chart: &Chart) -> String {
    let (x_lo, x_hi) = padded_range(chart.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (mut y_lo, mut y_hi) =
        padded_range(chart.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    if chart.zero_line {
        y_lo = y_lo.min(0.0);
        y_hi = y_hi.max(0.0);
        let pad = 0.05 * (y_hi - y_lo);
        y_lo -= pad;
        y_hi += pad;
    }
    let px = |x: f64| ML + (x - x_lo) / (x_hi - x_lo) * (W - ML - MR);
    let py = |y: f64| H - MB - (y - y_lo) / (y_hi - y_lo) * (H - MT - MB);

    let mut s = String::with_capacity(8192);
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" \
         font-family=\"sans-serif\" font-size=\"13\">\n"
    ));
    for c in chart.comments {
        s.push_str(&format!("<!--\n{c}\n-->\n"));
    }
    s.push_str(&format!("<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"));
    s.push_str(&format!(
        "<text x=\"{:.2}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        (ML + W - MR) / 2.0,
        esc(&chart.title)
    ));

    // gridlines + ticks
    for (t, dec) in ticks(x_lo, x_hi) {
        let x = px(t);
        s.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#dddddd\"/>\n",
            MT,
            H - MB
        ));
        s.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
            H - MB + 18.0,
            fmt_tick(t, dec)
        ));
    }
    for (t, dec) in ticks(y_lo, y_hi) {
        let y = py(t);
        s.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/>\n",
            ML,
            W - MR
        ));
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
            ML - 8.0,
            y + 4.0,
            fmt_tick(t, dec)
        ));
    }
    if chart.zero_line && y_lo < 0.0 && y_hi > 0.0 {
        let y = py(0.0);
        s.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" \
             stroke=\"#888888\" stroke-dasharray=\"5,4\"/>\n",
            ML,
            W - MR
        ));
    }
    // axes
    s.push_str(&format!(
        "<path d=\"M {ML:.2} {MT:.2} V {:.2} H {:.2}\" fill=\"none\" stroke=\"black\"/>\n",
        H - MB,
        W - MR
    ));
    s.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
        (ML + W - MR) / 2.0,
        H - 14.0,
        esc(&chart.x_label)
    ));
    s.push_str(&format!(
        "<text x=\"20\" y=\"{:.2}\" text-anchor=\"middle\" \
         transform=\"rotate(-90 20 {:.2})\">{}</text>\n",
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0,
        esc(&chart.y_label)
    ));

    for series in &chart.series {
        let pts: Vec<String> =
            series.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.8\"/>\n",
            pts.join(" "),
            series.color
        ));
        for &(x, y) in &series.points {
            s.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.6\" fill=\"{}\"/>\n",
                px(x),
                py(y),
                series.color
            ));
        }
    }

    // legend, top-right inside the plot area
    for (i, series) in chart.series.iter().enumerate() {
        let y = MT + 16.0 + 20.0 * i as f64;
        let x = W - MR - 180.0;
        s.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" \
             stroke=\"{}\" stroke-width=\"1.8\"/>\n",
            x + 26.0,
            series.color
        ));
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>\n",
            x + 32.0,
            y + 4.0,
            esc(&series.label)
        ));
    }
    s.push_str("</svg>\n");
    s
}

fn esc(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        // flat series: open a symmetric window
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// About five round-valued ticks across [lo, hi]; returns (value, decimals).
fn ticks(lo: f64, hi: f64) -> Vec<(f64, usize)> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = mag * if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        // snap near-zero values produced by floating cancellation
        let v = if t.abs() < step * 1e-9 { 0.0 } else { t };
        out.push((v, decimals));
        t += step;
    }
    out
}

fn fmt_tick(v: f64, decimals: usize) -> String {
    format!("{v:.decimals$}")
}
