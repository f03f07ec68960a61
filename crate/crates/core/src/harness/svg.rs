//! Self-contained SVG scatter plots: log-scaled proxy axis with decade
//! ticks, linear score axis. No external assets, deterministic output.

const WIDTH: f64 = 520.0;
const HEIGHT: f64 = 380.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 18.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 48.0;

/// Renders `(proxy, score)` points with a log10 x-axis.
///
/// Non-positive proxy values (clamped eigenvalue estimates) are pinned to
/// the left edge decade so they stay visible instead of vanishing.
pub fn scatter_log_svg(points: &[(f64, f64)], title: &str, x_label: &str, y_label: &str) -> String {
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;

    let positives: Vec<f64> = points.iter().map(|p| p.0).filter(|&x| x > 0.0).collect();
    let (dec_lo, dec_hi) = decade_range(&positives);
    let (y_lo, y_hi) = y_range(points);

    let x_of = |v: f64| -> f64 {
        let logv = v.max(10f64.powi(dec_lo)).log10().min(dec_hi as f64);
        MARGIN_LEFT + (logv - dec_lo as f64) / (dec_hi - dec_lo) as f64 * plot_w
    };
    let y_of = |v: f64| -> f64 { MARGIN_TOP + (y_hi - v) / (y_hi - y_lo) * plot_h };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\" \
         text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    ));

    // axes
    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;
    svg.push_str(&format!(
        "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x1:.1}\" y2=\"{y0:.1}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x0:.1}\" y2=\"{y1:.1}\" stroke=\"black\"/>\n"
    ));

    // decade ticks on x
    let total_decades = dec_hi - dec_lo;
    let step = ((total_decades as f64 / 8.0).ceil() as i32).max(1);
    let mut d = dec_lo;
    while d <= dec_hi {
        let x = x_of(10f64.powi(d));
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{y0:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
            y0 + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">1e{d}</text>\n",
            y0 + 18.0
        ));
        d += step;
    }

    // linear ticks on y
    for k in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * k as f64 / 4.0;
        let y = y_of(v);
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{x0:.1}\" y2=\"{y:.1}\" stroke=\"black\"/>\n",
            x0 - 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{}</text>\n",
            x0 - 8.0,
            y + 4.0,
            format_tick(v)
        ));
    }

    // axis labels
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\">{} (log scale)</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>\n",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape(y_label)
    ));

    for &(px, py) in points {
        if !px.is_finite() || !py.is_finite() {
            continue;
        }
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"#3b6ea5\" fill-opacity=\"0.8\"/>\n",
            x_of(px),
            y_of(py)
        ));
    }

    svg.push_str("</svg>\n");
    svg
}

/// Decade bounds covering the positive values, or a default window when
/// there are none.
fn decade_range(positives: &[f64]) -> (i32, i32) {
    if positives.is_empty() {
        return (-1, 1);
    }
    let min = positives.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = positives.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = min.log10().floor() as i32;
    let mut hi = max.log10().ceil() as i32;
    if hi <= lo {
        hi = lo + 1;
    }
    (lo, hi)
}

fn y_range(points: &[(f64, f64)]) -> (f64, f64) {
    let finite: Vec<f64> = points.iter().map(|p| p.1).filter(|y| y.is_finite()).collect();
    if finite.is_empty() {
        return (0.0, 1.0);
    }
    let min = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        (min - 0.5, max + 0.5)
    } else {
        let pad = (max - min) * 0.06;
        (min - pad, max + pad)
    }
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (0.01..10000.0).contains(&a) {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
