//! Standalone SVG grouped bar charts for the analysis artifacts.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 70.0;
const COLORS: [&str; 4] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52"];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grouped bars, one group per label and one bar per series. The value
/// axis spans `[min(0, lo), max(0, hi)]` so signed data (deltas) work.
pub fn grouped_bars(title: &str, labels: &[String], series: &[Series]) -> String {
    let all = series.iter().flat_map(|s| s.values.iter().copied());
    let (lo, hi) = all.fold((0.0f64, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let span = if hi - lo > 0.0 { hi - lo } else { 1.0 };
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let y_of = |v: f64| MARGIN_TOP + (hi - v) / span * plot_h;
    let groups = labels.len().max(1) as f64;
    let group_w = plot_w / groups;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    for t in 0..=4 {
        let v = lo + span * f64::from(t) / 4.0;
        let y = y_of(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{MARGIN_LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"##,
            WIDTH - MARGIN_RIGHT,
            MARGIN_LEFT - 4.0,
            y + 4.0
        );
    }
    let zero = y_of(0.0);
    for (g, label) in labels.iter().enumerate() {
        let x0 = MARGIN_LEFT + g as f64 * group_w + group_w * 0.1;
        for (k, s) in series.iter().enumerate() {
            let v = s.values.get(g).copied().unwrap_or(0.0);
            let y = y_of(v);
            let _ = writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                x0 + k as f64 * bar_w,
                y.min(zero),
                bar_w,
                (y - zero).abs(),
                COLORS[k % COLORS.len()]
            );
        }
        let cx = MARGIN_LEFT + (g as f64 + 0.5) * group_w;
        let ly = HEIGHT - MARGIN_BOTTOM + 14.0;
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.2}" y="{ly:.2}" text-anchor="end" transform="rotate(-35 {cx:.2} {ly:.2})">{}</text>"#,
            escape(label)
        );
    }
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN_LEFT}" y1="{zero:.2}" x2="{:.2}" y2="{zero:.2}" stroke="black"/>"#,
        WIDTH - MARGIN_RIGHT
    );
    for (k, s) in series.iter().enumerate() {
        let x = MARGIN_LEFT + 10.0 + k as f64 * 120.0;
        let y = HEIGHT - 12.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{x:.2}" y="{:.2}" width="10" height="10" fill="{}"/><text x="{:.2}" y="{y:.2}">{}</text>"#,
            y - 9.0,
            COLORS[k % COLORS.len()],
            x + 14.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
