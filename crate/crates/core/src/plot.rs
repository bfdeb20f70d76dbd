//! Minimal dependency-free SVG line charts arranged in a grid of panels.

use std::fmt::Write;

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 110.0;
const MARGIN_T: f64 = 34.0;
const MARGIN_B: f64 = 44.0;
const COLUMNS: usize = 2;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders `panels` row-major, two per row. Each series becomes one
/// `<polyline>` with exactly one vertex per point.
pub fn render_panels(title: &str, panels: &[Panel]) -> String {
    let rows = panels.len().div_ceil(COLUMNS).max(1);
    let width = PANEL_W * COLUMNS as f64;
    let height = PANEL_H * rows as f64 + 30.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="15">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    for (k, panel) in panels.iter().enumerate() {
        let ox = (k % COLUMNS) as f64 * PANEL_W;
        let oy = 30.0 + (k / COLUMNS) as f64 * PANEL_H;
        render_panel(&mut svg, panel, ox, oy);
    }
    svg.push_str("</svg>\n");
    svg
}

fn render_panel(svg: &mut String, panel: &Panel, ox: f64, oy: f64) {
    let plot_w = PANEL_W - MARGIN_L - MARGIN_R;
    let plot_h = PANEL_H - MARGIN_T - MARGIN_B;
    let (x0, y0) = (ox + MARGIN_L, oy + MARGIN_T);

    let floor = panel
        .series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .filter(|v| *v > 0.0 && v.is_finite())
        .fold(f64::INFINITY, f64::min);
    let ty = |v: f64| {
        if panel.log_y {
            let v = if v > 0.0 && v.is_finite() { v } else { floor };
            v.log10()
        } else {
            v
        }
    };
    let all: Vec<(f64, f64)> = panel
        .series
        .iter()
        .flat_map(|s| s.points.iter().map(|&(x, y)| (x, ty(y))))
        .filter(|p| p.0.is_finite() && p.1.is_finite())
        .collect();
    let bounds = |f: fn(&(f64, f64)) -> f64| {
        let lo = all.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = all.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        match (lo.is_finite(), hi > lo) {
            (true, true) => (lo, hi),
            (true, false) => (lo - 0.5, lo + 0.5),
            _ => (0.0, 1.0),
        }
    };
    let (xmin, xmax) = bounds(|p| p.0);
    let (ymin, ymax) = bounds(|p| p.1);
    let sx = |x: f64| x0 + (x - xmin) / (xmax - xmin) * plot_w;
    let sy = |y: f64| y0 + plot_h - (y - ymin) / (ymax - ymin) * plot_h;

    let _ = writeln!(
        svg,
        r##"<g class="panel"><text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"##,
        x0 + plot_w / 2.0,
        oy + 20.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{x0:.2}" y="{y0:.2}" width="{plot_w:.2}" height="{plot_h:.2}" fill="none" stroke="#444"/>"##
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let yv = ymin + f * (ymax - ymin);
        let label = if panel.log_y {
            format!("1e{yv:.1}")
        } else {
            format!("{yv:.3}")
        };
        let _ = writeln!(
            svg,
            r##"<text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"##,
            x0 - 4.0,
            sy(yv) + 4.0
        );
        let xv = xmin + f * (xmax - xmin);
        let _ = writeln!(
            svg,
            r##"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xv:.1}</text>"##,
            sx(xv),
            y0 + plot_h + 14.0
        );
    }
    let _ = writeln!(
        svg,
        r##"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
        x0 + plot_w / 2.0,
        y0 + plot_h + 32.0,
        escape(&panel.x_label)
    );
    let _ = writeln!(
        svg,
        r##"<text x="{:.2}" y="{:.2}" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{}</text>"##,
        ox + 14.0,
        y0 + plot_h / 2.0,
        ox + 14.0,
        y0 + plot_h / 2.0,
        escape(&panel.y_label)
    );
    for (k, s) in panel.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(ty(y))))
            .collect();
        let _ = writeln!(
            svg,
            r##"<polyline data-series="{}" fill="none" stroke="{color}" stroke-width="1.8" points="{}"/>"##,
            escape(&s.name),
            pts.join(" ")
        );
        let ly = y0 + 8.0 + 16.0 * k as f64;
        let lx = x0 + plot_w + 10.0;
        let _ = writeln!(
            svg,
            r##"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"##,
            lx + 16.0,
            lx + 20.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</g>\n");
}
