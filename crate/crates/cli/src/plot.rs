//! Minimal SVG line plots, rendered from a run CSV alone.

use std::fmt::Write as _;

use wbic_core::sim::CsvTable;

const PANEL_W: f64 = 720.0;
const PANEL_H: f64 = 220.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 40.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

/// Tick positions covering `[lo, hi]` at a 1-2-5 step.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        let pad = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn label(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn draw_panel(out: &mut String, panel: &Panel, top: f64) {
    let (x0, x1) = range(panel.series.iter().flat_map(|s| s.x.iter().copied()));
    let (y0, y1) = range(panel.series.iter().flat_map(|s| s.y.iter().copied()));
    let left = MARGIN_L;
    let right = PANEL_W - MARGIN_R;
    let plot_top = top + MARGIN_T;
    let bottom = top + PANEL_H - MARGIN_B;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * (right - left);
    let sy = |y: f64| bottom - (y - y0) / (y1 - y0) * (bottom - plot_top);

    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="14" text-anchor="middle">{}</text>"#,
        (left + right) / 2.0,
        top + 18.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        out,
        r#"<rect x="{left:.1}" y="{plot_top:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        right - left,
        bottom - plot_top
    );
    for t in ticks(x0, x1) {
        let x = sx(t);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.1}" y1="{plot_top:.1}" x2="{x:.1}" y2="{bottom:.1}" stroke="#ddd"/><text x="{x:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"##,
            bottom + 14.0,
            label(t)
        );
    }
    for t in ticks(y0, y1) {
        let y = sy(t);
        let _ = writeln!(
            out,
            r##"<line x1="{left:.1}" y1="{y:.1}" x2="{right:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{}</text>"##,
            left - 6.0,
            y + 4.0,
            label(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"#,
        (left + right) / 2.0,
        bottom + 32.0,
        escape(&panel.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (plot_top + bottom) / 2.0,
        (plot_top + bottom) / 2.0,
        escape(&panel.y_label)
    );
    for (k, s) in panel.series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut points = String::new();
        for (x, y) in s.x.iter().zip(&s.y) {
            if x.is_finite() && y.is_finite() {
                let _ = write!(points, "{:.2},{:.2} ", sx(*x), sy(*y));
            }
        }
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
            points.trim_end()
        );
        let ly = plot_top + 14.0 + 16.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-size="11">{}</text>"#,
            right + 10.0,
            ly - 4.0,
            right + 30.0,
            ly - 4.0,
            right + 35.0,
            ly,
            escape(&s.label)
        );
    }
}

/// Panels stacked vertically in one SVG document.
pub fn render(panels: &[Panel]) -> String {
    let height = PANEL_H * panels.len() as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W}" height="{height}" viewBox="0 0 {PANEL_W} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        draw_panel(&mut out, p, PANEL_H * i as f64);
    }
    out.push_str("</svg>\n");
    out
}

fn column(table: &CsvTable, name: &str) -> Result<Vec<f64>, String> {
    table.column(name).ok_or_else(|| format!("run CSV has no column '{name}'"))
}

fn series(table: &CsvTable, x: &[f64], name: &str, label: &str) -> Result<Series, String> {
    Ok(Series { label: label.into(), x: x.to_vec(), y: column(table, name)? })
}

/// Terrain under the front wheel: height and slope against position.
pub fn terrain_figure(table: &CsvTable) -> Result<String, String> {
    let x = column(table, "terrain_x")?;
    Ok(render(&[
        Panel {
            title: "Terrain height".into(),
            x_label: "x (m)".into(),
            y_label: "h (m)".into(),
            series: vec![series(table, &x, "terrain_h", "height")?],
        },
        Panel {
            title: "Terrain slope".into(),
            x_label: "x (m)".into(),
            y_label: "dh/dx".into(),
            series: vec![series(table, &x, "terrain_slope", "slope")?],
        },
    ]))
}

/// Leg extensions and body height against time.
pub fn legs_figure(table: &CsvTable) -> Result<String, String> {
    let t = column(table, "t")?;
    Ok(render(&[
        Panel {
            title: "Leg extension".into(),
            x_label: "t (s)".into(),
            y_label: "extension (m)".into(),
            series: vec![
                series(table, &t, "leg_ext_front", "front")?,
                series(table, &t, "leg_ext_rear", "rear")?,
            ],
        },
        Panel {
            title: "Body height above wheels".into(),
            x_label: "t (s)".into(),
            y_label: "height (m)".into(),
            series: vec![
                series(table, &t, "height", "measured")?,
                series(table, &t, "height_ref", "reference")?,
            ],
        },
    ]))
}

/// Ground contact forces (true and estimated) and object forces.
pub fn forces_figure(table: &CsvTable) -> Result<String, String> {
    let t = column(table, "t")?;
    Ok(render(&[
        Panel {
            title: "Ground contact force, vertical".into(),
            x_label: "t (s)".into(),
            y_label: "force (N)".into(),
            series: vec![
                series(table, &t, "fC_true_front_z", "front true")?,
                series(table, &t, "fC_est_front_z", "front estimate")?,
                series(table, &t, "fC_true_rear_z", "rear true")?,
                series(table, &t, "fC_est_rear_z", "rear estimate")?,
            ],
        },
        Panel {
            title: "Object contact force, vertical".into(),
            x_label: "t (s)".into(),
            y_label: "force (N)".into(),
            series: vec![
                series(table, &t, "f_obj_L_z", "left load")?,
                series(table, &t, "f_obj_R_z", "right load")?,
            ],
        },
    ]))
}

/// File names and contents of every figure for one run.
pub fn all_figures(table: &CsvTable) -> Result<Vec<(&'static str, String)>, String> {
    Ok(vec![
        ("terrain.svg", terrain_figure(table)?),
        ("legs.svg", legs_figure(table)?),
        ("forces.svg", forces_figure(table)?),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_use_round_steps() {
        assert_eq!(ticks(0.0, 10.0), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        let t = ticks(-0.013, 0.021);
        assert_eq!(t.len(), 4, "{t:?}");
        assert!(t.windows(2).all(|w| ((w[1] - w[0]) - 0.01).abs() < 1e-12), "{t:?}");
    }

    #[test]
    fn flat_series_gets_a_nonzero_range() {
        let (lo, hi) = range([0.0, 0.0].into_iter());
        assert!(hi > lo);
    }

    #[test]
    fn render_is_well_formed() {
        let svg = render(&[Panel {
            title: "a < b".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![Series { label: "s".into(), x: vec![0.0, 1.0], y: vec![1.0, 2.0] }],
        }]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg.matches("<polyline").count(), 1);
    }

    #[test]
    fn missing_column_is_reported() {
        let table = CsvTable { columns: vec!["t".into()], rows: vec![vec![0.0]] };
        assert!(legs_figure(&table).unwrap_err().contains("leg_ext_front"));
    }
}
