//! Minimal SVG line/scatter plots from CSV tables.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
    "#17becf",
];

/// A CSV file with a header row; empty or unparsable cells become `None`.
#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            rows.push(rec.iter().map(|c| c.trim().parse::<f64>().ok()).collect());
        }
        Ok(Self { headers, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("no column '{name}' (have: {})", self.headers.join(", ")))
    }

    fn pairs(&self, x: usize, y: usize) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| match (r.get(x).copied().flatten(), r.get(y).copied().flatten()) {
                (Some(a), Some(b)) if a.is_finite() && b.is_finite() => Some((a, b)),
                _ => None,
            })
            .collect()
    }

    /// True for rollout/baseline trajectory files (`s, z0, …`).
    pub fn is_trajectory(&self) -> bool {
        self.headers.first().is_some_and(|h| h == "s") && self.headers.iter().any(|h| h == "z0")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    Line,
    Scatter,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub mark: Mark,
    pub series: Vec<Series>,
    /// Same scale on both axes (trajectories in the plane).
    pub equal_aspect: bool,
}

/// One polyline per agent, using the first two coordinates of each
/// `agent_dim`-sized block of the state columns.
pub fn trajectory_figure(table: &Table, agent_dim: usize, title: &str) -> Result<Figure> {
    if agent_dim < 2 {
        bail!("agent dimension must be at least 2 to draw planar paths");
    }
    let d = table
        .headers
        .iter()
        .filter(|h| h.strip_prefix('z').is_some_and(|i| i.parse::<usize>().is_ok()))
        .count();
    if d == 0 || d % agent_dim != 0 {
        bail!("state dimension {d} is not a multiple of the agent dimension {agent_dim}");
    }
    let mut series = Vec::with_capacity(d / agent_dim);
    for agent in 0..d / agent_dim {
        let x = table.column(&format!("z{}", agent * agent_dim))?;
        let y = table.column(&format!("z{}", agent * agent_dim + 1))?;
        series.push(Series {
            name: format!("agent {agent}"),
            points: table.pairs(x, y),
        });
    }
    Ok(Figure {
        title: title.to_string(),
        x_label: "x".into(),
        y_label: "y".into(),
        mark: Mark::Line,
        series,
        equal_aspect: true,
    })
}

/// `ys` against `x`, one series per y column.
pub fn column_figure(table: &Table, x: &str, ys: &[String], mark: Mark, title: &str) -> Result<Figure> {
    if ys.is_empty() {
        bail!("need at least one y column");
    }
    let xi = table.column(x)?;
    let series = ys
        .iter()
        .map(|y| {
            Ok(Series {
                name: y.clone(),
                points: table.pairs(xi, table.column(y)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Figure {
        title: title.to_string(),
        x_label: x.to_string(),
        y_label: if ys.len() == 1 { ys[0].clone() } else { String::new() },
        mark,
        series,
        equal_aspect: false,
    })
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Roughly five round tick values covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

impl Figure {
    fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in self.series.iter().flat_map(|s| &s.points) {
            b = (b.0.min(x), b.1.max(x), b.2.min(y), b.3.max(y));
        }
        if !b.0.is_finite() {
            return (0.0, 1.0, 0.0, 1.0);
        }
        let pad = |lo: f64, hi: f64| {
            if hi - lo < 1e-12 {
                let w = lo.abs().max(1.0) * 0.05;
                (lo - w, hi + w)
            } else {
                let w = 0.04 * (hi - lo);
                (lo - w, hi + w)
            }
        };
        let (x0, x1) = pad(b.0, b.1);
        let (y0, y1) = pad(b.2, b.3);
        if !self.equal_aspect {
            return (x0, x1, y0, y1);
        }
        let pw = WIDTH - MARGIN_L - MARGIN_R;
        let ph = HEIGHT - MARGIN_T - MARGIN_B;
        let scale = ((x1 - x0) / pw).max((y1 - y0) / ph);
        let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
        (
            cx - 0.5 * scale * pw,
            cx + 0.5 * scale * pw,
            cy - 0.5 * scale * ph,
            cy + 0.5 * scale * ph,
        )
    }

    pub fn to_svg(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let pw = WIDTH - MARGIN_L - MARGIN_R;
        let ph = HEIGHT - MARGIN_T - MARGIN_B;
        let px = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
        let py = |y: f64| MARGIN_T + ph - (y - y0) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            MARGIN_L + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        s.push_str("<g class=\"ticks\" stroke=\"#ddd\">\n");
        for t in ticks(x0, x1) {
            let _ = writeln!(
                s,
                r#"<line x1="{0:.2}" y1="{MARGIN_T}" x2="{0:.2}" y2="{1:.2}"/>"#,
                px(t),
                MARGIN_T + ph
            );
        }
        for t in ticks(y0, y1) {
            let _ = writeln!(
                s,
                r#"<line x1="{MARGIN_L}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}"/>"#,
                py(t),
                MARGIN_L + pw
            );
        }
        s.push_str("</g>\n<g class=\"labels\">\n");
        for t in ticks(x0, x1) {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                px(t),
                MARGIN_T + ph + 16.0,
                fmt_tick(t)
            );
        }
        for t in ticks(y0, y1) {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                MARGIN_L - 6.0,
                py(t) + 4.0,
                fmt_tick(t)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            MARGIN_L + pw / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{0:.2}" text-anchor="middle" transform="rotate(-90 16 {0:.2})">{1}</text>"#,
            MARGIN_T + ph / 2.0,
            escape(&self.y_label)
        );
        s.push_str("</g>\n");

        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            match self.mark {
                Mark::Line => {
                    let pts: Vec<String> = series
                        .points
                        .iter()
                        .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                        .collect();
                    let _ = writeln!(
                        s,
                        r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
                        pts.join(" "),
                        escape(&series.name)
                    );
                }
                Mark::Scatter => {
                    let _ = writeln!(s, r#"<g fill="{color}"><title>{}</title>"#, escape(&series.name));
                    for &(x, y) in &series.points {
                        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3"/>"#, px(x), py(y));
                    }
                    s.push_str("</g>\n");
                }
            }
        }

        // Legend, truncated for large swarms.
        let max_entries = ((HEIGHT - MARGIN_T) / 16.0) as usize - 1;
        let lx = MARGIN_L + pw + 12.0;
        for (i, series) in self.series.iter().take(max_entries).enumerate() {
            let y = MARGIN_T + 8.0 + 16.0 * i as f64;
            let color = PALETTE[i % PALETTE.len()];
            let _ = writeln!(
                s,
                r#"<rect x="{lx:.2}" y="{:.2}" width="10" height="10" fill="{color}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
                y - 8.0,
                lx + 14.0,
                y + 1.0,
                escape(&series.name)
            );
        }
        if self.series.len() > max_entries {
            let _ = writeln!(
                s,
                r#"<text x="{lx:.2}" y="{:.2}">+{} more</text>"#,
                MARGIN_T + 8.0 + 16.0 * max_entries as f64,
                self.series.len() - max_entries
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_and_cover_range() {
        let t = ticks(-0.3, 4.2);
        assert_eq!(t, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let t = ticks(0.01, 0.049);
        assert!(t.len() >= 3 && t.iter().all(|v| (0.01..=0.049).contains(v)));
    }

    #[test]
    fn labels_are_escaped() {
        assert_eq!(escape("a<b & \"c\""), "a&lt;b &amp; &quot;c&quot;");
    }

    #[test]
    fn degenerate_series_still_renders() {
        let fig = Figure {
            title: "flat".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            mark: Mark::Scatter,
            series: vec![Series {
                name: "one".into(),
                points: vec![(1.0, 1.0)],
            }],
            equal_aspect: false,
        };
        let svg = fig.to_svg();
        assert!(svg.contains("<circle") && !svg.contains("NaN"));
    }
}
