use std::fmt::Write;
use std::path::Path;

use super::config::Mode;
use super::sweep::{read_frontier_csv, read_points_csv, SweepRow};
use crate::error::Result;

const W: f64 = 800.0;
const H: f64 = 600.0;
const PAD_L: f64 = 70.0;
const PAD_R: f64 = 110.0;
const PAD_T: f64 = 30.0;
const PAD_B: f64 = 60.0;

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    /// Data range widened by 5% on each side.
    fn fit(values: impl Iterator<Item = f64>) -> Axis {
        let (mut lo, mut hi) = values
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if lo > hi {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let m = 0.05 * (hi - lo);
        Axis { lo: lo - m, hi: hi + m }
    }

    fn frac(&self, v: f64) -> f64 {
        (v - self.lo) / (self.hi - self.lo)
    }
}

fn px(ax: &Axis, v: f64) -> f64 {
    PAD_L + ax.frac(v.clamp(ax.lo, ax.hi)) * (W - PAD_L - PAD_R)
}

fn py(ay: &Axis, v: f64) -> f64 {
    H - PAD_B - ay.frac(v.clamp(ay.lo, ay.hi)) * (H - PAD_T - PAD_B)
}

/// Blue (low noise) to red (high noise).
fn color(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let r = (40.0 + 200.0 * t).round() as u8;
    let b = (240.0 - 200.0 * t).round() as u8;
    format!("#{r:02x}40{b:02x}")
}

/// SVG scatter of `(i_past, i_future)` with horizontal bars from the past
/// lower to upper bound, colour keyed by `log10(eval sigma)`, circles for
/// noise-trained and triangles for post-hoc rows. Depends only on its
/// inputs.
pub fn render_svg(rows: &[SweepRow], frontier: Option<&[(f64, f64)]>) -> String {
    let f = frontier.unwrap_or(&[]);
    let ax = Axis::fit(
        rows.iter()
            .flat_map(|r| [r.i_past_lower, r.i_past_upper])
            .chain(f.iter().map(|p| p.0))
            .chain(std::iter::once(0.0)),
    );
    let ay = Axis::fit(
        rows.iter()
            .map(|r| r.i_future_nce)
            .chain(f.iter().map(|p| p.1))
            .chain(std::iter::once(0.0)),
    );
    let logs: Vec<f64> = rows
        .iter()
        .map(|r| r.eval_noise_sigma.log10())
        .filter(|v| v.is_finite())
        .collect();
    let (cmin, cmax) = logs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (PAD_L, W - PAD_R, H - PAD_B, PAD_T);
    let _ = writeln!(s, r#"<g stroke="black" stroke-width="1">"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/>"#);
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g font-family="sans-serif" font-size="11">"#);
    for i in 0..=5 {
        let vx = ax.lo + (ax.hi - ax.lo) * i as f64 / 5.0;
        let vy = ay.lo + (ay.hi - ay.lo) * i as f64 / 5.0;
        let (tx, ty) = (px(&ax, vx), py(&ay, vy));
        let _ = writeln!(s, r#"<line x1="{tx:.2}" y1="{y0}" x2="{tx:.2}" y2="{:.2}" stroke="black"/>"#, y0 + 5.0);
        let _ = writeln!(s, r#"<text x="{tx:.2}" y="{:.2}" text-anchor="middle">{vx:.2}</text>"#, y0 + 18.0);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{ty:.2}" x2="{x0}" y2="{ty:.2}" stroke="black"/>"#, x0 - 5.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{vy:.2}</text>"#, x0 - 8.0, ty + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">I(Z; X_past) [nats]</text>"#,
        (x0 + x1) / 2.0,
        H - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">I(Z; X_future) [nats]</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    let _ = writeln!(s, "</g>");

    if !f.is_empty() {
        let pts: Vec<String> = f.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(&ax, x), py(&ay, y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="black" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
    }

    for r in rows {
        let t = if cmax > cmin { (r.eval_noise_sigma.log10() - cmin) / (cmax - cmin) } else { 0.0 };
        let c = color(t);
        let xl = px(&ax, r.i_past_lower);
        let xu = if r.i_past_upper.is_finite() { px(&ax, r.i_past_upper) } else { x1 };
        let y = py(&ay, r.i_future_nce);
        let xm = if r.i_past_upper.is_finite() { 0.5 * (xl + xu) } else { xl };
        let _ = writeln!(s, r#"<line x1="{xl:.2}" y1="{y:.2}" x2="{xu:.2}" y2="{y:.2}" stroke="{c}" stroke-width="1.5"/>"#);
        match r.mode {
            Some(Mode::PosthocNoise) => {
                let _ = writeln!(
                    s,
                    r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{c}"/>"#,
                    xm - 5.0,
                    y - 4.0,
                    xm + 5.0,
                    y - 4.0,
                    xm,
                    y + 5.0
                );
            }
            _ => {
                let _ = writeln!(s, r#"<circle cx="{xm:.2}" cy="{y:.2}" r="4.5" fill="{c}"/>"#);
            }
        }
    }

    if cmax >= cmin {
        let _ = writeln!(s, r#"<g font-family="sans-serif" font-size="11">"#);
        let lx = W - PAD_R + 20.0;
        let _ = writeln!(s, r#"<text x="{lx}" y="{PAD_T}">log10 sigma</text>"#);
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let y = PAD_T + 15.0 + 20.0 * i as f64;
            let _ = writeln!(s, r#"<rect x="{lx}" y="{y}" width="12" height="12" fill="{}"/>"#, color(t));
            let _ = writeln!(s, r#"<text x="{}" y="{}">{:.2}</text>"#, lx + 18.0, y + 10.0, cmin + t * (cmax - cmin));
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

/// Read the points (and optional frontier) CSV files and write the SVG.
pub fn emit_plot(points: &Path, frontier: Option<&Path>, out: &Path) -> Result<()> {
    let rows = read_points_csv(std::fs::File::open(points)?)?;
    let f = match frontier {
        Some(p) => Some(read_frontier_csv(std::fs::File::open(p)?)?),
        None => None,
    };
    std::fs::write(out, render_svg(&rows, f.as_deref()))?;
    Ok(())
}
