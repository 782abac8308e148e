//! Static SVG figures: per-exercise %ROM forest plot and angle traces.

use std::fmt::Write;

use crate::inference::PercentRomResult;
use crate::kinematics::AngleSeries;
use crate::segmentation::Detection;

const WIDTH: f64 = 720.0;
const MARGIN_L: f64 = 190.0;
const MARGIN_R: f64 = 30.0;
const ROW_H: f64 = 28.0;

fn header(out: &mut String, w: f64, h: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

/// Exercise %ROM with bootstrap intervals, plus the overall estimate as a
/// dashed reference line. BH-significant rows are drawn in red.
pub fn forest_plot(result: &PercentRomResult<f64>, alpha: f64) -> String {
    let rows = &result.per_exercise;
    let h = 70.0 + ROW_H * (rows.len() as f64 + 1.0);
    let lo = rows
        .iter()
        .map(|r| r.ci_low)
        .chain([result.overall_ci_low])
        .fold(f64::INFINITY, f64::min);
    let hi = rows
        .iter()
        .map(|r| r.ci_high)
        .chain([result.overall_ci_high])
        .fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = ((lo / 10.0).floor() * 10.0, (hi / 10.0).ceil() * 10.0);
    let span = (hi - lo).max(1.0);
    let x = |v: f64| MARGIN_L + (v - lo) / span * (WIDTH - MARGIN_L - MARGIN_R);
    let top = 30.0;
    let bottom = top + ROW_H * (rows.len() as f64 + 1.0);

    let mut out = String::new();
    header(&mut out, WIDTH, h);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle">% of full ROM (95% bootstrap CI)</text>"#,
        fmt(WIDTH / 2.0)
    );
    let xo = x(result.overall_pct_rom);
    let _ = writeln!(
        out,
        r##"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="#888" stroke-dasharray="4 3"/>"##,
        fmt(xo),
        fmt(top),
        fmt(bottom)
    );
    let mut draw = |label: &str, est: f64, l: f64, u: f64, y: f64, colour: &str| {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            fmt(MARGIN_L - 10.0),
            fmt(y + 4.0),
            escape(label)
        );
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{2}" x2="{}" y2="{2}" stroke="{colour}" stroke-width="1.5"/>"#,
            fmt(x(l)),
            fmt(x(u)),
            fmt(y)
        );
        let _ = writeln!(out, r#"<circle cx="{}" cy="{}" r="4" fill="{colour}"/>"#, fmt(x(est)), fmt(y));
    };
    for (i, r) in rows.iter().enumerate() {
        let colour = if r.p_bh < alpha { "#c0392b" } else { "#222" };
        draw(
            &r.exercise,
            r.pct_rom_e,
            r.ci_low,
            r.ci_high,
            top + ROW_H * (i as f64 + 0.5),
            colour,
        );
    }
    draw(
        "Overall",
        result.overall_pct_rom,
        result.overall_ci_low,
        result.overall_ci_high,
        top + ROW_H * (rows.len() as f64 + 0.5),
        "#1f4e9c",
    );
    let _ = writeln!(
        out,
        r##"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="#222"/>"##,
        fmt(x(lo)),
        fmt(bottom),
        fmt(x(hi))
    );
    let ticks = 5;
    for t in 0..=ticks {
        let v = lo + span * t as f64 / ticks as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            fmt(x(v)),
            fmt(bottom + 16.0),
            format!("{v:.0}")
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Conditioned angle trace with the detected troughs marked.
pub fn angle_trace_plot(title: &str, series: &AngleSeries<f64>, detection: &Detection<f64>) -> String {
    let (w, h) = (WIDTH, 300.0);
    let (ml, mr, mt, mb) = (50.0, 20.0, 30.0, 35.0);
    let pts: Vec<(f64, f64)> = series.samples().iter().filter_map(|s| s.angle.map(|a| (s.timestamp, a))).collect();
    let mut out = String::new();
    header(&mut out, w, h);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle">{}</text>"#,
        fmt(w / 2.0),
        escape(title)
    );
    if pts.is_empty() {
        out.push_str("</svg>\n");
        return out;
    }
    let t0 = series.samples().first().map_or(0.0, |s| s.timestamp);
    let t1 = series.samples().last().map_or(1.0, |s| s.timestamp).max(t0 + 1e-9);
    let amin = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let amax = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).max(amin + 1.0);
    let x = |t: f64| ml + (t - t0) / (t1 - t0) * (w - ml - mr);
    let y = |a: f64| mt + (amax - a) / (amax - amin) * (h - mt - mb);
    let path: Vec<String> = pts.iter().map(|&(t, a)| format!("{},{}", fmt(x(t)), fmt(y(a)))).collect();
    let _ = writeln!(
        out,
        r##"<polyline fill="none" stroke="#1f4e9c" stroke-width="1" points="{}"/>"##,
        path.join(" ")
    );
    for tr in &detection.troughs {
        let _ = writeln!(
            out,
            r##"<circle cx="{}" cy="{}" r="3.5" fill="#c0392b"/>"##,
            fmt(x(tr.time)),
            fmt(y(tr.angle))
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">time (s)</text>"#,
        fmt(w / 2.0),
        fmt(h - 6.0)
    );
    let _ = writeln!(out, r#"<text x="8" y="{}">{}°</text>"#, fmt(mt + 4.0), format!("{amax:.0}"));
    let _ = writeln!(out, r#"<text x="8" y="{}">{}°</text>"#, fmt(h - mb), format!("{amin:.0}"));
    out.push_str("</svg>\n");
    out
}
