use std::fmt::Write as _;
use std::path::Path;

use super::{AttackResult, EvalError, SweepResult};
use crate::atomic::write_atomic;

pub const CURVE_HEADER: &str = "step,accuracy,improvement_over_random";

/// `step,accuracy,improvement_over_random`, one row per evaluation point.
pub fn write_curve_csv(path: impl AsRef<Path>, result: &AttackResult) -> Result<(), EvalError> {
    let mut out = format!("{CURVE_HEADER}\n");
    for (step, acc) in &result.accuracy_curve {
        writeln!(out, "{step},{acc},{}", acc - result.random_baseline).expect("string write");
    }
    Ok(write_atomic(path, out.as_bytes())?)
}

/// `(step, accuracy)` pairs of a curve CSV.
pub fn read_curve_csv(path: impl AsRef<Path>) -> Result<Vec<(f64, f64)>, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if !header.starts_with("step,accuracy") {
        return Err(EvalError::Invalid(format!("{} is not an accuracy CSV (header `{header}`)", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let mut f = line.split(',');
            let parse = |v: Option<&str>| v.and_then(|s| s.trim().parse::<f64>().ok());
            match (parse(f.next()), parse(f.next())) {
                (Some(s), Some(a)) => Ok((s, a)),
                _ => Err(EvalError::Invalid(format!("{}:{}: malformed row `{line}`", path.display(), i + 2))),
            }
        })
        .collect()
}

pub fn write_summary_json(path: impl AsRef<Path>, value: &impl serde::Serialize) -> Result<(), EvalError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(write_atomic(path, &bytes)?)
}

pub fn write_sweep_csv(path: impl AsRef<Path>, sweep: &SweepResult) -> Result<(), EvalError> {
    let mut out = String::from("axis,value,runs,failures,mean_improvement,min_improvement,max_improvement,mean_accuracy\n");
    for p in &sweep.points {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            sweep.axis,
            p.value,
            p.runs.len(),
            p.failures.len(),
            p.mean_improvement,
            p.min_improvement,
            p.max_improvement,
            p.mean_accuracy
        )
        .expect("string write");
    }
    Ok(write_atomic(path, out.as_bytes())?)
}

/// One named polyline.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// A plain SVG line chart with one `<polyline>` per series.
pub fn svg_line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h, ml, mr, mt, mb) = (640.0, 400.0, 60.0, 150.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    y0 = y0.min(0.0);
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let (pw, ph) = (w - ml - mr, h - mt - mb);
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| mt + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).unwrap();
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#, ml + pw / 2.0, escape(title)).unwrap();
    writeln!(s, r#"<line x1="{ml}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, mt + ph, ml + pw, mt + ph).unwrap();
    writeln!(s, r#"<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{}" stroke="black"/>"#, mt + ph).unwrap();
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#, sx(xv), mt + ph + 16.0, tick(xv)).unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#, ml - 6.0, sy(yv) + 4.0, tick(yv)).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#, ml + pw / 2.0, h - 10.0, escape(x_label)).unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{0}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {0})">{1}</text>"#,
        mt + ph / 2.0,
        escape(y_label)
    )
    .unwrap();
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, coords.join(" ")).unwrap();
        let ly = mt + 14.0 + 18.0 * i as f64;
        writeln!(s, r#"<line x1="{0}" y1="{ly}" x2="{1}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, w - mr + 10.0, w - mr + 30.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#, w - mr + 35.0, ly + 4.0, escape(&ser.name)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}
