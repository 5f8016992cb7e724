use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::experiment::{RunReport, SweepEntry};

fn csv_err(e: csv::Error) -> Error {
    Error::Invalid(format!("csv: {e}"))
}

fn f(x: f64) -> String {
    format!("{x:.6}")
}

/// One row per (run, seed, target) plus the seed aggregate. Timing is left
/// out so repeated runs give identical bytes.
pub fn metrics_table(reports: &[RunReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run", "seed", "target", "macro_f1"])
        .map_err(csv_err)?;
    for r in reports {
        for run in &r.runs {
            for (t, v) in &run.test.per_target {
                w.write_record([&r.name, &run.seed.to_string(), t, &f(*v)])
                    .map_err(csv_err)?;
            }
            w.write_record([
                &r.name,
                &run.seed.to_string(),
                "ALL",
                &f(run.test.aggregate),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(w)
}

/// Mean and standard deviation per run, plus per-target means.
pub fn summary_table(reports: &[RunReport]) -> Result<String> {
    let targets: std::collections::BTreeSet<&String> = reports
        .iter()
        .flat_map(|r| r.per_target_mean.keys())
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "run".to_string(),
        "seeds".into(),
        "failed".into(),
        "mean".into(),
        "std".into(),
    ];
    header.extend(targets.iter().map(|t| format!("mean_{t}")));
    w.write_record(&header).map_err(csv_err)?;
    for r in reports {
        let mut row = vec![
            r.name.clone(),
            r.runs.len().to_string(),
            r.failures.len().to_string(),
            f(r.mean),
            f(r.std),
        ];
        row.extend(
            targets
                .iter()
                .map(|t| r.per_target_mean.get(*t).map(|v| f(*v)).unwrap_or_default()),
        );
        w.write_record(&row).map_err(csv_err)?;
    }
    finish(w)
}

pub fn sweep_table(entries: &[SweepEntry]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "prompt_tokens",
        "param_count",
        "prompt_param_count",
        "seeds",
        "mean",
        "std",
    ])
    .map_err(csv_err)?;
    for e in entries {
        w.write_record([
            e.prompt_tokens.to_string(),
            e.param_count.to_string(),
            e.prompt_param_count.to_string(),
            e.report.runs.len().to_string(),
            f(e.report.mean),
            f(e.report.std),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Invalid(e.to_string()))
}

/// Line chart of mean macro-F1 against λ with ±std bars.
pub fn sweep_chart(entries: &[SweepEntry]) -> String {
    let (w, h, pad) = (480.0, 320.0, 48.0);
    let xs: Vec<f64> = entries.iter().map(|e| e.prompt_tokens as f64).collect();
    let (x0, x1) = (
        xs.iter().cloned().fold(f64::INFINITY, f64::min),
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let span = if x1 > x0 { x1 - x0 } else { 1.0 };
    let px = |x: f64| pad + (x - x0) / span * (w - 2.0 * pad);
    let py = |y: f64| h - pad - y.clamp(0.0, 1.0) * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{b}" stroke="black"/>"#,
        b = h - pad,
        r = w - pad
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{tick:.2}</text>"#,
            pad - 4.0,
            py(tick) + 3.0
        );
    }
    let points: Vec<String> = entries
        .iter()
        .map(|e| format!("{:.1},{:.1}", px(e.prompt_tokens as f64), py(e.report.mean)))
        .collect();
    let _ = writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
        points.join(" ")
    );
    for e in entries {
        let x = px(e.prompt_tokens as f64);
        let (lo, hi) = (e.report.mean - e.report.std, e.report.mean + e.report.std);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#1f77b4"/><circle cx="{x:.1}" cy="{:.1}" r="3" fill="#1f77b4"/>"##,
            py(lo),
            py(hi),
            py(e.report.mean)
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"#,
            h - pad + 14.0,
            e.prompt_tokens
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">visual prompt tokens</text>"#,
        w / 2.0,
        h - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.1})">macro-F1</text>"#,
        h / 2.0,
        h / 2.0
    );
    s.push_str("</svg>\n");
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_json<S: serde::Serialize>(path: &Path, value: &S) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}
