//! Result persistence: CSV tables with fixed column order and a small SVG
//! line chart per sweep.

use std::fmt::Write as _;
use std::path::Path;

use cfisac_core::TsErrorMatrix;
use cfisac_metarl::meta::MetaLogRow;
use cfisac_metarl::train::LogRow;

use crate::error::Result;

pub const LOG_HEADER: [&str; 8] =
    ["episode", "step", "reward", "critic_loss_1", "critic_loss_2", "actor_loss", "worst_crlb", "rate_violations"];

pub const RESULT_HEADER: [&str; 9] =
    ["seed", "axis_value", "baseline", "worst_crlb", "nominal_crlb", "r_sum", "violations", "rate_violations", "error"];

/// One sweep point. Wall-clock time is kept out of the CSV so repeated
/// runs stay byte-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub seed: u64,
    pub axis_value: f64,
    pub baseline: String,
    pub worst_crlb: f64,
    pub nominal_crlb: f64,
    pub r_sum: f64,
    pub violations: usize,
    pub rate_violations: usize,
    pub seconds: f64,
    pub error: Option<String>,
}

impl ResultRow {
    pub fn failed(seed: u64, axis_value: f64, baseline: &str, error: String) -> Self {
        Self {
            seed,
            axis_value,
            baseline: baseline.into(),
            worst_crlb: f64::NAN,
            nominal_crlb: f64::NAN,
            r_sum: f64::NAN,
            violations: 0,
            rate_violations: 0,
            seconds: 0.0,
            error: Some(error),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

pub fn log_csv(rows: &[LogRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(LOG_HEADER)?;
    for r in rows {
        w.write_record([
            r.episode.to_string(),
            r.step.to_string(),
            r.reward.to_string(),
            opt(r.critic_loss_1),
            opt(r.critic_loss_2),
            opt(r.actor_loss),
            opt(r.worst_crlb),
            opt(r.rate_violations),
        ])?;
    }
    finish(w)
}

pub fn meta_log_csv(rows: &[MetaLogRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["outer", "task", "mean_reward", "val_critic_loss_1", "val_critic_loss_2", "val_actor_loss"])?;
    for r in rows {
        w.write_record([
            r.outer.to_string(),
            r.task.to_string(),
            r.mean_reward.to_string(),
            r.val_critic_loss[0].to_string(),
            r.val_critic_loss[1].to_string(),
            r.val_actor_loss.to_string(),
        ])?;
    }
    finish(w)
}

pub fn results_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULT_HEADER)?;
    for r in rows {
        w.write_record([
            r.seed.to_string(),
            num(r.axis_value),
            r.baseline.clone(),
            num(r.worst_crlb),
            num(r.nominal_crlb),
            num(r.r_sum),
            r.violations.to_string(),
            r.rate_violations.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    finish(w)
}

/// Outer-loop objective values of a worst-case solve.
pub fn trace_csv(trace: &[f64]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["outer", "objective"])?;
    for (i, v) in trace.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    finish(w)
}

pub fn ts_csv(ts: &TsErrorMatrix, num_tx: usize, num_rx: usize) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["tx_ap", "rx_ap", "ts_error_s"])?;
    for a in 0..num_tx {
        for b in 0..num_rx {
            w.write_record([a.to_string(), b.to_string(), ts.get(a, b).to_string()])?;
        }
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| crate::error::HarnessError::Runtime(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("CSV fields are UTF-8"))
}

pub fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// A named polyline for [`line_chart_svg`].
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Static line chart with a log10 y axis. Non-positive or non-finite y
/// values are skipped.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h, ml, mr, mt, mb) = (640.0, 420.0, 80.0, 170.0, 40.0, 60.0);
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(x, y)| x.is_finite() && y.is_finite() && *y > 0.0)
        .collect();
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, (ml + w - mr) / 2.0, escape(title));
    if pts.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let (mut x0, mut x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (mut y0, mut y1) =
        pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1.log10()), b.max(p.1.log10())));
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    y0 = y0.floor();
    y1 = y1.ceil().max(y0 + 1.0);
    let px = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let py = |y: f64| h - mb - (y.log10() - y0) / (y1 - y0) * (h - mt - mb);
    let _ = writeln!(
        svg,
        r#"<rect x="{ml}" y="{mt}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - ml - mr,
        h - mt - mb
    );
    for e in (y0 as i32)..=(y1 as i32) {
        let y = py(10f64.powi(e));
        let _ = writeln!(svg, r##"<line x1="{ml}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#ddd"/>"##, w - mr);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end">1e{e}</text>"#, ml - 6.0, y + 4.0);
    }
    let mut xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    for x in &xs {
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{}" text-anchor="middle">{x}</text>"#, px(*x), h - mb + 18.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (ml + w - mr) / 2.0, h - 15.0, escape(x_label));
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        (mt + h - mb) / 2.0,
        (mt + h - mb) / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let line: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite() && *y > 0.0)
            .map(|(x, y)| format!("{:.1},{:.1}", px(*x), py(*y)))
            .collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#, line.join(" "));
        for p in &line {
            let (cx, cy) = p.split_once(',').expect("x,y");
            let _ = writeln!(svg, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{colour}"/>"#);
        }
        let ly = mt + 16.0 + 18.0 * i as f64;
        let _ = writeln!(svg, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#, w - mr + 10.0, w - mr + 30.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, w - mr + 36.0, ly + 4.0, escape(&s.label));
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_csv_has_fixed_columns_and_blank_options() {
        let row = LogRow {
            episode: 1,
            step: 2,
            reward: -0.5,
            critic_loss_1: None,
            critic_loss_2: Some(0.25),
            actor_loss: None,
            worst_crlb: Some(1e-3),
            rate_violations: Some(0),
        };
        let text = log_csv(&[row]).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), LOG_HEADER.join(","));
        assert_eq!(lines.next().unwrap(), "1,2,-0.5,,0.25,,0.001,0");
    }

    #[test]
    fn results_quote_errors() {
        let r = ResultRow::failed(3, 20.0, "fpa", "bad, \"thing\"".into());
        let text = results_csv(&[r]).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "3,20,fpa,,,,0,0,\"bad, \"\"thing\"\"\"");
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let s = Series { label: "a<b".into(), points: vec![(1.0, 1e-3), (2.0, 1e-2), (3.0, -1.0)] };
        let svg = line_chart_svg("t", "x", "y", &[s]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert!(line_chart_svg("empty", "x", "y", &[]).contains("</svg>"));
    }
}
