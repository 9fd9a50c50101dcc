//! Parameter sweeps. Rows run in parallel; each owns its scenario, learner
//! and seeds, and results come back in (value, seed) order.

use rayon::prelude::*;

use crate::config::{Baseline, ExperimentConfig, ExperimentSpec, SweepAxis};
use crate::error::Result;
use crate::output::{line_chart_svg, ResultRow, Series};
use crate::pipeline::run_point;
use crate::stats::mean;

/// Configuration at one sweep point.
pub fn point_config(cfg: &ExperimentConfig, axis: SweepAxis, value: f64) -> Result<ExperimentConfig> {
    Ok(ExperimentConfig { scenario: axis.apply(&cfg.scenario, value)?, ..cfg.clone() })
}

pub fn run_row(cfg: &ExperimentConfig, axis: SweepAxis, value: f64, baseline: Baseline, seed: u64) -> ResultRow {
    let outcome = point_config(cfg, axis, value).and_then(|c| run_point(&c, baseline, seed));
    match outcome {
        Ok(p) => ResultRow {
            seed,
            axis_value: value,
            baseline: baseline.name().into(),
            worst_crlb: p.design.worst_crlb,
            nominal_crlb: p.design.nominal_crlb,
            r_sum: p.design.r_sum,
            violations: p.design.violations,
            rate_violations: p.design.rate_violations,
            seconds: p.seconds,
            error: None,
        },
        Err(e) => {
            log::error!("{axis}={value} seed {seed}: {e}");
            ResultRow::failed(seed, value, baseline.name(), e.to_string())
        }
    }
}

/// A failing row is recorded with its error and does not stop the sweep.
pub fn run_sweep(cfg: &ExperimentConfig, spec: &ExperimentSpec) -> Vec<ResultRow> {
    let jobs: Vec<(f64, u64)> =
        spec.values.iter().flat_map(|v| spec.seeds.iter().map(move |s| (*v, *s))).collect();
    jobs.par_iter().map(|&(v, s)| run_row(cfg, spec.axis, v, spec.baseline, s)).collect()
}

/// Per-value means over successful rows: `(value, worst, nominal)`.
pub fn summarize(rows: &[ResultRow], values: &[f64]) -> Vec<(f64, f64, f64)> {
    values
        .iter()
        .map(|v| {
            let ok: Vec<&ResultRow> = rows.iter().filter(|r| r.axis_value == *v && r.is_ok()).collect();
            let w: Vec<f64> = ok.iter().map(|r| r.worst_crlb).collect();
            let n: Vec<f64> = ok.iter().map(|r| r.nominal_crlb).collect();
            let m = |xs: &[f64]| if xs.is_empty() { f64::NAN } else { mean(xs) };
            (*v, m(&w), m(&n))
        })
        .collect()
}

pub fn sweep_chart(spec: &ExperimentSpec, rows: &[ResultRow]) -> String {
    let summary = summarize(rows, &spec.values);
    let series = vec![
        Series { label: format!("{} worst-case", spec.baseline), points: summary.iter().map(|s| (s.0, s.1)).collect() },
        Series { label: format!("{} no TS error", spec.baseline), points: summary.iter().map(|s| (s.0, s.2)).collect() },
    ];
    line_chart_svg(&format!("CRLB versus {}", spec.axis), spec.axis.name(), "mean tr(CRLB) [m²]", &series)
}
