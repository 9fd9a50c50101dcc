//! Worst-case TS errors: Riemannian conjugate gradient on the unit-modulus
//! phasor manifold followed by projection back onto physical delays.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{CVector, MaLayout};
use crate::crlb::{phasor_from_ts, PhasorVector, SensingModel, TsErrorMatrix};
use crate::error::{Error, Result};
use crate::metrics::BeamformingSet;
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ManifoldSolverConfig {
    pub max_outer: usize,
    pub max_cg_iters: usize,
    pub grad_tol: f64,
    pub armijo_c1: f64,
    pub armijo_shrink: f64,
    pub armijo_init_step: f64,
    pub armijo_max_backtracks: usize,
    /// Relative change of the outer objective below which the loop stops.
    pub outer_tol: f64,
    /// Random feasible starting points tried besides the nominal point and the box centre.
    pub random_starts: usize,
    /// Objective evaluations per receiver spent on a coarse grid over its delays.
    pub grid_budget: usize,
    /// Best grid points kept as additional starting points.
    pub grid_starts: usize,
    /// Projected-gradient iterations spent polishing each recovered delay matrix.
    pub refine_iters: usize,
    pub seed: u64,
}

impl Default for ManifoldSolverConfig {
    fn default() -> Self {
        Self {
            max_outer: 20,
            max_cg_iters: 500,
            grad_tol: 1e-6,
            armijo_c1: 1e-4,
            armijo_shrink: 0.5,
            armijo_init_step: 1.0,
            armijo_max_backtracks: 50,
            outer_tol: 1e-6,
            random_starts: 2,
            grid_budget: 4096,
            grid_starts: 4,
            refine_iters: 200,
            seed: 0,
        }
    }
}

impl ManifoldSolverConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.armijo_c1) {
            return Err(Error::Config(format!("armijo_c1 must lie in (0,1), got {}", self.armijo_c1)));
        }
        if !open_unit(self.armijo_shrink) {
            return Err(Error::Config(format!("armijo_shrink must lie in (0,1), got {}", self.armijo_shrink)));
        }
        for (name, v) in [
            ("grad_tol", self.grad_tol),
            ("outer_tol", self.outer_tol),
            ("armijo_init_step", self.armijo_init_step),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_cg_iters == 0 || self.max_outer == 0 || self.armijo_max_backtracks == 0 {
            return Err(Error::Config("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

/// Real inner product `Re{aᴴ b}` that makes ℂⁿ a Euclidean space.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

pub fn norm(a: &[Complex64]) -> f64 {
    inner(a, a).sqrt()
}

/// `g − Re{g ⊙ ϑ*} ⊙ ϑ`.
pub fn project_tangent(theta: &[Complex64], g: &[Complex64]) -> CVector {
    theta
        .iter()
        .zip(g)
        .map(|(t, gi)| gi - t * (gi * t.conj()).re)
        .collect()
}

/// Entrywise renormalisation of `ϑ + step·d`.
pub fn retract(theta: &[Complex64], direction: &[Complex64], step: f64) -> Result<CVector> {
    theta
        .iter()
        .zip(direction)
        .map(|(t, d)| {
            let z = t + d * step;
            let r = z.norm();
            if r == 0.0 || !r.is_finite() {
                Err(Error::Domain("retraction hit the origin".into()))
            } else {
                Ok(z / r)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgIterate {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub point: CVector,
    pub objective: f64,
    pub grad_norm: f64,
    pub trace: Vec<CgIterate>,
    pub converged: bool,
    pub stalled: bool,
    /// Times the Polak–Ribière direction was discarded for steepest ascent.
    pub direction_resets: usize,
}

/// Maximise `objective` over the unit-modulus manifold. `gradient` returns the
/// Euclidean gradient `∂/∂Re + j ∂/∂Im`. Trial points with a non-finite
/// objective are treated as failed steps.
pub fn riemannian_cg_maximize<F, G>(
    mut objective: F,
    mut gradient: G,
    theta0: &[Complex64],
    cfg: &ManifoldSolverConfig,
) -> Result<CgOutcome>
where
    F: FnMut(&[Complex64]) -> Result<f64>,
    G: FnMut(&[Complex64]) -> Result<CVector>,
{
    cfg.validate()?;
    let mut x = theta0.to_vec();
    let mut fx = objective(&x)?;
    if !fx.is_finite() {
        return Err(Error::Domain("objective is not finite at the starting point".into()));
    }
    let mut g = project_tangent(&x, &gradient(&x)?);
    let mut gn = norm(&g);
    let mut trace = vec![CgIterate { iteration: 0, objective: fx, grad_norm: gn, step: 0.0 }];
    let mut d = g.clone();
    let mut last_step: Option<f64> = None;
    let mut failures = 0;
    let (mut converged, mut stalled, mut direction_resets) = (false, false, 0);

    for iteration in 1..=cfg.max_cg_iters {
        if gn < cfg.grad_tol {
            converged = true;
            break;
        }
        let mut slope = inner(&g, &d);
        if slope <= 0.0 {
            d = g.clone();
            slope = gn * gn;
            direction_resets += 1;
        }
        let dn = norm(&d);
        let base = cfg.armijo_init_step / dn;
        let mut alpha = last_step.map_or(base, |s| s.min(base * 1e3));
        let mut accepted = None;
        for trial in 0..cfg.armijo_max_backtracks {
            if let Ok(xn) = retract(&x, &d, alpha) {
                let fnew = objective(&xn)?;
                // a strict gain is demanded too: at the rounding floor the
                // Armijo bound alone accepts steps that change nothing
                if fnew.is_finite() && fnew > fx && fnew >= fx + cfg.armijo_c1 * alpha * slope {
                    accepted = Some((xn, fnew));
                    if trial == 0 {
                        // first trial already sufficient: grow the step while it keeps paying off
                        while let Some((xn, fnew)) = accepted.as_ref() {
                            let grown = alpha / cfg.armijo_shrink;
                            let Ok(xg) = retract(&x, &d, grown) else { break };
                            let fg = objective(&xg)?;
                            if !(fg.is_finite() && fg > *fnew && fg >= fx + cfg.armijo_c1 * grown * slope) {
                                break;
                            }
                            let _ = xn;
                            accepted = Some((xg, fg));
                            alpha = grown;
                            if alpha * dn > std::f64::consts::PI {
                                break;
                            }
                        }
                    }
                    // refine towards the 1-D maximiser with a quadratic fit through
                    // f(0), f'(0) and f(α); conjugacy depends on a near-exact search
                    for _ in 0..2 {
                        let f_alpha = accepted.as_ref().map_or(fx, |a| a.1);
                        let curvature = fx + slope * alpha - f_alpha;
                        if !(curvature > 0.0) {
                            break;
                        }
                        let fit = slope * alpha * alpha / (2.0 * curvature);
                        if !(fit > 0.0) || (fit / alpha - 1.0).abs() < 1e-3 {
                            break;
                        }
                        let Ok(xq) = retract(&x, &d, fit) else { break };
                        let fq = objective(&xq)?;
                        if fq.is_finite() && fq > f_alpha && fq >= fx + cfg.armijo_c1 * fit * slope {
                            accepted = Some((xq, fq));
                            alpha = fit;
                        } else {
                            break;
                        }
                    }
                    break;
                }
            }
            alpha *= cfg.armijo_shrink;
        }
        let Some((xn, fnew)) = accepted else {
            failures += 1;
            if failures >= 2 {
                stalled = true;
                break;
            }
            d = g.clone();
            last_step = None;
            continue;
        };
        failures = 0;
        last_step = Some(alpha);
        let gnew = project_tangent(&xn, &gradient(&xn)?);
        let g_moved = project_tangent(&xn, &g);
        let diff: CVector = gnew.iter().zip(&g_moved).map(|(a, b)| a - b).collect();
        let beta = (inner(&gnew, &diff) / (gn * gn)).max(0.0);
        let d_moved = project_tangent(&xn, &d);
        d = gnew.iter().zip(&d_moved).map(|(a, b)| a + b * beta).collect();
        x = xn;
        fx = fnew;
        g = gnew;
        gn = norm(&g);
        trace.push(CgIterate { iteration, objective: fx, grad_norm: gn, step: alpha });
    }
    if gn < cfg.grad_tol {
        converged = true;
    }
    Ok(CgOutcome { point: x, objective: fx, grad_norm: gn, trace, converged, stalled, direction_resets })
}

/// `iteration,objective,grad_norm,step` rows.
pub fn trace_csv(trace: &[CgIterate]) -> String {
    let mut out = String::from("iteration,objective,grad_norm,step\n");
    for t in trace {
        let _ = writeln!(out, "{},{:e},{:e},{:e}", t.iteration, t.objective, t.grad_norm, t.step);
    }
    out
}

/// Angles of the samples, unwrapped along frequency.
pub fn unwrapped_angles(samples: &[Complex64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(samples.len());
    for z in samples {
        let raw = z.arg();
        let v = match out.last() {
            None => raw,
            Some(prev) => prev + (raw - prev + std::f64::consts::PI).rem_euclid(TAU) - std::f64::consts::PI,
        };
        out.push(v);
    }
    out
}

/// Best fit of `τ̄` to unwrapped angles over all `2π` branch offsets:
/// minimises `Σ_s (θ_s + 2πm + 2π f_s τ̄)²` over integer `m` and the box.
pub fn fit_delay(theta: &[f64], freq_grid: &[f64], bounds: [f64; 2]) -> f64 {
    let residual = |shift: f64, tau: f64| -> f64 {
        theta
            .iter()
            .zip(freq_grid)
            .map(|(t, f)| (t + shift + TAU * f * tau).powi(2))
            .sum()
    };
    let sum_f2: f64 = freq_grid.iter().map(|f| f * f).sum();
    if sum_f2 == 0.0 {
        return bounds[0];
    }
    let n = theta.len() as f64;
    let mean_f = freq_grid.iter().sum::<f64>() / n;
    let mean_t = theta.iter().sum::<f64>() / n;
    // offsets that can place the mean phase anywhere along the box
    let m_at = |tau: f64| (-TAU * mean_f * tau - mean_t) / TAU;
    let (lo, hi) = {
        let (a, b) = (m_at(bounds[0]), m_at(bounds[1]));
        (a.min(b).floor() as i64 - 2, a.max(b).ceil() as i64 + 2)
    };
    let mut best = (f64::INFINITY, bounds[0]);
    for m in lo..=hi {
        let shift = TAU * m as f64;
        let sum_ft: f64 = theta.iter().zip(freq_grid).map(|(t, f)| f * (t + shift)).sum();
        let tau = (-sum_ft / (TAU * sum_f2)).clamp(bounds[0], bounds[1]);
        let r = residual(shift, tau);
        if r < best.0 {
            best = (r, tau);
        }
    }
    best.1
}

/// Projects a manifold point onto physical delays, one `(a,b)` block at a time.
pub fn recover_ts(phasor: &PhasorVector, freq_grid: &[f64], bounds: [f64; 2]) -> TsErrorMatrix {
    TsErrorMatrix::from_fn(phasor.num_tx, phasor.num_rx, |a, b| {
        fit_delay(&unwrapped_angles(phasor.block(a, b)), freq_grid, bounds)
    })
}

#[derive(Debug, Clone)]
pub struct WorstCaseResult {
    /// Relaxed manifold maximiser (best block per receiver seen by the solver).
    pub phasor: PhasorVector,
    pub relaxed_crlb: f64,
    pub ts: TsErrorMatrix,
    /// Objective at `phasor_from_ts(ts)`.
    pub worst_crlb: f64,
    /// Outer-loop objective values at feasible points; non-decreasing.
    pub trace: Vec<f64>,
    pub cg_iterations: usize,
}

/// `∂L/∂τ̄_{a,b}` from the phasor gradient.
fn ts_gradient(model: &SensingModel, ts: &TsErrorMatrix, freq_grid: &[f64]) -> Result<TsErrorMatrix> {
    let phasor = phasor_from_ts(ts, freq_grid);
    let g = model.gradient(&phasor)?;
    Ok(TsErrorMatrix::from_fn(ts.num_tx, ts.num_rx, |a, b| {
        freq_grid
            .iter()
            .enumerate()
            .map(|(s, f)| {
                let k = phasor.index(a, b, s);
                let dtheta = Complex64::new(0.0, -TAU * f) * phasor.values[k];
                g[k].re * dtheta.re + g[k].im * dtheta.im
            })
            .sum()
    }))
}

/// Box-projected gradient ascent on the delays with Armijo backtracking.
fn refine_ts(
    model: &SensingModel,
    start: &TsErrorMatrix,
    freq_grid: &[f64],
    bounds: [f64; 2],
    cfg: &ManifoldSolverConfig,
) -> Result<(TsErrorMatrix, f64)> {
    let eval = |ts: &TsErrorMatrix| model.objective(&phasor_from_ts(ts, freq_grid));
    let mut ts = start.clone();
    let mut val = eval(&ts)?;
    let width = bounds[1] - bounds[0];
    if width <= 0.0 || !val.is_finite() {
        return Ok((ts, val));
    }
    let mut scale = 0.25 * width;
    for _ in 0..cfg.refine_iters {
        let grad = ts_gradient(model, &ts, freq_grid)?;
        let gmax = grad.values().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax == 0.0 {
            break;
        }
        let mut step = (2.0 * scale).min(0.25 * width) / gmax;
        let mut moved = false;
        for _ in 0..cfg.armijo_max_backtracks {
            let cand = TsErrorMatrix::from_fn(ts.num_tx, ts.num_rx, |a, b| {
                (ts.get(a, b) + step * grad.get(a, b)).clamp(bounds[0], bounds[1])
            });
            let gain: f64 = (0..ts.num_tx)
                .flat_map(|a| (0..ts.num_rx).map(move |b| (a, b)))
                .map(|(a, b)| grad.get(a, b) * (cand.get(a, b) - ts.get(a, b)))
                .sum();
            if gain <= 0.0 {
                break;
            }
            let v = eval(&cand)?;
            if v.is_finite() && v >= val + cfg.armijo_c1 * gain {
                scale = step * gmax;
                let rel = (v - val) / val.abs().max(f64::MIN_POSITIVE);
                ts = cand;
                val = v;
                moved = rel > 1e-14;
                break;
            }
            step *= cfg.armijo_shrink;
        }
        if !moved || scale < 1e-9 * width {
            break;
        }
    }
    Ok((ts, val))
}

/// Coarse grid over the delays of each receiver; the `i`-th returned start
/// combines the `i`-th best grid point of every receiver.
fn grid_starts(
    model: &SensingModel,
    freq_grid: &[f64],
    bounds: [f64; 2],
    cfg: &ManifoldSolverConfig,
) -> Vec<TsErrorMatrix> {
    let (num_tx, num_rx) = (model.num_tx(), model.num_rx());
    if cfg.grid_starts == 0 || cfg.grid_budget == 0 || bounds[1] <= bounds[0] {
        return Vec::new();
    }
    let per_dim = ((cfg.grid_budget as f64).powf(1.0 / num_tx as f64).floor() as usize).max(2);
    let total = per_dim.pow(num_tx as u32);
    let level = |i: usize| bounds[0] + (bounds[1] - bounds[0]) * i as f64 / (per_dim - 1) as f64;
    let mut ranked: Vec<Vec<Vec<f64>>> = Vec::with_capacity(num_rx);
    for b in 0..num_rx {
        let mut scored: Vec<(f64, Vec<f64>)> = (0..total)
            .map(|mut idx| {
                let point: Vec<f64> = (0..num_tx)
                    .map(|_| {
                        let l = level(idx % per_dim);
                        idx /= per_dim;
                        l
                    })
                    .collect();
                let ts = TsErrorMatrix::from_fn(num_tx, num_rx, |a, _| point[a]);
                let score = model
                    .receiver_fim(&phasor_from_ts(&ts, freq_grid), b)
                    .crlb_trace()
                    .unwrap_or(f64::NEG_INFINITY);
                (score, point)
            })
            .collect();
        scored.sort_by(|x, y| y.0.total_cmp(&x.0));
        ranked.push(scored.into_iter().take(cfg.grid_starts).map(|(_, p)| p).collect());
    }
    (0..cfg.grid_starts.min(total))
        .map(|i| TsErrorMatrix::from_fn(num_tx, num_rx, |a, b| ranked[b][i][a]))
        .collect()
}

struct StartOutcome {
    ts: TsErrorMatrix,
    trace: Vec<f64>,
    relaxed: Vec<PhasorVector>,
    cg_iterations: usize,
}

fn solve_from(
    model: &SensingModel,
    start: TsErrorMatrix,
    freq_grid: &[f64],
    bounds: [f64; 2],
    cfg: &ManifoldSolverConfig,
) -> Result<StartOutcome> {
    let eval = |ts: &TsErrorMatrix| model.objective(&phasor_from_ts(ts, freq_grid));
    let mut ts = start;
    let mut val = eval(&ts)?;
    let mut trace = vec![val];
    let mut relaxed = Vec::new();
    let mut cg_iterations = 0;
    for _ in 0..cfg.max_outer {
        let theta0 = phasor_from_ts(&ts, freq_grid);
        let cg = riemannian_cg_maximize(
            |x| model.objective(&theta0.with_values(x.to_vec())),
            |x| model.gradient(&theta0.with_values(x.to_vec())),
            &theta0.values,
            cfg,
        )?;
        cg_iterations += cg.trace.len() - 1;
        let relaxed_point = theta0.with_values(cg.point);
        let recovered = recover_ts(&relaxed_point, freq_grid, bounds);
        relaxed.push(relaxed_point);

        let (cand_a, val_a) = refine_ts(model, &recovered, freq_grid, bounds, cfg)?;
        let (cand_b, val_b) = refine_ts(model, &ts, freq_grid, bounds, cfg)?;
        let (cand, cand_val) = if val_a >= val_b { (cand_a, val_a) } else { (cand_b, val_b) };
        if !(cand_val > val) {
            break;
        }
        let delta = cand_val - val;
        ts = cand;
        val = cand_val;
        trace.push(val);
        if delta < cfg.outer_tol * val.abs() {
            break;
        }
    }
    Ok(StartOutcome { ts, trace, relaxed, cg_iterations })
}

/// Worst-case TS errors for a prebuilt sensing model.
pub fn worst_case_with_model(
    model: &SensingModel,
    freq_grid: &[f64],
    bounds: [f64; 2],
    cfg: &ManifoldSolverConfig,
) -> Result<WorstCaseResult> {
    worst_case_from_starts(model, freq_grid, bounds, cfg, default_starts(model, freq_grid, bounds, cfg))
}

/// The nominal point, the box centre, the best coarse-grid points and
/// seeded random points.
pub fn default_starts(
    model: &SensingModel,
    freq_grid: &[f64],
    bounds: [f64; 2],
    cfg: &ManifoldSolverConfig,
) -> Vec<TsErrorMatrix> {
    let (num_tx, num_rx) = (model.num_tx(), model.num_rx());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut starts = vec![
        TsErrorMatrix::nominal(num_tx, num_rx, bounds),
        TsErrorMatrix::filled(num_tx, num_rx, 0.5 * (bounds[0] + bounds[1])),
    ];
    starts.extend(grid_starts(model, freq_grid, bounds, cfg));
    for _ in 0..cfg.random_starts {
        starts.push(TsErrorMatrix::from_fn(num_tx, num_rx, |_, _| {
            bounds[0] + rng.random::<f64>() * (bounds[1] - bounds[0])
        }));
    }
    starts
}

/// Runs the outer loop from every start (clipped into the box) and keeps
/// the best block per receiver. The first start's trace is reported.
pub fn worst_case_from_starts(
    model: &SensingModel,
    freq_grid: &[f64],
    bounds: [f64; 2],
    cfg: &ManifoldSolverConfig,
    starts: Vec<TsErrorMatrix>,
) -> Result<WorstCaseResult> {
    cfg.validate()?;
    if !(bounds[0] <= bounds[1]) {
        return Err(Error::Config(format!("TS bounds [{}, {}] are inverted", bounds[0], bounds[1])));
    }
    let (num_tx, num_rx) = (model.num_tx(), model.num_rx());
    if starts.is_empty() {
        return Err(Error::Config("at least one starting point is required".into()));
    }
    let starts: Vec<TsErrorMatrix> = starts
        .into_iter()
        .map(|s| {
            if s.num_tx != num_tx || s.num_rx != num_rx {
                return Err(Error::Dimension("starting point does not match the model".into()));
            }
            Ok(TsErrorMatrix::from_fn(num_tx, num_rx, |a, b| s.get(a, b).clamp(bounds[0], bounds[1])))
        })
        .collect::<Result<_>>()?;

    let outcomes = starts
        .into_iter()
        .map(|s| solve_from(model, s, freq_grid, bounds, cfg))
        .collect::<Result<Vec<_>>>()?;

    // The objective separates over receivers, so the best block of each
    // receiver can be taken from a different start.
    let per_rx = |ts: &TsErrorMatrix| -> Result<Vec<f64>> {
        Ok(model
            .fim(&phasor_from_ts(ts, freq_grid))?
            .receivers
            .iter()
            .map(|r| r.crlb_trace)
            .collect())
    };
    let scores = outcomes.iter().map(|o| per_rx(&o.ts)).collect::<Result<Vec<_>>>()?;
    let mut ts = outcomes[0].ts.clone();
    for b in 0..num_rx {
        let best = (0..outcomes.len())
            .max_by(|&i, &j| scores[i][b].total_cmp(&scores[j][b]))
            .unwrap_or(0);
        for a in 0..num_tx {
            ts.set(a, b, outcomes[best].ts.get(a, b));
        }
    }
    let feasible = phasor_from_ts(&ts, freq_grid);
    let worst_crlb = model.objective(&feasible)?;

    let mut relaxed = feasible.clone();
    let mut relaxed_scores = per_rx(&ts)?;
    for point in outcomes.iter().flat_map(|o| &o.relaxed) {
        let fim = model.fim(point)?;
        for (b, r) in fim.receivers.iter().enumerate() {
            if r.crlb_trace > relaxed_scores[b] {
                relaxed_scores[b] = r.crlb_trace;
                for a in 0..num_tx {
                    for s in 0..freq_grid.len() {
                        let k = relaxed.index(a, b, s);
                        relaxed.values[k] = point.values[k];
                    }
                }
            }
        }
    }
    let relaxed_crlb = model.objective(&relaxed)?;

    let mut trace = outcomes[0].trace.clone();
    if worst_crlb > *trace.last().unwrap_or(&f64::NEG_INFINITY) {
        trace.push(worst_crlb);
    }
    Ok(WorstCaseResult {
        phasor: relaxed,
        relaxed_crlb,
        ts,
        worst_crlb,
        trace,
        cg_iterations: outcomes.iter().map(|o| o.cg_iterations).sum(),
    })
}

/// Worst-case TS errors for a design, using the scenario's TS bounds.
pub fn worst_case_ts(
    scenario: &Scenario,
    beams: &BeamformingSet,
    layout: &MaLayout,
    cfg: &ManifoldSolverConfig,
) -> Result<WorstCaseResult> {
    let model = SensingModel::new(scenario, beams, layout)?;
    worst_case_with_model(&model, &scenario.freq_grid, scenario.config.ts_bounds, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(phase: f64) -> Complex64 {
        Complex64::from_polar(1.0, phase)
    }

    #[test]
    fn projection_cases() {
        let ones = vec![Complex64::new(1.0, 0.0); 3];
        let j = vec![Complex64::new(0.0, 1.0); 3];
        assert_eq!(project_tangent(&ones, &j), j);
        assert!(project_tangent(&ones, &ones).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn retraction_cases() {
        let x = vec![unit(0.3), unit(-2.0)];
        let d = vec![Complex64::new(0.1, 0.2), Complex64::new(-1.0, 0.5)];
        assert_eq!(retract(&x, &d, 0.0).unwrap(), x);
        let one = [Complex64::new(1.0, 0.0)];
        let r = retract(&one, &[Complex64::new(0.0, 1.0)], 1e-6).unwrap();
        assert!(r[0].arg() > 0.0 && (r[0].arg() - 1e-6).abs() < 1e-15);
        assert!(retract(&one, &[Complex64::new(-1.0, 0.0)], 1.0).is_err());
    }

    #[test]
    fn cg_on_circle_finds_one() {
        let cfg = ManifoldSolverConfig { grad_tol: 1e-12, ..Default::default() };
        let out = riemannian_cg_maximize(
            |x| Ok(x[0].re),
            |_| Ok(vec![Complex64::new(1.0, 0.0)]),
            &[unit(2.5)],
            &cfg,
        )
        .unwrap();
        assert!((out.point[0] - Complex64::new(1.0, 0.0)).norm() < 1e-8);
        assert!(out.trace.windows(2).all(|w| w[1].objective >= w[0].objective));
    }

    #[test]
    fn cg_stationary_start_returns_immediately() {
        let start = [Complex64::new(1.0, 0.0)];
        let out = riemannian_cg_maximize(
            |x| Ok(x[0].re),
            |_| Ok(vec![Complex64::new(1.0, 0.0)]),
            &start,
            &ManifoldSolverConfig::default(),
        )
        .unwrap();
        assert_eq!(out.point, start);
        assert_eq!(out.trace.len(), 1);
        assert!(out.converged);
    }

    #[test]
    fn recover_consistency_and_clipping() {
        let grid: Vec<f64> = (0..8).map(|s| 3.45e9 + s as f64 * 12.5e6).collect();
        let bounds = [0.4e-9, 0.6e-9];
        let ts = TsErrorMatrix::from_fn(2, 2, |a, b| 0.42e-9 + 0.05e-9 * (a + 2 * b) as f64);
        let back = recover_ts(&phasor_from_ts(&ts, &grid), &grid, bounds);
        for a in 0..2 {
            for b in 0..2 {
                assert!((back.get(a, b) - ts.get(a, b)).abs() < 1e-12 * 1e-9 * 1e3);
            }
        }
        // low band, so no 2π alias of the delay lands inside the box
        let low: Vec<f64> = (0..8).map(|s| 0.9e9 + s as f64 * 12.5e6).collect();
        let below = TsErrorMatrix::filled(1, 1, 0.3e-9);
        let back = recover_ts(&phasor_from_ts(&below, &low), &low, bounds);
        assert_eq!(back.get(0, 0), bounds[0]);
    }

    #[test]
    fn config_validation() {
        assert!(ManifoldSolverConfig::default().validate().is_ok());
        assert!(ManifoldSolverConfig { armijo_c1: 1.0, ..Default::default() }.validate().is_err());
        assert!(ManifoldSolverConfig { armijo_shrink: 0.0, ..Default::default() }.validate().is_err());
        assert!(ManifoldSolverConfig { grad_tol: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let csv = trace_csv(&[CgIterate { iteration: 0, objective: 1.0, grad_norm: 0.5, step: 0.0 }]);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("iteration,objective,grad_norm,step"));
    }

    fn phasors(n: usize) -> impl Strategy<Value = Vec<Complex64>> {
        prop::collection::vec(0.0..TAU, n).prop_map(|v| v.into_iter().map(unit).collect())
    }

    fn vectors(n: usize) -> impl Strategy<Value = Vec<Complex64>> {
        prop::collection::vec((-3.0..3.0, -3.0..3.0), n)
            .prop_map(|v| v.into_iter().map(|(r, i)| Complex64::new(r, i)).collect())
    }

    proptest! {
        #[test]
        fn projection_is_tangent_and_idempotent(x in phasors(6), g in vectors(6)) {
            let p = project_tangent(&x, &g);
            for (pi, xi) in p.iter().zip(&x) {
                prop_assert!((pi * xi.conj()).re.abs() < 1e-12);
            }
            let pp = project_tangent(&x, &p);
            for (a, b) in p.iter().zip(&pp) {
                prop_assert!((a - b).norm() < 1e-12);
            }
        }

        #[test]
        fn retraction_stays_on_manifold(x in phasors(6), g in vectors(6), step in 0.0..5.0f64) {
            let d = project_tangent(&x, &g);
            let r = retract(&x, &d, step).unwrap();
            for z in r {
                prop_assert!((z.norm() - 1.0).abs() < 1e-14);
            }
        }

        #[test]
        fn recovered_delay_within_bounds(x in phasors(8), lo in 0.0..1e-9f64, w in 0.0..1e-9f64) {
            let grid: Vec<f64> = (0..8).map(|s| 3.45e9 + s as f64 * 12.5e6).collect();
            let p = PhasorVector::new(x, 1, 1, 8).unwrap();
            let t = recover_ts(&p, &grid, [lo, lo + w]).get(0, 0);
            prop_assert!(t >= lo && t <= lo + w);
        }
    }
}
