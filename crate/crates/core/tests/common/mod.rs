//! Reference computations used as test oracles. They rebuild the received
//! mean signal from the channel matrices and differentiate it numerically,
//! sharing nothing with the analytic FIM code beyond the channel model.
#![allow(dead_code)]

use cfisac_core::channel::sensing_channel;
use cfisac_core::{BeamformingSet, Complex64, MaLayout, PhasorVector, Point, Scenario, ScenarioConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP_M: f64 = 1e-5;

pub fn desk(seed: u64) -> Scenario {
    cfisac_core::build_scenario(&ScenarioConfig { seed, ..ScenarioConfig::desk_scale() }).unwrap()
}

pub fn random_beams(rng: &mut ChaCha8Rng, sc: &Scenario) -> BeamformingSet {
    let mut b = BeamformingSet::zeros(sc.num_tx_aps(), sc.num_users(), sc.num_tx_mas());
    for z in b.w.iter_mut().flatten().flatten() {
        *z = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
    }
    b
}

pub fn random_phasor(rng: &mut ChaCha8Rng, sc: &Scenario) -> PhasorVector {
    let n = sc.num_tx_aps() * sc.num_rx_aps() * sc.num_freq();
    let v = (0..n)
        .map(|_| Complex64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU))
        .collect();
    PhasorVector::new(v, sc.num_tx_aps(), sc.num_rx_aps(), sc.num_freq()).unwrap()
}

/// A random feasible layout: sorted positions with at least the minimum spacing.
pub fn random_layout(rng: &mut ChaCha8Rng, cfg: &ScenarioConfig) -> MaLayout {
    let draw = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
        let slack = cfg.ma_range[1] - cfg.ma_range[0] - (n as f64 - 1.0) * cfg.d0_spacing;
        let mut cuts: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * slack).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.iter()
            .enumerate()
            .map(|(i, c)| cfg.ma_range[0] + c + i as f64 * cfg.d0_spacing)
            .collect()
    };
    MaLayout {
        tx: (0..cfg.num_tx_aps).map(|_| draw(rng, cfg.num_tx_mas)).collect(),
        rx: (0..cfg.num_rx_aps).map(|_| draw(rng, cfg.num_rx_mas)).collect(),
    }
}

/// μ_{b,s} for a target at `target`, keeping every reflection coefficient
/// of the base scenario fixed.
pub fn mean_signal(
    base: &Scenario,
    beams: &BeamformingSet,
    layout: &MaLayout,
    phasor: &PhasorVector,
    target: Point,
    b: usize,
    s: usize,
) -> Vec<Complex64> {
    let mut moved = base.with_target(target).unwrap();
    moved.reflectivity = base.reflectivity.clone();
    let mut mu = vec![Complex64::new(0.0, 0.0); base.num_rx_mas()];
    for a in 0..base.num_tx_aps() {
        let h = sensing_channel(&moved, layout, a, b, s);
        let mut x = vec![Complex64::new(0.0, 0.0); base.num_tx_mas()];
        for (k, w) in beams.w[a].iter().enumerate() {
            for (t, wt) in w.iter().enumerate() {
                x[t] += wt * base.symbols[s][k];
            }
        }
        let theta = phasor.values[(b * base.num_tx_aps() + a) * base.num_freq() + s];
        for (r, row) in h.iter().enumerate() {
            let hx: Complex64 = row.iter().zip(&x).map(|(h, x)| h * x).sum();
            mu[r] += hx * theta;
        }
    }
    mu
}

/// FIM from central differences of the mean signal.
pub fn fd_fim(
    sc: &Scenario,
    beams: &BeamformingSet,
    layout: &MaLayout,
    phasor: &PhasorVector,
    b: usize,
) -> [[f64; 2]; 2] {
    let t = sc.target;
    let shifts = [Point::new(FD_STEP_M, 0.0), Point::new(0.0, FD_STEP_M)];
    let mut f = [[0.0; 2]; 2];
    for s in 0..sc.num_freq() {
        let d: Vec<Vec<Complex64>> = shifts
            .iter()
            .map(|h| {
                let plus = mean_signal(sc, beams, layout, phasor, Point::new(t.x + h.x, t.y + h.y), b, s);
                let minus = mean_signal(sc, beams, layout, phasor, Point::new(t.x - h.x, t.y - h.y), b, s);
                plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * FD_STEP_M)).collect()
            })
            .collect();
        for i in 0..2 {
            for j in 0..2 {
                f[i][j] += d[i].iter().zip(&d[j]).map(|(x, y)| (x.conj() * y).re).sum::<f64>();
            }
        }
    }
    let scale = 2.0 / sc.noise_power;
    f.map(|row| row.map(|v| v * scale))
}

/// Explicit inverse of a 2×2 matrix, trace of it.
pub fn inverse_trace(f: [[f64; 2]; 2]) -> f64 {
    let det = f[0][0] * f[1][1] - f[0][1] * f[1][0];
    let inv = [[f[1][1] / det, -f[0][1] / det], [-f[1][0] / det, f[0][0] / det]];
    inv[0][0] + inv[1][1]
}

pub fn frobenius_rel(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            num += (a[i][j] - b[i][j]).powi(2);
            den += b[i][j].powi(2);
        }
    }
    (num / den).sqrt()
}

/// Central differences of `L` on the real and imaginary parts of every phasor entry.
pub fn fd_phasor_gradient(
    objective: impl Fn(&PhasorVector) -> f64,
    phasor: &PhasorVector,
    step: f64,
) -> Vec<Complex64> {
    (0..phasor.values.len())
        .map(|k| {
            let partial = |dir: Complex64| {
                let mut p = phasor.clone();
                p.values[k] += dir * step;
                let up = objective(&p);
                p.values[k] -= dir * (2.0 * step);
                (up - objective(&p)) / (2.0 * step)
            };
            Complex64::new(partial(Complex64::new(1.0, 0.0)), partial(Complex64::new(0.0, 1.0)))
        })
        .collect()
}

/// Angle sequence unwrapped by accumulating wrapped increments.
pub fn unwrap(samples: &[Complex64]) -> Vec<f64> {
    let mut out = vec![samples[0].arg()];
    for w in samples.windows(2) {
        let step = (w[1] * w[0].conj()).arg();
        out.push(out.last().unwrap() + step);
    }
    out
}

/// Least-squares fit objective on the best `2π` branch, by brute force over branches.
pub fn delay_fit_objective(theta: &[f64], freqs: &[f64], tau: f64) -> f64 {
    (-60..=60)
        .map(|m| {
            theta
                .iter()
                .zip(freqs)
                .map(|(t, f)| (t + std::f64::consts::TAU * (m as f64 + f * tau)).powi(2))
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
