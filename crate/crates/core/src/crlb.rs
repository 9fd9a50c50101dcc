//! Fisher information of the target position under timing-synchronisation
//! (TS) errors, the CRLB trace, and its gradient with respect to the TS
//! phasor vector.
//!
//! The received mean signal at receive AP `b` on frequency sample `s` is
//!
//! ```text
//! μ_{b,s}(d) = Σ_a H_{a,b,s}(d) x_{a,s} ϑ_{a,b,s},    x_{a,s} = Σ_k w_{a,k} c̄_{s,k}
//! ```
//!
//! and `F_b(i,j) = (2/σ²) Σ_s Re{ ∂μᴴ/∂d_i ∂μ/∂d_j }`. The block-diagonal
//! stacking over subcarriers is never formed: every product is evaluated
//! per subcarrier and accumulated.

use std::f64::consts::TAU;

use num_complex::Complex64;

use crate::channel::{angle_delay_derivs, steering_angle_derivative, CVector, MaLayout, SensingLink};
use crate::error::{Error, Result};
use crate::metrics::BeamformingSet;
use crate::scenario::{FimNoiseModel, Scenario};

/// Relative determinant below which a 2×2 FIM is reported singular.
pub const SINGULAR_RCOND: f64 = 1e-12;

/// Unit-modulus TS phasors, ordered `ϑ_{1,1}, …, ϑ_{A,1}, …, ϑ_{A,B}`,
/// each block holding one entry per frequency sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasorVector {
    pub values: CVector,
    pub num_tx: usize,
    pub num_rx: usize,
    pub num_freq: usize,
}

impl PhasorVector {
    pub fn new(values: CVector, num_tx: usize, num_rx: usize, num_freq: usize) -> Result<Self> {
        if values.len() != num_tx * num_rx * num_freq {
            return Err(Error::Dimension(format!(
                "phasor vector has {} entries, expected {}·{}·{}",
                values.len(),
                num_tx,
                num_rx,
                num_freq
            )));
        }
        Ok(Self { values, num_tx, num_rx, num_freq })
    }

    pub fn ones(num_tx: usize, num_rx: usize, num_freq: usize) -> Self {
        Self {
            values: vec![Complex64::new(1.0, 0.0); num_tx * num_rx * num_freq],
            num_tx,
            num_rx,
            num_freq,
        }
    }

    pub fn index(&self, a: usize, b: usize, s: usize) -> usize {
        (b * self.num_tx + a) * self.num_freq + s
    }

    pub fn get(&self, a: usize, b: usize, s: usize) -> Complex64 {
        self.values[self.index(a, b, s)]
    }

    /// The `S̄` entries of `ϑ_{a,b}`.
    pub fn block(&self, a: usize, b: usize) -> &[Complex64] {
        let start = self.index(a, b, 0);
        &self.values[start..start + self.num_freq]
    }

    pub fn with_values(&self, values: CVector) -> Self {
        Self { values, ..self.clone() }
    }

    pub fn max_modulus_error(&self) -> f64 {
        self.values
            .iter()
            .map(|z| (z.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Physical TS errors `τ̄_{a,b}` (seconds).
#[derive(Debug, Clone, PartialEq)]
pub struct TsErrorMatrix {
    pub num_tx: usize,
    pub num_rx: usize,
    values: Vec<f64>,
}

impl TsErrorMatrix {
    pub fn filled(num_tx: usize, num_rx: usize, value: f64) -> Self {
        Self { num_tx, num_rx, values: vec![value; num_tx * num_rx] }
    }

    pub fn from_fn(num_tx: usize, num_rx: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(num_tx * num_rx);
        for a in 0..num_tx {
            for b in 0..num_rx {
                values.push(f(a, b));
            }
        }
        Self { num_tx, num_rx, values }
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.num_rx + b]
    }

    pub fn set(&mut self, a: usize, b: usize, value: f64) {
        self.values[a * self.num_rx + b] = value;
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied()
    }

    /// Zero error projected into the feasible box.
    pub fn nominal(num_tx: usize, num_rx: usize, bounds: [f64; 2]) -> Self {
        Self::filled(num_tx, num_rx, 0f64.clamp(bounds[0], bounds[1]))
    }

    pub fn within(&self, bounds: [f64; 2]) -> bool {
        self.values.iter().all(|v| *v >= bounds[0] && *v <= bounds[1])
    }
}

/// `ϑ_{a,b}[s] = e^{-j2π f_s τ̄_{a,b}}`.
pub fn phasor_from_ts(ts: &TsErrorMatrix, freq_grid: &[f64]) -> PhasorVector {
    let (num_tx, num_rx, num_freq) = (ts.num_tx, ts.num_rx, freq_grid.len());
    let mut values = Vec::with_capacity(num_tx * num_rx * num_freq);
    for b in 0..num_rx {
        for a in 0..num_tx {
            let tau = ts.get(a, b);
            values.extend(freq_grid.iter().map(|f| Complex64::from_polar(1.0, -TAU * f * tau)));
        }
    }
    PhasorVector { values, num_tx, num_rx, num_freq }
}

/// Per-subcarrier precoded symbol `Σ_k w_{a,k} c̄_{s,k}` (length `N_t`).
pub fn precoded_symbol(beams_a: &[CVector], symbols_s: &[Complex64]) -> CVector {
    let n = beams_a.first().map_or(0, Vec::len);
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for (w, c) in beams_a.iter().zip(symbols_s) {
        for (xi, wi) in x.iter_mut().zip(w) {
            *xi += wi * c;
        }
    }
    x
}

/// The stacked transmit signal of one AP towards one receiver: block `s`
/// is `(Σ_k w_{a,k} c̄_{s,k}) ϑ_{a,b}[s]`.
pub fn stacked_tx(beams_a: &[CVector], symbols: &[Vec<Complex64>], phasor_ab: &[Complex64]) -> Result<CVector> {
    if symbols.len() != phasor_ab.len() {
        return Err(Error::Dimension(format!(
            "{} symbol rows but {} phasor entries",
            symbols.len(),
            phasor_ab.len()
        )));
    }
    let n = beams_a.first().map_or(0, Vec::len);
    if beams_a.iter().any(|w| w.len() != n) || symbols.iter().any(|row| row.len() != beams_a.len()) {
        return Err(Error::Dimension("beam and symbol dimensions disagree".into()));
    }
    let mut out = Vec::with_capacity(n * symbols.len());
    for (row, theta) in symbols.iter().zip(phasor_ab) {
        out.extend(precoded_symbol(beams_a, row).into_iter().map(|z| z * theta));
    }
    Ok(out)
}

/// A symmetric 2×2 Fisher information matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fim2(pub [[f64; 2]; 2]);

impl Fim2 {
    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn det(&self) -> f64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn frobenius(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_singular(&self) -> bool {
        let t = self.trace();
        !(t > 0.0) || !(self.det() > SINGULAR_RCOND * t * t)
    }

    /// `tr(F⁻¹) = C/D` with `C = F₁₁ + F₂₂` and `D = det F`; `None` when singular.
    pub fn crlb_trace(&self) -> Option<f64> {
        if self.is_singular() {
            None
        } else {
            Some(self.trace() / self.det())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverFim {
    pub fim: Fim2,
    /// `tr(CRLB_b)` in m², `+∞` when the FIM is singular.
    pub crlb_trace: f64,
    pub singular: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FimResult {
    pub receivers: Vec<ReceiverFim>,
    pub total: f64,
}

impl FimResult {
    pub fn any_singular(&self) -> bool {
        self.receivers.iter().any(|r| r.singular)
    }
}

/// `Σ_b tr(F_b⁻¹)`; a singular FIM yields `+∞`.
pub fn crlb_total(fims: &[Fim2]) -> f64 {
    fims.iter()
        .map(|f| f.crlb_trace().unwrap_or(f64::INFINITY))
        .sum()
}

/// Noise factor in front of the FIM sum.
pub fn fim_scale(scenario: &Scenario) -> f64 {
    let sigma2 = scenario.noise_power;
    match scenario.config.fim_noise {
        FimNoiseModel::PerSample => 2.0 / sigma2,
        FimNoiseModel::SampleExponent => 2.0 / sigma2.powi(scenario.num_freq() as i32),
    }
}

/// Derivatives of every per-AP mean-signal term, precomputed once for a
/// fixed design (beams, layout) so that the FIM and its phasor gradient can
/// be evaluated cheaply for many phasor vectors.
#[derive(Debug, Clone)]
pub struct SensingModel {
    num_tx: usize,
    num_rx: usize,
    num_freq: usize,
    scale: f64,
    /// `terms[b][s][a][i]`: `∂H_{a,b,s}/∂d_i · x_{a,s}` (length `N_r`).
    terms: Vec<Vec<Vec<[CVector; 2]>>>,
}

fn dot(u: &[Complex64], v: &[Complex64]) -> Complex64 {
    u.iter().zip(v).map(|(x, y)| x.conj() * y).sum()
}

fn axpy(acc: &mut [Complex64], alpha: Complex64, x: &[Complex64]) {
    for (a, xi) in acc.iter_mut().zip(x) {
        *a += alpha * xi;
    }
}

impl SensingModel {
    pub fn new(scenario: &Scenario, beams: &BeamformingSet, layout: &MaLayout) -> Result<Self> {
        beams.check_dims(scenario)?;
        let (num_tx, num_rx, num_freq) = (scenario.num_tx_aps(), scenario.num_rx_aps(), scenario.num_freq());
        if layout.tx.len() != num_tx || layout.rx.len() != num_rx {
            return Err(Error::Dimension("layout does not match the scenario".into()));
        }
        let precoded: Vec<Vec<CVector>> = (0..num_tx)
            .map(|a| {
                scenario
                    .symbols
                    .iter()
                    .map(|row| precoded_symbol(&beams.w[a], row))
                    .collect()
            })
            .collect();

        let mut terms = vec![vec![Vec::with_capacity(num_tx); num_freq]; num_rx];
        for b in 0..num_rx {
            for a in 0..num_tx {
                let link = SensingLink::new(scenario, layout, a, b);
                let derivs = angle_delay_derivs(scenario.target, scenario.tx_aps[a], scenario.rx_aps[b])?;
                let drx = steering_angle_derivative(&layout.rx[b], link.phi_b);
                let dtx = steering_angle_derivative(&layout.tx[a], link.phi_a);
                for s in 0..num_freq {
                    let freq = scenario.freq_grid[s];
                    let gain = link.gain_at(freq);
                    let x = &precoded[a][s];
                    let tx_proj = dot(&link.tx_steer, x);
                    let dtx_proj = dot(&dtx, x);
                    let per_axis = [0usize, 1].map(|axis| {
                        // delay term + receive steering term + transmit steering term
                        let delay = Complex64::new(0.0, -TAU * freq * derivs.dtau(axis)) * tx_proj;
                        let mut v: CVector = link.rx_steer.iter().map(|g| g * delay).collect();
                        axpy(&mut v, tx_proj * derivs.dphi_b(axis), &drx);
                        axpy(&mut v, dtx_proj * derivs.dphi_a(axis), &link.rx_steer);
                        v.iter_mut().for_each(|z| *z *= gain);
                        v
                    });
                    terms[b][s].push(per_axis);
                }
            }
        }
        Ok(Self { num_tx, num_rx, num_freq, scale: fim_scale(scenario), terms })
    }

    pub fn num_tx(&self) -> usize {
        self.num_tx
    }
    pub fn num_rx(&self) -> usize {
        self.num_rx
    }
    pub fn num_freq(&self) -> usize {
        self.num_freq
    }
    pub fn phasor_len(&self) -> usize {
        self.num_tx * self.num_rx * self.num_freq
    }

    fn check(&self, phasor: &PhasorVector) -> Result<()> {
        if phasor.num_tx != self.num_tx || phasor.num_rx != self.num_rx || phasor.num_freq != self.num_freq {
            return Err(Error::Dimension(format!(
                "phasor is {}×{}×{}, model is {}×{}×{}",
                phasor.num_tx, phasor.num_rx, phasor.num_freq, self.num_tx, self.num_rx, self.num_freq
            )));
        }
        Ok(())
    }

    /// `∂μ_{b,s}/∂d_i` for both axes.
    fn signal_derivative(&self, phasor: &PhasorVector, b: usize, s: usize) -> [CVector; 2] {
        let terms = &self.terms[b][s];
        let n = terms.first().map_or(0, |t| t[0].len());
        let mut u = [vec![Complex64::new(0.0, 0.0); n], vec![Complex64::new(0.0, 0.0); n]];
        for (a, per_axis) in terms.iter().enumerate() {
            let theta = phasor.get(a, b, s);
            for axis in 0..2 {
                axpy(&mut u[axis], theta, &per_axis[axis]);
            }
        }
        u
    }

    pub fn receiver_fim(&self, phasor: &PhasorVector, b: usize) -> Fim2 {
        let mut f = [[0.0; 2]; 2];
        for s in 0..self.num_freq {
            let u = self.signal_derivative(phasor, b, s);
            for i in 0..2 {
                for j in i..2 {
                    f[i][j] += dot(&u[i], &u[j]).re;
                }
            }
        }
        f[1][0] = f[0][1];
        for row in &mut f {
            for v in row.iter_mut() {
                *v *= self.scale;
            }
        }
        Fim2(f)
    }

    pub fn fim(&self, phasor: &PhasorVector) -> Result<FimResult> {
        self.check(phasor)?;
        let receivers: Vec<ReceiverFim> = (0..self.num_rx)
            .map(|b| {
                let fim = self.receiver_fim(phasor, b);
                let trace = fim.crlb_trace();
                ReceiverFim {
                    fim,
                    crlb_trace: trace.unwrap_or(f64::INFINITY),
                    singular: trace.is_none(),
                }
            })
            .collect();
        let total = receivers.iter().map(|r| r.crlb_trace).sum();
        Ok(FimResult { receivers, total })
    }

    /// `L(ϑ) = Σ_b tr(CRLB_b)`.
    pub fn objective(&self, phasor: &PhasorVector) -> Result<f64> {
        Ok(self.fim(phasor)?.total)
    }

    /// Euclidean gradient `∂L/∂Re ϑ + j ∂L/∂Im ϑ`, assembled per receiver as
    /// `(C̄ D − C D̄)/D²` with `C = F₁₁ + F₂₂`, `D = det F`.
    pub fn gradient(&self, phasor: &PhasorVector) -> Result<CVector> {
        self.check(phasor)?;
        let mut grad = vec![Complex64::new(0.0, 0.0); self.phasor_len()];
        for b in 0..self.num_rx {
            let fim = self.receiver_fim(phasor, b);
            if fim.is_singular() {
                return Err(Error::SingularFim { receiver: b });
            }
            let [[f11, f12], [_, f22]] = fim.0;
            let c = f11 + f22;
            let d = fim.det();
            for s in 0..self.num_freq {
                let u = self.signal_derivative(phasor, b, s);
                for (a, per_axis) in self.terms[b][s].iter().enumerate() {
                    // ∇F_ij = (2/σ²)(D_iᴴ u_j + D_jᴴ u_i)
                    let g11 = dot(&per_axis[0], &u[0]) * 2.0 * self.scale;
                    let g22 = dot(&per_axis[1], &u[1]) * 2.0 * self.scale;
                    let g12 = (dot(&per_axis[0], &u[1]) + dot(&per_axis[1], &u[0])) * self.scale;
                    let c_bar = g11 + g22;
                    let d_bar = g11 * f22 + g22 * f11 - g12 * (2.0 * f12);
                    grad[phasor.index(a, b, s)] = (c_bar * d - d_bar * c) / (d * d);
                }
            }
        }
        Ok(grad)
    }
}

/// FIM of every receiver for a design and a phasor vector.
pub fn fim(scenario: &Scenario, beams: &BeamformingSet, layout: &MaLayout, phasor: &PhasorVector) -> Result<FimResult> {
    SensingModel::new(scenario, beams, layout)?.fim(phasor)
}

pub fn grad_crlb_wrt_phasor(
    scenario: &Scenario,
    beams: &BeamformingSet,
    layout: &MaLayout,
    phasor: &PhasorVector,
) -> Result<CVector> {
    SensingModel::new(scenario, beams, layout)?.gradient(phasor)
}
