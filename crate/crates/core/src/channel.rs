//! Movable-antenna steering vectors, communication and sensing channels,
//! and their derivatives with respect to the target position.

use std::f64::consts::TAU;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::scenario::{Point, Scenario, ScenarioConfig, SPEED_OF_LIGHT};

pub type CVector = Vec<Complex64>;

/// Antenna positions (in wavelengths) of every transmit and receive array.
#[derive(Debug, Clone, PartialEq)]
pub struct MaLayout {
    /// `tx[a]`: sorted positions of the `N_t` elements of transmit AP `a`.
    pub tx: Vec<Vec<f64>>,
    /// `rx[b]`: sorted positions of the `N_r` elements of receive AP `b`.
    pub rx: Vec<Vec<f64>>,
}

impl MaLayout {
    /// One transmit and one receive layout replicated over every AP.
    pub fn shared(tx: Vec<f64>, rx: Vec<f64>, num_tx_aps: usize, num_rx_aps: usize) -> Self {
        Self {
            tx: vec![tx; num_tx_aps],
            rx: vec![rx; num_rx_aps],
        }
    }

    /// Fixed-position array: `D₀`-spaced elements centred in the movable region.
    pub fn uniform(config: &ScenarioConfig) -> Self {
        let centre = 0.5 * (config.ma_range[0] + config.ma_range[1]);
        let line = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|t| centre + (t as f64 - 0.5 * (n as f64 - 1.0)) * config.d0_spacing)
                .collect()
        };
        Self::shared(
            line(config.num_tx_mas),
            line(config.num_rx_mas),
            config.num_tx_aps,
            config.num_rx_aps,
        )
    }

    /// Checks dimensions, the movable box, and the minimum spacing.
    pub fn validate(&self, config: &ScenarioConfig) -> Result<()> {
        if self.tx.len() != config.num_tx_aps || self.rx.len() != config.num_rx_aps {
            return Err(Error::Dimension(format!(
                "layout covers {}×{} arrays, scenario has {}×{}",
                self.tx.len(),
                self.rx.len(),
                config.num_tx_aps,
                config.num_rx_aps
            )));
        }
        let [lo, hi] = config.ma_range;
        let arrays = self
            .tx
            .iter()
            .map(|p| (p, config.num_tx_mas))
            .chain(self.rx.iter().map(|p| (p, config.num_rx_mas)));
        for (positions, n) in arrays {
            if positions.len() != n {
                return Err(Error::Dimension(format!(
                    "array has {} elements, expected {n}",
                    positions.len()
                )));
            }
            if positions.iter().any(|p| *p < lo || *p > hi) {
                return Err(Error::Domain(format!(
                    "antenna position outside [{lo}, {hi}]: {positions:?}"
                )));
            }
            if positions.windows(2).any(|w| w[1] - w[0] < config.d0_spacing) {
                return Err(Error::Domain(format!(
                    "adjacent antennas closer than D₀ = {}: {positions:?}",
                    config.d0_spacing
                )));
            }
        }
        Ok(())
    }
}

/// Field response `e^{-j2π p_t sin φ}` of a linear movable array.
pub fn steering(positions: &[f64], angle: f64) -> CVector {
    let s = angle.sin();
    positions
        .iter()
        .map(|p| Complex64::from_polar(1.0, -TAU * p * s))
        .collect()
}

/// Transmit-side field response.
pub fn steering_tx(positions: &[f64], angle: f64) -> CVector {
    steering(positions, angle)
}

/// Receive-side field response.
pub fn steering_rx(positions: &[f64], angle: f64) -> CVector {
    steering(positions, angle)
}

/// Entrywise `∂ log g_t / ∂φ = -j2π p_t cos φ`.
pub fn steering_phase_slope(positions: &[f64], angle: f64) -> CVector {
    let c = angle.cos();
    positions
        .iter()
        .map(|p| Complex64::new(0.0, -TAU * p * c))
        .collect()
}

/// `∂g/∂φ` for the field response.
pub fn steering_angle_derivative(positions: &[f64], angle: f64) -> CVector {
    steering_phase_slope(positions, angle)
        .into_iter()
        .zip(steering(positions, angle))
        .map(|(slope, g)| slope * g)
        .collect()
}

/// `h_{a,k} = Σ_l α_l e^{-j2π τ_l} g_a(p_a; φ_l)`.
pub fn comm_channel(scenario: &Scenario, layout: &MaLayout, a: usize, k: usize) -> CVector {
    let positions = &layout.tx[a];
    let mut h = vec![Complex64::new(0.0, 0.0); positions.len()];
    for path in &scenario.comm_paths[a][k] {
        let coeff = path.gain * Complex64::from_polar(1.0, -TAU * path.delay);
        for (hi, gi) in h.iter_mut().zip(steering(positions, path.aod)) {
            *hi += coeff * gi;
        }
    }
    h
}

/// Every communication channel of the instance, indexed `[a][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommChannels {
    pub h: Vec<Vec<CVector>>,
}

impl CommChannels {
    pub fn compute(scenario: &Scenario, layout: &MaLayout) -> Self {
        let h = (0..scenario.num_tx_aps())
            .map(|a| {
                (0..scenario.num_users())
                    .map(|k| comm_channel(scenario, layout, a, k))
                    .collect()
            })
            .collect();
        Self { h }
    }
}

/// The rank-one factors of the sensing channel between transmit AP `a`
/// and receive AP `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingLink {
    pub beta: Complex64,
    pub phi_a: f64,
    pub phi_b: f64,
    pub tau: f64,
    /// `g_b(p_b; φ_b)`.
    pub rx_steer: CVector,
    /// `ḡ_a(p_a; φ_a)`.
    pub tx_steer: CVector,
}

impl SensingLink {
    pub fn new(scenario: &Scenario, layout: &MaLayout, a: usize, b: usize) -> Self {
        let geo = &scenario.geometry[a][b];
        Self {
            beta: scenario.reflectivity[a][b],
            phi_a: geo.phi_a,
            phi_b: geo.phi_b,
            tau: geo.tau,
            rx_steer: steering_rx(&layout.rx[b], geo.phi_b),
            tx_steer: steering_tx(&layout.tx[a], geo.phi_a),
        }
    }

    /// `β e^{-j2π f τ}`.
    pub fn gain_at(&self, freq: f64) -> Complex64 {
        self.beta * Complex64::from_polar(1.0, -TAU * freq * self.tau)
    }

    /// `H = β e^{-j2π f τ} g_b ḡ_aᴴ`, row-major `N_r × N_t`.
    pub fn matrix_at(&self, freq: f64) -> Vec<CVector> {
        let gain = self.gain_at(freq);
        self.rx_steer
            .iter()
            .map(|gr| self.tx_steer.iter().map(|gt| gain * gr * gt.conj()).collect())
            .collect()
    }
}

/// Per-subcarrier sensing channel `H_{a,b,s̄}`.
pub fn sensing_channel(
    scenario: &Scenario,
    layout: &MaLayout,
    a: usize,
    b: usize,
    s: usize,
) -> Vec<CVector> {
    SensingLink::new(scenario, layout, a, b).matrix_at(scenario.freq_grid[s])
}

/// Partial derivatives of the bistatic delay and of both angles with
/// respect to the target coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayAngleDerivs {
    pub dtau_dx: f64,
    pub dtau_dy: f64,
    pub dphi_a_dx: f64,
    pub dphi_b_dx: f64,
    pub dphi_a_dy: f64,
    pub dphi_b_dy: f64,
}

impl DelayAngleDerivs {
    pub fn dtau(&self, axis: usize) -> f64 {
        [self.dtau_dx, self.dtau_dy][axis]
    }
    pub fn dphi_a(&self, axis: usize) -> f64 {
        [self.dphi_a_dx, self.dphi_a_dy][axis]
    }
    pub fn dphi_b(&self, axis: usize) -> f64 {
        [self.dphi_b_dx, self.dphi_b_dy][axis]
    }
}

pub fn angle_delay_derivs(target: Point, tx_ap: Point, rx_ap: Point) -> Result<DelayAngleDerivs> {
    let (ax, ay) = (target.x - tx_ap.x, target.y - tx_ap.y);
    let (bx, by) = (target.x - rx_ap.x, target.y - rx_ap.y);
    let ka2 = ax * ax + ay * ay;
    let kb2 = bx * bx + by * by;
    if ka2 == 0.0 || kb2 == 0.0 {
        return Err(Error::DegenerateGeometry(format!(
            "target {target:?} coincides with an access point"
        )));
    }
    let (ka, kb) = (ka2.sqrt(), kb2.sqrt());
    Ok(DelayAngleDerivs {
        dtau_dx: (ax / ka + bx / kb) / SPEED_OF_LIGHT,
        dtau_dy: (ay / ka + by / kb) / SPEED_OF_LIGHT,
        dphi_a_dx: -ay / ka2,
        dphi_b_dx: -by / kb2,
        dphi_a_dy: ax / ka2,
        dphi_b_dy: bx / kb2,
    })
}

/// Derivatives of both steering vectors of link `(a, b)` with respect to
/// `d_x` and `d_y`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringDerivs {
    pub drx_dx: CVector,
    pub dtx_dx: CVector,
    pub drx_dy: CVector,
    pub dtx_dy: CVector,
}

impl SteeringDerivs {
    pub fn drx(&self, axis: usize) -> &CVector {
        if axis == 0 {
            &self.drx_dx
        } else {
            &self.drx_dy
        }
    }
    pub fn dtx(&self, axis: usize) -> &CVector {
        if axis == 0 {
            &self.dtx_dx
        } else {
            &self.dtx_dy
        }
    }
}

pub fn steering_position_derivs(
    scenario: &Scenario,
    layout: &MaLayout,
    a: usize,
    b: usize,
) -> Result<SteeringDerivs> {
    let geo = &scenario.geometry[a][b];
    let derivs = angle_delay_derivs(scenario.target, scenario.tx_aps[a], scenario.rx_aps[b])?;
    let drx = steering_angle_derivative(&layout.rx[b], geo.phi_b);
    let dtx = steering_angle_derivative(&layout.tx[a], geo.phi_a);
    let scale = |v: &CVector, f: f64| -> CVector { v.iter().map(|z| z * f).collect() };
    Ok(SteeringDerivs {
        drx_dx: scale(&drx, derivs.dphi_b_dx),
        dtx_dx: scale(&dtx, derivs.dphi_a_dx),
        drx_dy: scale(&drx, derivs.dphi_b_dy),
        dtx_dy: scale(&dtx, derivs.dphi_a_dy),
    })
}
