//! Problem instances: node placement on the ring, path loss, bistatic
//! geometry, and the constant sets shared by every other module.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Links shorter than this are evaluated at this distance when drawing
/// channel gains, so that coincident ring nodes cannot produce unbounded gains.
pub const MIN_LINK_DISTANCE_M: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Direction from `self` towards `other`, in (-π, π].
    pub fn angle_to(&self, other: &Point) -> f64 {
        (other.y - self.y).atan2(other.x - self.x)
    }
}

/// How the noise variance enters the Fisher information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FimNoiseModel {
    /// `2/σ²` per complex sample (Gaussian likelihood).
    #[default]
    PerSample,
    /// `2/σ^{2S̄}`, the literal exponent form. Only useful for fidelity experiments.
    SampleExponent,
}

/// Declarative problem description. Every field has a default, so a TOML
/// file only needs to list what it overrides; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub num_tx_aps: usize,
    pub num_rx_aps: usize,
    pub num_users: usize,
    pub num_tx_mas: usize,
    pub num_rx_mas: usize,
    pub num_freq_samples: usize,
    /// Explicit frequency samples (Hz). When absent, `num_freq_samples`
    /// points spanning `bandwidth_hz` around `carrier_hz` are used.
    pub freq_grid: Option<Vec<f64>>,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub ring_radius: f64,
    pub pl0_db: f64,
    pub exp_user: f64,
    pub exp_target: f64,
    pub num_paths: usize,
    pub noise_power_dbm: f64,
    pub rcs: f64,
    /// Minimum inter-element spacing, in wavelengths.
    pub d0_spacing: f64,
    /// Movable region `[p_min, p_max]` of every array, in wavelengths.
    pub ma_range: [f64; 2],
    /// Per-beam power cap (W).
    pub p_max: f64,
    /// Rate floor applied to every user and subcarrier (bit/s/Hz).
    pub rate_floor: f64,
    /// Per-user rate weights; all ones when absent.
    pub rate_weights: Option<Vec<f64>>,
    /// `[τ̄_min, τ̄_max]` in seconds.
    pub ts_bounds: [f64; 2],
    /// Stored for completeness; no constraint consumes it.
    pub sensing_accuracy: f64,
    pub target: Point,
    pub fim_noise: FimNoiseModel,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_tx_aps: 3,
            num_rx_aps: 2,
            num_users: 2,
            num_tx_mas: 8,
            num_rx_mas: 4,
            num_freq_samples: 16,
            freq_grid: None,
            carrier_hz: 3.5e9,
            bandwidth_hz: 100e6,
            ring_radius: 100.0,
            pl0_db: -30.0,
            exp_user: 2.8,
            exp_target: 2.2,
            num_paths: 3,
            noise_power_dbm: -80.0,
            rcs: 3.0,
            d0_spacing: 0.5,
            ma_range: [-2.0, 2.0],
            p_max: 1.0,
            rate_floor: 1.0,
            rate_weights: None,
            ts_bounds: [0.4e-9, 0.6e-9],
            sensing_accuracy: 0.05,
            target: Point::new(0.0, 0.0),
            fim_noise: FimNoiseModel::PerSample,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// Small instance used throughout the tests and desk-scale experiments.
    pub fn desk_scale() -> Self {
        Self {
            num_tx_aps: 2,
            num_rx_aps: 1,
            num_users: 2,
            num_tx_mas: 4,
            num_rx_mas: 2,
            num_freq_samples: 8,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config is always serializable")
    }

    pub fn noise_power_watts(&self) -> f64 {
        dbm_to_watts(self.noise_power_dbm)
    }

    pub fn resolved_freq_grid(&self) -> Vec<f64> {
        match &self.freq_grid {
            Some(grid) => grid.clone(),
            None => default_freq_grid(self.num_freq_samples, self.carrier_hz, self.bandwidth_hz),
        }
    }

    pub fn resolved_rate_weights(&self) -> Vec<f64> {
        self.rate_weights
            .clone()
            .unwrap_or_else(|| vec![1.0; self.num_users])
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_tx_aps", self.num_tx_aps),
            ("num_rx_aps", self.num_rx_aps),
            ("num_users", self.num_users),
            ("num_tx_mas", self.num_tx_mas),
            ("num_rx_mas", self.num_rx_mas),
            ("num_freq_samples", self.num_freq_samples),
            ("num_paths", self.num_paths),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        let [ts_min, ts_max] = self.ts_bounds;
        if !(ts_min.is_finite() && ts_max.is_finite()) || ts_min > ts_max {
            return Err(Error::Config(format!(
                "ts_bounds must satisfy τ̄_min ≤ τ̄_max (got [{ts_min}, {ts_max}])"
            )));
        }
        let grid = self.resolved_freq_grid();
        if grid.len() != self.num_freq_samples {
            return Err(Error::Config(format!(
                "freq_grid has {} entries but num_freq_samples = {}",
                grid.len(),
                self.num_freq_samples
            )));
        }
        if grid.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::Config("freq_grid entries must be positive".into()));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("freq_grid must be strictly increasing".into()));
        }
        let [p_min, p_max] = self.ma_range;
        if !(self.d0_spacing >= 0.0) || !(p_min <= p_max) {
            return Err(Error::Config(format!(
                "ma_range must satisfy p_min ≤ p_max and d0_spacing ≥ 0 (got [{p_min}, {p_max}], D₀ = {})",
                self.d0_spacing
            )));
        }
        for (array, n) in [("transmit", self.num_tx_mas), ("receive", self.num_rx_mas)] {
            let span = (n - 1) as f64 * self.d0_spacing;
            if p_min + span > p_max + 1e-12 {
                return Err(Error::Config(format!(
                    "infeasible {array} spacing: p_min + (N−1)·D₀ = {p_min} + {} · {} = {} > p_max = {p_max}",
                    n - 1,
                    self.d0_spacing,
                    p_min + span
                )));
            }
        }
        if !(self.ring_radius > 0.0) {
            return Err(Error::Config("ring_radius must be positive".into()));
        }
        if !(self.p_max > 0.0) {
            return Err(Error::Config("p_max must be positive".into()));
        }
        if !(self.rcs > 0.0) {
            return Err(Error::Config("rcs must be positive".into()));
        }
        if !(self.noise_power_watts() > 0.0) {
            return Err(Error::Config("noise power must be positive".into()));
        }
        let weights = self.resolved_rate_weights();
        if weights.len() != self.num_users {
            return Err(Error::Config(format!(
                "rate_weights has {} entries but num_users = {}",
                weights.len(),
                self.num_users
            )));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Config("rate_weights must be positive".into()));
        }
        Ok(())
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// `n` samples uniformly spanning `bandwidth` centred on `carrier`.
pub fn default_freq_grid(n: usize, carrier: f64, bandwidth: f64) -> Vec<f64> {
    if n == 1 {
        return vec![carrier];
    }
    let step = bandwidth / (n - 1) as f64;
    (0..n)
        .map(|s| carrier - 0.5 * bandwidth + s as f64 * step)
        .collect()
}

/// `PL(d) = PL₀ · (d / 1 m)^{-Ω}` as a linear power gain.
pub fn path_loss_linear(distance_m: f64, exponent: f64, pl0_db: f64) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::Domain(format!(
            "path loss needs a positive distance, got {distance_m}"
        )));
    }
    Ok(10f64.powf(pl0_db / 10.0) * distance_m.powf(-exponent))
}

/// Distances, delays and angles of one transmit-AP → target → receive-AP path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BistaticGeometry {
    pub kappa_a: f64,
    pub kappa_b: f64,
    pub tau_a: f64,
    pub tau_b: f64,
    /// Total delay `τ_a + τ_b`.
    pub tau: f64,
    /// Angle from the transmit AP towards the target.
    pub phi_a: f64,
    /// Angle from the receive AP towards the target.
    pub phi_b: f64,
}

pub fn target_geometry(target: Point, tx_ap: Point, rx_ap: Point) -> Result<BistaticGeometry> {
    let kappa_a = target.distance(&tx_ap);
    let kappa_b = target.distance(&rx_ap);
    if kappa_a == 0.0 || kappa_b == 0.0 {
        return Err(Error::DegenerateGeometry(format!(
            "target {target:?} coincides with an access point"
        )));
    }
    let tau_a = kappa_a / SPEED_OF_LIGHT;
    let tau_b = kappa_b / SPEED_OF_LIGHT;
    Ok(BistaticGeometry {
        kappa_a,
        kappa_b,
        tau_a,
        tau_b,
        tau: tau_a + tau_b,
        phi_a: tx_ap.angle_to(&target),
        phi_b: rx_ap.angle_to(&target),
    })
}

/// Parameters of one propagation path of a communication link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    pub gain: Complex64,
    /// Delay phase, in cycles.
    pub delay: f64,
    pub aod: f64,
}

/// A fully drawn problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub freq_grid: Vec<f64>,
    pub rate_weights: Vec<f64>,
    pub target: Point,
    pub tx_aps: Vec<Point>,
    pub rx_aps: Vec<Point>,
    pub users: Vec<Point>,
    /// `comm_paths[a][k]` holds the `L` paths between transmit AP `a` and user `k`.
    pub comm_paths: Vec<Vec<Vec<PathParams>>>,
    /// `reflectivity_phase[a][b]`; the magnitude follows from the geometry.
    pub reflectivity_phase: Vec<Vec<f64>>,
    /// `reflectivity[a][b] = β_{a,b}` at the current target position.
    pub reflectivity: Vec<Vec<Complex64>>,
    /// `geometry[a][b]` at the current target position.
    pub geometry: Vec<Vec<BistaticGeometry>>,
    /// Frequency-domain symbols `c̄[s][k]`, unit power, orthogonal columns when `K ≤ S̄`.
    pub symbols: Vec<Vec<Complex64>>,
    pub noise_power: f64,
}

impl Scenario {
    pub fn num_tx_aps(&self) -> usize {
        self.tx_aps.len()
    }
    pub fn num_rx_aps(&self) -> usize {
        self.rx_aps.len()
    }
    pub fn num_users(&self) -> usize {
        self.users.len()
    }
    pub fn num_freq(&self) -> usize {
        self.freq_grid.len()
    }
    pub fn num_tx_mas(&self) -> usize {
        self.config.num_tx_mas
    }
    pub fn num_rx_mas(&self) -> usize {
        self.config.num_rx_mas
    }

    /// Same instance with the target moved; reflectivity magnitudes and the
    /// bistatic geometry are recomputed, every random draw is kept.
    pub fn with_target(&self, target: Point) -> Result<Scenario> {
        let mut next = self.clone();
        next.target = target;
        next.config.target = target;
        next.refresh_sensing()?;
        Ok(next)
    }

    fn refresh_sensing(&mut self) -> Result<()> {
        let cfg = &self.config;
        let mut geometry = Vec::with_capacity(self.tx_aps.len());
        let mut reflectivity = Vec::with_capacity(self.tx_aps.len());
        for (a, tx) in self.tx_aps.iter().enumerate() {
            let mut geo_row = Vec::with_capacity(self.rx_aps.len());
            let mut beta_row = Vec::with_capacity(self.rx_aps.len());
            for (b, rx) in self.rx_aps.iter().enumerate() {
                let geo = target_geometry(self.target, *tx, *rx)?;
                let pl_a = path_loss_linear(geo.kappa_a.max(MIN_LINK_DISTANCE_M), cfg.exp_target, cfg.pl0_db)?;
                let pl_b = path_loss_linear(geo.kappa_b.max(MIN_LINK_DISTANCE_M), cfg.exp_target, cfg.pl0_db)?;
                let magnitude = (cfg.rcs * pl_a * pl_b).sqrt();
                beta_row.push(Complex64::from_polar(magnitude, self.reflectivity_phase[a][b]));
                geo_row.push(geo);
            }
            geometry.push(geo_row);
            reflectivity.push(beta_row);
        }
        self.geometry = geometry;
        self.reflectivity = reflectivity;
        Ok(())
    }
}

fn ring_point(radius: f64, angle: f64) -> Point {
    Point::new(radius * angle.cos(), radius * angle.sin())
}

fn complex_gaussian(rng: &mut ChaCha8Rng, variance: f64) -> Complex64 {
    let scale = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * scale, im * scale)
}

/// Unit-power QPSK block; columns are re-orthogonalised so that
/// `(1/S̄) Cᴴ C = I` holds exactly when `K ≤ S̄`.
fn draw_symbols(rng: &mut ChaCha8Rng, num_freq: usize, num_users: usize) -> Vec<Vec<Complex64>> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut cols: Vec<Vec<Complex64>> = (0..num_users)
        .map(|_| {
            (0..num_freq)
                .map(|_| {
                    let re = if rng.random::<bool>() { h } else { -h };
                    let im = if rng.random::<bool>() { h } else { -h };
                    Complex64::new(re, im)
                })
                .collect()
        })
        .collect();
    if num_users <= num_freq {
        let target_norm = (num_freq as f64).sqrt();
        for k in 0..num_users {
            for j in 0..k {
                let (done, rest) = cols.split_at_mut(k);
                let proj: Complex64 = done[j]
                    .iter()
                    .zip(&rest[0])
                    .map(|(u, v)| u.conj() * v)
                    .sum::<Complex64>()
                    / (num_freq as f64);
                for (v, u) in rest[0].iter_mut().zip(&done[j]) {
                    *v -= proj * u;
                }
            }
            let norm = cols[k].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for v in &mut cols[k] {
                    *v *= target_norm / norm;
                }
            }
        }
    }
    (0..num_freq)
        .map(|s| (0..num_users).map(|k| cols[k][s]).collect())
        .collect()
}

/// Draws a scenario: target at `config.target` (origin by default), every
/// AP and user at an i.i.d. uniform angle on the ring, then path gains,
/// reflectivity phases and the symbol block, all from the seeded stream.
pub fn build_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let radius = config.ring_radius;
    let mut place = |n: usize| -> Vec<Point> {
        (0..n)
            .map(|_| ring_point(radius, rng.random::<f64>() * TAU))
            .collect()
    };
    let tx_aps = place(config.num_tx_aps);
    let rx_aps = place(config.num_rx_aps);
    let users = place(config.num_users);

    let mut comm_paths = Vec::with_capacity(tx_aps.len());
    for ap in &tx_aps {
        let mut per_user = Vec::with_capacity(users.len());
        for user in &users {
            let dist = ap.distance(user).max(MIN_LINK_DISTANCE_M);
            let pl = path_loss_linear(dist, config.exp_user, config.pl0_db)?;
            let los = ap.angle_to(user);
            let paths = (0..config.num_paths)
                .map(|l| {
                    let gain = complex_gaussian(&mut rng, pl / config.num_paths as f64);
                    let delay = rng.random::<f64>();
                    let scatter = rng.random::<f64>() * TAU - PI;
                    PathParams {
                        gain,
                        delay,
                        aod: if l == 0 { los } else { scatter },
                    }
                })
                .collect();
            per_user.push(paths);
        }
        comm_paths.push(per_user);
    }

    let reflectivity_phase = (0..tx_aps.len())
        .map(|_| (0..rx_aps.len()).map(|_| rng.random::<f64>() * TAU).collect())
        .collect();
    let symbols = draw_symbols(&mut rng, config.num_freq_samples, config.num_users);

    let mut scenario = Scenario {
        freq_grid: config.resolved_freq_grid(),
        rate_weights: config.resolved_rate_weights(),
        target: config.target,
        tx_aps,
        rx_aps,
        users,
        comm_paths,
        reflectivity_phase,
        reflectivity: Vec::new(),
        geometry: Vec::new(),
        symbols,
        noise_power: config.noise_power_watts(),
        config: config.clone(),
    };
    scenario.refresh_sensing()?;
    Ok(scenario)
}
