//! Experiment configuration: one TOML file with a section per component.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use cfisac_core::scenario::{build_scenario, dbm_to_watts};
use cfisac_core::{Point, ScenarioConfig};
use cfisac_metarl::{EnvConfig, MetaConfig, Td3Config, TsMode};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    /// Movable antennas, trained against the worst-case TS error.
    #[default]
    MaMetarl,
    /// Movable antennas, trained as if the APs were perfectly synchronised.
    MaMetarlIdealTs,
    /// Fixed uniform half-wavelength arrays; position actions ignored.
    Fpa,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [Baseline::MaMetarl, Baseline::MaMetarlIdealTs, Baseline::Fpa];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::MaMetarl => "ma-metarl",
            Baseline::MaMetarlIdealTs => "ma-metarl-ideal-ts",
            Baseline::Fpa => "fpa",
        }
    }

    /// Applies the baseline to the environment used for training.
    pub fn configure(self, env: &mut EnvConfig) {
        match self {
            Baseline::MaMetarl => {}
            Baseline::MaMetarlIdealTs => env.ts_mode = TsMode::Ideal,
            Baseline::Fpa => env.fixed_positions = true,
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Baseline {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Baseline::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| format!("unknown baseline `{s}` (expected ma-metarl, ma-metarl-ideal-ts or fpa)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// `P_max` in dBm.
    TransmitPower,
    /// Transmit elements per AP.
    NumMas,
    /// Per-user per-subcarrier rate floor (bit/s/Hz).
    RateFloor,
    /// Target distance (m) from the origin along the direction of the
    /// first receive AP.
    TargetDistance,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 4] =
        [SweepAxis::TransmitPower, SweepAxis::NumMas, SweepAxis::RateFloor, SweepAxis::TargetDistance];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::TransmitPower => "transmit_power",
            SweepAxis::NumMas => "num_mas",
            SweepAxis::RateFloor => "rate_floor",
            SweepAxis::TargetDistance => "target_distance",
        }
    }

    /// Scenario at one sweep point.
    pub fn apply(self, base: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let mut cfg = base.clone();
        match self {
            SweepAxis::TransmitPower => cfg.p_max = dbm_to_watts(value),
            SweepAxis::NumMas => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(HarnessError::Config(format!("num_mas values must be positive integers, got {value}")));
                }
                cfg.num_tx_mas = value as usize;
            }
            SweepAxis::RateFloor => cfg.rate_floor = value,
            SweepAxis::TargetDistance => {
                let rx = build_scenario(base)?.rx_aps[0];
                let norm = rx.norm();
                if norm == 0.0 {
                    return Err(HarnessError::Config("receive AP 1 sits at the origin".into()));
                }
                cfg.target = Point::new(rx.x / norm * value, rx.y / norm * value);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        SweepAxis::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            format!("unknown axis `{s}` (expected transmit_power, num_mas, rate_floor or target_distance)")
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Greedy evaluation episodes.
    pub episodes: usize,
    /// Best training actions re-scored with a full worst-case solve.
    pub candidates: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 1, candidates: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub axis: Option<SweepAxis>,
    pub values: Vec<f64>,
    pub baseline: Baseline,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub env: EnvConfig,
    pub td3: Td3Config,
    pub meta: MetaConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.env.validate()?;
        self.td3.validate()?;
        self.meta.validate()?;
        if self.eval.candidates == 0 {
            return Err(HarnessError::Config("eval.candidates must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// A fully resolved sweep request.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub baseline: Baseline,
    pub seeds: Vec<u64>,
}

impl ExperimentSpec {
    pub fn new(axis: SweepAxis, values: Vec<f64>, baseline: Baseline, seeds: Vec<u64>) -> Result<Self> {
        if values.is_empty() {
            return Err(HarnessError::Config("a sweep needs at least one axis value".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(HarnessError::Config("axis values must be finite".into()));
        }
        let up = values.windows(2).all(|w| w[1] > w[0]);
        let down = values.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(HarnessError::Config(format!("axis values must be strictly monotone, got {values:?}")));
        }
        if seeds.is_empty() {
            return Err(HarnessError::Config("at least one seed is required".into()));
        }
        Ok(Self { axis, values, baseline, seeds })
    }
}

/// Comma-separated list, e.g. `20,25,30`.
pub fn parse_list<T: FromStr>(text: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| HarnessError::Config(format!("bad list entry `{s}`: {e}"))))
        .collect()
}
