//! Versioned JSON policy checkpoints. Weight and optimiser arrays are
//! little-endian f64 bytes in base64, so a reload is bit-exact.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use cfisac_core::ScenarioConfig;
use cfisac_metarl::mlp::{Activation, Adam};
use cfisac_metarl::td3::{AgentSnapshot, NetworkSnapshot, RngState};
use cfisac_metarl::{Td3Agent, Td3Config};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

pub const FORMAT_VERSION: u32 = 1;

const NETWORK_NAMES: [&str; 6] = ["actor", "critic_1", "critic_2", "actor_target", "critic_1_target", "critic_2_target"];
const OPTIMIZER_NAMES: [&str; 3] = ["actor", "critic_1", "critic_2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodedNetwork {
    pub name: String,
    pub layer_widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub weights: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodedOptimizer {
    pub name: String,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: String,
    pub v: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodedRng {
    pub algorithm: String,
    pub seed: String,
    pub stream: u64,
    /// Decimal, since JSON numbers cannot hold a u128.
    pub word_pos: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub scenario_fingerprint: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub td3: Td3Config,
    pub updates: u64,
    pub networks: Vec<EncodedNetwork>,
    pub optimizers: Vec<EncodedOptimizer>,
    pub rng: EncodedRng,
}

/// SHA-256 over the canonical JSON form of the scenario configuration.
pub fn scenario_fingerprint(cfg: &ScenarioConfig) -> String {
    let json = serde_json::to_string(cfg).expect("scenario config serialises");
    Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode_f64s(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

pub fn decode_f64s(text: &str) -> Result<Vec<f64>> {
    let bytes = B64.decode(text).map_err(|e| HarnessError::Config(format!("checkpoint: bad base64: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(HarnessError::Config("checkpoint: array length is not a multiple of 8 bytes".into()));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

impl Checkpoint {
    pub fn from_agent(agent: &Td3Agent, scenario: &ScenarioConfig) -> Self {
        let snap = agent.snapshot();
        Self {
            format_version: FORMAT_VERSION,
            scenario_fingerprint: scenario_fingerprint(scenario),
            state_dim: snap.state_dim,
            action_dim: snap.action_dim,
            td3: snap.config,
            updates: snap.updates,
            networks: snap
                .networks
                .iter()
                .zip(NETWORK_NAMES)
                .map(|(n, name)| EncodedNetwork {
                    name: name.into(),
                    layer_widths: n.widths.clone(),
                    activations: n.activations.clone(),
                    weights: encode_f64s(&n.params),
                })
                .collect(),
            optimizers: snap
                .optimizers
                .iter()
                .zip(OPTIMIZER_NAMES)
                .map(|(o, name)| EncodedOptimizer {
                    name: name.into(),
                    lr: o.lr,
                    beta1: o.beta1,
                    beta2: o.beta2,
                    eps: o.eps,
                    t: o.t,
                    m: encode_f64s(&o.m),
                    v: encode_f64s(&o.v),
                })
                .collect(),
            rng: EncodedRng {
                algorithm: "chacha8".into(),
                seed: B64.encode(snap.rng.seed),
                stream: snap.rng.stream,
                word_pos: snap.rng.word_pos.to_string(),
            },
        }
    }

    /// Rebuilds the agent. A scenario other than the one trained on only
    /// draws a warning.
    pub fn to_agent(&self, scenario: &ScenarioConfig) -> Result<Td3Agent> {
        if self.format_version != FORMAT_VERSION {
            return Err(HarnessError::Config(format!(
                "checkpoint format {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.scenario_fingerprint != scenario_fingerprint(scenario) {
            log::warn!("checkpoint was trained on a different scenario (fingerprint mismatch)");
        }
        let bad = |m: String| HarnessError::Config(format!("checkpoint: {m}"));
        let networks = self
            .networks
            .iter()
            .map(|n| {
                Ok(NetworkSnapshot {
                    widths: n.layer_widths.clone(),
                    activations: n.activations.clone(),
                    params: decode_f64s(&n.weights)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let optimizers = self
            .optimizers
            .iter()
            .map(|o| {
                Ok(Adam {
                    lr: o.lr,
                    beta1: o.beta1,
                    beta2: o.beta2,
                    eps: o.eps,
                    t: o.t,
                    m: decode_f64s(&o.m)?,
                    v: decode_f64s(&o.v)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if self.rng.algorithm != "chacha8" {
            return Err(bad(format!("unknown RNG `{}`", self.rng.algorithm)));
        }
        let seed: [u8; 32] = B64
            .decode(&self.rng.seed)
            .map_err(|e| bad(e.to_string()))?
            .try_into()
            .map_err(|_| bad("RNG seed must be 32 bytes".into()))?;
        let word_pos = self.rng.word_pos.parse::<u128>().map_err(|e| bad(e.to_string()))?;
        let snap = AgentSnapshot {
            config: self.td3.clone(),
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            networks,
            optimizers,
            rng: RngState { seed, stream: self.rng.stream, word_pos },
            updates: self.updates,
        };
        Td3Agent::restore(&snap).map_err(|e| bad(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serialises")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::output::write(path, &(self.to_json() + "\n"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("checkpoint {}: {e}", path.display())))
    }
}
