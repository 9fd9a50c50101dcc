//! Reinforcement learning side of the CF-ISAC toolkit: a small MLP stack,
//! TD3, the environment wrapper, and first-order meta-training.

pub mod cfisac_env;
pub mod env;
pub mod meta;
pub mod mlp;
pub mod replay;
pub mod td3;
pub mod train;

pub use cfisac_env::{CfIsacEnv, EnvConfig, MdpSpec, TsMode};
pub use env::{Environment, Step, ToyEnv};
pub use meta::{meta_adapt, meta_train, scratch_adapt, MetaConfig};
pub use td3::{Td3Agent, Td3Config};

#[derive(Debug, thiserror::Error)]
pub enum MetaRlError {
    #[error(transparent)]
    Core(#[from] cfisac_core::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("task {task} failed: {source}")]
    Task {
        task: usize,
        #[source]
        source: Box<MetaRlError>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, MetaRlError>;
