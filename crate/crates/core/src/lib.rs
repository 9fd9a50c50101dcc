//! Movable-antenna cell-free ISAC models: scenarios, channels, rates and
//! constraints, the position CRLB under timing-synchronisation errors, and
//! the manifold solver for the worst-case errors.

pub mod channel;
pub mod crlb;
pub mod error;
pub mod manifold;
pub mod metrics;
pub mod scenario;

pub use channel::{CVector, CommChannels, MaLayout};
pub use crlb::{phasor_from_ts, Fim2, FimResult, PhasorVector, SensingModel, TsErrorMatrix};
pub use error::{Error, Result};
pub use manifold::{worst_case_ts, ManifoldSolverConfig, WorstCaseResult};
pub use metrics::{audit_constraints, weighted_sum_rate, BeamformingSet, ConstraintId, ConstraintReport};
pub use num_complex::Complex64;
pub use scenario::{build_scenario, Point, Scenario, ScenarioConfig};
