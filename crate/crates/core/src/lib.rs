//! Discrete-event simulator and protocol library for population-size
//! counting in the population model: n anonymous agents interact in uniformly
//! random ordered pairs and update their states by a common transition
//! function.
//!
//! The crate provides the auxiliary building blocks (epidemic broadcast, the
//! junta process, phase clocks, synthetic coins, two token-balancing rules),
//! two leader elections, the approximate-counting protocol with its
//! error-detection and slow-backup machinery, the exact-counting protocol,
//! and an experiment harness with a CLI (`popproto run|sweep|check`).

pub mod approx;
pub mod balancing;
mod compose;
pub mod engine;
pub mod error;
pub mod exact;
pub mod harness;
pub mod leader;
pub mod primitives;
pub mod profile;
pub mod rng;
pub mod state;
pub mod suites;

pub use engine::{run, ProtocolSuite, RunLimits, RunMetrics, Runner};
pub use error::{ConfigError, RunError, StepError};
pub use profile::Profile;
pub use state::AgentState;
