//! Distillation of cart-pole swing-up policies into oblique decision trees.
//!
//! The crate is organised around the pipeline stages:
//!
//! - [`sim`]: seedable cart-pole swing-up environment (reward, zenith bonus,
//!   termination, optional sensor noise and action delay).
//! - [`oracle`]: the [`oracle::Policy`] trait, an energy-shaping swing-up
//!   controller used as teacher, and inference-only MLP Q-networks.
//! - [`opct`]: oblique decision trees (training, prediction, lossless argmax
//!   pruning, node/parameter counts, JSON documents).
//! - [`distill`]: base-sample collection, episode filtering and the iterative
//!   train / evaluate / relabel / aggregate loop.
//! - [`evalstats`]: seeded evaluation, summaries and report export.
//! - [`cli`]: the `cpsu` command line front end.
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

pub mod cli;
pub mod distill;
pub mod evalstats;
pub mod opct;
pub mod oracle;
pub mod seeding;
pub mod sim;

pub use distill::{DistillConfig, DistillOutcome, IterationRecord, SampleSet};
pub use evalstats::{EpisodeLog, EvalSummary};
pub use opct::{ObliqueTree, Sample, SplitParams};
pub use oracle::{EnergyOracle, EnergyOracleParams, MlpPolicy, NoOpPolicy, Policy};
pub use sim::{Action, CartPoleSwingUp, Observation, SimConfig, SimState, StepResult};
