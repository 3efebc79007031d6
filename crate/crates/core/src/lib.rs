//! Active exploration of unknown dynamical systems.
//!
//! The crate learns a calibrated probabilistic model of `x' = f(x, u) + w`
//! by repeatedly planning trajectories that visit state-action pairs where
//! the model is most uncertain, then uses the learned mean model to solve
//! downstream control tasks without further data collection.
//!
//! Layout:
//!
//! * [`statmodel`]: exact multi-output GP regression and the [`StatModel`] trait.
//! * [`ensemble`]: probabilistic MLP ensembles with hand-written backprop.
//! * [`envs`]: analytic simulators, task rewards, reachable-set sampling.
//! * [`rewards`]: intrinsic exploration rewards and trajectory aggregation.
//! * [`planner`]: iCEM with colored noise, optimistic/mean/TS-1 propagation, MPC.
//! * [`experiment`]: the episodic exploration loop and its metrics.

// `!(x > 0.0)` rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::type_complexity, clippy::needless_range_loop)]

pub mod ensemble;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod oracle;
pub mod planner;
pub mod rewards;
pub mod rng;
pub mod selftest;
pub mod statmodel;

pub use error::{Error, Result};
pub use statmodel::{BatchPrediction, Dataset, Prediction, StatModel};

/// Version of this library, recorded in run artifacts.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
