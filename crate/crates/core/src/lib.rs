//! Uncertainty-aware learning from demonstration.
//!
//! A Bayes-by-Backprop policy reads temporal windows of recent experience and
//! reports both an action and a scalar predictive uncertainty. A detector
//! smooths that uncertainty and compares it to an adaptive threshold to decide
//! when the learner should stop and ask the expert for more demonstrations.
//!
//! Modules:
//! - [`bayes_net`]: mean-field Bayesian MLP trained by Bayes-by-Backprop.
//! - [`gp_baseline`]: exact GP regression with an ARD squared-exponential kernel.
//! - [`env_suite`]: double integrator and pendulum contexts with LQR / swing-up experts.
//! - [`window_pipeline`]: trajectory to temporal-window features, z-score normalization.
//! - [`confidence_detector`]: moving-average uncertainty detector with threshold `c * omega`.
//! - [`active_loop`]: the active query loop, naive/random baselines and metrics.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod active_loop;
pub mod bayes_net;
pub mod confidence_detector;
pub mod dataset;
pub mod env_suite;
pub mod error;
pub mod gp_baseline;
pub mod policy;
mod record;
pub mod window_pipeline;

pub use error::{LfdError, Result};
pub use policy::PredictiveOutput;
