//! Extreme-event suppression in a nine-mode model of turbulent shear flow.
//!
//! The crate couples a control-aware echo state network (a random-feature
//! surrogate of the controlled dynamics, trained by ridge regression) with
//! threshold, proportional and receding-horizon controllers that switch the
//! flow's Reynolds number to prevent bursts of kinetic energy.
//!
//! Modules:
//! - [`dynsys`]: the flow model, integrator and training data.
//! - [`reservoir`]: the echo state network surrogate.
//! - [`reward`]: per-step rewards and episode metrics.
//! - [`control`]: controllers and the controlled-episode runner.
//! - [`hyperopt`]: Gaussian-process Bayesian optimisation and tuning.
//! - [`harness`]: configuration, experiment commands and CSV outputs.

pub mod control;
pub mod dynsys;
pub mod error;
pub mod exec;
pub mod harness;
pub mod hexfloat;
pub mod hyperopt;
pub mod reservoir;
pub mod reward;
pub mod seeds;

pub use error::{Error, Result};
