//! Simulation and maximum-likelihood inference for the underdamped Langevin
//! movement model.
//!
//! The model describes an animal's position and velocity by the coupled
//! stochastic differential equations `dX = V dt`, `dV = -gamma V dt +
//! sigma^2 grad log pi(X) dt + sqrt(2 gamma) sigma dW`. Its marginal
//! stationary distribution over position is proportional to `pi`, so a
//! log-linear (resource selection) model for `pi` links short-term movement
//! dynamics to a closed-form long-run utilisation distribution.
//!
//! The crate provides:
//!
//! - [`raster`]: gridded covariates with bilinear values and gradients,
//!   ESRI ASCII I/O;
//! - [`field`]: the log-linear stationary model, `log pi`, its gradient,
//!   and discretized normalized utilisation rasters;
//! - [`dynamics`]: the closed-form discretised transition, exact-step
//!   simulation, thinning, movement summaries, and the overdamped limit;
//! - [`filter`]: exact log-likelihood of observed positions with latent
//!   velocities via the Kalman filter, plus a joint-Gaussian test oracle;
//! - [`fit`]: Nelder-Mead maximum likelihood with multi-start, observed-
//!   information standard errors, and simulation-based uncertainty for the
//!   utilisation distribution;
//! - [`ssf`]: the step-selection-function representation of the discretised
//!   model and its small-interval limits;
//! - [`simstudy`]: a configurable simulate-thin-fit experiment with bias
//!   and utilisation-correlation summaries;
//! - [`cli`]: the subcommand front end used by the `ulmo` binary.
//!
//! Runnable examples for each capability live in `examples/`.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod filter;
pub mod fit;
pub mod optim;
pub mod raster;
pub mod rng;
pub mod simstudy;
pub mod ssf;
pub mod track;

pub use error::{Error, Result};
