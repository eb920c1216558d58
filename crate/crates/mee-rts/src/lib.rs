//! Robust Bayesian state estimation built around the minimum-error-entropy
//! (MEE) Rauch–Tung–Striebel smoother.
//!
//! The crate provides:
//!
//! - [`model`]: state-space model types, Gaussian beliefs, the prediction
//!   step, the Gaussian kernel, Cholesky whitening, and the MSD metric;
//! - [`noise`]: deterministic samplers for mixed-Gaussian, α-stable, and
//!   Rayleigh noise plus arbitrary mixtures;
//! - [`filters`]: forward measurement updates — classic Kalman, maximum
//!   correntropy (MCC), and the MEE fixed-point update;
//! - [`smoothers`]: backward passes — classic RTS, MC-RTS, MEE-RTS, and the
//!   extended MEE-ERTS for nonlinear models;
//! - [`theory`]: mean/mean-square error recursions, the Kronecker closed
//!   form for the steady-state error covariance, and flop-count polynomials;
//! - [`harness`]: scenario catalog, trajectory simulation, and the parallel
//!   Monte-Carlo benchmark driver;
//! - [`config`]: experiment configuration and the CSV/JSON emitters used by
//!   the `mee-rts` binary.

pub mod config;
pub mod error;
pub mod filters;
pub mod harness;
pub mod model;
pub mod noise;
pub mod smoothers;
pub mod theory;

pub use error::{Error, Result};
pub use model::{GaussianBelief, LinearStateSpace, MeeConfig, NonlinearStateSpace};
