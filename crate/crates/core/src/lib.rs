//! Desk-scale simulator for the single-ion quantum Zeno experiment.
//!
//! A coherently driven, relaxing two-level atom is interrupted by projective
//! probe measurements. The crate generates the resulting binary measurement
//! trajectories and provides the statistics used to analyze them:
//!
//! - [`dynamics`]: Bloch-vector propagation and closed-form survival laws.
//! - [`protocol`]: drive/probe trajectories, unobserved evolution, detuning
//!   spectra and the `T²/N` Zeno-scaling scan.
//! - [`statistics`]: run-length histograms, the `U(q)/U(1)` estimator, exact
//!   finite-length run expectations and maximum-likelihood fitting.

pub mod dynamics;
pub mod error;
pub mod protocol;
pub mod statistics;

pub use dynamics::{BlochState, DampingForm, DriveConfig, SurvivalModel};
pub use error::{Result, ZenoError};
pub use protocol::{Fidelities, Mode, Outcome, Trajectory};
pub use statistics::{FitResult, RunHistogram};
