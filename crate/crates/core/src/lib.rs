//! Decoding pairwise trajectory preferences from multichannel time-series
//! feedback and aggregating the decoded verdicts into trajectory rankings.
//!
//! The crate is organized bottom-up:
//!
//! - [`spd`]: symmetric positive-definite kernels (matrix functions, shrinkage
//!   covariance, Fréchet mean, tangent-space projection)
//! - [`trajectory`]: spline interpolation, the integrated trajectory distance,
//!   median labeling and the geometric feature map
//! - [`signal`]: continuous recordings, filtering, window extraction and xDAWN
//! - [`classify`]: logistic models and pairwise verdicts
//! - [`rank`]: Borda variants, feature-based ranking and the perceptron baseline
//! - [`eval`]: metrics and cross-validation folds
//! - [`synth`]: seeded synthetic sessions with ground truth
//! - [`pipeline`]: the decode and rank stages used by the CLI

pub mod classify;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod rank;
pub mod signal;
pub mod spd;
pub mod synth;
pub mod trajectory;

pub use error::{Error, Result};

/// Identifier of a trajectory within a session.
pub type TrajId = u32;

/// Identifier of a comparison within a session (chronological index).
pub type CompId = u32;
