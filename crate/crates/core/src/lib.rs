//! Detector-based radio tomographic imaging.
//!
//! The processing chain, per frame:
//!
//! 1. subtract each link's line-of-sight baseline from its RSS ([`classifier`]);
//! 2. compare the residual against an envelope-derived threshold and fuse the
//!    per-channel decisions of a pair by strict majority ([`detector`]);
//! 3. sum the precomputed weights of every detecting, non-blacklisted pair
//!    into an occupancy field using additions only ([`reconstruction`]);
//! 4. take the weighted centroid of the mode region ([`localization`]).
//!
//! [`simulator`] synthesizes RSS streams from the single-bounce reflection
//! model in [`channel`] plus the power-measurement noise of [`noise`], and
//! [`evaluation`] turns distance errors into moment and goodness-of-fit
//! reports.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        let tol: f64 = $tol;
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }};
}

pub mod channel;
pub mod classifier;
pub mod cli;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod kv;
pub mod localization;
pub mod noise;
pub mod par;
pub mod reconstruction;
pub mod simulator;

pub use error::{Error, Result};
pub use geometry::{Channel, Deployment, Grid, Pair, Point};
pub use par::Execution;
