//! Core algorithms for measuring and repairing per-group probability
//! calibration: calibration-error metrics, post-hoc calibrators,
//! group-robust trainers, multicalibration, attribution-based feature
//! selection, and the benchmark engine that ties them together.
//!
//! The crate is `no_std` (with `alloc`); all IO, file formats, and the
//! command-line front end live in the companion `paritycal-cli` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub(crate) mod linalg;

pub use error::Error;

/// Scores are clipped into `[EPS, 1 - EPS]` before logit-domain transforms.
pub const EPS: f64 = 1e-6;

pub(crate) fn sigmoid(z: f64) -> f64 {
    #[allow(unused_imports)]
    use num_traits::Float;
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn clip_unit(s: f64) -> f64 {
    s.clamp(EPS, 1.0 - EPS)
}

pub(crate) fn logit(s: f64) -> f64 {
    #[allow(unused_imports)]
    use num_traits::Float;
    let s = clip_unit(s);
    (s / (1.0 - s)).ln()
}

pub mod attribution;
pub mod calibrators;
pub mod data;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod multical;
