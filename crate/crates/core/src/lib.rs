//! Motion correction for image sequences driven by point tracks.
//!
//! Tracks from a point tracker are turned into dense displacement fields,
//! frames are warped back onto a reference frame, and the result is scored
//! with MSE and SSIM. A diffeomorphic intensity registration serves as the
//! baseline to compare against.

pub mod field;
pub mod imgcore;
pub mod metrics;
pub mod pipeline;
pub mod register;
pub mod synth;
pub mod tracks;
