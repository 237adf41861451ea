//! Oriented boxes as Gaussians, their losses, and a ring-shaped rotated
//! convolution block, plus the seeded experiments that exercise them.
//!
//! Everything runs on the CPU in `f64` (geometry, losses) or `f32`
//! (feature maps) and is deterministic for a given seed.

pub mod error;
pub mod gaussian;
pub mod geometry;
pub mod harness;
pub mod losses;
pub mod rng;
pub mod rrc;
pub mod tensor;

pub use error::{Error, Result};
pub use gaussian::{Gbb, Lgbb};
pub use geometry::{ObbLe, RawBox};
