//! Receding-horizon control under bounded adversarial disturbances.
//!
//! The crate covers three online controllers (known system with disturbance
//! preview, unknown system with an estimation phase, and min-max without
//! preview), the closed-form constants that bound their attenuation regret,
//! and runtime checks of the value-function inequalities along trajectories.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod controller;
pub mod disturbance;
pub mod error;
pub mod estimation;
mod linalg;
pub mod minmax;
pub mod model;
pub mod rhc;

pub use error::{Error, Result};
