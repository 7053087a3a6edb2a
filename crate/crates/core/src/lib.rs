//! Two-party secret-shared transformer inference with oblivious token
//! pruning and per-token polynomial reduction.

pub mod channel;
pub mod error;
pub mod experiments;
pub mod linear;
pub mod nonlinear;
pub mod pipeline;
pub mod pruning;
pub mod ring;
pub mod sharing;
pub mod transcript;

pub use error::{Error, Result};
pub use ring::{FixedPointParams, RingElement};
