//! Streaming dual-memory pointmap reconstruction at desk scale.
//!
//! The crate bundles a trainable reconstruction model (temporal context
//! aggregation, transient dynamics memory, persistent structure memory, and an
//! iterative readout decoder), a procedural scene generator with exact ground
//! truth, training objectives, and a trajectory/depth/point-cloud evaluation
//! kit, all on top of a minimal reverse-mode tensor core.

pub mod error;
pub mod tensor;
pub mod testsupport;

pub use error::{Error, Result};
