//! Two-agent shared-autonomy scheduling learned from demonstrations and
//! operator corrections.

pub mod behavior;
pub mod confidence;
pub mod demo_io;
pub mod error;
pub mod experiment;
pub mod runtime;
pub mod scheduler;
pub mod warp;

pub use error::{Error, Result};
