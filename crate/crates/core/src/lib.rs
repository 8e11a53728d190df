//! Event and anomaly detection over time-evolving notification logs.
//!
//! Notification logs are turned into a Users x Features x Hours tensor
//! ([`ingestion`]), decomposed with Tucker3 ([`decomposition`]), and analysed
//! two ways: users are ranked by their distance from the origin of the
//! user-component space ([`anomaly`]), and per-user trajectories in the
//! feature-component space ([`trajectory`]) are clustered with Ward linkage to
//! expose network-level event windows ([`clustering`]). [`synth`] produces
//! logs with planted anomalies for end-to-end checks.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod anomaly;
pub mod clustering;
pub mod decomposition;
pub mod error;
pub mod hmm;
pub mod ingestion;
mod linalg;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod trajectory;

pub use error::{Error, Result};
pub use tensor::{Matrix, Tensor3};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
