//! Unsupervised adversarial domain adaptation for cross-domain rating
//! prediction.
//!
//! A source domain with ratings trains user, item and interaction
//! generators plus a scoring head. Target-domain generators start as a copy
//! of the source ones and are trained against domain discriminators until
//! their representations are indistinguishable from the source's; target
//! ratings are then predicted with the frozen source head.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod layers;
pub mod models;
pub mod numerics;
pub mod optim;
pub mod pipeline;
pub mod training;

pub use error::{Error, Result};
