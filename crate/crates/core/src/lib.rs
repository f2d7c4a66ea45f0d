//! Dormant-permission minimisation for cloud IAM.
//!
//! Historical access logs, current permissions and datastore data types go
//! in; a smaller set of generated groups with their grants comes out, along
//! with tooling to cluster users by behaviour, simulate credential
//! compromise and generate benchmark instances.

pub mod attack;
pub mod bits;
pub mod embedding;
pub mod error;
pub mod homogeneity;
pub mod model;
pub mod optimizer;
pub mod synth;
pub mod ubg;

pub use error::{Error, Result};
