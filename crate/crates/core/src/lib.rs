//! Graph-regression representation learning for multi-label image retrieval.
//!
//! Label maps are summarized as weighted class co-occurrence graphs; a small
//! convolutional encoder is trained to regress each image's adjacency matrix,
//! and its hidden descriptor is used for chi-square retrieval, scored with
//! mAP, ACG and NDCG.
//!
//! Pipeline: [`synthgen`] → [`graph`] → [`trainer`] → [`retrieval`] →
//! [`metrics`]; [`cli`] wires the stages together behind the `rrl` binary.

pub mod archive;
pub mod checkpoint;
pub mod cli;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod image;
pub mod labelmap;
pub mod metrics;
pub mod retrieval;
pub mod rng;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
