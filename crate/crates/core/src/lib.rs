//! Locality-aware cross-region load balancing for LLM inference.

pub mod balancer;
pub mod error;
pub mod harness;
pub mod hash;
pub mod metrics;
pub mod policy;
pub mod replica;
pub mod ring;
pub mod similarity;
pub mod simnet;
pub mod trie;
pub mod types;
pub mod workload;

pub use error::{Error, Result};
