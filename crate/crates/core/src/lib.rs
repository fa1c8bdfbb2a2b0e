//! Self-evolving reasoning harness for explainable face-forgery identification.
//!
//! - [`response`]: the think/answer output contract and its parser.
//! - [`reward`]: format, accuracy and self-evolution rewards.
//! - [`grpo`]: group advantages, candidate filtering and the evolution loop.
//! - [`fvce`]: restoration differences, frequency maps and the auxiliary input.
//! - [`clients`]: policy, teacher and embedder clients (HTTP and mocks).
//! - [`metrics`]: ACC, AUC, EER and CIDEr.
//! - [`dataset`]: CoT-Face JSON Lines records.

pub mod clients;
pub mod dataset;
pub mod fvce;
pub mod grpo;
pub mod metrics;
pub mod response;
pub mod reward;

pub use response::{CotResponse, ParseError, RegionFinding, RegionKey, RegionVocab, Verdict};
pub use reward::{Embedding, RewardBreakdown};
