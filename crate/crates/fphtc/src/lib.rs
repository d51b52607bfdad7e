//! Flow-packet hybrid traffic classification.
//!
//! A flow-based gradient-boosted-tree classifier (the teacher) labels TCP
//! flows by class of service. A single CART over four packet-header features
//! (the student) is trained on those labels and compiled into a routing-policy
//! rule table that a router can apply per packet. Supporting modules cover
//! flow assembly from pcap captures, a seeded synthetic traffic generator,
//! the generalization-bound / labeling-cost analysis, and a time-slotted
//! online simulation with threshold-triggered retraining.

pub mod analysis;
pub mod distillation;
pub mod flow_features;
pub mod ingestion;
pub mod online_sim;
pub mod policy;
pub mod teacher;
pub mod traffic_model;

pub mod par;
mod rng;

pub use error::Error;
pub type Result<T> = std::result::Result<T, Error>;

mod error {
    use thiserror::Error;

    #[derive(Debug, Error)]
    pub enum Error {
        #[error("invalid argument: {0}")]
        InvalidArgument(String),
        #[error("class {0} has no samples")]
        EmptyClass(String),
        #[error("pcap format error: {0}")]
        PcapFormat(String),
        #[error("manifest error: {0}")]
        Manifest(String),
        #[error("model file error: {0}")]
        ModelFormat(String),
        #[error("policy file error at line {line}: {msg}")]
        PolicyFormat { line: usize, msg: String },
        #[error("flow has no ground-truth application label")]
        MissingGroundTruth,
        #[error("flow dataset is missing the label required by its kind")]
        MissingLabel,
        #[error("feature dimension mismatch: expected {expected}, got {got}")]
        DimensionMismatch { expected: usize, got: usize },
        #[error(transparent)]
        Io(#[from] std::io::Error),
    }
}
