//! Core building blocks for a predictive-maintenance digital twin.
//!
//! The pipeline runs roughly left to right through the modules:
//!
//! ```text
//! ingest -> preprocess -> labeler -> automl
//!              \-> knowledge (rule inference) -> agent (alerts, stop commands)
//!                                                  \-> store (event log, model artifacts)
//! ```
//!
//! Every module is usable on its own; the service and CLI crates compose them.

pub mod agent;
pub mod automl;
pub mod ingest;
pub mod knowledge;
pub mod labeler;
pub mod preprocess;
pub mod store;

pub use ingest::SensorReading;
pub use labeler::{ConditionEstimate, ManagementPolicy, PolicyStyle, SensorSpec};
pub use preprocess::Dataset;
