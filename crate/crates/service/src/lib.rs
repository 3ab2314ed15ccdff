//! Streaming runtime and HTTP/SSE service for the maintenance twin.
//!
//! Readings arrive over HTTP (`POST /ingest`) or MQTT, flow through the
//! labeler, rule engine and agent, and every step is appended to the event
//! log. HTTP reads are projections of that log.

pub mod api;
pub mod config;
pub mod outbound;
pub mod projection;
pub mod runtime;
pub mod server;

pub use config::{ConfigError, PipelineConfig, Resolved};
pub use projection::FleetSnapshot;
pub use runtime::{Pipeline, PipelineParts, Runtime, RuntimeError};
pub use server::{serve, ServeOptions};
