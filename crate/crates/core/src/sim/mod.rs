//! Discrete-event cluster model: constant-rate request arrivals over call
//! trees, analytic per-request latency, byte counters per caller/callee pair,
//! and launch-before-evict migrations driven by the control loop.

mod cluster;
mod engine;
mod latency;
mod report;

use thiserror::Error;

pub use cluster::{ClusterState, MigrationConfig, RoutingEpoch};
pub use engine::{run_simulation, SimulationOutcome};
pub use latency::{hop_ms, request_latency, Call, LinkModel, RequestType};
pub use report::{
    percentile, DecisionRecord, InstanceEvent, InstanceEventKind, MigrationRecord, PairCounter, PhaseStats,
    RequestRecord, SimulationReport, Totals, WindowStats, REPORT_SCHEMA_VERSION,
};

use crate::control::ControlError;
use crate::dynamics::DynamicsError;
use crate::model::ModelError;
use crate::traffic::TrafficError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("request type `{name}`: {message}")]
    RequestType { name: String, message: String },
    #[error("invalid simulation setting: {0}")]
    Config(String),
    #[error("migration plan names unknown service {0}")]
    UnknownService(usize),
    #[error("service `{0}` is not migratable")]
    NotMigratable(String),
    #[error("migration plan for `{0}` does not match the current placement")]
    StalePlan(String),
    #[error("service `{0}` is already being migrated")]
    MigrationInFlight(String),
    #[error("service `{service}` has no ready instance at t={time_s}s")]
    Downtime { service: String, time_s: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Control(#[from] ControlError),
}
