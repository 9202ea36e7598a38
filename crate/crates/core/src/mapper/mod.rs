//! Service-to-node mapping: the penalized communication cost, the parallel
//! greedy search that minimizes it, and an exhaustive oracle for small
//! instances.

mod chunk;
mod cost;
mod oracle;
mod pga;

use thiserror::Error;

use crate::model::ModelError;

pub use chunk::{chunk_size, ChunkPlan};
pub use cost::{adaptive_penalty_factor, calc_cost, pair_cost, CostBreakdown, PlacementProblem};
pub use oracle::{brute_force_oracle, DEFAULT_ORACLE_LIMIT};
pub use pga::{optimize, parallel_place, place_worker, Execution, MapperConfig, PlacementResult, WorkerOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapperError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("at least one worker is required")]
    Workers,
    #[error("at least one search round is required")]
    Rounds,
    #[error("exhaustive search over {nodes}^{services} placements exceeds the limit of {limit}")]
    OracleTooLarge { services: usize, nodes: usize, limit: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}
