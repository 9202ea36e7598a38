//! Parallel greedy placement search.
//!
//! Stressed service pairs are visited in descending stress order. For each
//! pair every (node, node) combination is tried for the two services and the
//! cheapest candidate replaces the incumbent only if it is strictly cheaper.
//! The pair list is cut into one chunk per worker; each worker starts from the
//! same placement and the cheapest worker result wins.

use std::cmp::Ordering;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::chunk::ChunkPlan;
use super::cost::{CostBreakdown, PlacementProblem};
use super::MapperError;
use crate::model::Placement;
use crate::traffic::{sort_pairs, StressElement};

/// How worker chunks are executed. Both modes produce identical results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapperConfig {
    pub workers: usize,
    pub max_rounds: usize,
    pub execution: Execution,
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            max_rounds: 10,
            execution: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementResult {
    pub placement: Placement,
    pub cost: CostBreakdown,
    /// Search rounds executed (1 for a single parallel pass).
    pub iterations: usize,
    pub accepted_moves: usize,
    pub evaluations: u64,
    pub elapsed_s: f64,
}

/// Outcome of a single worker over one chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerOutcome {
    pub placement: Placement,
    pub cost: CostBreakdown,
    /// Total cost after each accepted move, in order.
    pub accepted_costs: Vec<f64>,
    pub evaluations: u64,
}

/// Greedy pass over `tasks` starting from `initial`.
pub fn place_worker(problem: &PlacementProblem, initial: &Placement, tasks: &[StressElement]) -> WorkerOutcome {
    let nodes = problem.nodes();
    let mut scratch = problem.scratch();
    let mut assignment = initial.assignment().to_vec();
    let mut current = problem.cost_with_scratch(&assignment, &mut scratch);
    let mut accepted_costs = Vec::new();
    let mut evaluations = 0u64;

    for task in tasks {
        let (u, v) = (task.upstream, task.downstream);
        let original = (assignment[u], assignment[v]);
        let scorer = problem.pair_scorer(&assignment, u, v);
        let mut incumbent = problem.pair_score(&scorer, original.0, original.1);
        let mut best = None;
        for a in 0..nodes {
            for b in 0..nodes {
                if (a, b) == original {
                    continue;
                }
                let score = problem.pair_score(&scorer, a, b);
                evaluations += 1;
                if score < incumbent {
                    incumbent = score;
                    best = Some((a, b));
                }
            }
        }
        let Some((a, b)) = best else { continue };
        // Scores drop terms common to all candidates; confirm on the full
        // cost so every accepted move is a strict improvement.
        assignment[u] = a;
        assignment[v] = b;
        let cost = problem.cost_with_scratch(&assignment, &mut scratch);
        if cost.total < current.total {
            current = cost;
            accepted_costs.push(cost.total);
        } else {
            assignment[u] = original.0;
            assignment[v] = original.1;
        }
    }

    WorkerOutcome {
        placement: Placement::new(assignment, nodes).expect("node indices stay in range"),
        cost: current,
        accepted_costs,
        evaluations,
    }
}

fn better(a: &WorkerOutcome, b: &WorkerOutcome) -> Ordering {
    a.cost
        .total
        .partial_cmp(&b.cost.total)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.placement.cmp(&b.placement))
}

/// One round: sort pairs, chunk them, run a worker per chunk from the same
/// `initial` placement and keep the cheapest result.
pub fn parallel_place(
    problem: &PlacementProblem,
    initial: &Placement,
    workers: usize,
    execution: Execution,
) -> Result<PlacementResult, MapperError> {
    if workers == 0 {
        return Err(MapperError::Workers);
    }
    problem.check_placement(initial)?;
    let started = Instant::now();
    let pairs = sort_pairs(problem.traffic());
    let plan = ChunkPlan::new(pairs.len(), workers);
    let run = |range: &std::ops::Range<usize>| place_worker(problem, initial, &pairs.as_slice()[range.clone()]);
    let outcomes: Vec<WorkerOutcome> = match execution {
        Execution::Parallel => plan.chunks().par_iter().map(run).collect(),
        Execution::Sequential => plan.chunks().iter().map(run).collect(),
    };
    let evaluations = outcomes.iter().map(|o| o.evaluations).sum();
    let best = outcomes.into_iter().min_by(better);
    let (placement, cost, accepted_moves) = match best {
        Some(o) => (o.placement, o.cost, o.accepted_costs.len()),
        None => (initial.clone(), problem.cost(initial), 0),
    };
    Ok(PlacementResult {
        placement,
        cost,
        iterations: 1,
        accepted_moves,
        evaluations,
        elapsed_s: started.elapsed().as_secs_f64(),
    })
}

/// Repeats [`parallel_place`] from the previous best until a round brings no
/// strict improvement or `max_rounds` is reached.
pub fn optimize(
    problem: &PlacementProblem,
    initial: &Placement,
    config: &MapperConfig,
) -> Result<PlacementResult, MapperError> {
    if config.max_rounds == 0 {
        return Err(MapperError::Rounds);
    }
    let started = Instant::now();
    let mut best = PlacementResult {
        placement: initial.clone(),
        cost: {
            problem.check_placement(initial)?;
            problem.cost(initial)
        },
        iterations: 0,
        accepted_moves: 0,
        evaluations: 0,
        elapsed_s: 0.0,
    };
    for _ in 0..config.max_rounds {
        let round = parallel_place(problem, &best.placement, config.workers, config.execution)?;
        best.iterations += 1;
        best.evaluations += round.evaluations;
        if round.cost.total < best.cost.total {
            best.placement = round.placement;
            best.cost = round.cost;
            best.accepted_moves += round.accepted_moves;
        } else {
            break;
        }
    }
    best.elapsed_s = started.elapsed().as_secs_f64();
    log::debug!(
        "placement search: {} rounds, {} evaluations, cost {:.3}, {:.3}s",
        best.iterations,
        best.evaluations,
        best.cost.total,
        best.elapsed_s
    );
    Ok(best)
}
