use std::time::Instant;

use super::cost::PlacementProblem;
use super::pga::PlacementResult;
use super::MapperError;
use crate::model::Placement;

/// Default cap on the number of placements the exhaustive search may visit.
pub const DEFAULT_ORACLE_LIMIT: u64 = 1_000_000;

/// Exact minimizer of the penalized cost by enumerating all `p^k` placements
/// in lexicographic order. Ties keep the lexicographically smallest placement.
pub fn brute_force_oracle(problem: &PlacementProblem, limit: u64) -> Result<PlacementResult, MapperError> {
    let k = problem.services();
    let p = problem.nodes();
    let count = u32::try_from(k)
        .ok()
        .and_then(|k| (p as u64).checked_pow(k))
        .filter(|&n| n <= limit)
        .ok_or(MapperError::OracleTooLarge {
            services: k,
            nodes: p,
            limit,
        })?;

    let started = Instant::now();
    let mut scratch = problem.scratch();
    let mut assignment = vec![0usize; k];
    let mut best_assignment = assignment.clone();
    let mut best = problem.cost_with_scratch(&assignment, &mut scratch);
    for _ in 1..count {
        // Odometer increment, last service fastest: lexicographic order.
        for slot in assignment.iter_mut().rev() {
            *slot += 1;
            if *slot < p {
                break;
            }
            *slot = 0;
        }
        let cost = problem.cost_with_scratch(&assignment, &mut scratch);
        if cost.total < best.total {
            best = cost;
            best_assignment.copy_from_slice(&assignment);
        }
    }
    Ok(PlacementResult {
        placement: Placement::new(best_assignment, p)?,
        cost: best,
        iterations: 1,
        accepted_moves: 0,
        evaluations: count,
        elapsed_s: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DelayMatrix, ResourceVector, TrafficStressGraph};

    fn cpu(v: f64) -> ResourceVector {
        ResourceVector::from_pairs([("cpu", v)]).unwrap()
    }

    #[test]
    fn single_service_goes_to_node_zero() {
        let t = TrafficStressGraph::zeros(1, 60.0).unwrap();
        let d = DelayMatrix::uniform(3, 2.0).unwrap();
        let problem =
            PlacementProblem::with_adaptive_penalty(t, d, vec![cpu(1.0)], vec![cpu(2.0); 3], 0.5, 0.5).unwrap();
        let out = brute_force_oracle(&problem, DEFAULT_ORACLE_LIMIT).unwrap();
        assert_eq!(out.placement.assignment(), &[0]);
        assert_eq!(out.cost.total, 0.0);
    }

    #[test]
    fn chatty_pair_is_colocated() {
        let t = TrafficStressGraph::from_rows(&[vec![0.0, 7.0], vec![2.0, 0.0]], 60.0).unwrap();
        let d = DelayMatrix::uniform(3, 2.0).unwrap();
        let problem =
            PlacementProblem::with_adaptive_penalty(t, d, vec![cpu(1.0); 2], vec![cpu(4.0); 3], 0.5, 0.5).unwrap();
        let out = brute_force_oracle(&problem, DEFAULT_ORACLE_LIMIT).unwrap();
        assert_eq!(out.placement.assignment(), &[0, 0]);
        assert_eq!(out.cost.total, 0.0);
        assert_eq!(out.evaluations, 9);
    }

    #[test]
    fn refuses_large_instances() {
        let t = TrafficStressGraph::zeros(20, 60.0).unwrap();
        let d = DelayMatrix::uniform(10, 1.0).unwrap();
        let problem =
            PlacementProblem::with_adaptive_penalty(t, d, vec![cpu(1.0); 20], vec![cpu(4.0); 10], 0.5, 0.5).unwrap();
        assert!(matches!(
            brute_force_oracle(&problem, DEFAULT_ORACLE_LIMIT),
            Err(MapperError::OracleTooLarge { .. })
        ));
    }
}
