#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trade::mapper::PlacementProblem;
use trade::model::{DelayMatrix, Placement, ResourceVector, TrafficStressGraph};
use trade::scenario::Scenario;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.json"))
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).expect("bundled scenario loads")
}

pub fn cpu(v: f64) -> ResourceVector {
    ResourceVector::from_pairs([("cpu", v)]).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random square matrix with zero diagonal; `density` is the chance an
/// off-diagonal cell is non-zero.
pub fn random_rows(rng: &mut ChaCha8Rng, dim: usize, max: f64, density: f64) -> Vec<Vec<f64>> {
    (0..dim)
        .map(|i| {
            (0..dim)
                .map(|j| {
                    if i != j && rng.random_bool(density) {
                        rng.random_range(0.0..max)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Random instance whose capacities admit at least the round-robin placement.
pub fn random_problem(
    rng: &mut ChaCha8Rng,
    services: usize,
    nodes: usize,
    density: f64,
) -> (PlacementProblem, Placement) {
    let traffic = TrafficStressGraph::from_rows(&random_rows(rng, services, 1e5, density), 60.0).unwrap();
    let delays = DelayMatrix::from_rows(&random_rows(rng, nodes, 40.0, 1.0)).unwrap();
    let demand: Vec<f64> = (0..services).map(|_| rng.random_range(0.5..2.0)).collect();
    let mut per_node = vec![0.0; nodes];
    for (s, d) in demand.iter().enumerate() {
        per_node[s % nodes] += d;
    }
    let slack = rng.random_range(1.0..2.0);
    let capacities = per_node.iter().map(|&l| cpu(l.max(2.0) * slack)).collect();
    let problem = PlacementProblem::with_adaptive_penalty(
        traffic,
        delays,
        demand.into_iter().map(cpu).collect(),
        capacities,
        0.5,
        0.5,
    )
    .unwrap();
    let initial = Placement::new((0..services).map(|s| s % nodes).collect(), nodes).unwrap();
    (problem, initial)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
