//! Comparison schedulers: Kubernetes-style least-loaded spreading and
//! NetMARKS-style traffic scoring of candidate nodes.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{NodeSpec, Placement, ServiceSpec, TrafficStressGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("no nodes to place on")]
    NoNodes,
    #[error("no node has room for service {0}")]
    NoFeasibleNode(usize),
    #[error("service index {0} out of range")]
    UnknownService(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeScore {
    pub node: usize,
    pub score: f64,
}

/// Per-node, per-kind load, summed over aggregate service demands.
fn node_loads(
    services: &[ServiceSpec],
    nodes: usize,
    assignment: impl Iterator<Item = (usize, usize)>,
) -> Vec<Vec<f64>> {
    let kinds = services.first().map_or(0, |s| s.demand.kinds().len());
    let mut loads = vec![vec![0.0; kinds]; nodes];
    for (service, node) in assignment {
        let demand = services[service].aggregate_demand();
        for (slot, d) in loads[node].iter_mut().zip(demand.amounts()) {
            *slot += d;
        }
    }
    loads
}

/// Scalar "how full" measure: sum over resource kinds of load / capacity.
fn utilization(load: &[f64], node: &NodeSpec) -> f64 {
    load.iter()
        .zip(node.capacity.amounts())
        .filter(|(_, &cap)| cap > 0.0)
        .map(|(l, cap)| l / cap)
        .sum()
}

fn fits(load: &[f64], service: &ServiceSpec, node: &NodeSpec) -> bool {
    load.iter()
        .zip(service.aggregate_demand().amounts())
        .zip(node.capacity.amounts())
        .all(|((l, d), cap)| l + d <= *cap)
}

/// Least-utilized node among `candidates`; ties go to the lower index.
fn least_loaded(candidates: impl Iterator<Item = usize>, loads: &[Vec<f64>], nodes: &[NodeSpec]) -> Option<usize> {
    candidates.min_by(|&a, &b| {
        utilization(&loads[a], &nodes[a])
            .partial_cmp(&utilization(&loads[b], &nodes[b]))
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    })
}

/// Places services in index order, each on the least-utilized node it fits
/// on (or the least-utilized node overall when it fits nowhere). Never
/// revisits earlier decisions.
pub fn default_spread(services: &[ServiceSpec], nodes: &[NodeSpec]) -> Result<Placement, BaselineError> {
    if nodes.is_empty() {
        return Err(BaselineError::NoNodes);
    }
    let kinds = services.first().map_or(0, |s| s.demand.kinds().len());
    let mut loads = vec![vec![0.0; kinds]; nodes.len()];
    let mut assignment = Vec::with_capacity(services.len());
    for service in services {
        let feasible = (0..nodes.len()).filter(|&n| fits(&loads[n], service, &nodes[n]));
        let chosen = least_loaded(feasible, &loads, nodes)
            .or_else(|| least_loaded(0..nodes.len(), &loads, nodes))
            .expect("nodes is non-empty");
        for (slot, d) in loads[chosen].iter_mut().zip(service.aggregate_demand().amounts()) {
            *slot += d;
        }
        assignment.push(chosen);
    }
    Ok(Placement::new(assignment, nodes.len()).expect("chosen from node range"))
}

/// For every node, the traffic (both directions) between `target` and the
/// other services currently on that node.
pub fn netmarks_score(
    target: usize,
    traffic: &TrafficStressGraph,
    placement: &Placement,
    nodes: usize,
) -> Vec<NodeScore> {
    let mut scores: Vec<NodeScore> = (0..nodes).map(|node| NodeScore { node, score: 0.0 }).collect();
    for (service, &node) in placement.assignment().iter().enumerate() {
        if service != target {
            scores[node].score += traffic.get(target, service) + traffic.get(service, target);
        }
    }
    scores
}

/// Node chosen for `target`: the highest-scoring node that can take its
/// demand. The current node is kept when it ties for the best positive score;
/// with no traffic at all the least-utilized feasible node is used.
pub fn netmarks_place(
    target: usize,
    traffic: &TrafficStressGraph,
    placement: &Placement,
    services: &[ServiceSpec],
    nodes: &[NodeSpec],
) -> Result<usize, BaselineError> {
    if target >= services.len() || target >= placement.len() {
        return Err(BaselineError::UnknownService(target));
    }
    if nodes.is_empty() {
        return Err(BaselineError::NoNodes);
    }
    let others = placement
        .assignment()
        .iter()
        .copied()
        .enumerate()
        .filter(|&(s, _)| s != target);
    let loads = node_loads(services, nodes.len(), others);
    let feasible: Vec<usize> = (0..nodes.len())
        .filter(|&n| fits(&loads[n], &services[target], &nodes[n]))
        .collect();
    if feasible.is_empty() {
        return Err(BaselineError::NoFeasibleNode(target));
    }

    let scores = netmarks_score(target, traffic, placement, nodes.len());
    let best_score = feasible.iter().map(|&n| scores[n].score).fold(0.0, f64::max);
    if best_score <= 0.0 {
        return Ok(least_loaded(feasible.into_iter(), &loads, nodes).expect("non-empty"));
    }
    let current = placement.node_of(target);
    if feasible.contains(&current) && scores[current].score == best_score {
        return Ok(current);
    }
    Ok(feasible
        .into_iter()
        .find(|&n| scores[n].score == best_score)
        .expect("best score comes from a feasible node"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NodeId, ResourceVector, ServiceId};

    fn svc(index: usize, cpu: f64) -> ServiceSpec {
        ServiceSpec::new(
            ServiceId {
                index,
                name: format!("s{index}"),
            },
            ResourceVector::from_pairs([("cpu", cpu)]).unwrap(),
            true,
            1,
        )
        .unwrap()
    }

    fn node(index: usize, cpu: f64) -> NodeSpec {
        NodeSpec {
            id: NodeId {
                index,
                name: format!("n{index}"),
            },
            capacity: ResourceVector::from_pairs([("cpu", cpu)]).unwrap(),
        }
    }

    fn counts(p: &Placement, nodes: usize) -> Vec<usize> {
        let mut c = vec![0; nodes];
        p.assignment().iter().for_each(|&n| c[n] += 1);
        c
    }

    #[test]
    fn spread_examples() {
        let four: Vec<_> = (0..4).map(|i| svc(i, 1.0)).collect();
        let two: Vec<_> = (0..2).map(|i| node(i, 4.0)).collect();
        assert_eq!(counts(&default_spread(&four, &two).unwrap(), 2), vec![2, 2]);

        assert_eq!(default_spread(&[svc(0, 1.0)], &two).unwrap().assignment(), &[0]);

        let many: Vec<_> = (0..27).map(|i| svc(i, 1.0)).collect();
        let nine: Vec<_> = (0..9).map(|i| node(i, 4.0)).collect();
        let p = default_spread(&many, &nine).unwrap();
        assert_eq!(counts(&p, 9), vec![3; 9]);
        // Equal demands on equal nodes degenerate to round-robin.
        assert!(p.assignment().iter().enumerate().all(|(i, &n)| n == i % 9));

        assert_eq!(default_spread(&four, &[]), Err(BaselineError::NoNodes));
    }

    fn star() -> (TrafficStressGraph, Placement) {
        // target 0; a = 1 on node 1; b = 2 and c = 3 on node 2; target on node 0.
        let mut rows = vec![vec![0.0; 4]; 4];
        rows[0][1] = 5.0;
        rows[2][0] = 2.0;
        rows[0][3] = 1.0;
        let t = TrafficStressGraph::from_rows(&rows, 60.0).unwrap();
        (t, Placement::new(vec![0, 1, 2, 2], 3).unwrap())
    }

    #[test]
    fn score_example() {
        let (t, p) = star();
        let scores = netmarks_score(0, &t, &p, 3);
        assert_eq!(scores.iter().map(|s| s.score).collect::<Vec<_>>(), vec![0.0, 5.0, 3.0]);

        let quiet = TrafficStressGraph::zeros(4, 60.0).unwrap();
        assert!(netmarks_score(0, &quiet, &p, 3).iter().all(|s| s.score == 0.0));

        let together = Placement::new(vec![0, 2, 2, 2], 3).unwrap();
        assert_eq!(netmarks_score(0, &t, &together, 3)[2].score, 8.0);
    }

    #[test]
    fn place_examples() {
        let (t, p) = star();
        let services: Vec<_> = (0..4).map(|i| svc(i, 1.0)).collect();
        let roomy: Vec<_> = (0..3).map(|i| node(i, 4.0)).collect();
        assert_eq!(netmarks_place(0, &t, &p, &services, &roomy), Ok(1));

        // Node 1 is full: fall through to the next best feasible node.
        let tight = vec![node(0, 4.0), node(1, 1.0), node(2, 4.0)];
        assert_eq!(netmarks_place(0, &t, &p, &services, &tight), Ok(2));

        // No traffic: least-utilized feasible node.
        let quiet = TrafficStressGraph::zeros(4, 60.0).unwrap();
        assert_eq!(netmarks_place(0, &quiet, &p, &services, &roomy), Ok(0));

        let none = vec![node(0, 0.5), node(1, 0.5), node(2, 0.5)];
        assert_eq!(
            netmarks_place(0, &t, &p, &services, &none),
            Err(BaselineError::NoFeasibleNode(0))
        );
    }

    #[test]
    fn current_node_kept_on_tie() {
        let mut rows = vec![vec![0.0; 3]; 3];
        rows[0][1] = 4.0;
        rows[0][2] = 4.0;
        let t = TrafficStressGraph::from_rows(&rows, 60.0).unwrap();
        let services: Vec<_> = (0..3).map(|i| svc(i, 1.0)).collect();
        let nodes: Vec<_> = (0..3).map(|i| node(i, 4.0)).collect();
        let p = Placement::new(vec![2, 1, 2], 3).unwrap();
        assert_eq!(netmarks_place(0, &t, &p, &services, &nodes), Ok(2));
    }
}
