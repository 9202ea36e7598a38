use serde::{Deserialize, Serialize};

use super::MapperError;
use crate::model::{CostWeights, DelayMatrix, ModelError, Placement, ResourceVector, TrafficStressGraph};

/// Communication cost, overflow penalty and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub communication_cost: f64,
    pub penalty: f64,
    pub total: f64,
}

/// Weighted two-direction cost of one service pair under `placement`.
pub fn pair_cost(
    i: usize,
    j: usize,
    traffic: &TrafficStressGraph,
    delays: &DelayMatrix,
    placement: &Placement,
    weights: &CostWeights,
) -> f64 {
    let (a, b) = (placement.node_of(i), placement.node_of(j));
    weights.forward * traffic.get(i, j) * delays.get(a, b) + weights.backward * traffic.get(j, i) * delays.get(b, a)
}

/// Default penalty factor: large enough that any overflow outweighs any
/// possible communication saving on this instance.
pub fn adaptive_penalty_factor(
    traffic: &TrafficStressGraph,
    delays: &DelayMatrix,
    capacities: &[ResourceVector],
) -> f64 {
    let min_capacity = capacities
        .iter()
        .flat_map(|c| c.amounts().iter().copied())
        .filter(|&v| v > 0.0)
        .fold(f64::INFINITY, f64::min);
    let denominator = if min_capacity.is_finite() { min_capacity } else { 1.0 };
    let pf = 1e6 * traffic.max_entry() * delays.max_entry() / denominator;
    // No traffic or no delay: communication cost is identically zero and any
    // positive factor enforces capacity.
    if pf > 0.0 && pf.is_finite() {
        pf
    } else {
        1.0
    }
}

/// Validated cost-evaluation context shared read-only by all workers.
#[derive(Debug, Clone)]
pub struct PlacementProblem {
    traffic: TrafficStressGraph,
    delays: DelayMatrix,
    demands: Vec<ResourceVector>,
    capacities: Vec<ResourceVector>,
    weights: CostWeights,
    kinds: usize,
    flat_demands: Vec<f64>,
    flat_capacities: Vec<f64>,
    /// Non-zero traffic entries in row-major order.
    flows: Vec<(usize, usize, f64)>,
    /// Per service: (downstream, stress) of its outgoing flows.
    out_flows: Vec<Vec<(usize, f64)>>,
    /// Per service: (upstream, stress) of its incoming flows.
    in_flows: Vec<Vec<(usize, f64)>>,
}

/// Relative cost of every placement of one service pair, the rest fixed.
/// Terms that do not depend on where the pair goes are left out, so scores
/// only compare against each other.
pub(crate) struct PairScorer {
    u: usize,
    v: usize,
    /// Flows between `u` and services other than `v`, per node of `u`.
    u_part: Vec<f64>,
    v_part: Vec<f64>,
    t_uv: f64,
    t_vu: f64,
    /// Loads of every service except the pair.
    base_loads: Vec<f64>,
}

impl PlacementProblem {
    pub fn new(
        traffic: TrafficStressGraph,
        delays: DelayMatrix,
        demands: Vec<ResourceVector>,
        capacities: Vec<ResourceVector>,
        weights: CostWeights,
    ) -> Result<Self, MapperError> {
        let k = traffic.dim();
        let p = delays.dim();
        if demands.len() != k {
            return Err(MapperError::Dimension(format!(
                "{} demand vectors for {k} services",
                demands.len()
            )));
        }
        if capacities.len() != p {
            return Err(MapperError::Dimension(format!(
                "{} capacity vectors for {p} nodes",
                capacities.len()
            )));
        }
        if p == 0 {
            return Err(MapperError::Dimension("at least one node is required".into()));
        }
        let reference = capacities[0].kinds().to_vec();
        for v in demands.iter().chain(&capacities) {
            if v.kinds() != reference.as_slice() {
                return Err(ModelError::KindMismatch {
                    left: reference,
                    right: v.kinds().to_vec(),
                }
                .into());
            }
        }
        let flat_demands = demands.iter().flat_map(|d| d.amounts().iter().copied()).collect();
        let flat_capacities = capacities.iter().flat_map(|c| c.amounts().iter().copied()).collect();
        let flows: Vec<(usize, usize, f64)> = (0..k)
            .flat_map(|u| (0..k).map(move |v| (u, v)))
            .filter_map(|(u, v)| {
                let t = traffic.get(u, v);
                (t > 0.0).then_some((u, v, t))
            })
            .collect();
        let mut out_flows = vec![Vec::new(); k];
        let mut in_flows = vec![Vec::new(); k];
        for &(u, v, t) in &flows {
            out_flows[u].push((v, t));
            in_flows[v].push((u, t));
        }
        Ok(Self {
            traffic,
            delays,
            demands,
            capacities,
            weights,
            kinds: reference.len(),
            flat_demands,
            flat_capacities,
            flows,
            out_flows,
            in_flows,
        })
    }

    /// Same as [`PlacementProblem::new`] with the penalty factor derived from
    /// the instance.
    pub fn with_adaptive_penalty(
        traffic: TrafficStressGraph,
        delays: DelayMatrix,
        demands: Vec<ResourceVector>,
        capacities: Vec<ResourceVector>,
        forward: f64,
        backward: f64,
    ) -> Result<Self, MapperError> {
        let pf = adaptive_penalty_factor(&traffic, &delays, &capacities);
        let weights = CostWeights::new(forward, backward, pf)?;
        Self::new(traffic, delays, demands, capacities, weights)
    }

    pub fn services(&self) -> usize {
        self.traffic.dim()
    }

    pub fn nodes(&self) -> usize {
        self.delays.dim()
    }

    pub fn traffic(&self) -> &TrafficStressGraph {
        &self.traffic
    }

    pub fn delays(&self) -> &DelayMatrix {
        &self.delays
    }

    pub fn demands(&self) -> &[ResourceVector] {
        &self.demands
    }

    pub fn capacities(&self) -> &[ResourceVector] {
        &self.capacities
    }

    pub fn weights(&self) -> &CostWeights {
        &self.weights
    }

    pub fn check_placement(&self, placement: &Placement) -> Result<(), MapperError> {
        if placement.len() != self.services() {
            return Err(MapperError::Dimension(format!(
                "placement has {} entries for {} services",
                placement.len(),
                self.services()
            )));
        }
        Placement::new(placement.assignment().to_vec(), self.nodes())?;
        Ok(())
    }

    /// Per-node, per-kind load of `assignment`, summed in service order.
    pub fn loads(&self, assignment: &[usize]) -> Vec<f64> {
        let mut loads = vec![0.0; self.nodes() * self.kinds];
        self.fill_loads(assignment, &mut loads);
        loads
    }

    fn fill_loads(&self, assignment: &[usize], loads: &mut [f64]) {
        loads.iter_mut().for_each(|l| *l = 0.0);
        let r = self.kinds;
        for (service, &node) in assignment.iter().enumerate() {
            let demand = &self.flat_demands[service * r..(service + 1) * r];
            for (slot, d) in loads[node * r..(node + 1) * r].iter_mut().zip(demand) {
                *slot += d;
            }
        }
    }

    /// True iff every node's summed demand fits its capacity element-wise.
    pub fn is_feasible(&self, assignment: &[usize]) -> bool {
        self.loads(assignment)
            .iter()
            .zip(&self.flat_capacities)
            .all(|(load, cap)| load <= cap)
    }

    pub(crate) fn cost_with_scratch(&self, assignment: &[usize], loads: &mut [f64]) -> CostBreakdown {
        let mut communication = 0.0;
        for &(u, v, t) in &self.flows {
            communication += t * self.delays.get(assignment[u], assignment[v]);
        }
        // Summing both weighted directions over all ordered pairs counts each
        // directed flow once per weight.
        communication *= self.weights.forward + self.weights.backward;

        self.fill_loads(assignment, loads);
        let overflow: f64 = loads
            .iter()
            .zip(&self.flat_capacities)
            .map(|(load, cap)| if load > cap { load - cap } else { 0.0 })
            .sum();
        let penalty = overflow * self.weights.penalty_factor;
        CostBreakdown {
            communication_cost: communication,
            penalty,
            total: communication + penalty,
        }
    }

    pub(crate) fn pair_scorer(&self, assignment: &[usize], u: usize, v: usize) -> PairScorer {
        let p = self.nodes();
        let partial = |s: usize, other: usize| -> Vec<f64> {
            (0..p)
                .map(|n| {
                    let out: f64 = self.out_flows[s]
                        .iter()
                        .filter(|&&(x, _)| x != other)
                        .map(|&(x, t)| t * self.delays.get(n, assignment[x]))
                        .sum();
                    let inc: f64 = self.in_flows[s]
                        .iter()
                        .filter(|&&(x, _)| x != other)
                        .map(|&(x, t)| t * self.delays.get(assignment[x], n))
                        .sum();
                    out + inc
                })
                .collect()
        };
        let mut base_loads = self.scratch();
        let r = self.kinds;
        for (service, &node) in assignment.iter().enumerate() {
            if service == u || service == v {
                continue;
            }
            let demand = &self.flat_demands[service * r..(service + 1) * r];
            for (slot, d) in base_loads[node * r..(node + 1) * r].iter_mut().zip(demand) {
                *slot += d;
            }
        }
        PairScorer {
            u,
            v,
            u_part: partial(u, v),
            v_part: partial(v, u),
            t_uv: self.traffic.get(u, v),
            t_vu: self.traffic.get(v, u),
            base_loads,
        }
    }

    /// Score of putting the scorer's pair on nodes `a` and `b`. Lower is
    /// better; differences between scores equal differences in total cost
    /// up to rounding.
    pub(crate) fn pair_score(&self, s: &PairScorer, a: usize, b: usize) -> f64 {
        let communication = s.u_part[a] + s.v_part[b] + s.t_uv * self.delays.get(a, b) + s.t_vu * self.delays.get(b, a);
        let r = self.kinds;
        let (du, dv) = (
            &self.flat_demands[s.u * r..(s.u + 1) * r],
            &self.flat_demands[s.v * r..(s.v + 1) * r],
        );
        let mut overflow = 0.0;
        for (i, (&base, &cap)) in s.base_loads.iter().zip(&self.flat_capacities).enumerate() {
            let (node, kind) = (i / r, i % r);
            let mut load = base;
            if node == a {
                load += du[kind];
            }
            if node == b {
                load += dv[kind];
            }
            if load > cap {
                overflow += load - cap;
            }
        }
        communication * (self.weights.forward + self.weights.backward) + overflow * self.weights.penalty_factor
    }

    pub(crate) fn scratch(&self) -> Vec<f64> {
        vec![0.0; self.nodes() * self.kinds]
    }

    /// Penalized cost of `placement` (caller guarantees dimensions).
    pub fn cost(&self, placement: &Placement) -> CostBreakdown {
        let mut scratch = self.scratch();
        self.cost_with_scratch(placement.assignment(), &mut scratch)
    }
}

/// Free-function form of [`PlacementProblem::cost`] that validates its inputs.
pub fn calc_cost(
    traffic: &TrafficStressGraph,
    placement: &Placement,
    delays: &DelayMatrix,
    demands: &[ResourceVector],
    capacities: &[ResourceVector],
    weights: &CostWeights,
) -> Result<CostBreakdown, MapperError> {
    let problem = PlacementProblem::new(
        traffic.clone(),
        delays.clone(),
        demands.to_vec(),
        capacities.to_vec(),
        *weights,
    )?;
    problem.check_placement(placement)?;
    Ok(problem.cost(placement))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cpu(v: f64) -> ResourceVector {
        ResourceVector::from_pairs([("cpu", v)]).unwrap()
    }

    fn two_by_two(t_uv: f64, t_vu: f64) -> TrafficStressGraph {
        TrafficStressGraph::from_rows(&[vec![0.0, t_uv], vec![t_vu, 0.0]], 60.0).unwrap()
    }

    #[test]
    fn pair_cost_examples() {
        let d = DelayMatrix::from_rows(&[vec![0.0, 3.0], vec![3.0, 0.0]]).unwrap();
        let split = Placement::new(vec![0, 1], 2).unwrap();
        let together = Placement::new(vec![1, 1], 2).unwrap();

        let one_way = CostWeights::new(1.0, 0.0, 1.0).unwrap();
        assert_eq!(pair_cost(0, 1, &two_by_two(10.0, 40.0), &d, &together, &one_way), 0.0);
        assert_eq!(pair_cost(0, 1, &two_by_two(10.0, 0.0), &d, &split, &one_way), 30.0);

        let balanced = CostWeights::balanced(1.0).unwrap();
        assert_eq!(pair_cost(0, 1, &two_by_two(10.0, 40.0), &d, &split, &balanced), 75.0);
    }

    #[test]
    fn calc_cost_examples() {
        let w = CostWeights::balanced(1000.0).unwrap();
        let t = two_by_two(10.0, 0.0);
        let d = DelayMatrix::from_rows(&[vec![0.0, 3.0], vec![8.0, 0.0]]).unwrap();
        let caps = [cpu(4.0), cpu(4.0)];

        let together = calc_cost(
            &t,
            &Placement::new(vec![0, 0], 2).unwrap(),
            &d,
            &[cpu(1.0), cpu(1.0)],
            &caps,
            &w,
        )
        .unwrap();
        assert_eq!(together.total, 0.0);

        let split = calc_cost(
            &t,
            &Placement::new(vec![0, 1], 2).unwrap(),
            &d,
            &[cpu(1.0), cpu(1.0)],
            &caps,
            &w,
        )
        .unwrap();
        assert_eq!(split.communication_cost, 30.0);
        assert_eq!(split.penalty, 0.0);

        let crowded = calc_cost(
            &t,
            &Placement::new(vec![0, 0], 2).unwrap(),
            &d,
            &[cpu(3.0), cpu(3.0)],
            &caps,
            &w,
        )
        .unwrap();
        assert_eq!(crowded.penalty, 2000.0);
        assert_eq!(crowded.total, 2000.0);
    }

    #[test]
    fn calc_cost_rejects_mismatches() {
        let w = CostWeights::balanced(1.0).unwrap();
        let t = two_by_two(1.0, 0.0);
        let d = DelayMatrix::zeros(2);
        let p = Placement::new(vec![0, 1], 2).unwrap();
        assert!(calc_cost(&t, &p, &d, &[cpu(1.0)], &[cpu(1.0), cpu(1.0)], &w).is_err());
        let mem = ResourceVector::from_pairs([("mem", 1.0)]).unwrap();
        assert!(calc_cost(&t, &p, &d, &[cpu(1.0), mem], &[cpu(1.0), cpu(1.0)], &w).is_err());
        let short = Placement::new(vec![0], 2).unwrap();
        assert!(calc_cost(&t, &short, &d, &[cpu(1.0), cpu(1.0)], &[cpu(1.0), cpu(1.0)], &w).is_err());
    }

    #[test]
    fn adaptive_penalty_scales_with_instance() {
        let t = two_by_two(10.0, 0.0);
        let d = DelayMatrix::uniform(2, 3.0).unwrap();
        let pf = adaptive_penalty_factor(&t, &d, &[cpu(4.0), cpu(2.0)]);
        assert_eq!(pf, 1e6 * 10.0 * 3.0 / 2.0);
        assert_eq!(adaptive_penalty_factor(&two_by_two(0.0, 0.0), &d, &[cpu(4.0)]), 1.0);
    }

    #[test]
    fn pair_scores_differ_like_total_costs() {
        let t = TrafficStressGraph::from_rows(
            &[
                vec![0.0, 5.0, 1.0, 0.0],
                vec![2.0, 0.0, 0.0, 7.0],
                vec![0.0, 3.0, 0.0, 4.0],
                vec![6.0, 0.0, 8.0, 0.0],
            ],
            60.0,
        )
        .unwrap();
        let d = DelayMatrix::from_rows(&[vec![0.0, 1.0, 4.0], vec![2.0, 0.0, 3.0], vec![5.0, 6.0, 0.0]]).unwrap();
        let problem = PlacementProblem::new(
            t,
            d,
            vec![cpu(1.0); 4],
            vec![cpu(1.5); 3],
            CostWeights::new(0.7, 0.3, 50.0).unwrap(),
        )
        .unwrap();
        let base = vec![0, 1, 2, 1];
        for (u, v) in [(0, 1), (1, 3), (3, 2), (2, 0)] {
            let scorer = problem.pair_scorer(&base, u, v);
            let reference = problem.cost(&Placement::new(base.clone(), 3).unwrap()).total
                - problem.pair_score(&scorer, base[u], base[v]);
            for a in 0..3 {
                for b in 0..3 {
                    let mut moved = base.clone();
                    moved[u] = a;
                    moved[v] = b;
                    let full = problem.cost(&Placement::new(moved, 3).unwrap()).total;
                    let relative = problem.pair_score(&scorer, a, b) + reference;
                    assert!(
                        (full - relative).abs() < 1e-9,
                        "({u},{v}) -> ({a},{b}): {full} vs {relative}"
                    );
                }
            }
        }
    }
}
