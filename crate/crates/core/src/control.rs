//! Adaptive control loop pieces: the windowed QoS trigger, the rescheduling
//! policies, and the filter that turns a proposed placement into an ordered
//! migration plan.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{netmarks_place, BaselineError};
use crate::mapper::{optimize, MapperConfig, MapperError, PlacementProblem};
use crate::model::{DelayMatrix, NodeSpec, Placement, ServiceSpec, TrafficStressGraph};
use crate::scenario::Scenario;
use crate::sim::{run_simulation, DecisionRecord, SimError};
use crate::traffic::sort_pairs;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("QoS setting `{0}` must be > 0")]
    NonPositive(&'static str),
    #[error("placements differ in length ({0} vs {1})")]
    Dimension(usize, usize),
    #[error(transparent)]
    Mapper(#[from] MapperError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QoSConfig {
    pub target_ms: f64,
    pub poll_period_s: f64,
    pub window_s: f64,
}

impl Default for QoSConfig {
    fn default() -> Self {
        Self {
            target_ms: 300.0,
            poll_period_s: 30.0,
            window_s: 60.0,
        }
    }
}

impl QoSConfig {
    pub fn new(target_ms: f64, poll_period_s: f64, window_s: f64) -> Result<Self, ControlError> {
        for (name, value) in [
            ("target_ms", target_ms),
            ("poll_period_s", poll_period_s),
            ("window_s", window_s),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ControlError::NonPositive(name));
            }
        }
        if window_s < poll_period_s {
            log::warn!("QoS window ({window_s}s) is shorter than the poll period ({poll_period_s}s)");
        }
        Ok(Self {
            target_ms,
            poll_period_s,
            window_s,
        })
    }
}

/// Sum of request durations and number of requests over a window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyWindow {
    pub sum_ms: f64,
    pub count: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerReason {
    AboveTarget,
    NoData,
    BelowTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerDecision {
    pub triggered: bool,
    pub observed_mean_ms: Option<f64>,
    pub reason: TriggerReason,
}

pub fn evaluate_trigger(window: &LatencyWindow, cfg: &QoSConfig) -> TriggerDecision {
    if !(window.count > 0.0) {
        return TriggerDecision {
            triggered: false,
            observed_mean_ms: None,
            reason: TriggerReason::NoData,
        };
    }
    let mean = window.sum_ms / window.count;
    let triggered = mean > cfg.target_ms;
    TriggerDecision {
        triggered,
        observed_mean_ms: Some(mean),
        reason: if triggered {
            TriggerReason::AboveTarget
        } else {
            TriggerReason::BelowTarget
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationStep {
    pub service: usize,
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MigrationPlan {
    pub steps: Vec<MigrationStep>,
    /// Services the proposal wanted to move but which must stay put.
    pub pinned: Vec<usize>,
}

impl MigrationPlan {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }
}

/// Keeps the migratable services whose node changes, ordered by descending
/// stress degree (ties by index). Non-migratable services that the proposal
/// would move are reported in `pinned` instead.
pub fn filter_placement(
    current: &Placement,
    proposed: &Placement,
    services: &[ServiceSpec],
    traffic: &TrafficStressGraph,
) -> Result<MigrationPlan, ControlError> {
    if current.len() != proposed.len() || current.len() != services.len() {
        return Err(ControlError::Dimension(current.len(), proposed.len()));
    }
    let mut plan = MigrationPlan::default();
    let mut moved: Vec<(usize, f64)> = Vec::new();
    for (service, spec) in services.iter().enumerate() {
        if current.node_of(service) == proposed.node_of(service) {
            continue;
        }
        if spec.migratable {
            let degree = if service < traffic.dim() {
                traffic.stress_degree(service)
            } else {
                0.0
            };
            moved.push((service, degree));
        } else {
            log::info!("proposal moves pinned service `{}`; ignored", spec.id.name);
            plan.pinned.push(service);
        }
    }
    moved.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    plan.steps = moved
        .into_iter()
        .map(|(service, _)| MigrationStep {
            service,
            from: current.node_of(service),
            to: proposed.node_of(service),
        })
        .collect();
    Ok(plan)
}

/// Which rescheduler reacts to a QoS violation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Spread once at deploy time, never reschedule.
    Kdefault,
    /// Re-place the services of the most stressed pairs by traffic score.
    Netmarks,
    /// Penalized parallel greedy remapping over traffic and measured delay.
    Trade,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Kdefault, Policy::Netmarks, Policy::Trade];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Kdefault => "kdefault",
            Policy::Netmarks => "netmarks",
            Policy::Trade => "trade",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kdefault" => Ok(Policy::Kdefault),
            "netmarks" => Ok(Policy::Netmarks),
            "trade" => Ok(Policy::Trade),
            other => Err(format!(
                "unknown policy `{other}` (expected kdefault, netmarks or trade)"
            )),
        }
    }
}

/// What a policy sees when the trigger fires.
pub struct RescheduleInput<'a> {
    pub services: &'a [ServiceSpec],
    pub nodes: &'a [NodeSpec],
    pub current: &'a Placement,
    pub traffic: &'a TrafficStressGraph,
    pub measured_delays: &'a DelayMatrix,
    pub mapper: &'a MapperConfig,
    pub weights: (f64, f64),
    /// Fixed penalty factor; `None` derives it from the instance.
    pub penalty_factor: Option<f64>,
    /// NetMARKS only: how many top-stress pairs supply target services.
    pub netmarks_top_pairs: usize,
}

/// Placement proposed by `policy`. `Kdefault` always proposes the current one.
pub fn propose(policy: Policy, input: &RescheduleInput<'_>) -> Result<Placement, ControlError> {
    match policy {
        Policy::Kdefault => Ok(input.current.clone()),
        Policy::Trade => {
            let demands = input.services.iter().map(ServiceSpec::aggregate_demand).collect();
            let capacities = input.nodes.iter().map(|n| n.capacity.clone()).collect();
            let (forward, backward) = input.weights;
            let problem = match input.penalty_factor {
                None => PlacementProblem::with_adaptive_penalty(
                    input.traffic.clone(),
                    input.measured_delays.clone(),
                    demands,
                    capacities,
                    forward,
                    backward,
                )?,
                Some(pf) => PlacementProblem::new(
                    input.traffic.clone(),
                    input.measured_delays.clone(),
                    demands,
                    capacities,
                    crate::model::CostWeights::new(forward, backward, pf).map_err(MapperError::from)?,
                )?,
            };
            Ok(optimize(&problem, input.current, input.mapper)?.placement)
        }
        Policy::Netmarks => {
            let mut working = input.current.clone();
            let mut targets: Vec<usize> = Vec::new();
            for pair in sort_pairs(input.traffic).iter().take(input.netmarks_top_pairs) {
                for service in [pair.upstream, pair.downstream] {
                    if !targets.contains(&service) {
                        targets.push(service);
                    }
                }
            }
            for target in targets {
                if !input.services[target].migratable {
                    continue;
                }
                match netmarks_place(target, input.traffic, &working, input.services, input.nodes) {
                    Ok(node) => working.set(target, node),
                    Err(BaselineError::NoFeasibleNode(_)) => {
                        log::debug!("netmarks: no room for `{}`", input.services[target].id.name);
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            Ok(working)
        }
    }
}

/// Runs the loop over a whole scenario and returns one record per poll.
pub fn run_control_loop(scenario: &Scenario, policy: Policy) -> Result<Vec<DecisionRecord>, SimError> {
    Ok(run_simulation(scenario, policy)?.report.decisions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ResourceVector, ServiceId};

    fn svc(index: usize, migratable: bool) -> ServiceSpec {
        ServiceSpec::new(
            ServiceId {
                index,
                name: format!("s{index}"),
            },
            ResourceVector::from_pairs([("cpu", 1.0)]).unwrap(),
            migratable,
            1,
        )
        .unwrap()
    }

    #[test]
    fn trigger_truth_table() {
        let cfg = QoSConfig::default();
        let below = evaluate_trigger(
            &LatencyWindow {
                sum_ms: 30000.0,
                count: 120.0,
            },
            &cfg,
        );
        assert!(!below.triggered);
        assert_eq!(below.observed_mean_ms, Some(250.0));
        assert_eq!(below.reason, TriggerReason::BelowTarget);

        let above = evaluate_trigger(
            &LatencyWindow {
                sum_ms: 36120.0,
                count: 120.0,
            },
            &cfg,
        );
        assert!(above.triggered);
        assert_eq!(above.observed_mean_ms, Some(301.0));
        assert_eq!(above.reason, TriggerReason::AboveTarget);

        let empty = evaluate_trigger(
            &LatencyWindow {
                sum_ms: 500.0,
                count: 0.0,
            },
            &cfg,
        );
        assert!(!empty.triggered);
        assert_eq!(empty.observed_mean_ms, None);
        assert_eq!(empty.reason, TriggerReason::NoData);

        let exact = evaluate_trigger(
            &LatencyWindow {
                sum_ms: 300.0,
                count: 1.0,
            },
            &cfg,
        );
        assert!(!exact.triggered, "the target itself is not a violation");
    }

    #[test]
    fn qos_config_validation() {
        assert!(QoSConfig::new(300.0, 30.0, 60.0).is_ok());
        assert!(QoSConfig::new(0.0, 30.0, 60.0).is_err());
        assert!(QoSConfig::new(300.0, -1.0, 60.0).is_err());
        // Short windows only warn.
        assert!(QoSConfig::new(300.0, 30.0, 10.0).is_ok());
    }

    #[test]
    fn filter_examples() {
        let services = vec![svc(0, true), svc(1, true), svc(2, false)];
        let t = TrafficStressGraph::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 9.0], vec![0.0, 0.0, 0.0]], 60.0)
            .unwrap();
        let current = Placement::new(vec![0, 1, 2], 3).unwrap();

        assert!(filter_placement(&current, &current, &services, &t).unwrap().is_empty());

        let one = Placement::new(vec![1, 1, 2], 3).unwrap();
        let plan = filter_placement(&current, &one, &services, &t).unwrap();
        assert_eq!(
            plan.steps,
            vec![MigrationStep {
                service: 0,
                from: 0,
                to: 1
            }]
        );

        let all = Placement::new(vec![2, 2, 0], 3).unwrap();
        let plan = filter_placement(&current, &all, &services, &t).unwrap();
        // Service 1 carries more stress than service 0; service 2 is pinned.
        assert_eq!(plan.steps.iter().map(|s| s.service).collect::<Vec<_>>(), vec![1, 0]);
        assert_eq!(plan.pinned, vec![2]);
    }

    #[test]
    fn policy_names_round_trip() {
        for p in Policy::ALL {
            assert_eq!(p.name().parse::<Policy>().unwrap(), p);
        }
        assert!("spread".parse::<Policy>().is_err());
    }
}
