use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::report::{InstanceEvent, InstanceEventKind, MigrationRecord};
use super::SimError;
use crate::control::MigrationPlan;
use crate::model::{NodeSpec, Placement, ServiceSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MigrationConfig {
    /// Time from launching the new instance until it serves traffic.
    pub launch_s: f64,
    /// Time the old instance keeps running after the new one is ready.
    pub grace_s: f64,
}

impl Default for MigrationConfig {
    fn default() -> Self {
        Self {
            launch_s: 10.0,
            grace_s: 5.0,
        }
    }
}

impl MigrationConfig {
    pub fn new(launch_s: f64, grace_s: f64) -> Result<Self, SimError> {
        if !(launch_s > 0.0) || !launch_s.is_finite() {
            return Err(SimError::Config(format!("launch time must be > 0, got {launch_s}")));
        }
        if !(grace_s >= 0.0) || !grace_s.is_finite() {
            return Err(SimError::Config(format!("grace time must be >= 0, got {grace_s}")));
        }
        Ok(Self { launch_s, grace_s })
    }
}

/// Placement in force from `start_s` until the next epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingEpoch {
    pub start_s: f64,
    pub placement: Placement,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum InstanceState {
    Launching,
    Ready,
    Evicted,
}

#[derive(Debug, Clone, Copy)]
struct Instance {
    node: usize,
    state: InstanceState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Pending {
    service: usize,
    instance: usize,
    kind: InstanceEventKind,
}

pub(crate) fn to_ms(seconds: f64) -> u64 {
    (seconds * 1000.0).round() as u64
}

pub(crate) fn to_s(ms: u64) -> f64 {
    ms as f64 / 1000.0
}

/// Service instances and the routing table derived from them. Requests go to
/// the newest ready instance of each service; a migration launches the new
/// instance first and evicts the old one only after the new one is ready.
#[derive(Debug, Clone)]
pub struct ClusterState {
    services: Vec<ServiceSpec>,
    nodes: Vec<NodeSpec>,
    instances: Vec<Vec<Instance>>,
    routing: Placement,
    pending: BTreeMap<(u64, u64), Pending>,
    seq: u64,
    events: Vec<InstanceEvent>,
    migrations: Vec<MigrationRecord>,
    history: Vec<RoutingEpoch>,
    min_ready: u32,
    capacity_warnings: u64,
}

impl ClusterState {
    pub fn new(services: Vec<ServiceSpec>, nodes: Vec<NodeSpec>, initial: Placement) -> Result<Self, SimError> {
        if initial.len() != services.len() {
            return Err(SimError::Config(format!(
                "initial placement has {} entries for {} services",
                initial.len(),
                services.len()
            )));
        }
        Placement::new(initial.assignment().to_vec(), nodes.len())?;
        let instances = initial
            .assignment()
            .iter()
            .map(|&node| {
                vec![Instance {
                    node,
                    state: InstanceState::Ready,
                }]
            })
            .collect();
        Ok(Self {
            min_ready: if services.is_empty() { 0 } else { 1 },
            services,
            nodes,
            instances,
            history: vec![RoutingEpoch {
                start_s: 0.0,
                placement: initial.clone(),
            }],
            routing: initial,
            pending: BTreeMap::new(),
            seq: 0,
            events: Vec::new(),
            migrations: Vec::new(),
            capacity_warnings: 0,
        })
    }

    pub fn routing(&self) -> &Placement {
        &self.routing
    }

    /// Index of the current routing epoch.
    pub fn epoch(&self) -> usize {
        self.history.len() - 1
    }

    pub fn history(&self) -> &[RoutingEpoch] {
        &self.history
    }

    pub fn events(&self) -> &[InstanceEvent] {
        &self.events
    }

    pub fn migrations(&self) -> &[MigrationRecord] {
        &self.migrations
    }

    pub fn min_ready(&self) -> u32 {
        self.min_ready
    }

    pub fn capacity_warnings(&self) -> u64 {
        self.capacity_warnings
    }

    /// True while any launch, ready or evict is still scheduled.
    pub fn migrating(&self) -> bool {
        !self.pending.is_empty()
    }

    pub fn ready_count(&self, service: usize) -> u32 {
        self.instances[service]
            .iter()
            .filter(|i| i.state == InstanceState::Ready)
            .count() as u32
    }

    fn service_busy(&self, service: usize) -> bool {
        self.pending.values().any(|p| p.service == service)
    }

    /// Schedules launch, ready and evict for every step. The whole plan is
    /// checked before anything changes.
    pub fn apply_migration(
        &mut self,
        plan: &MigrationPlan,
        now_ms: u64,
        cfg: &MigrationConfig,
    ) -> Result<(), SimError> {
        let mut seen = vec![false; self.services.len()];
        for step in &plan.steps {
            let spec = self
                .services
                .get(step.service)
                .ok_or(SimError::UnknownService(step.service))?;
            if !spec.migratable {
                return Err(SimError::NotMigratable(spec.id.name.clone()));
            }
            if step.to >= self.nodes.len() {
                return Err(SimError::Config(format!(
                    "migration target node {} out of range",
                    step.to
                )));
            }
            if step.from != self.routing.node_of(step.service) || step.from == step.to {
                return Err(SimError::StalePlan(spec.id.name.clone()));
            }
            if std::mem::replace(&mut seen[step.service], true) || self.service_busy(step.service) {
                return Err(SimError::MigrationInFlight(spec.id.name.clone()));
            }
        }

        let launch_ms = to_ms(cfg.launch_s);
        let grace_ms = to_ms(cfg.grace_s);
        for step in &plan.steps {
            let s = step.service;
            let old = self.instances[s]
                .iter()
                .rposition(|i| i.state == InstanceState::Ready)
                .expect("a service being migrated has a ready instance");
            self.instances[s].push(Instance {
                node: step.to,
                state: InstanceState::Launching,
            });
            let new = self.instances[s].len() - 1;
            self.events.push(InstanceEvent {
                time_s: to_s(now_ms),
                service: s,
                node: step.to,
                kind: InstanceEventKind::Launch,
                ready_after: self.ready_count(s),
            });
            self.check_capacity(step.to);
            self.schedule(now_ms + launch_ms, s, new, InstanceEventKind::Ready);
            self.schedule(now_ms + launch_ms + grace_ms, s, old, InstanceEventKind::Evict);
            self.migrations.push(MigrationRecord {
                service: s,
                name: self.services[s].id.name.clone(),
                from: step.from,
                to: step.to,
                launch_s: to_s(now_ms),
                ready_s: to_s(now_ms + launch_ms),
                evict_s: to_s(now_ms + launch_ms + grace_ms),
            });
        }
        Ok(())
    }

    fn schedule(&mut self, at_ms: u64, service: usize, instance: usize, kind: InstanceEventKind) {
        self.pending.insert(
            (at_ms, self.seq),
            Pending {
                service,
                instance,
                kind,
            },
        );
        self.seq += 1;
    }

    /// Both the old and the new instance hold resources during a migration;
    /// exceeding capacity then is tolerated but counted.
    fn check_capacity(&mut self, node: usize) {
        let capacity = self.nodes[node].capacity.amounts().to_vec();
        let mut load = vec![0.0; capacity.len()];
        for (service, instances) in self.instances.iter().enumerate() {
            let demand = self.services[service].aggregate_demand();
            let copies = instances
                .iter()
                .filter(|i| i.node == node && i.state != InstanceState::Evicted)
                .count() as f64;
            for (l, d) in load.iter_mut().zip(demand.amounts()) {
                *l += d * copies;
            }
        }
        if load.iter().zip(&capacity).any(|(l, c)| l > c) {
            log::warn!(
                "node `{}` over capacity while instances overlap",
                self.nodes[node].id.name
            );
            self.capacity_warnings += 1;
        }
    }

    /// Applies every scheduled event with time <= `t_ms`.
    pub fn advance_to(&mut self, t_ms: u64) -> Result<(), SimError> {
        while let Some(entry) = self.pending.first_entry() {
            let (at_ms, _) = *entry.key();
            if at_ms > t_ms {
                break;
            }
            let p = entry.remove();
            self.fire(at_ms, p)?;
        }
        Ok(())
    }

    /// Applies everything still scheduled.
    pub fn drain(&mut self) -> Result<(), SimError> {
        self.advance_to(u64::MAX)
    }

    fn fire(&mut self, at_ms: u64, p: Pending) -> Result<(), SimError> {
        let node = self.instances[p.service][p.instance].node;
        match p.kind {
            InstanceEventKind::Ready => {
                self.instances[p.service][p.instance].state = InstanceState::Ready;
                self.routing.set(p.service, node);
                self.history.push(RoutingEpoch {
                    start_s: to_s(at_ms),
                    placement: self.routing.clone(),
                });
            }
            InstanceEventKind::Evict => {
                self.instances[p.service][p.instance].state = InstanceState::Evicted;
            }
            InstanceEventKind::Launch => unreachable!("launches happen immediately"),
        }
        let ready = self.ready_count(p.service);
        self.min_ready = self.min_ready.min(ready);
        self.events.push(InstanceEvent {
            time_s: to_s(at_ms),
            service: p.service,
            node,
            kind: p.kind,
            ready_after: ready,
        });
        if ready == 0 {
            return Err(SimError::Downtime {
                service: self.services[p.service].id.name.clone(),
                time_s: to_s(at_ms),
            });
        }
        Ok(())
    }
}
