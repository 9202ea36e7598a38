//! Scenario files: the JSON schema users write, its validation with
//! path-addressed messages, and the compiled form the simulator runs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::QoSConfig;
use crate::dynamics::{
    DelayPhase, DelaySchedule, NoiseDistribution, ReservedDestinations, DEFAULT_BASE_DELAY_MS, MAX_NOISE_MS,
};
use crate::mapper::{Execution, MapperConfig};
use crate::model::{DelayMatrix, NodeId, NodeSpec, ResourceVector, ServiceId, ServiceSpec};
use crate::sim::{Call, LinkModel, MigrationConfig, RequestType};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

/// One problem with an input file, located by a JSON-path-like string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationError {
    pub issues: Vec<ValidationIssue>,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} validation issue(s)", self.issues.len())?;
        for issue in &self.issues {
            write!(f, "\n  {}: {}", issue.path, issue.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationError {}

impl ValidationError {
    pub(crate) fn push(&mut self, path: impl Into<String>, message: impl fmt::Display) {
        self.issues.push(ValidationIssue {
            path: path.into(),
            message: message.to_string(),
        });
    }

    pub(crate) fn into_result<T>(self, value: impl FnOnce() -> T) -> Result<T, ValidationError> {
        if self.issues.is_empty() {
            Ok(value())
        } else {
            Err(self)
        }
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed JSON: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Invalid {
        path: PathBuf,
        #[source]
        source: ValidationError,
    },
}

impl LoadError {
    /// A missing or unreadable input file counts as bad input, like a parse
    /// or validation failure; only unexpected I/O kinds are runtime faults.
    pub fn is_input_error(&self) -> bool {
        match self {
            LoadError::Io { source, .. } => matches!(
                source.kind(),
                std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied | std::io::ErrorKind::InvalidData
            ),
            LoadError::Parse { .. } | LoadError::Invalid { .. } => true,
        }
    }
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| LoadError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

/// Row-major matrix with explicit dimensions and unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    pub unit: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixSpec {
    pub fn from_square(unit: &str, dim: usize, data: Vec<f64>) -> Self {
        Self {
            unit: unit.to_owned(),
            rows: dim,
            cols: dim,
            data,
        }
    }

    /// Checks shape, unit and dimension; returns the flat data on success.
    pub(crate) fn check_square(
        &self,
        path: &str,
        unit: &str,
        dim: usize,
        errors: &mut ValidationError,
    ) -> Option<Vec<f64>> {
        let before = errors.issues.len();
        if self.unit != unit {
            errors.push(
                format!("{path}.unit"),
                format!("expected `{unit}`, got `{}`", self.unit),
            );
        }
        if self.rows != self.cols {
            errors.push(
                format!("{path}.rows"),
                format!("matrix must be square, got {}x{}", self.rows, self.cols),
            );
        } else if self.rows != dim {
            errors.push(
                format!("{path}.rows"),
                format!("expected {dim}x{dim}, got {}x{}", self.rows, self.cols),
            );
        }
        if self.data.len() != self.rows * self.cols {
            errors.push(
                format!("{path}.data"),
                format!("{} values for a {}x{} matrix", self.data.len(), self.rows, self.cols),
            );
        }
        if errors.issues.len() > before {
            return None;
        }
        for (i, &v) in self.data.iter().enumerate() {
            let (r, c) = (i / dim, i % dim);
            if !(v >= 0.0) || !v.is_finite() {
                errors.push(
                    format!("{path}.data[{i}]"),
                    format!("entry [{r}][{c}] must be finite and >= 0, got {v}"),
                );
            } else if r == c && v != 0.0 {
                errors.push(
                    format!("{path}.data[{i}]"),
                    format!("diagonal entry [{r}][{r}] must be 0, got {v}"),
                );
            }
        }
        (errors.issues.len() == before).then(|| self.data.clone())
    }
}

pub type ResourceMap = BTreeMap<String, f64>;

pub(crate) fn resource_vector(map: &ResourceMap, path: &str, errors: &mut ValidationError) -> Option<ResourceVector> {
    let mut ok = true;
    for (kind, &value) in map {
        if !(value >= 0.0) || !value.is_finite() {
            errors.push(
                format!("{path}.{kind}"),
                format!("must be finite and >= 0, got {value}"),
            );
            ok = false;
        }
    }
    ok.then(|| ResourceVector::new(map.keys().cloned().collect(), map.values().copied().collect()).expect("checked"))
}

fn default_true() -> bool {
    true
}

fn default_replicas() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDef {
    pub name: String,
    pub capacity: ResourceMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceDef {
    pub name: String,
    pub demand: ResourceMap,
    #[serde(default = "default_true")]
    pub migratable: bool,
    #[serde(default = "default_replicas")]
    pub replicas: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallDef {
    pub from: String,
    pub to: String,
    pub request_bytes: f64,
    pub response_bytes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestTypeDef {
    pub name: String,
    pub entry: String,
    #[serde(default)]
    pub processing_ms: BTreeMap<String, f64>,
    pub calls: Vec<CallDef>,
    #[serde(default)]
    pub parallel_fanout: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixDef {
    pub request_type: String,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadDef {
    /// Total arrival rate over all request types.
    pub qps: f64,
    pub mix: Vec<MixDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseDef {
    pub activation_s: f64,
    pub label: String,
    pub matrix: MatrixSpec,
}

fn default_base_delay() -> f64 {
    DEFAULT_BASE_DELAY_MS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelaysDef {
    /// One-way delay between distinct nodes before injection.
    #[serde(default = "default_base_delay")]
    pub base_ms: f64,
    pub update_period_s: f64,
    /// Node names whose inbound links never receive injected delay.
    #[serde(default)]
    pub reserved: Vec<String>,
    pub phases: Vec<PhaseDef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkDef {
    pub bandwidth_gbps: f64,
    pub per_hop_ms: f64,
    pub timeout_ms: f64,
    /// Mean of the exponential per-request tail added on top of the model.
    pub tail_jitter_ms: f64,
}

impl Default for NetworkDef {
    fn default() -> Self {
        Self {
            bandwidth_gbps: 16.0,
            per_hop_ms: 0.0,
            timeout_ms: 1000.0,
            tail_jitter_ms: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementDef {
    pub distribution: NoiseDistribution,
    pub magnitude_ms: f64,
}

impl Default for MeasurementDef {
    fn default() -> Self {
        Self {
            distribution: NoiseDistribution::Uniform,
            magnitude_ms: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapperDef {
    pub workers: usize,
    pub max_rounds: usize,
    pub forward_weight: f64,
    pub backward_weight: f64,
    /// Fixed penalty factor; derived from the instance when absent.
    pub penalty_factor: Option<f64>,
}

impl Default for MapperDef {
    fn default() -> Self {
        Self {
            workers: 4,
            max_rounds: 10,
            forward_weight: 0.5,
            backward_weight: 0.5,
            penalty_factor: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetmarksDef {
    pub top_pairs: usize,
}

impl Default for NetmarksDef {
    fn default() -> Self {
        Self { top_pairs: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub duration_s: f64,
    pub nodes: Vec<NodeDef>,
    pub services: Vec<ServiceDef>,
    pub request_types: Vec<RequestTypeDef>,
    pub workload: WorkloadDef,
    pub delays: DelaysDef,
    #[serde(default)]
    pub qos: QoSConfig,
    #[serde(default)]
    pub network: NetworkDef,
    #[serde(default)]
    pub migration: MigrationConfig,
    #[serde(default)]
    pub measurement: MeasurementDef,
    #[serde(default)]
    pub mapper: MapperDef,
    #[serde(default)]
    pub netmarks: NetmarksDef,
}

/// Validated, index-resolved scenario ready to simulate.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub duration_s: f64,
    pub services: Vec<ServiceSpec>,
    pub nodes: Vec<NodeSpec>,
    pub request_types: Vec<RequestType>,
    pub qps: f64,
    /// Share of arrivals per request type, aligned with `request_types`.
    pub mix: Vec<f64>,
    pub base_delay_ms: f64,
    pub schedule: DelaySchedule,
    pub reserved: ReservedDestinations,
    pub qos: QoSConfig,
    pub link: LinkModel,
    pub timeout_ms: f64,
    pub tail_jitter_ms: f64,
    pub migration: MigrationConfig,
    pub noise_distribution: NoiseDistribution,
    pub noise_magnitude_ms: f64,
    pub mapper: MapperConfig,
    pub forward_weight: f64,
    pub backward_weight: f64,
    pub penalty_factor: Option<f64>,
    pub netmarks_top_pairs: usize,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let spec: ScenarioSpec = read_json(path)?;
        spec.compile().map_err(|source| LoadError::Invalid {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn service_index(&self, name: &str) -> Option<usize> {
        self.services.iter().position(|s| s.id.name == name)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.mapper.workers = workers;
        self
    }

    /// Delay matrix dimension equals node count.
    pub fn base_matrix(&self) -> DelayMatrix {
        DelayMatrix::uniform(self.nodes.len(), self.base_delay_ms).expect("validated base delay")
    }
}

fn check_unique<'a>(
    names: impl Iterator<Item = &'a str>,
    path: &str,
    errors: &mut ValidationError,
) -> BTreeMap<String, usize> {
    let mut index = BTreeMap::new();
    for (i, name) in names.enumerate() {
        if name.is_empty() {
            errors.push(format!("{path}[{i}].name"), "must not be empty");
        }
        if index.insert(name.to_owned(), i).is_some() {
            errors.push(format!("{path}[{i}].name"), format!("duplicate name `{name}`"));
        }
    }
    index
}

fn positive(value: f64, path: &str, errors: &mut ValidationError) {
    if !(value > 0.0) || !value.is_finite() {
        errors.push(path, format!("must be finite and > 0, got {value}"));
    }
}

fn non_negative(value: f64, path: &str, errors: &mut ValidationError) {
    if !(value >= 0.0) || !value.is_finite() {
        errors.push(path, format!("must be finite and >= 0, got {value}"));
    }
}

pub(crate) struct Topology {
    pub nodes: Vec<NodeSpec>,
    pub services: Vec<ServiceSpec>,
    pub node_index: BTreeMap<String, usize>,
    pub service_index: BTreeMap<String, usize>,
}

/// Nodes and services with names checked for uniqueness and every resource
/// map checked against the first node's kinds.
pub(crate) fn compile_topology(
    node_defs: &[NodeDef],
    service_defs: &[ServiceDef],
    errors: &mut ValidationError,
) -> Topology {
    let node_index = check_unique(node_defs.iter().map(|n| n.name.as_str()), "nodes", errors);
    let service_index = check_unique(service_defs.iter().map(|s| s.name.as_str()), "services", errors);
    if node_defs.is_empty() {
        errors.push("nodes", "at least one node is required");
    }
    if service_defs.is_empty() {
        errors.push("services", "at least one service is required");
    }

    let kinds: Vec<String> = node_defs
        .first()
        .map(|n| n.capacity.keys().cloned().collect())
        .unwrap_or_default();
    let mut nodes = Vec::new();
    for (i, def) in node_defs.iter().enumerate() {
        let path = format!("nodes[{i}].capacity");
        if def.capacity.keys().ne(kinds.iter()) {
            errors.push(
                &path,
                format!(
                    "resource kinds {:?} differ from {kinds:?}",
                    def.capacity.keys().collect::<Vec<_>>()
                ),
            );
        }
        if let Some(capacity) = resource_vector(&def.capacity, &path, errors) {
            nodes.push(NodeSpec {
                id: NodeId {
                    index: i,
                    name: def.name.clone(),
                },
                capacity,
            });
        }
    }
    let mut services = Vec::new();
    for (i, def) in service_defs.iter().enumerate() {
        let path = format!("services[{i}].demand");
        if def.demand.keys().ne(kinds.iter()) {
            errors.push(
                &path,
                format!(
                    "resource kinds {:?} differ from {kinds:?}",
                    def.demand.keys().collect::<Vec<_>>()
                ),
            );
        }
        if def.replicas == 0 {
            errors.push(format!("services[{i}].replicas"), "must be >= 1");
        }
        if let Some(demand) = resource_vector(&def.demand, &path, errors) {
            let id = ServiceId {
                index: i,
                name: def.name.clone(),
            };
            if let Ok(spec) = ServiceSpec::new(id, demand, def.migratable, def.replicas) {
                services.push(spec);
            }
        }
    }

    Topology {
        nodes,
        services,
        node_index,
        service_index,
    }
}

impl ScenarioSpec {
    pub fn from_json_str(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Validates everything and resolves names to indices. All issues are
    /// collected before returning.
    pub fn compile(&self) -> Result<Scenario, ValidationError> {
        let mut errors = ValidationError::default();
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            errors.push(
                "schema_version",
                format!(
                    "unsupported version {} (expected {SCENARIO_SCHEMA_VERSION})",
                    self.schema_version
                ),
            );
        }
        positive(self.duration_s, "duration_s", &mut errors);

        let Topology {
            nodes,
            services,
            node_index,
            service_index,
        } = compile_topology(&self.nodes, &self.services, &mut errors);

        let k = self.services.len();
        let type_index = check_unique(
            self.request_types.iter().map(|r| r.name.as_str()),
            "request_types",
            &mut errors,
        );
        let mut request_types = Vec::new();
        for (i, def) in self.request_types.iter().enumerate() {
            let path = format!("request_types[{i}]");
            let lookup = |name: &str, field: String, errors: &mut ValidationError| {
                let found = service_index.get(name).copied();
                if found.is_none() {
                    errors.push(field, format!("unknown service `{name}`"));
                }
                found
            };
            let entry = lookup(&def.entry, format!("{path}.entry"), &mut errors);
            let mut processing = vec![0.0; k];
            for (name, &ms) in &def.processing_ms {
                non_negative(ms, &format!("{path}.processing_ms.{name}"), &mut errors);
                if let Some(s) = lookup(name, format!("{path}.processing_ms.{name}"), &mut errors) {
                    processing[s] = ms;
                }
            }
            let mut calls = Vec::new();
            for (j, call) in def.calls.iter().enumerate() {
                let from = lookup(&call.from, format!("{path}.calls[{j}].from"), &mut errors);
                let to = lookup(&call.to, format!("{path}.calls[{j}].to"), &mut errors);
                non_negative(
                    call.request_bytes,
                    &format!("{path}.calls[{j}].request_bytes"),
                    &mut errors,
                );
                non_negative(
                    call.response_bytes,
                    &format!("{path}.calls[{j}].response_bytes"),
                    &mut errors,
                );
                if let (Some(from), Some(to)) = (from, to) {
                    calls.push(Call {
                        from,
                        to,
                        request_bytes: call.request_bytes,
                        response_bytes: call.response_bytes,
                    });
                }
            }
            if let Some(entry) = entry {
                if calls.len() == def.calls.len() {
                    match RequestType::new(def.name.clone(), entry, calls, processing, def.parallel_fanout, k) {
                        Ok(rt) => request_types.push(rt),
                        Err(e) => errors.push(format!("{path}.calls"), e),
                    }
                }
            }
        }
        if self.request_types.is_empty() {
            errors.push("request_types", "at least one request type is required");
        }

        positive(self.workload.qps, "workload.qps", &mut errors);
        let mut mix = vec![0.0; self.request_types.len()];
        let mut ratio_sum = 0.0;
        for (i, m) in self.workload.mix.iter().enumerate() {
            positive(m.ratio, &format!("workload.mix[{i}].ratio"), &mut errors);
            ratio_sum += m.ratio;
            match type_index.get(&m.request_type) {
                Some(&t) if mix[t] == 0.0 => mix[t] = m.ratio,
                Some(_) => errors.push(format!("workload.mix[{i}].request_type"), "listed twice"),
                None => errors.push(
                    format!("workload.mix[{i}].request_type"),
                    format!("unknown request type `{}`", m.request_type),
                ),
            }
        }
        if self.workload.mix.is_empty() {
            errors.push("workload.mix", "at least one request type is required");
        } else if (ratio_sum - 1.0).abs() > 1e-6 {
            errors.push("workload.mix", format!("ratios must sum to 1, got {ratio_sum}"));
        }

        let p = self.nodes.len();
        non_negative(self.delays.base_ms, "delays.base_ms", &mut errors);
        let mut phases = Vec::new();
        for (i, phase) in self.delays.phases.iter().enumerate() {
            if let Some(data) = phase
                .matrix
                .check_square(&format!("delays.phases[{i}].matrix"), "ms", p, &mut errors)
            {
                phases.push(DelayPhase {
                    activation_s: phase.activation_s,
                    label: phase.label.clone(),
                    matrix: DelayMatrix::new(p, data).expect("checked"),
                });
            }
        }
        let mut reserved = Vec::new();
        for (i, name) in self.delays.reserved.iter().enumerate() {
            match node_index.get(name) {
                Some(&n) => reserved.push(n),
                None => errors.push(format!("delays.reserved[{i}]"), format!("unknown node `{name}`")),
            }
        }
        let schedule = if phases.len() == self.delays.phases.len() {
            match DelaySchedule::new(phases, self.delays.update_period_s) {
                Ok(s) => Some(s),
                Err(e) => {
                    errors.push("delays.phases", e);
                    None
                }
            }
        } else {
            None
        };

        if let Err(e) = QoSConfig::new(self.qos.target_ms, self.qos.poll_period_s, self.qos.window_s) {
            errors.push("qos", e);
        }
        positive(self.network.timeout_ms, "network.timeout_ms", &mut errors);
        non_negative(self.network.tail_jitter_ms, "network.tail_jitter_ms", &mut errors);
        let link = match LinkModel::from_gbps(self.network.bandwidth_gbps, self.network.per_hop_ms) {
            Ok(l) => Some(l),
            Err(e) => {
                errors.push("network", e);
                None
            }
        };
        if let Err(e) = MigrationConfig::new(self.migration.launch_s, self.migration.grace_s) {
            errors.push("migration", e);
        }
        if !(0.0..=MAX_NOISE_MS).contains(&self.measurement.magnitude_ms) {
            errors.push(
                "measurement.magnitude_ms",
                format!("must be in [0, {MAX_NOISE_MS}], got {}", self.measurement.magnitude_ms),
            );
        }
        if self.mapper.workers == 0 {
            errors.push("mapper.workers", "must be >= 1");
        }
        if self.mapper.max_rounds == 0 {
            errors.push("mapper.max_rounds", "must be >= 1");
        }
        non_negative(self.mapper.forward_weight, "mapper.forward_weight", &mut errors);
        non_negative(self.mapper.backward_weight, "mapper.backward_weight", &mut errors);
        if let Some(pf) = self.mapper.penalty_factor {
            positive(pf, "mapper.penalty_factor", &mut errors);
        }
        if self.netmarks.top_pairs == 0 {
            errors.push("netmarks.top_pairs", "must be >= 1");
        }

        errors.into_result(|| Scenario {
            name: self.name.clone(),
            seed: self.seed,
            duration_s: self.duration_s,
            services,
            nodes,
            request_types,
            qps: self.workload.qps,
            mix,
            base_delay_ms: self.delays.base_ms,
            schedule: schedule.expect("no issues"),
            reserved: ReservedDestinations::new(reserved),
            qos: self.qos,
            link: link.expect("no issues"),
            timeout_ms: self.network.timeout_ms,
            tail_jitter_ms: self.network.tail_jitter_ms,
            migration: self.migration,
            noise_distribution: self.measurement.distribution,
            noise_magnitude_ms: self.measurement.magnitude_ms,
            mapper: MapperConfig {
                workers: self.mapper.workers,
                max_rounds: self.mapper.max_rounds,
                execution: Execution::Parallel,
            },
            forward_weight: self.mapper.forward_weight,
            backward_weight: self.mapper.backward_weight,
            penalty_factor: self.mapper.penalty_factor,
            netmarks_top_pairs: self.netmarks.top_pairs,
        })
    }
}
