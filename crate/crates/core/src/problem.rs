//! Standalone input and output files for the offline subcommands: placement
//! problems for the mapper and oracle, counter dumps for the analyzer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::default_spread;
use crate::mapper::{CostBreakdown, PlacementProblem, PlacementResult};
use crate::model::{
    CostWeights, DelayMatrix, NodeSpec, Placement, ResourceVector, ServiceId, ServiceSpec, TrafficStressGraph,
};
use crate::scenario::{compile_topology, read_json, LoadError, MatrixSpec, NodeDef, ServiceDef, ValidationError};
use crate::traffic::{CounterDiagnostic, CounterSample, StressGraphBuild};

pub const PROBLEM_SCHEMA_VERSION: u32 = 1;

fn default_window() -> f64 {
    60.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsDef {
    pub forward: f64,
    pub backward: f64,
    /// Derived from the instance when absent.
    pub penalty_factor: Option<f64>,
}

impl Default for WeightsDef {
    fn default() -> Self {
        Self {
            forward: 0.5,
            backward: 0.5,
            penalty_factor: None,
        }
    }
}

/// A placement instance: services, nodes, stress graph and delays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub schema_version: u32,
    pub services: Vec<ServiceDef>,
    pub nodes: Vec<NodeDef>,
    /// Stress in bytes/s, rows are upstream services.
    pub traffic: MatrixSpec,
    /// One-way delay in ms, rows are source nodes.
    pub delays: MatrixSpec,
    /// Node name per service; the spread placement when absent.
    #[serde(default)]
    pub initial_placement: Option<Vec<String>>,
    #[serde(default)]
    pub weights: WeightsDef,
    #[serde(default = "default_window")]
    pub window_s: f64,
}

/// Validated problem ready for the mapper.
#[derive(Debug, Clone)]
pub struct Problem {
    pub services: Vec<ServiceSpec>,
    pub nodes: Vec<NodeSpec>,
    pub problem: PlacementProblem,
    pub initial: Placement,
}

impl ProblemFile {
    pub fn load(path: &Path) -> Result<Problem, LoadError> {
        let file: ProblemFile = read_json(path)?;
        file.compile().map_err(|source| LoadError::Invalid {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn compile(&self) -> Result<Problem, ValidationError> {
        let mut errors = ValidationError::default();
        if self.schema_version != PROBLEM_SCHEMA_VERSION {
            errors.push(
                "schema_version",
                format!(
                    "unsupported version {} (expected {PROBLEM_SCHEMA_VERSION})",
                    self.schema_version
                ),
            );
        }
        let topo = compile_topology(&self.nodes, &self.services, &mut errors);
        let (k, p) = (self.services.len(), self.nodes.len());
        let traffic = self.traffic.check_square("traffic", "bytes/s", k, &mut errors);
        let delays = self.delays.check_square("delays", "ms", p, &mut errors);
        if !(self.window_s > 0.0) {
            errors.push("window_s", format!("must be > 0, got {}", self.window_s));
        }
        let w = self.weights;
        for (name, v) in [("forward", w.forward), ("backward", w.backward)] {
            if !(v >= 0.0) || !v.is_finite() {
                errors.push(format!("weights.{name}"), format!("must be finite and >= 0, got {v}"));
            }
        }
        if let Some(pf) = w.penalty_factor {
            if !(pf > 0.0) || !pf.is_finite() {
                errors.push("weights.penalty_factor", format!("must be finite and > 0, got {pf}"));
            }
        }
        let mut initial = Vec::new();
        if let Some(names) = &self.initial_placement {
            if names.len() != k {
                errors.push("initial_placement", format!("{} entries for {k} services", names.len()));
            }
            for (i, name) in names.iter().enumerate() {
                match topo.node_index.get(name) {
                    Some(&n) => initial.push(n),
                    None => errors.push(format!("initial_placement[{i}]"), format!("unknown node `{name}`")),
                }
            }
        }
        if !errors.issues.is_empty() {
            return Err(errors);
        }

        let traffic = TrafficStressGraph::new(k, traffic.expect("checked"), self.window_s).expect("checked");
        let delays = DelayMatrix::new(p, delays.expect("checked")).expect("checked");
        let demands: Vec<ResourceVector> = topo.services.iter().map(ServiceSpec::aggregate_demand).collect();
        let capacities: Vec<ResourceVector> = topo.nodes.iter().map(|n| n.capacity.clone()).collect();
        let built = match w.penalty_factor {
            Some(pf) => CostWeights::new(w.forward, w.backward, pf)
                .map_err(Into::into)
                .and_then(|weights| PlacementProblem::new(traffic, delays, demands, capacities, weights)),
            None => {
                PlacementProblem::with_adaptive_penalty(traffic, delays, demands, capacities, w.forward, w.backward)
            }
        };
        let problem = match built {
            Ok(problem) => problem,
            Err(e) => {
                errors.push("", e);
                return Err(errors);
            }
        };
        let initial = if self.initial_placement.is_some() {
            Placement::new(initial, p).expect("indices from node names")
        } else {
            match default_spread(&topo.services, &topo.nodes) {
                Ok(spread) => spread,
                Err(e) => {
                    errors.push("nodes", e);
                    return Err(errors);
                }
            }
        };
        Ok(Problem {
            services: topo.services,
            nodes: topo.nodes,
            problem,
            initial,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub service: String,
    pub node: String,
}

/// Output of `solve` and `oracle`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutput {
    pub schema_version: u32,
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub placement: Vec<usize>,
    pub assignment: Vec<Assignment>,
    pub cost: CostBreakdown,
    pub initial_cost: CostBreakdown,
    pub feasible: bool,
    pub iterations: usize,
    pub accepted_moves: usize,
    pub evaluations: u64,
    /// Wall-clock seconds; only present when timing was requested, so that
    /// reruns stay byte-identical by default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_s: Option<f64>,
}

impl SolveOutput {
    pub fn new(
        method: &str,
        workers: Option<usize>,
        problem: &Problem,
        result: &PlacementResult,
        timing: bool,
    ) -> Self {
        let assignment = result
            .placement
            .assignment()
            .iter()
            .enumerate()
            .map(|(s, &n)| Assignment {
                service: problem.services[s].id.name.clone(),
                node: problem.nodes[n].id.name.clone(),
            })
            .collect();
        Self {
            schema_version: PROBLEM_SCHEMA_VERSION,
            method: method.to_owned(),
            workers,
            placement: result.placement.assignment().to_vec(),
            assignment,
            cost: result.cost,
            initial_cost: problem.problem.cost(&problem.initial),
            feasible: problem.problem.is_feasible(result.placement.assignment()),
            iterations: result.iterations,
            accepted_moves: result.accepted_moves,
            evaluations: result.evaluations,
            elapsed_s: timing.then_some(result.elapsed_s),
        }
    }
}

/// Counter scrapes for `analyze`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterDump {
    pub schema_version: u32,
    pub services: Vec<String>,
    pub window_s: f64,
    pub samples: Vec<CounterSample>,
}

impl CounterDump {
    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let dump: CounterDump = read_json(path)?;
        let mut errors = ValidationError::default();
        if dump.schema_version != PROBLEM_SCHEMA_VERSION {
            errors.push("schema_version", format!("unsupported version {}", dump.schema_version));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, name) in dump.services.iter().enumerate() {
            if !seen.insert(name) {
                errors.push(format!("services[{i}]"), format!("duplicate name `{name}`"));
            }
        }
        errors.into_result(|| dump).map_err(|source| LoadError::Invalid {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Service list as specs with no resource demand; analysis ignores demand.
    pub fn service_specs(&self) -> Vec<ServiceSpec> {
        self.services
            .iter()
            .enumerate()
            .map(|(index, name)| {
                ServiceSpec::new(
                    ServiceId {
                        index,
                        name: name.clone(),
                    },
                    ResourceVector::zeros(&[]),
                    true,
                    1,
                )
                .expect("one replica")
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedPair {
    pub upstream: String,
    pub downstream: String,
    pub stress: f64,
}

/// Output of `analyze`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeOutput {
    pub schema_version: u32,
    pub services: Vec<String>,
    pub window_s: f64,
    pub graph: MatrixSpec,
    pub sorted_pairs: Vec<NamedPair>,
    pub diagnostics: Vec<CounterDiagnostic>,
}

impl AnalyzeOutput {
    pub fn new(dump: &CounterDump, build: &StressGraphBuild) -> Self {
        let graph = &build.graph;
        let sorted_pairs = crate::traffic::sort_pairs(graph)
            .iter()
            .map(|e| NamedPair {
                upstream: dump.services[e.upstream].clone(),
                downstream: dump.services[e.downstream].clone(),
                stress: e.stress,
            })
            .collect();
        Self {
            schema_version: PROBLEM_SCHEMA_VERSION,
            services: dump.services.clone(),
            window_s: dump.window_s,
            graph: MatrixSpec::from_square("bytes/s", graph.dim(), graph.as_slice().to_vec()),
            sorted_pairs,
            diagnostics: build.diagnostics.clone(),
        }
    }
}
