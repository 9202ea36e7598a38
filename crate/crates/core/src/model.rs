//! Shared domain types: services, nodes, resource vectors, placements and the
//! two square matrices (traffic stress and cross-node delay) that every other
//! module consumes.
//!
//! All types validate on construction and are immutable afterwards, so they can
//! be shared freely between the mapper's worker threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("resource kinds differ: {left:?} vs {right:?}")]
    KindMismatch { left: Vec<String>, right: Vec<String> },
    #[error("resource vector has {kinds} kinds but {amounts} amounts")]
    LengthMismatch { kinds: usize, amounts: usize },
    #[error("amount for `{kind}` must be finite and >= 0, got {value}")]
    NegativeAmount { kind: String, value: f64 },
    #[error("{what}: expected {expected} entries for a {dim}x{dim} matrix, got {actual}")]
    NotSquare {
        what: &'static str,
        dim: usize,
        expected: usize,
        actual: usize,
    },
    #[error("{what}: diagonal entry [{index}][{index}] must be 0, got {value}")]
    NonZeroDiagonal {
        what: &'static str,
        index: usize,
        value: f64,
    },
    #[error("{what}: entry [{row}][{col}] must be finite and >= 0, got {value}")]
    NegativeEntry {
        what: &'static str,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("window must be > 0 seconds, got {0}")]
    NonPositiveWindow(f64),
    #[error("placement entry {service} -> node {node} is out of range (nodes = {nodes})")]
    InvalidNode { service: usize, node: usize, nodes: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("cost weights invalid: {0}")]
    Weights(String),
    #[error("service `{0}` must have replicas >= 1")]
    Replicas(String),
}

/// Index plus label of one microservice.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ServiceId {
    pub index: usize,
    pub name: String,
}

/// Index plus label of one server node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub index: usize,
    pub name: String,
}

/// Multi-dimensional demand or capacity (cpu, memory, gpu, ...).
///
/// Two vectors are only comparable when they carry the same ordered list of
/// resource kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceVector {
    kinds: Vec<String>,
    amounts: Vec<f64>,
}

impl ResourceVector {
    pub fn new(kinds: Vec<String>, amounts: Vec<f64>) -> Result<Self, ModelError> {
        if kinds.len() != amounts.len() {
            return Err(ModelError::LengthMismatch {
                kinds: kinds.len(),
                amounts: amounts.len(),
            });
        }
        for (kind, &value) in kinds.iter().zip(&amounts) {
            if !value.is_finite() || value < 0.0 {
                return Err(ModelError::NegativeAmount {
                    kind: kind.clone(),
                    value,
                });
            }
        }
        Ok(Self { kinds, amounts })
    }

    /// Builds a vector from `(kind, amount)` pairs.
    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, f64)>) -> Result<Self, ModelError> {
        let (kinds, amounts) = pairs.into_iter().map(|(k, v)| (k.into(), v)).unzip();
        Self::new(kinds, amounts)
    }

    pub fn zeros(kinds: &[String]) -> Self {
        Self {
            kinds: kinds.to_vec(),
            amounts: vec![0.0; kinds.len()],
        }
    }

    pub fn kinds(&self) -> &[String] {
        &self.kinds
    }

    pub fn amounts(&self) -> &[f64] {
        &self.amounts
    }

    pub fn get(&self, kind: &str) -> Option<f64> {
        self.kinds.iter().position(|k| k == kind).map(|i| self.amounts[i])
    }

    fn check_kinds(&self, other: &Self) -> Result<(), ModelError> {
        if self.kinds != other.kinds {
            return Err(ModelError::KindMismatch {
                left: self.kinds.clone(),
                right: other.kinds.clone(),
            });
        }
        Ok(())
    }

    /// True iff every component of `self` is <= the matching component of `other`.
    pub fn leq_elementwise(&self, other: &Self) -> Result<bool, ModelError> {
        self.check_kinds(other)?;
        Ok(self.amounts.iter().zip(&other.amounts).all(|(a, b)| a <= b))
    }

    pub fn add(&self, other: &Self) -> Result<Self, ModelError> {
        self.check_kinds(other)?;
        Ok(Self {
            kinds: self.kinds.clone(),
            amounts: self.amounts.iter().zip(&other.amounts).map(|(a, b)| a + b).collect(),
        })
    }

    /// Multiplies every amount by `factor` (used to aggregate replicas).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            kinds: self.kinds.clone(),
            amounts: self.amounts.iter().map(|a| a * factor).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub id: ServiceId,
    pub demand: ResourceVector,
    pub migratable: bool,
    pub replicas: u32,
}

impl ServiceSpec {
    pub fn new(id: ServiceId, demand: ResourceVector, migratable: bool, replicas: u32) -> Result<Self, ModelError> {
        if replicas == 0 {
            return Err(ModelError::Replicas(id.name));
        }
        Ok(Self {
            id,
            demand,
            migratable,
            replicas,
        })
    }

    /// Demand of all replicas together; replicas are placed as one logical unit.
    pub fn aggregate_demand(&self) -> ResourceVector {
        self.demand.scaled(f64::from(self.replicas))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub capacity: ResourceVector,
}

/// Total mapping from service index to node index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Placement {
    assignment: Vec<usize>,
}

impl Placement {
    pub fn new(assignment: Vec<usize>, nodes: usize) -> Result<Self, ModelError> {
        if let Some((service, &node)) = assignment.iter().enumerate().find(|(_, &n)| n >= nodes) {
            return Err(ModelError::InvalidNode { service, node, nodes });
        }
        Ok(Self { assignment })
    }

    /// Every service on node 0.
    pub fn colocated(services: usize) -> Self {
        Self {
            assignment: vec![0; services],
        }
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn node_of(&self, service: usize) -> usize {
        self.assignment[service]
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub(crate) fn set(&mut self, service: usize, node: usize) {
        self.assignment[service] = node;
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.assignment
    }
}

fn validate_square(what: &'static str, dim: usize, data: &[f64]) -> Result<(), ModelError> {
    if data.len() != dim * dim {
        return Err(ModelError::NotSquare {
            what,
            dim,
            expected: dim * dim,
            actual: data.len(),
        });
    }
    for row in 0..dim {
        for col in 0..dim {
            let value = data[row * dim + col];
            if !value.is_finite() || value < 0.0 {
                return Err(ModelError::NegativeEntry { what, row, col, value });
            }
            if row == col && value != 0.0 {
                return Err(ModelError::NonZeroDiagonal {
                    what,
                    index: row,
                    value,
                });
            }
        }
    }
    Ok(())
}

fn rows_to_flat(what: &'static str, rows: &[Vec<f64>]) -> Result<(usize, Vec<f64>), ModelError> {
    let dim = rows.len();
    let actual: usize = rows.iter().map(Vec::len).sum();
    if rows.iter().any(|row| row.len() != dim) {
        return Err(ModelError::NotSquare {
            what,
            dim,
            expected: dim * dim,
            actual,
        });
    }
    Ok((dim, rows.concat()))
}

/// k x k stress matrix (bytes/s). Entry `[u][v]` is the stress attributed to
/// the ordered pair with `u` upstream and `v` downstream over a window of
/// `window_s` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficStressGraph {
    dim: usize,
    data: Vec<f64>,
    window_s: f64,
}

impl TrafficStressGraph {
    pub fn new(dim: usize, data: Vec<f64>, window_s: f64) -> Result<Self, ModelError> {
        if !(window_s > 0.0) {
            return Err(ModelError::NonPositiveWindow(window_s));
        }
        validate_square("traffic stress graph", dim, &data)?;
        Ok(Self { dim, data, window_s })
    }

    pub fn from_rows(rows: &[Vec<f64>], window_s: f64) -> Result<Self, ModelError> {
        let (dim, data) = rows_to_flat("traffic stress graph", rows)?;
        Self::new(dim, data, window_s)
    }

    pub fn zeros(dim: usize, window_s: f64) -> Result<Self, ModelError> {
        Self::new(dim, vec![0.0; dim * dim], window_s)
    }

    /// Number of services.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn window_s(&self) -> f64 {
        self.window_s
    }

    pub fn get(&self, upstream: usize, downstream: usize) -> f64 {
        self.data[upstream * self.dim + downstream]
    }

    pub fn row(&self, upstream: usize) -> &[f64] {
        &self.data[upstream * self.dim..(upstream + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks(self.dim.max(1))
            .map(<[f64]>::to_vec)
            .take(self.dim)
            .collect()
    }

    /// Symmetric pair stress: both ordered directions added together.
    pub fn symmetric_stress(&self, a: usize, b: usize) -> f64 {
        self.get(a, b) + self.get(b, a)
    }

    /// Sum of all stress incident to `service` in either direction.
    pub fn stress_degree(&self, service: usize) -> f64 {
        (0..self.dim)
            .map(|other| self.get(service, other) + self.get(other, service))
            .sum()
    }

    pub fn max_entry(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, ModelError> {
        Self::new(self.dim, self.data.iter().map(|v| v * factor).collect(), self.window_s)
    }
}

/// p x p one-way node-to-node delay matrix in milliseconds. Not necessarily
/// symmetric; diagonal is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl DelayMatrix {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self, ModelError> {
        validate_square("delay matrix", dim, &data)?;
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ModelError> {
        let (dim, data) = rows_to_flat("delay matrix", rows)?;
        Self::new(dim, data)
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    /// Same delay between every pair of distinct nodes.
    pub fn uniform(dim: usize, delay_ms: f64) -> Result<Self, ModelError> {
        let data = (0..dim * dim)
            .map(|i| if i / dim == i % dim { 0.0 } else { delay_ms })
            .collect();
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.data[from * self.dim + to]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks(self.dim.max(1))
            .map(<[f64]>::to_vec)
            .take(self.dim)
            .collect()
    }

    pub fn max_entry(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }
}

/// Direction weights of the pairwise cost plus the overflow penalty factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub forward: f64,
    pub backward: f64,
    pub penalty_factor: f64,
}

impl CostWeights {
    pub fn new(forward: f64, backward: f64, penalty_factor: f64) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&forward) || !(0.0..=1.0).contains(&backward) {
            return Err(ModelError::Weights(format!(
                "direction weights must lie in [0, 1], got ({forward}, {backward})"
            )));
        }
        if !(penalty_factor > 0.0) || !penalty_factor.is_finite() {
            return Err(ModelError::Weights(format!(
                "penalty factor must be finite and > 0, got {penalty_factor}"
            )));
        }
        Ok(Self {
            forward,
            backward,
            penalty_factor,
        })
    }

    /// Equal forward/backward weights of 0.5.
    pub fn balanced(penalty_factor: f64) -> Result<Self, ModelError> {
        Self::new(0.5, 0.5, penalty_factor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rv(cpu: f64, mem: f64) -> ResourceVector {
        ResourceVector::from_pairs([("cpu", cpu), ("mem", mem)]).unwrap()
    }

    #[test]
    fn leq_examples() {
        assert!(rv(2.0, 4.0).leq_elementwise(&rv(4.0, 4.0)).unwrap());
        assert!(!rv(2.0, 5.0).leq_elementwise(&rv(4.0, 4.0)).unwrap());
        assert!(rv(0.0, 0.0).leq_elementwise(&rv(0.0, 0.0)).unwrap());
    }

    #[test]
    fn add_examples() {
        assert_eq!(rv(1.0, 2.0).add(&rv(3.0, 4.0)).unwrap(), rv(4.0, 6.0));
        let zero = ResourceVector::zeros(rv(0.0, 0.0).kinds());
        assert_eq!(rv(1.5, 2.5).add(&zero).unwrap(), rv(1.5, 2.5));
    }

    #[test]
    fn mismatched_kinds_are_rejected() {
        let gpu = ResourceVector::from_pairs([("cpu", 1.0), ("gpu", 1.0)]).unwrap();
        assert!(matches!(rv(1.0, 1.0).add(&gpu), Err(ModelError::KindMismatch { .. })));
        assert!(matches!(
            rv(1.0, 1.0).leq_elementwise(&gpu),
            Err(ModelError::KindMismatch { .. })
        ));
    }

    #[test]
    fn negative_amounts_rejected() {
        assert!(ResourceVector::from_pairs([("cpu", -1.0)]).is_err());
        assert!(ResourceVector::from_pairs([("cpu", f64::NAN)]).is_err());
    }

    #[test]
    fn matrices_reject_bad_shapes_and_diagonals() {
        assert!(matches!(
            DelayMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0]]),
            Err(ModelError::NotSquare { .. })
        ));
        assert!(matches!(
            DelayMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 0.0]]),
            Err(ModelError::NonZeroDiagonal { .. })
        ));
        assert!(matches!(
            TrafficStressGraph::from_rows(&[vec![0.0, -1.0], vec![0.0, 0.0]], 60.0),
            Err(ModelError::NegativeEntry { .. })
        ));
        assert!(TrafficStressGraph::zeros(2, 0.0).is_err());
    }

    #[test]
    fn placement_must_be_total_and_in_range() {
        assert!(Placement::new(vec![0, 1, 2], 3).is_ok());
        assert!(matches!(
            Placement::new(vec![0, 3], 3),
            Err(ModelError::InvalidNode { .. })
        ));
    }

    #[test]
    fn weights_are_bounded() {
        assert!(CostWeights::new(1.0, 0.0, 1.0).is_ok());
        assert!(CostWeights::new(1.1, 0.0, 1.0).is_err());
        assert!(CostWeights::new(0.5, 0.5, 0.0).is_err());
    }

    #[test]
    fn replicas_aggregate_demand() {
        let svc = ServiceSpec::new(
            ServiceId {
                index: 0,
                name: "a".into(),
            },
            rv(0.5, 1.0),
            true,
            3,
        )
        .unwrap();
        assert_eq!(svc.aggregate_demand(), rv(1.5, 3.0));
        assert!(ServiceSpec::new(
            ServiceId {
                index: 0,
                name: "a".into()
            },
            rv(0.5, 1.0),
            true,
            0
        )
        .is_err());
    }

    fn vec3() -> impl Strategy<Value = ResourceVector> {
        proptest::collection::vec(0.0f64..100.0, 3)
            .prop_map(|amounts| ResourceVector::new(vec!["cpu".into(), "mem".into(), "gpu".into()], amounts).unwrap())
    }

    proptest! {
        #[test]
        fn add_is_commutative(a in vec3(), b in vec3()) {
            prop_assert_eq!(a.add(&b).unwrap(), b.add(&a).unwrap());
        }

        #[test]
        fn add_is_associative(a in vec3(), b in vec3(), c in vec3()) {
            let left = a.add(&b).unwrap().add(&c).unwrap();
            let right = a.add(&b.add(&c).unwrap()).unwrap();
            for (x, y) in left.amounts().iter().zip(right.amounts()) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }

        #[test]
        fn leq_is_a_partial_order(a in vec3(), b in vec3(), c in vec3()) {
            prop_assert!(a.leq_elementwise(&a).unwrap());
            if a.leq_elementwise(&b).unwrap() && b.leq_elementwise(&a).unwrap() {
                prop_assert_eq!(&a, &b);
            }
            if a.leq_elementwise(&b).unwrap() && b.leq_elementwise(&c).unwrap() {
                prop_assert!(a.leq_elementwise(&c).unwrap());
            }
            // Adding a non-negative vector never decreases.
            prop_assert!(a.leq_elementwise(&a.add(&b).unwrap()).unwrap());
        }
    }
}
