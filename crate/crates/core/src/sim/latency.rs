use serde::{Deserialize, Serialize};

use super::SimError;
use crate::model::{DelayMatrix, Placement};

/// One caller-to-callee hop of a request, with the bytes it moves each way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Call {
    pub from: usize,
    pub to: usize,
    pub request_bytes: f64,
    pub response_bytes: f64,
}

/// A request's call tree rooted at its entry service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestType {
    name: String,
    entry: usize,
    calls: Vec<Call>,
    /// Indexed by service; services outside the tree are ignored.
    processing_ms: Vec<f64>,
    parallel_fanout: bool,
    children: Vec<Vec<usize>>,
}

impl RequestType {
    /// Checks that `calls` form a tree rooted at `entry` over `services`
    /// services: every callee has exactly one caller, every caller is reached
    /// from the root, and no service calls itself.
    pub fn new(
        name: impl Into<String>,
        entry: usize,
        calls: Vec<Call>,
        processing_ms: Vec<f64>,
        parallel_fanout: bool,
        services: usize,
    ) -> Result<Self, SimError> {
        let name = name.into();
        let bad = |msg: String| SimError::RequestType {
            name: name.clone(),
            message: msg,
        };
        if entry >= services {
            return Err(bad(format!("entry service {entry} out of range")));
        }
        if processing_ms.len() != services {
            return Err(bad(format!(
                "{} processing times for {services} services",
                processing_ms.len()
            )));
        }
        if processing_ms.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(bad("processing times must be finite and >= 0".into()));
        }
        let mut parent = vec![None; services];
        let mut children = vec![Vec::new(); services];
        for (i, call) in calls.iter().enumerate() {
            if call.from >= services || call.to >= services {
                return Err(bad(format!("call {i} references an unknown service")));
            }
            if call.from == call.to {
                return Err(bad(format!("call {i} is a self call")));
            }
            if call.to == entry {
                return Err(bad(format!("call {i} targets the entry service")));
            }
            if !(call.request_bytes >= 0.0 && call.response_bytes >= 0.0) {
                return Err(bad(format!("call {i} has negative or NaN bytes")));
            }
            if parent[call.to].replace(call.from).is_some() {
                return Err(bad(format!("service {} is called twice", call.to)));
            }
            children[call.from].push(i);
        }
        // Reachability from the root rules out cycles given single parents.
        let mut reached = vec![false; services];
        let mut stack = vec![entry];
        while let Some(s) = stack.pop() {
            reached[s] = true;
            stack.extend(children[s].iter().map(|&c| calls[c].to));
        }
        if let Some(call) = calls.iter().find(|c| !reached[c.from]) {
            return Err(bad(format!("caller {} is not reachable from the entry", call.from)));
        }
        Ok(Self {
            name,
            entry,
            calls,
            processing_ms,
            parallel_fanout,
            children,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn entry(&self) -> usize {
        self.entry
    }

    pub fn calls(&self) -> &[Call] {
        &self.calls
    }

    pub fn parallel_fanout(&self) -> bool {
        self.parallel_fanout
    }

    /// Services the request touches, entry first then callees in call order.
    pub fn visited(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.entry).chain(self.calls.iter().map(|c| c.to))
    }

    /// Sum of processing times over visited services; a lower bound on latency.
    pub fn processing_total_ms(&self) -> f64 {
        self.visited().map(|s| self.processing_ms[s]).sum()
    }
}

/// Per-hop network characteristics shared by every call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub bandwidth_bytes_per_s: f64,
    /// Constant proxy overhead added to every hop.
    pub per_hop_ms: f64,
}

impl LinkModel {
    pub fn new(bandwidth_bytes_per_s: f64, per_hop_ms: f64) -> Result<Self, SimError> {
        if !(bandwidth_bytes_per_s > 0.0) {
            return Err(SimError::Config(format!(
                "bandwidth must be > 0, got {bandwidth_bytes_per_s}"
            )));
        }
        if !(per_hop_ms >= 0.0) {
            return Err(SimError::Config(format!(
                "per-hop overhead must be >= 0, got {per_hop_ms}"
            )));
        }
        Ok(Self {
            bandwidth_bytes_per_s,
            per_hop_ms,
        })
    }

    pub fn from_gbps(gbps: f64, per_hop_ms: f64) -> Result<Self, SimError> {
        Self::new(gbps * 1e9 / 8.0, per_hop_ms)
    }
}

/// Network time of one hop: delay both ways, transfer of both payloads, and
/// the per-hop overhead.
pub fn hop_ms(call: &Call, placement: &Placement, delays: &DelayMatrix, link: &LinkModel) -> f64 {
    let (a, b) = (placement.node_of(call.from), placement.node_of(call.to));
    delays.get(a, b)
        + delays.get(b, a)
        + (call.request_bytes + call.response_bytes) / link.bandwidth_bytes_per_s * 1000.0
        + link.per_hop_ms
}

/// End-to-end latency of `rt` without queueing. Sibling subtrees run one
/// after another unless the type fans out in parallel, in which case the
/// slowest sibling counts.
pub fn request_latency(rt: &RequestType, placement: &Placement, delays: &DelayMatrix, link: &LinkModel) -> f64 {
    fn subtree(rt: &RequestType, service: usize, placement: &Placement, delays: &DelayMatrix, link: &LinkModel) -> f64 {
        let branches = rt.children[service].iter().map(|&c| {
            let call = &rt.calls[c];
            hop_ms(call, placement, delays, link) + subtree(rt, call.to, placement, delays, link)
        });
        let downstream = if rt.parallel_fanout {
            branches.fold(0.0, f64::max)
        } else {
            branches.sum()
        };
        rt.processing_ms[service] + downstream
    }
    subtree(rt, rt.entry, placement, delays, link)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(from: usize, to: usize, req: f64, resp: f64) -> Call {
        Call {
            from,
            to,
            request_bytes: req,
            response_bytes: resp,
        }
    }

    fn no_overhead() -> LinkModel {
        LinkModel::new(1e6, 0.0).unwrap()
    }

    #[test]
    fn colocated_costs_only_transfer() {
        let rt = RequestType::new("t", 0, vec![call(0, 1, 500.0, 1500.0)], vec![0.0; 2], false, 2).unwrap();
        let d = DelayMatrix::from_rows(&[vec![0.0, 3.0], vec![8.0, 0.0]]).unwrap();
        let p = Placement::new(vec![1, 1], 2).unwrap();
        // 2000 bytes at 1 MB/s.
        assert!((request_latency(&rt, &p, &d, &no_overhead()) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_edge_sums_both_directions() {
        let rt = RequestType::new("t", 0, vec![call(0, 1, 0.0, 0.0)], vec![0.0; 2], false, 2).unwrap();
        let d = DelayMatrix::from_rows(&[vec![0.0, 3.0], vec![8.0, 0.0]]).unwrap();
        let p = Placement::new(vec![0, 1], 2).unwrap();
        assert_eq!(request_latency(&rt, &p, &d, &no_overhead()), 11.0);
    }

    #[test]
    fn parallel_fanout_takes_slowest_branch() {
        let calls = vec![call(0, 1, 0.0, 0.0), call(0, 2, 0.0, 0.0)];
        let d = DelayMatrix::from_rows(&[vec![0.0, 1.0, 4.0], vec![1.0, 0.0, 1.0], vec![4.0, 1.0, 0.0]]).unwrap();
        let p = Placement::new(vec![0, 1, 2], 3).unwrap();
        let seq = RequestType::new("s", 0, calls.clone(), vec![1.0; 3], false, 3).unwrap();
        let par = RequestType::new("p", 0, calls, vec![1.0; 3], true, 3).unwrap();
        assert_eq!(request_latency(&seq, &p, &d, &no_overhead()), 3.0 + 2.0 + 8.0);
        assert_eq!(request_latency(&par, &p, &d, &no_overhead()), 1.0 + 1.0 + 8.0);
    }

    #[test]
    fn per_hop_overhead_applies_per_call() {
        let rt = RequestType::new(
            "t",
            0,
            vec![call(0, 1, 0.0, 0.0), call(1, 2, 0.0, 0.0)],
            vec![0.0; 3],
            false,
            3,
        )
        .unwrap();
        let link = LinkModel::new(1e9, 0.248).unwrap();
        let p = Placement::colocated(3);
        let d = DelayMatrix::zeros(1);
        assert!((request_latency(&rt, &p, &d, &link) - 0.496).abs() < 1e-12);
    }

    #[test]
    fn malformed_trees_are_rejected() {
        let two_parents = vec![call(0, 2, 0.0, 0.0), call(1, 2, 0.0, 0.0)];
        assert!(RequestType::new("t", 0, two_parents, vec![0.0; 3], false, 3).is_err());
        let cycle = vec![call(1, 2, 0.0, 0.0), call(2, 1, 0.0, 0.0)];
        assert!(RequestType::new("t", 0, cycle, vec![0.0; 3], false, 3).is_err());
        let into_root = vec![call(1, 0, 0.0, 0.0)];
        assert!(RequestType::new("t", 0, into_root, vec![0.0; 2], false, 2).is_err());
        assert!(RequestType::new("t", 5, vec![], vec![0.0; 2], false, 2).is_err());
    }
}
