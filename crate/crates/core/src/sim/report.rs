use serde::{Deserialize, Serialize};

use crate::control::{Policy, TriggerReason};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// One generated request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub arrival_s: f64,
    pub request_type: usize,
    pub latency_ms: f64,
    pub success: bool,
    /// Index into [`SimulationOutcome::routing`](super::SimulationOutcome) of
    /// the placement that served this request.
    pub routing_epoch: usize,
}

impl RequestRecord {
    pub fn completion_s(&self) -> f64 {
        self.arrival_s + self.latency_ms / 1000.0
    }
}

/// Latency and throughput of requests completing in `[start_s, end_s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub phase: String,
    pub completed: u64,
    pub successes: u64,
    /// Means and percentiles are over successful requests only.
    pub mean_ms: Option<f64>,
    pub p50_ms: Option<f64>,
    pub p95_ms: Option<f64>,
    pub p99_ms: Option<f64>,
    pub throughput_rps: f64,
    pub goodput: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub label: String,
    pub start_s: f64,
    pub end_s: f64,
    pub completed: u64,
    pub successes: u64,
    pub mean_ms: Option<f64>,
    pub p99_ms: Option<f64>,
    pub goodput: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub generated: u64,
    pub successes: u64,
    pub failures: u64,
    pub goodput: f64,
    pub mean_ms: Option<f64>,
}

/// One poll of the control loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub time_s: f64,
    pub window_requests: u64,
    pub observed_mean_ms: Option<f64>,
    pub triggered: bool,
    pub reason: TriggerReason,
    /// Trigger ignored because of the post-migration cooldown or a migration
    /// still in flight.
    pub suppressed: bool,
    pub plan_size: usize,
    /// Non-migratable services the policy wanted to move.
    pub pinned: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationRecord {
    pub service: usize,
    pub name: String,
    pub from: usize,
    pub to: usize,
    pub launch_s: f64,
    pub ready_s: f64,
    pub evict_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceEventKind {
    Launch,
    Ready,
    Evict,
}

/// Lifecycle change of one service instance, with the number of ready
/// instances of that service right after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEvent {
    pub time_s: f64,
    pub service: usize,
    pub node: usize,
    pub kind: InstanceEventKind,
    pub ready_after: u32,
}

/// Cumulative bytes on one caller/callee pair at the end of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCounter {
    pub upstream: String,
    pub downstream: String,
    pub sent_bytes_total: f64,
    pub received_bytes_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub schema_version: u32,
    pub scenario: String,
    pub policy: Policy,
    pub seed: u64,
    pub duration_s: f64,
    pub target_ms: f64,
    pub totals: Totals,
    pub windows: Vec<WindowStats>,
    pub phases: Vec<PhaseStats>,
    pub decisions: Vec<DecisionRecord>,
    pub migrations: Vec<MigrationRecord>,
    pub instance_events: Vec<InstanceEvent>,
    /// Lowest ready-instance count any service reached during the run.
    pub min_ready: u32,
    /// Launches that briefly pushed a node past its capacity.
    pub capacity_warnings: u64,
    pub initial_placement: Vec<usize>,
    pub final_placement: Vec<usize>,
    pub counters: Vec<PairCounter>,
}

impl SimulationReport {
    pub fn phase(&self, label: &str) -> Option<&PhaseStats> {
        self.phases.iter().find(|p| p.label == label)
    }
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], pct: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

pub(crate) struct Summary {
    pub completed: u64,
    pub successes: u64,
    pub mean_ms: Option<f64>,
    pub sorted_success_ms: Vec<f64>,
}

pub(crate) fn summarize<'a>(records: impl Iterator<Item = &'a RequestRecord>) -> Summary {
    let mut completed = 0;
    let mut ok = Vec::new();
    for r in records {
        completed += 1;
        if r.success {
            ok.push(r.latency_ms);
        }
    }
    // Mean over arrival order keeps the sum independent of sorting.
    let mean_ms = (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64);
    ok.sort_by(f64::total_cmp);
    Summary {
        completed,
        successes: ok.len() as u64,
        mean_ms,
        sorted_success_ms: ok,
    }
}

impl Summary {
    pub fn goodput(&self) -> Option<f64> {
        (self.completed > 0).then(|| self.successes as f64 / self.completed as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), Some(50.0));
        assert_eq!(percentile(&v, 99.0), Some(99.0));
        assert_eq!(percentile(&v, 100.0), Some(100.0));
        assert_eq!(percentile(&[7.0], 0.0), Some(7.0));
        assert_eq!(percentile(&[], 50.0), None);
    }

    #[test]
    fn summary_excludes_failures_from_latency() {
        let rec = |latency_ms, success| RequestRecord {
            arrival_s: 0.0,
            request_type: 0,
            latency_ms,
            success,
            routing_epoch: 0,
        };
        let records = [rec(100.0, true), rec(300.0, true), rec(5000.0, false)];
        let s = summarize(records.iter());
        assert_eq!(s.completed, 3);
        assert_eq!(s.successes, 2);
        assert_eq!(s.mean_ms, Some(200.0));
        assert_eq!(s.goodput(), Some(2.0 / 3.0));
    }
}
