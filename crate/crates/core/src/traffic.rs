//! Traffic analysis: turns cumulative sent/received byte counters into a
//! traffic stress graph and a stress-ordered list of service pairs.
//!
//! Stress of an upstream/downstream pair is the bidirectional byte volume over
//! the window divided by twice the window length, i.e. the mean of the sent
//! and received rates.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ServiceSpec, TrafficStressGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrafficError {
    #[error("window length must be > 0 seconds, got {0}")]
    NonPositiveWindow(f64),
    #[error("counter decreased for {upstream} -> {downstream}")]
    CounterReset { upstream: String, downstream: String },
    #[error("samples belong to different pairs: {0}")]
    PairMismatch(String),
    #[error("unknown services referenced by samples: {}", .0.join(", "))]
    UnknownServices(Vec<String>),
    #[error("sample for {0} has upstream == downstream")]
    SelfPair(String),
    #[error("invalid counter value in sample {upstream} -> {downstream}: {value}")]
    InvalidCounter {
        upstream: String,
        downstream: String,
        value: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One scrape of the mesh byte counters for an ordered service pair.
///
/// `received_bytes_total` counts request bytes received by the downstream and
/// `sent_bytes_total` counts response bytes it sent back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterSample {
    pub upstream: String,
    pub downstream: String,
    pub sent_bytes_total: f64,
    pub received_bytes_total: f64,
    pub timestamp: f64,
}

/// A stressed (upstream, downstream) pair, by service index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StressElement {
    pub upstream: usize,
    pub downstream: usize,
    pub stress: f64,
}

/// Pairs with strictly positive stress, highest first.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SortedPairs(Vec<StressElement>);

impl SortedPairs {
    pub fn as_slice(&self) -> &[StressElement] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, StressElement> {
        self.0.iter()
    }
}

/// Something odd noticed while building a graph; never fatal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CounterDiagnostic {
    /// A cumulative counter went backwards; the post-reset value was taken as
    /// the increase for that interval.
    CounterReset {
        upstream: String,
        downstream: String,
        at: f64,
    },
    /// Only one sample (or zero elapsed time) for the pair; stress left at 0.
    InsufficientSamples { upstream: String, downstream: String },
}

/// Result of [`build_stress_graph`].
#[derive(Debug, Clone, PartialEq)]
pub struct StressGraphBuild {
    pub graph: TrafficStressGraph,
    pub diagnostics: Vec<CounterDiagnostic>,
}

fn check_counter(sample: &CounterSample) -> Result<(), TrafficError> {
    for value in [sample.sent_bytes_total, sample.received_bytes_total, sample.timestamp] {
        if !value.is_finite() || value < 0.0 {
            return Err(TrafficError::InvalidCounter {
                upstream: sample.upstream.clone(),
                downstream: sample.downstream.clone(),
                value,
            });
        }
    }
    Ok(())
}

/// Stress of one pair from the samples at the two ends of a window.
///
/// Strict about resets: a decreasing counter is an error here. The graph
/// builder handles resets itself.
pub fn bi_traffic(start: &CounterSample, end: &CounterSample, dt: f64) -> Result<f64, TrafficError> {
    if !(dt > 0.0) {
        return Err(TrafficError::NonPositiveWindow(dt));
    }
    if start.upstream != end.upstream || start.downstream != end.downstream {
        return Err(TrafficError::PairMismatch(format!(
            "{}->{} vs {}->{}",
            start.upstream, start.downstream, end.upstream, end.downstream
        )));
    }
    check_counter(start)?;
    check_counter(end)?;
    let sent = end.sent_bytes_total - start.sent_bytes_total;
    let received = end.received_bytes_total - start.received_bytes_total;
    if sent < 0.0 || received < 0.0 {
        return Err(TrafficError::CounterReset {
            upstream: start.upstream.clone(),
            downstream: start.downstream.clone(),
        });
    }
    Ok((sent + received) / (2.0 * dt))
}

/// Counter increase across a time-ordered series; a drop means the counter
/// restarted from zero, so the new value itself is the increase.
fn increase(values: impl Iterator<Item = f64>) -> (f64, bool) {
    let mut total = 0.0;
    let mut reset = false;
    let mut prev: Option<f64> = None;
    for value in values {
        if let Some(p) = prev {
            if value >= p {
                total += value - p;
            } else {
                total += value;
                reset = true;
            }
        }
        prev = Some(value);
    }
    (total, reset)
}

/// Builds the k x k stress graph for `services` from counter samples.
///
/// For every ordered pair with samples, the increase of both counters is
/// taken over the pair's samples in time order, and divided by twice the
/// elapsed time between the pair's first and last sample. Pairs without
/// samples stay at zero. `window_s` is recorded on the graph.
pub fn build_stress_graph(
    samples: &[CounterSample],
    services: &[ServiceSpec],
    window_s: f64,
) -> Result<StressGraphBuild, TrafficError> {
    if !(window_s > 0.0) {
        return Err(TrafficError::NonPositiveWindow(window_s));
    }
    let index: BTreeMap<&str, usize> = services.iter().map(|s| (s.id.name.as_str(), s.id.index)).collect();
    let k = services.len();

    let mut unknown: Vec<String> = samples
        .iter()
        .flat_map(|s| [&s.upstream, &s.downstream])
        .filter(|name| !index.contains_key(name.as_str()))
        .cloned()
        .collect();
    unknown.sort();
    unknown.dedup();
    if !unknown.is_empty() {
        return Err(TrafficError::UnknownServices(unknown));
    }

    let mut by_pair: BTreeMap<(usize, usize), Vec<&CounterSample>> = BTreeMap::new();
    for sample in samples {
        check_counter(sample)?;
        let u = index[sample.upstream.as_str()];
        let v = index[sample.downstream.as_str()];
        if u == v {
            return Err(TrafficError::SelfPair(sample.upstream.clone()));
        }
        by_pair.entry((u, v)).or_default().push(sample);
    }

    let mut data = vec![0.0; k * k];
    let mut diagnostics = Vec::new();
    for ((u, v), mut series) in by_pair {
        series.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        let first = series[0];
        let last = series[series.len() - 1];
        let elapsed = last.timestamp - first.timestamp;
        if series.len() < 2 || elapsed <= 0.0 {
            diagnostics.push(CounterDiagnostic::InsufficientSamples {
                upstream: first.upstream.clone(),
                downstream: first.downstream.clone(),
            });
            continue;
        }
        let (sent, sent_reset) = increase(series.iter().map(|s| s.sent_bytes_total));
        let (received, recv_reset) = increase(series.iter().map(|s| s.received_bytes_total));
        if sent_reset || recv_reset {
            let at = series
                .windows(2)
                .find(|w| {
                    w[1].sent_bytes_total < w[0].sent_bytes_total
                        || w[1].received_bytes_total < w[0].received_bytes_total
                })
                .map_or(last.timestamp, |w| w[1].timestamp);
            diagnostics.push(CounterDiagnostic::CounterReset {
                upstream: first.upstream.clone(),
                downstream: first.downstream.clone(),
                at,
            });
        }
        data[u * k + v] = (sent + received) / (2.0 * elapsed);
    }

    Ok(StressGraphBuild {
        graph: TrafficStressGraph::new(k, data, window_s)?,
        diagnostics,
    })
}

/// All pairs with stress > 0, ordered by stress descending and then by
/// (upstream, downstream) ascending.
pub fn sort_pairs(graph: &TrafficStressGraph) -> SortedPairs {
    let k = graph.dim();
    let mut pairs: Vec<StressElement> = (0..k)
        .flat_map(|u| (0..k).map(move |v| (u, v)))
        .filter_map(|(u, v)| {
            let stress = graph.get(u, v);
            (stress > 0.0).then_some(StressElement {
                upstream: u,
                downstream: v,
                stress,
            })
        })
        .collect();
    pairs.sort_by(|a, b| {
        b.stress
            .partial_cmp(&a.stress)
            .unwrap_or(Ordering::Equal)
            .then(a.upstream.cmp(&b.upstream))
            .then(a.downstream.cmp(&b.downstream))
    });
    SortedPairs(pairs)
}
