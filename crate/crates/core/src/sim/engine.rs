use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::cluster::{to_ms, to_s, ClusterState, RoutingEpoch};
use super::latency::request_latency;
use super::report::{
    percentile, summarize, DecisionRecord, PairCounter, PhaseStats, RequestRecord, SimulationReport, Totals,
    WindowStats, REPORT_SCHEMA_VERSION,
};
use super::SimError;
use crate::baselines::default_spread;
use crate::control::{
    evaluate_trigger, filter_placement, propose, ControlError, LatencyWindow, Policy, RescheduleInput,
};
use crate::dynamics::{inject, DelayMeasurer, MeasurementNoise};
use crate::model::DelayMatrix;
use crate::scenario::Scenario;
use crate::traffic::{build_stress_graph, CounterSample};

/// Keeps the measurement noise stream apart from the request jitter stream.
const NOISE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Full result of one run: the serializable report plus the per-request
/// trace and the routing history that served it.
#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub report: SimulationReport,
    pub requests: Vec<RequestRecord>,
    pub routing: Vec<RoutingEpoch>,
}

impl SimulationOutcome {
    /// Node that served `service` for requests arriving at `time_s`.
    pub fn serving_node(&self, service: usize, time_s: f64) -> usize {
        let epoch = self.routing.partition_point(|e| e.start_s <= time_s).saturating_sub(1);
        self.routing[epoch].placement.node_of(service)
    }
}

/// Cumulative counters for every caller/callee pair, aligned with `edges`.
struct Counters {
    edges: Vec<(usize, usize)>,
    sent: Vec<f64>,
    received: Vec<f64>,
    snapshots: Vec<(u64, Vec<f64>, Vec<f64>)>,
}

impl Counters {
    fn samples(&self, scenario: &Scenario, at: usize) -> impl Iterator<Item = CounterSample> + '_ {
        let (t_ms, sent, received) = &self.snapshots[at];
        let names: Vec<(String, String)> = self
            .edges
            .iter()
            .map(|&(u, v)| {
                (
                    scenario.services[u].id.name.clone(),
                    scenario.services[v].id.name.clone(),
                )
            })
            .collect();
        names
            .into_iter()
            .enumerate()
            .map(move |(e, (upstream, downstream))| CounterSample {
                upstream,
                downstream,
                sent_bytes_total: sent[e],
                received_bytes_total: received[e],
                timestamp: to_s(*t_ms),
            })
    }

    /// Latest snapshot taken at or before `t_ms`.
    fn snapshot_at(&self, t_ms: u64) -> usize {
        self.snapshots.partition_point(|s| s.0 <= t_ms).saturating_sub(1)
    }
}

/// Smooth weighted round-robin: exact long-run shares with no randomness.
struct Mixer {
    weights: Vec<f64>,
    credit: Vec<f64>,
}

impl Mixer {
    fn next(&mut self) -> usize {
        for (c, w) in self.credit.iter_mut().zip(&self.weights) {
            *c += w;
        }
        let total: f64 = self.weights.iter().sum();
        let pick = self
            .credit
            .iter()
            .enumerate()
            .fold(0, |best, (i, &c)| if c > self.credit[best] { i } else { best });
        self.credit[pick] -= total;
        pick
    }
}

/// Runs `scenario` under `policy`, starting from the spread placement.
pub fn run_simulation(scenario: &Scenario, policy: Policy) -> Result<SimulationOutcome, SimError> {
    let services = &scenario.services;
    let initial = default_spread(services, &scenario.nodes).map_err(ControlError::from)?;
    let mut cluster = ClusterState::new(services.clone(), scenario.nodes.clone(), initial.clone())?;

    let base = scenario.base_matrix();
    let truths: Vec<DelayMatrix> = scenario
        .schedule
        .phases()
        .iter()
        .map(|phase| inject(&base, &phase.matrix, &scenario.reserved))
        .collect::<Result<_, _>>()?;

    let edges: Vec<(usize, usize)> = scenario
        .request_types
        .iter()
        .flat_map(|rt| rt.calls().iter().map(|c| (c.from, c.to)))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let call_edges: Vec<Vec<usize>> = scenario
        .request_types
        .iter()
        .map(|rt| {
            rt.calls()
                .iter()
                .map(|c| edges.binary_search(&(c.from, c.to)).expect("edge collected above"))
                .collect()
        })
        .collect();
    let mut counters = Counters {
        sent: vec![0.0; edges.len()],
        received: vec![0.0; edges.len()],
        snapshots: Vec::new(),
        edges,
    };
    counters
        .snapshots
        .push((0, counters.sent.clone(), counters.received.clone()));

    let mut jitter_rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let jitter =
        (scenario.tail_jitter_ms > 0.0).then(|| Exp::new(1.0 / scenario.tail_jitter_ms).expect("positive rate"));
    let noise = MeasurementNoise::new(
        scenario.noise_distribution,
        scenario.noise_magnitude_ms,
        scenario.seed ^ NOISE_STREAM,
    )?;
    let mut measurer = DelayMeasurer::new(noise);
    let mut mixer = Mixer {
        weights: scenario.mix.clone(),
        credit: vec![0.0; scenario.mix.len()],
    };

    let duration_ms = to_ms(scenario.duration_s);
    let tau_ms = to_ms(scenario.qos.poll_period_s).max(1);
    let window_ms = to_ms(scenario.qos.window_s);
    let arrival_ms = |i: u64| (i as f64 * 1000.0 / scenario.qps).round() as u64;

    let mut requests: Vec<RequestRecord> = Vec::new();
    let mut decisions = Vec::new();
    let mut cooldown_until = 0u64;
    let (mut next_arrival, mut next_tick) = (0u64, 1u64);

    loop {
        let ta = arrival_ms(next_arrival);
        let tt = next_tick * tau_ms;
        let arrival_due = ta < duration_ms;
        let tick_due = tt <= duration_ms;
        if !arrival_due && !tick_due {
            break;
        }
        if arrival_due && (!tick_due || ta <= tt) {
            cluster.advance_to(ta)?;
            let t_s = to_s(ta);
            let kind = mixer.next();
            let rt = &scenario.request_types[kind];
            let truth = &truths[scenario.schedule.phase_index(t_s)?];
            let extra = jitter.map_or(0.0, |d| d.sample(&mut jitter_rng));
            let latency_ms = request_latency(rt, cluster.routing(), truth, &scenario.link) + extra;
            for (call, &e) in rt.calls().iter().zip(&call_edges[kind]) {
                counters.received[e] += call.request_bytes;
                counters.sent[e] += call.response_bytes;
            }
            requests.push(RequestRecord {
                arrival_s: t_s,
                request_type: kind,
                latency_ms,
                success: latency_ms < scenario.timeout_ms,
                routing_epoch: cluster.epoch(),
            });
            next_arrival += 1;
            continue;
        }

        cluster.advance_to(tt)?;
        next_tick += 1;
        let t_s = to_s(tt);
        counters
            .snapshots
            .push((tt, counters.sent.clone(), counters.received.clone()));

        let from_s = to_s(tt.saturating_sub(window_ms));
        let oldest = from_s - scenario.timeout_ms / 1000.0;
        let start = requests.partition_point(|r| r.arrival_s < oldest);
        let mut window = LatencyWindow::default();
        for r in &requests[start..] {
            let done = r.completion_s();
            if r.success && done > from_s && done <= t_s {
                window.sum_ms += r.latency_ms;
                window.count += 1.0;
            }
        }
        let decision = evaluate_trigger(&window, &scenario.qos);
        let suppressed = decision.triggered && (tt < cooldown_until || cluster.migrating());
        let mut record = DecisionRecord {
            time_s: t_s,
            window_requests: window.count as u64,
            observed_mean_ms: decision.observed_mean_ms,
            triggered: decision.triggered,
            reason: decision.reason,
            suppressed,
            plan_size: 0,
            pinned: Vec::new(),
        };
        if decision.triggered && !suppressed && policy != Policy::Kdefault {
            let then = counters.snapshot_at(tt.saturating_sub(window_ms));
            let now = counters.snapshots.len() - 1;
            let samples: Vec<CounterSample> = counters
                .samples(scenario, then)
                .chain(counters.samples(scenario, now))
                .collect();
            let graph = build_stress_graph(&samples, services, scenario.qos.window_s)?.graph;
            let truth = &truths[scenario.schedule.phase_index(t_s)?];
            // Only the delay-aware policy consults the measurer, so the other
            // policies leave its stream untouched.
            let measured = if policy == Policy::Trade {
                measurer.measure(truth)
            } else {
                truth.clone()
            };
            let current = cluster.routing().clone();
            let input = RescheduleInput {
                services,
                nodes: &scenario.nodes,
                current: &current,
                traffic: &graph,
                measured_delays: &measured,
                mapper: &scenario.mapper,
                weights: (scenario.forward_weight, scenario.backward_weight),
                penalty_factor: scenario.penalty_factor,
                netmarks_top_pairs: scenario.netmarks_top_pairs,
            };
            let proposed = propose(policy, &input)?;
            let plan = filter_placement(&current, &proposed, services, &graph)?;
            record.plan_size = plan.len();
            record.pinned = plan.pinned.iter().map(|&s| services[s].id.name.clone()).collect();
            if !plan.is_empty() {
                log::info!("{policy} at t={t_s}s: migrating {} service(s)", plan.len());
                cluster.apply_migration(&plan, tt, &scenario.migration)?;
                cooldown_until = tt + window_ms;
            }
        }
        decisions.push(record);
    }
    cluster.drain()?;

    let report = build_report(
        scenario,
        policy,
        &requests,
        &counters,
        &cluster,
        decisions,
        initial.into_inner(),
    );
    Ok(SimulationOutcome {
        report,
        requests,
        routing: cluster.history().to_vec(),
    })
}

fn build_report(
    scenario: &Scenario,
    policy: Policy,
    requests: &[RequestRecord],
    counters: &Counters,
    cluster: &ClusterState,
    decisions: Vec<DecisionRecord>,
    initial_placement: Vec<usize>,
) -> SimulationReport {
    let tau = scenario.qos.poll_period_s;
    let duration = scenario.duration_s;
    let phase_label = |t: f64| {
        let i = scenario.schedule.phase_index(t).expect("t >= 0");
        scenario.schedule.phases()[i].label.clone()
    };

    let window_count = (duration / tau).ceil() as usize;
    let mut buckets: Vec<Vec<&RequestRecord>> = vec![Vec::new(); window_count];
    for r in requests {
        let done = r.completion_s();
        if done < duration {
            buckets[((done / tau) as usize).min(window_count - 1)].push(r);
        }
    }
    let windows = buckets
        .iter()
        .enumerate()
        .map(|(index, bucket)| {
            let start_s = index as f64 * tau;
            let end_s = (start_s + tau).min(duration);
            let s = summarize(bucket.iter().copied());
            WindowStats {
                index,
                start_s,
                end_s,
                phase: phase_label(start_s),
                completed: s.completed,
                successes: s.successes,
                mean_ms: s.mean_ms,
                p50_ms: percentile(&s.sorted_success_ms, 50.0),
                p95_ms: percentile(&s.sorted_success_ms, 95.0),
                p99_ms: percentile(&s.sorted_success_ms, 99.0),
                throughput_rps: s.completed as f64 / (end_s - start_s),
                goodput: s.goodput(),
            }
        })
        .collect();

    let phases_def = scenario.schedule.phases();
    let phases = phases_def
        .iter()
        .enumerate()
        .filter(|(_, p)| p.activation_s < duration)
        .map(|(i, p)| {
            let start_s = p.activation_s;
            let end_s = phases_def.get(i + 1).map_or(duration, |n| n.activation_s.min(duration));
            let s = summarize(requests.iter().filter(|r| {
                let done = r.completion_s();
                done >= start_s && done < end_s
            }));
            PhaseStats {
                label: p.label.clone(),
                start_s,
                end_s,
                completed: s.completed,
                successes: s.successes,
                mean_ms: s.mean_ms,
                p99_ms: percentile(&s.sorted_success_ms, 99.0),
                goodput: s.goodput(),
            }
        })
        .collect();

    let all = summarize(requests.iter());
    let totals = Totals {
        generated: all.completed,
        successes: all.successes,
        failures: all.completed - all.successes,
        goodput: all.goodput().unwrap_or(1.0),
        mean_ms: all.mean_ms,
    };

    let counters_out = counters
        .edges
        .iter()
        .enumerate()
        .map(|(e, &(u, v))| PairCounter {
            upstream: scenario.services[u].id.name.clone(),
            downstream: scenario.services[v].id.name.clone(),
            sent_bytes_total: counters.sent[e],
            received_bytes_total: counters.received[e],
        })
        .collect();

    SimulationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        scenario: scenario.name.clone(),
        policy,
        seed: scenario.seed,
        duration_s: duration,
        target_ms: scenario.qos.target_ms,
        totals,
        windows,
        phases,
        decisions,
        migrations: cluster.migrations().to_vec(),
        instance_events: cluster.events().to_vec(),
        min_ready: cluster.min_ready(),
        capacity_warnings: cluster.capacity_warnings(),
        initial_placement,
        final_placement: cluster.routing().assignment().to_vec(),
        counters: counters_out,
    }
}
