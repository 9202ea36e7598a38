//! Command-line front end. Every subcommand validates its input completely,
//! renders all outputs in memory and only then writes them, so a failed run
//! leaves no partial files behind.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::control::Policy;
use crate::mapper::{brute_force_oracle, optimize, MapperConfig, DEFAULT_ORACLE_LIMIT};
use crate::problem::{AnalyzeOutput, CounterDump, ProblemFile, SolveOutput, PROBLEM_SCHEMA_VERSION};
use crate::scenario::{LoadError, Scenario};
use crate::sim::{run_simulation, PhaseStats, SimulationReport, Totals, WindowStats, REPORT_SCHEMA_VERSION};
use crate::traffic::{build_stress_graph, TrafficError};

#[derive(Debug, Parser)]
#[command(name = "trade", version, about = "Traffic- and delay-aware microservice placement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Kdefault,
    Netmarks,
    Trade,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Kdefault => Policy::Kdefault,
            PolicyArg::Netmarks => Policy::Netmarks,
            PolicyArg::Trade => Policy::Trade,
        }
    }
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Directory for output files (created if missing).
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize a placement problem with the parallel greedy mapper.
    Solve {
        #[arg(long, visible_alias = "scenario")]
        problem: PathBuf,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[arg(long, default_value_t = 10)]
        max_rounds: usize,
        /// Include wall-clock time in the output (breaks byte-identical reruns).
        #[arg(long)]
        timing: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Exhaustively search a small placement problem for its optimum.
    Oracle {
        #[arg(long, visible_alias = "scenario")]
        problem: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ORACLE_LIMIT)]
        limit: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run one scenario under one scheduling policy.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value_t = PolicyArg::Trade)]
        policy: PolicyArg,
        /// Mapper workers; defaults to the scenario's setting.
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run one scenario under every policy with identical seeds and delays.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Build the stress graph and sorted pair list from a counter dump.
    Analyze {
        #[arg(long, visible_alias = "scenario")]
        dump: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Debug)]
pub enum CliError {
    /// Bad input: exit code 2.
    Input(String),
    /// Anything else: exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Rendered output file: name relative to the output directory plus bytes.
type Rendered = Vec<(String, Vec<u8>)>;

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(runtime)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, CliError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row).map_err(runtime)?;
    }
    writer.into_inner().map_err(runtime)
}

fn write_outputs(dir: &Path, files: Rendered) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
    for (name, bytes) in files {
        let path = dir.join(&name);
        let tmp = dir.join(format!(".{name}.tmp"));
        std::fs::write(&tmp, &bytes).map_err(|e| runtime(format!("cannot write {}: {e}", tmp.display())))?;
        std::fs::rename(&tmp, &path).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct AssignmentRow<'a> {
    service: &'a str,
    node: &'a str,
    node_index: usize,
}

fn cmd_solve(
    path: &Path,
    workers: usize,
    max_rounds: usize,
    timing: bool,
    output: &OutputArgs,
) -> Result<Rendered, CliError> {
    if workers == 0 {
        return Err(CliError::Input("--workers must be >= 1".into()));
    }
    if max_rounds == 0 {
        return Err(CliError::Input("--max-rounds must be >= 1".into()));
    }
    let problem = ProblemFile::load(path)?;
    let config = MapperConfig {
        workers,
        max_rounds,
        ..MapperConfig::default()
    };
    let result = optimize(&problem.problem, &problem.initial, &config).map_err(runtime)?;
    if timing {
        eprintln!("solve: {:.6} s", result.elapsed_s);
    }
    let out = SolveOutput::new("parallel-greedy", Some(workers), &problem, &result, timing);
    render_solve("placement", &out, output.format)
}

fn render_solve(stem: &str, out: &SolveOutput, format: Format) -> Result<Rendered, CliError> {
    let mut files = vec![(format!("{stem}.json"), json_bytes(out)?)];
    if format == Format::Csv {
        let rows: Vec<AssignmentRow> = out
            .assignment
            .iter()
            .zip(&out.placement)
            .map(|(a, &n)| AssignmentRow {
                service: &a.service,
                node: &a.node,
                node_index: n,
            })
            .collect();
        files.push((format!("{stem}.csv"), csv_bytes(&rows)?));
    }
    Ok(files)
}

fn cmd_oracle(path: &Path, limit: u64, output: &OutputArgs) -> Result<Rendered, CliError> {
    let problem = ProblemFile::load(path)?;
    let result = brute_force_oracle(&problem.problem, limit).map_err(|e| CliError::Input(e.to_string()))?;
    let out = SolveOutput::new("brute-force", None, &problem, &result, false);
    render_solve("oracle", &out, output.format)
}

fn load_scenario(path: &Path, workers: Option<usize>, seed: Option<u64>) -> Result<Scenario, CliError> {
    let mut scenario = Scenario::load(path)?;
    if let Some(w) = workers {
        if w == 0 {
            return Err(CliError::Input("--workers must be >= 1".into()));
        }
        scenario = scenario.with_workers(w);
    }
    if let Some(s) = seed {
        scenario = scenario.with_seed(s);
    }
    Ok(scenario)
}

fn decisions_jsonl(report: &SimulationReport) -> Result<Vec<u8>, CliError> {
    let mut out = Vec::new();
    for d in &report.decisions {
        serde_json::to_writer(&mut out, d).map_err(runtime)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn cmd_simulate(scenario: &Scenario, policy: Policy, output: &OutputArgs) -> Result<Rendered, CliError> {
    let outcome = run_simulation(scenario, policy).map_err(runtime)?;
    let report = outcome.report;
    let mut files = vec![
        ("report.json".to_owned(), json_bytes(&report)?),
        ("decisions.jsonl".to_owned(), decisions_jsonl(&report)?),
    ];
    if output.format == Format::Csv {
        files.push(("windows.csv".to_owned(), csv_bytes(&report.windows)?));
    }
    Ok(files)
}

/// One report window of one policy in the side-by-side comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub policy: Policy,
    pub window: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub phase: String,
    pub mean_ms: Option<f64>,
    pub p50_ms: Option<f64>,
    pub p95_ms: Option<f64>,
    pub p99_ms: Option<f64>,
    pub throughput_rps: f64,
    pub goodput: Option<f64>,
}

impl CompareRow {
    fn new(policy: Policy, w: &WindowStats) -> Self {
        Self {
            policy,
            window: w.index,
            start_s: w.start_s,
            end_s: w.end_s,
            phase: w.phase.clone(),
            mean_ms: w.mean_ms,
            p50_ms: w.p50_ms,
            p95_ms: w.p95_ms,
            p99_ms: w.p99_ms,
            throughput_rps: w.throughput_rps,
            goodput: w.goodput,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: Policy,
    pub totals: Totals,
    pub phases: Vec<PhaseStats>,
    pub triggers: usize,
    pub migrations: usize,
    pub min_ready: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareOutput {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub target_ms: f64,
    pub policies: Vec<PolicySummary>,
    pub rows: Vec<CompareRow>,
}

pub fn compare(scenario: &Scenario) -> Result<(CompareOutput, Vec<SimulationReport>), CliError> {
    let mut reports = Vec::new();
    for policy in Policy::ALL {
        reports.push(run_simulation(scenario, policy).map_err(runtime)?.report);
    }
    let policies = reports
        .iter()
        .map(|r| PolicySummary {
            policy: r.policy,
            totals: r.totals.clone(),
            phases: r.phases.clone(),
            triggers: r.decisions.iter().filter(|d| d.triggered).count(),
            migrations: r.migrations.len(),
            min_ready: r.min_ready,
        })
        .collect();
    let rows = reports
        .iter()
        .flat_map(|r| r.windows.iter().map(|w| CompareRow::new(r.policy, w)))
        .collect();
    let out = CompareOutput {
        schema_version: REPORT_SCHEMA_VERSION,
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        target_ms: scenario.qos.target_ms,
        policies,
        rows,
    };
    Ok((out, reports))
}

fn cmd_compare(scenario: &Scenario, output: &OutputArgs) -> Result<Rendered, CliError> {
    let (out, _) = compare(scenario)?;
    let mut summary = String::new();
    for p in &out.policies {
        let _ = writeln!(
            summary,
            "{:<9} goodput {:.4}  mean {}  migrations {}",
            p.policy.name(),
            p.totals.goodput,
            p.totals.mean_ms.map_or("-".into(), |m| format!("{m:.1} ms")),
            p.migrations
        );
    }
    eprint!("{summary}");
    let mut files = vec![("compare.json".to_owned(), json_bytes(&out)?)];
    if output.format == Format::Csv {
        files.push(("compare.csv".to_owned(), csv_bytes(&out.rows)?));
    }
    Ok(files)
}

#[derive(Serialize)]
struct PairRow<'a> {
    rank: usize,
    upstream: &'a str,
    downstream: &'a str,
    stress: f64,
}

fn cmd_analyze(path: &Path, output: &OutputArgs) -> Result<Rendered, CliError> {
    let dump = CounterDump::load(path)?;
    let build = build_stress_graph(&dump.samples, &dump.service_specs(), dump.window_s).map_err(|e| match e {
        TrafficError::Model(_) => runtime(e),
        other => CliError::Input(format!("{}: {other}", path.display())),
    })?;
    let out = AnalyzeOutput::new(&dump, &build);
    debug_assert_eq!(out.schema_version, PROBLEM_SCHEMA_VERSION);
    let mut files = vec![("stress.json".to_owned(), json_bytes(&out)?)];
    if output.format == Format::Csv {
        let rows: Vec<PairRow> = out
            .sorted_pairs
            .iter()
            .enumerate()
            .map(|(i, p)| PairRow {
                rank: i + 1,
                upstream: &p.upstream,
                downstream: &p.downstream,
                stress: p.stress,
            })
            .collect();
        files.push(("pairs.csv".to_owned(), csv_bytes(&rows)?));
    }
    Ok(files)
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let (files, output) = match &cli.command {
        Command::Solve {
            problem,
            workers,
            max_rounds,
            timing,
            output,
        } => (cmd_solve(problem, *workers, *max_rounds, *timing, output)?, output),
        Command::Oracle { problem, limit, output } => (cmd_oracle(problem, *limit, output)?, output),
        Command::Simulate {
            scenario,
            policy,
            workers,
            seed,
            output,
        } => {
            let scenario = load_scenario(scenario, *workers, *seed)?;
            (cmd_simulate(&scenario, (*policy).into(), output)?, output)
        }
        Command::Compare {
            scenario,
            workers,
            seed,
            output,
        } => {
            let scenario = load_scenario(scenario, *workers, *seed)?;
            (cmd_compare(&scenario, output)?, output)
        }
        Command::Analyze { dump, output } => (cmd_analyze(dump, output)?, output),
    };
    write_outputs(&output.out, files)
}

/// Parses arguments, runs the subcommand and maps failures to exit codes.
pub fn main_with_args(args: impl IntoIterator<Item = std::ffi::OsString>) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
