//! `qcop`: generate instances, plan tours, estimate fields and run benchmarks.

use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qcop::bench::{self, BenchError};
use qcop::bnb::{ExtractError, SolveError, SolveStats};
use qcop::estimation::{self, EstimateState, Provenance, TimeSeries};
use qcop::field::{self, FieldSpec};
use qcop::instance::{perturbed_grid, regular_grid, InstanceError};
use qcop::model::{build_model, linearize_objective, ModelError};
use qcop::oracle::{self, OracleError};
use qcop::simplex::LpError;
use qcop::{solve_instance, NodeNetwork, ProblemInstance, RobotSpec, SolveParams, SolveStatus, TourSet};

const EXIT_IO: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_TIME_LIMIT: u8 = 4;
const EXIT_NUMERIC: u8 = 5;

#[derive(Parser)]
#[command(name = "qcop", version, about = "Correlation-aware monitoring tour planner")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate instances and synthetic series.
    #[command(subcommand)]
    Gen(GenCmd),
    /// Replace correlation weights with ones learned from a training window.
    Learn(LearnArgs),
    /// Plan tours for an instance.
    Solve(SolveArgs),
    /// Estimate the field from values collected along planned tours.
    Estimate(EstimateArgs),
    /// Run a benchmark suite.
    Bench(BenchArgs),
    /// Exhaustive search over tours (small instances only).
    Oracle(OracleArgs),
    /// Render one time step of a series as a P5 graymap.
    Heatmap(HeatmapArgs),
}

#[derive(Subcommand)]
enum GenCmd {
    /// Regular or perturbed grid with unit utilities and uniform weights.
    Grid(GridArgs),
    /// Sample a Gaussian-mixture field at the nodes of an instance.
    Series(SeriesArgs),
    /// The 14-site stand-in network and a seasonal series for it.
    StandIn(StandInArgs),
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    #[arg(long, default_value_t = 1.0)]
    edge: f64,
    /// Uniform jitter applied to each coordinate.
    #[arg(long, default_value_t = 0.0)]
    perturb: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated `base:budget` pairs.
    #[arg(long, default_value = "0:4")]
    robots: String,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct SeriesArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Field spec JSON; the built-in spec when omitted.
    #[arg(long)]
    field: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct StandInArgs {
    #[arg(long, default_value_t = 4.0)]
    budget: f64,
    #[arg(long, default_value_t = 24)]
    months: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the seasonal series CSV.
    #[arg(long)]
    series: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct LearnArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    series: PathBuf,
    /// Training rows as `A:B` (half-open).
    #[arg(long)]
    train: String,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    file: PathBuf,
    /// Relative gap at which to stop; the instance value when omitted.
    #[arg(long)]
    gap: Option<f64>,
    /// Seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long)]
    restrict_hops: Option<u8>,
    /// Write the linearized model in LP text format.
    #[arg(long)]
    dump_model: Option<PathBuf>,
    /// Run report JSON; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    series: PathBuf,
    #[arg(long)]
    train: String,
    /// Comma-separated evaluation rows.
    #[arg(long)]
    at: String,
    /// Run report (or bare tour set) JSON from `solve`.
    #[arg(long)]
    tours: PathBuf,
    /// Estimates CSV; provenance goes to `<output>.provenance.json`.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    suite: String,
    /// Seconds per solve.
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Directory holding the oracle cache.
    #[arg(long, default_value = ".")]
    cache_dir: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    file: PathBuf,
    #[arg(long, default_value_t = bench::ORACLE_TOUR_NODES)]
    max_nodes: usize,
    /// Score tours by estimation quality on this series instead of utility.
    #[arg(long, requires_all = ["train", "at"])]
    series: Option<PathBuf>,
    #[arg(long)]
    train: Option<String>,
    #[arg(long)]
    at: Option<String>,
}

#[derive(Args)]
struct HeatmapArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Series or estimates CSV; empty cells are skipped.
    #[arg(long)]
    series: PathBuf,
    #[arg(long)]
    at: f64,
    /// `W` or `WxH`.
    #[arg(long, default_value = "200")]
    res: String,
    #[arg(short, long)]
    output: PathBuf,
}

/// Error with the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, err: anyhow::anyhow!(msg.into()) }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let err = e.into();
        Failure { code: classify(&err), err }
    }
}

fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<SolveError>() {
            return match e {
                SolveError::NoIncumbent(_) => EXIT_TIME_LIMIT,
                SolveError::Lp(LpError::Deadline) => EXIT_TIME_LIMIT,
                SolveError::Lp(_) => EXIT_NUMERIC,
                SolveError::Model(ModelError::BudgetBelowRoundTrip { .. } | ModelError::BaseMasked { .. }) => {
                    EXIT_INFEASIBLE
                }
                SolveError::Extract(ExtractError::NoSolution(SolveStatus::Infeasible)) => EXIT_INFEASIBLE,
                SolveError::Extract(ExtractError::ObjectiveMismatch { .. }) => EXIT_NUMERIC,
                _ => EXIT_IO,
            };
        }
        if let Some(ModelError::BudgetBelowRoundTrip { .. } | ModelError::BaseMasked { .. }) =
            cause.downcast_ref::<ModelError>()
        {
            return EXIT_INFEASIBLE;
        }
        if cause.downcast_ref::<LpError>().is_some() {
            return EXIT_NUMERIC;
        }
        if let Some(BenchError::UnknownSuite(_)) = cause.downcast_ref::<BenchError>() {
            return EXIT_USAGE;
        }
        if let Some(OracleError::TooManyNodes { .. } | OracleError::TourCap { .. } | OracleError::TooManyRobots(_)) =
            cause.downcast_ref::<OracleError>()
        {
            return EXIT_USAGE;
        }
    }
    EXIT_IO
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Command::Gen(GenCmd::Grid(a)) => cmd_gen_grid(a),
        Command::Gen(GenCmd::Series(a)) => cmd_gen_series(a),
        Command::Gen(GenCmd::StandIn(a)) => cmd_gen_stand_in(a),
        Command::Learn(a) => cmd_learn(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Heatmap(a) => cmd_heatmap(a),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(f) if broken_pipe(&f.err) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", render(&f.err));
            ExitCode::from(f.code)
        }
    }
}

fn print_out(text: &str) -> std::io::Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}")?;
    out.flush()
}

fn broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|c| {
        c.downcast_ref::<std::io::Error>().is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
            || c.downcast_ref::<csv::Error>().is_some_and(|e| matches!(e.kind(), csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::BrokenPipe))
    })
}

/// Joins the error chain, skipping causes already spelled out by their parent.
fn render(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reads a file and returns its contents with their SHA-256 digest.
fn read_digest(path: &Path) -> anyhow::Result<(String, String)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let d = digest(text.as_bytes());
    Ok((text, d))
}

fn load_instance(path: &Path) -> Result<(ProblemInstance, String), Failure> {
    let (text, d) = read_digest(path)?;
    let inst = ProblemInstance::from_json_str(&text).with_context(|| format!("loading {}", path.display()))?;
    Ok((inst, d))
}

fn load_series(path: &Path) -> Result<(TimeSeries, String), Failure> {
    let (text, d) = read_digest(path)?;
    let series = field::read_series_csv(text.as_bytes()).with_context(|| format!("loading {}", path.display()))?;
    Ok((series, d))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_robots(s: &str) -> Result<Vec<RobotSpec>, Failure> {
    s.split(',')
        .map(|p| {
            let (b, g) = p.split_once(':').ok_or_else(|| usage(format!("robot `{p}` is not base:budget")))?;
            let base = b.trim().parse().map_err(|_| usage(format!("bad base in `{p}`")))?;
            let budget = g.trim().parse().map_err(|_| usage(format!("bad budget in `{p}`")))?;
            Ok(RobotSpec { base, budget })
        })
        .collect()
}

fn parse_range(s: &str) -> Result<Range<usize>, Failure> {
    let (a, b) = s.split_once(':').ok_or_else(|| usage(format!("range `{s}` is not A:B")))?;
    let a = a.trim().parse().map_err(|_| usage(format!("bad range start in `{s}`")))?;
    let b = b.trim().parse().map_err(|_| usage(format!("bad range end in `{s}`")))?;
    Ok(a..b)
}

fn parse_times(s: &str) -> Result<Vec<usize>, Failure> {
    s.split(',').map(|t| t.trim().parse().map_err(|_| usage(format!("bad time `{t}`")))).collect()
}

fn parse_res(s: &str) -> Result<(usize, usize), Failure> {
    let dims: Vec<&str> = s.split('x').collect();
    let parse = |t: &str| t.parse::<usize>().ok().filter(|&v| v > 0).ok_or_else(|| usage(format!("bad resolution `{s}`")));
    match dims.as_slice() {
        [w] => {
            let w = parse(w)?;
            Ok((w, w))
        }
        [w, h] => Ok((parse(w)?, parse(h)?)),
        _ => Err(usage(format!("bad resolution `{s}`"))),
    }
}

fn cmd_gen_grid(a: GridArgs) -> Result<u8, Failure> {
    let network = if a.perturb > 0.0 {
        perturbed_grid(a.rows, a.cols, a.edge, a.perturb, a.seed)
    } else {
        regular_grid(a.rows, a.cols, a.edge)
    }
    .map_err(|e| Failure { code: EXIT_USAGE, err: e.into() })?;
    let inst = ProblemInstance::new(network, parse_robots(&a.robots)?);
    inst.check().map_err(|e: InstanceError| Failure { code: EXIT_USAGE, err: e.into() })?;
    write_text(&a.output, &inst.to_json_string())?;
    Ok(0)
}

fn cmd_gen_series(a: SeriesArgs) -> Result<u8, Failure> {
    let (inst, _) = load_instance(&a.instance)?;
    let spec = match &a.field {
        Some(p) => FieldSpec::load(p)?,
        None => FieldSpec::default(),
    };
    let series = field::sample_series(&spec, &inst.network)?;
    field::save_series_csv(&series, &a.output)?;
    Ok(0)
}

fn cmd_gen_stand_in(a: StandInArgs) -> Result<u8, Failure> {
    let network = field::stand_in_network();
    if let Some(path) = &a.series {
        let series = field::seasonal_series(&network, a.months, a.seed)?;
        field::save_series_csv(&series, path)?;
    }
    let inst = ProblemInstance::single(network, field::STAND_IN_BASE, a.budget);
    write_text(&a.output, &inst.to_json_string())?;
    Ok(0)
}

fn cmd_learn(a: LearnArgs) -> Result<u8, Failure> {
    let (mut inst, _) = load_instance(&a.instance)?;
    let (series, _) = load_series(&a.series)?;
    let learned = estimation::learn_weights(&series, &inst.network, parse_range(&a.train)?)?;
    if !learned.fallbacks.is_empty() {
        log::warn!("uniform weights kept for nodes {:?}", learned.fallbacks);
    }
    inst.network = learned.apply(&inst.network);
    write_text(&a.output, &inst.to_json_string())?;
    Ok(0)
}

#[derive(Debug, Serialize, Deserialize)]
struct SolutionSummary {
    status: SolveStatus,
    objective: f64,
    bound: f64,
    gap: f64,
    stats: SolveStats,
}

#[derive(Debug, Serialize, Deserialize)]
struct Timings {
    model_s: f64,
    solve_s: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunReport {
    instance: String,
    instance_sha256: String,
    params: SolveParams,
    restrict_hops: u8,
    vars: usize,
    solution: SolutionSummary,
    tours: TourSet,
    timings: Timings,
}

fn cmd_solve(a: SolveArgs) -> Result<u8, Failure> {
    let (mut inst, sha) = load_instance(&a.file)?;
    if let Some(h) = a.restrict_hops {
        if h > 3 {
            return Err(usage("--restrict-hops must be between 0 and 3"));
        }
        inst.options.restrict_hops = h;
    }
    let mut params = qcop::bnb::params_from_instance(&inst);
    if let Some(g) = a.gap {
        if !(g >= 0.0) {
            return Err(usage("--gap must be non-negative"));
        }
        params.gap_tol = g;
    }
    if a.time_limit.is_some() {
        params.time_limit = a.time_limit;
    }
    let t0 = Instant::now();
    if let Some(path) = &a.dump_model {
        let model = linearize_objective(&build_model(&inst)?);
        write_text(path, &model.to_lp_string())?;
    }
    let model_s = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let mut stderr = std::io::stderr();
    let planned = solve_instance(&inst, &params, &mut |e| {
        let _ = writeln!(stderr, "{}", e.to_json_line());
    })?;
    let sol = &planned.solution;
    log::info!("{:?} after {} nodes", sol.status, sol.stats.nodes_explored);
    let report = RunReport {
        instance: a.file.display().to_string(),
        instance_sha256: sha,
        params,
        restrict_hops: inst.options.restrict_hops,
        vars: planned.num_vars(),
        solution: SolutionSummary {
            status: sol.status,
            objective: sol.objective,
            bound: sol.bound,
            gap: sol.gap,
            stats: sol.stats.clone(),
        },
        tours: planned.tours.clone(),
        timings: Timings { model_s, solve_s: t1.elapsed().as_secs_f64() },
    };
    let json = serde_json::to_string_pretty(&report).context("serializing report")?;
    match &a.output {
        Some(p) => write_text(p, &json)?,
        None => print_out(&json)?,
    }
    Ok(match sol.status {
        SolveStatus::Optimal | SolveStatus::GapReached => 0,
        SolveStatus::TimeLimit => EXIT_TIME_LIMIT,
        SolveStatus::Infeasible => EXIT_INFEASIBLE,
    })
}

/// Accepts a full run report or a bare tour set.
fn load_tours(path: &Path) -> Result<(TourSet, String), Failure> {
    let (text, d) = read_digest(path)?;
    let v: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let v = v.get("tours").filter(|t| t.is_object()).cloned().unwrap_or(v);
    let tours: TourSet = serde_json::from_value(v).with_context(|| format!("no tour set in {}", path.display()))?;
    Ok((tours, d))
}

#[derive(Debug, Serialize)]
struct EstimateSidecar {
    instance_sha256: String,
    series_sha256: String,
    tours_sha256: String,
    train: [usize; 2],
    times: Vec<usize>,
    quality: f64,
    mean_abs_error: f64,
    provenance: Vec<Vec<Provenance>>,
    waves: Vec<usize>,
}

fn write_estimates(path: &Path, times: &[usize], estimates: &[EstimateState]) -> anyhow::Result<()> {
    let n = estimates.first().map_or(0, |e| e.value.len());
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("node_{i}")));
    w.write_record(&header)?;
    for (&t, e) in times.iter().zip(estimates) {
        let mut rec = vec![t.to_string()];
        rec.extend(e.value.iter().map(|v| v.map_or(String::new(), |x| format!("{x:.17e}"))));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_estimate(a: EstimateArgs) -> Result<u8, Failure> {
    let (inst, inst_sha) = load_instance(&a.instance)?;
    let (series, series_sha) = load_series(&a.series)?;
    let (tours, tours_sha) = load_tours(&a.tours)?;
    let train = parse_range(&a.train)?;
    let times = parse_times(&a.at)?;
    let n = inst.network.len();
    if let Some(&bad) = tours.tours.iter().flatten().find(|&&i| i >= n) {
        return Err(Failure { code: EXIT_IO, err: anyhow::anyhow!("tour visits node {bad}, instance has {n}") });
    }
    let visited = tours.visited(n);
    let est = estimation::estimate_visited(&inst.network, &series, &visited, train.clone(), &times)?;
    let quality = estimation::quality_score(&series, &est, &times)?;
    let mae = estimation::mean_abs_error(&series, &est, &times)?;
    write_estimates(&a.output, &times, &est)?;
    let sidecar = EstimateSidecar {
        instance_sha256: inst_sha,
        series_sha256: series_sha,
        tours_sha256: tours_sha,
        train: [train.start, train.end],
        times: times.clone(),
        quality,
        mean_abs_error: mae,
        provenance: est.iter().map(|e| e.provenance.clone()).collect(),
        waves: est.iter().map(|e| e.waves).collect(),
    };
    let mut side = a.output.clone().into_os_string();
    side.push(".provenance.json");
    write_text(Path::new(&side), &serde_json::to_string_pretty(&sidecar).context("serializing provenance")?)?;
    print_out(&serde_json::json!({ "quality": quality, "mean_abs_error": mae }).to_string())?;
    Ok(0)
}

fn cmd_bench(a: BenchArgs) -> Result<u8, Failure> {
    if a.suite.trim().is_empty() {
        return Err(usage(format!("--suite must be one of {}", bench::SUITES.join(", "))));
    }
    if a.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    if a.suite == "oracle-cache" {
        fs::create_dir_all(&a.cache_dir).with_context(|| format!("creating {}", a.cache_dir.display()))?;
        let path = bench::build_oracle_cache(&a.cache_dir)?;
        eprintln!("wrote {}", path.display());
        return Ok(0);
    }
    let report = bench::run_suite(&a.suite, a.time_limit, Some(&a.cache_dir), a.jobs)?;
    match &a.output {
        Some(p) => report.save_csv(p)?,
        None => report.write_csv(std::io::stdout())?,
    }
    let failed = report.failed();
    eprintln!("{}: {} passed, {} failed", a.suite, report.passed(), failed);
    Ok(if failed == 0 { 0 } else { EXIT_IO })
}

fn cmd_oracle(a: OracleArgs) -> Result<u8, Failure> {
    let (inst, sha) = load_instance(&a.file)?;
    let res = match (&a.series, &a.train, &a.at) {
        (Some(s), Some(tr), Some(at)) => {
            let (series, _) = load_series(s)?;
            oracle::exhaustive_best_estimation_tour(&inst, &series, parse_range(tr)?, &parse_times(at)?, a.max_nodes)?
        }
        _ => oracle::exhaustive_best_tours(&inst, a.max_nodes)?,
    };
    let out = serde_json::json!({ "instance_sha256": sha, "result": res });
    print_out(&serde_json::to_string_pretty(&out).context("serializing result")?)?;
    Ok(0)
}

/// Reads the row for time `t` from a series or estimates CSV; empty cells
/// become `None`.
fn read_row(path: &Path, t: f64) -> anyhow::Result<Vec<Option<f64>>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    for rec in r.records() {
        let rec = rec?;
        let Some(first) = rec.get(0) else { continue };
        let rt: f64 = first.trim().parse().with_context(|| format!("bad time `{first}`"))?;
        if rt == t {
            return rec
                .iter()
                .skip(1)
                .map(|c| {
                    let c = c.trim();
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        c.parse().map(Some).with_context(|| format!("bad value `{c}`"))
                    }
                })
                .collect();
        }
    }
    bail!("no row with t = {t} in {}", path.display())
}

fn cmd_heatmap(a: HeatmapArgs) -> Result<u8, Failure> {
    let (w, h) = parse_res(&a.res)?;
    let (inst, _) = load_instance(&a.instance)?;
    let row = read_row(&a.series, a.at)?;
    let n = inst.network.len();
    if row.len() != n {
        return Err(Failure { code: EXIT_IO, err: anyhow::anyhow!("row has {} values, instance has {n} nodes", row.len()) });
    }
    let keep: Vec<usize> = (0..n).filter(|&i| row[i].is_some()).collect();
    if keep.is_empty() {
        return Err(Failure { code: EXIT_IO, err: anyhow::anyhow!("no known values at t = {}", a.at) });
    }
    let net = NodeNetwork::new(keep.iter().map(|&i| inst.network.nodes[i].clone()).collect(), Vec::new());
    let values: Vec<f64> = keep.iter().filter_map(|&i| row[i]).collect();
    let pgm = field::render_heatmap(&net, &values, w, h);
    fs::write(&a.output, pgm).with_context(|| format!("writing {}", a.output.display()))?;
    Ok(0)
}
