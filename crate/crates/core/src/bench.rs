//! Benchmark suites and expected-value tables.
//!
//! Expected utilities for the fixed suites live in `data/expected.csv`. The
//! `oracle` suite is generated from seeds; its expected values come from an
//! exhaustive-enumeration cache that has to be built first
//! ([`build_oracle_cache`]).

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bnb::{solve_instance, SolveParams, SolveStatus};
use crate::instance::{perturbed_grid, regular_grid, InstanceError, ProblemInstance, RobotSpec};
use crate::oracle::{exhaustive_best_tours, OracleError};

const EXPECTED_CSV: &str = include_str!("../data/expected.csv");

/// Node cap used when enumerating oracle rows.
pub const ORACLE_TOUR_NODES: usize = 8;
pub const ORACLE_CACHE_FILE: &str = "oracle_cache.csv";
/// Relative gap requested by the anytime and heuristics suites.
pub const ANYTIME_GAP: f64 = 0.2;

pub const SUITES: [&str; 7] = ["correctness", "trivial", "oracle", "grids", "anytime", "heuristics", "oracle-cache"];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown suite {0:?}; expected one of correctness, trivial, oracle, grids, anytime, heuristics")]
    UnknownSuite(String),
    #[error("oracle cache {0} is missing; run `bench --suite oracle-cache` first")]
    MissingOracleCache(PathBuf),
    #[error("oracle cache has no entry for seed {0}; rebuild it with `bench --suite oracle-cache`")]
    StaleOracleCache(u64),
    #[error("bad expected table: {0}")]
    Table(String),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Published,
    Derived,
    Trivial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedRow {
    pub suite: String,
    pub grid: String,
    /// Robot bases separated by `;`.
    pub robots: String,
    pub budget: f64,
    pub expected_utility: f64,
    pub tolerance: f64,
    pub source: Source,
    pub note: String,
}

impl ExpectedRow {
    pub fn bases(&self) -> Result<Vec<usize>, BenchError> {
        self.robots
            .split(';')
            .map(|s| s.trim().parse().map_err(|_| BenchError::Table(format!("bad robots field {:?}", self.robots))))
            .collect()
    }

    pub fn grid_size(&self) -> Result<(usize, usize), BenchError> {
        let bad = || BenchError::Table(format!("bad grid field {:?}", self.grid));
        let (r, c) = self.grid.split_once('x').ok_or_else(bad)?;
        Ok((r.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?))
    }

    /// Unit regular grid with one robot per base, all with this budget.
    pub fn instance(&self) -> Result<ProblemInstance, BenchError> {
        let (r, c) = self.grid_size()?;
        let net = regular_grid(r, c, 1.0)?;
        let robots = self.bases()?.into_iter().map(|base| RobotSpec { base, budget: self.budget }).collect();
        Ok(ProblemInstance::new(net, robots))
    }
}

/// All rows of the checked-in expected table.
pub fn expected_rows() -> Result<Vec<ExpectedRow>, BenchError> {
    let mut r = csv::Reader::from_reader(EXPECTED_CSV.as_bytes());
    r.deserialize().map(|row| row.map_err(BenchError::from)).collect()
}

pub fn suite_rows(suite: &str) -> Result<Vec<ExpectedRow>, BenchError> {
    Ok(expected_rows()?.into_iter().filter(|r| r.suite == suite).collect())
}

/// A seeded perturbed grid for the oracle suite.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCase {
    pub seed: u64,
    pub size: usize,
    pub instance: ProblemInstance,
}

impl OracleCase {
    pub fn label(&self) -> String {
        format!("{0}x{0} m{1} s{2}", self.size, self.instance.robots.len(), self.seed)
    }
}

/// The 50 seeded instances: 3x3 and 4x4 grids jittered by up to 0.25, one
/// robot at node 1 or two robots at opposite corners, per-robot budgets
/// from 3.0 to 4.5.
pub fn oracle_cases() -> Result<Vec<OracleCase>, BenchError> {
    (0..50u64)
        .map(|seed| {
            let size = 3 + (seed % 2) as usize;
            let two = (seed / 2) % 2 == 1;
            let budget = 3.0 + 0.5 * ((seed / 4) % 4) as f64;
            let net = perturbed_grid(size, size, 1.0, 0.25, seed)?;
            let bases = if two { vec![0, size * size - 1] } else { vec![1] };
            let robots = bases.into_iter().map(|base| RobotSpec { base, budget }).collect();
            Ok(OracleCase { seed, size, instance: ProblemInstance::new(net, robots) })
        })
        .collect()
}

/// Runs the oracle on every case and writes `seed,utility` rows.
pub fn build_oracle_cache(dir: impl AsRef<Path>) -> Result<PathBuf, BenchError> {
    let path = dir.as_ref().join(ORACLE_CACHE_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["seed", "utility", "enumerated"])?;
    for case in oracle_cases()? {
        let r = exhaustive_best_tours(&case.instance, ORACLE_TOUR_NODES)?;
        if r.truncated {
            log::warn!("oracle case {} hit the node cap", case.label());
        }
        w.write_record([case.seed.to_string(), r.best_value.to_string(), r.enumerated.to_string()])?;
    }
    w.flush()?;
    Ok(path)
}

pub fn load_oracle_cache(dir: impl AsRef<Path>) -> Result<Vec<(u64, f64)>, BenchError> {
    let path = dir.as_ref().join(ORACLE_CACHE_FILE);
    if !path.exists() {
        return Err(BenchError::MissingOracleCache(path));
    }
    let mut r = csv::Reader::from_path(&path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok());
        match (parse(0), parse(1)) {
            (Some(s), Some(u)) => out.push((s as u64, u)),
            _ => return Err(BenchError::Table(format!("bad oracle cache line {:?}", rec))),
        }
    }
    Ok(out)
}

/// What a benchmark row is checked against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Check {
    Near { expected: f64, tol: f64 },
    /// Utility at least `frac * expected`.
    AtLeast { expected: f64, frac: f64 },
    /// Utility at least `frac` times the utility of an earlier row.
    AtLeastRow { row: usize, frac: f64 },
    Record,
}

#[derive(Debug, Clone)]
pub struct BenchCase {
    pub label: String,
    pub instance: ProblemInstance,
    pub gap_tol: f64,
    pub check: Check,
}

fn restricted(mut instance: ProblemInstance, hops: u8) -> ProblemInstance {
    instance.options.restrict_hops = hops;
    instance
}

/// Expands a suite into solvable cases. `cache_dir` is needed by `oracle`.
pub fn suite_cases(name: &str, cache_dir: Option<&Path>) -> Result<Vec<BenchCase>, BenchError> {
    let from_table = |suite: &str, gap_tol: f64, anytime: bool| -> Result<Vec<BenchCase>, BenchError> {
        suite_rows(suite)?
            .into_iter()
            .map(|r| {
                let check = if anytime {
                    Check::AtLeast { expected: r.expected_utility, frac: 1.0 - gap_tol }
                } else {
                    Check::Near { expected: r.expected_utility, tol: r.tolerance }
                };
                Ok(BenchCase { label: format!("{} [{}]", r.grid, r.robots), instance: r.instance()?, gap_tol, check })
            })
            .collect()
    };
    match name {
        "correctness" => from_table("correctness", 0.0, false),
        "trivial" => from_table("trivial", 0.0, false),
        "anytime" => from_table("correctness", ANYTIME_GAP, true),
        "oracle" => {
            let dir = cache_dir.unwrap_or(Path::new("."));
            let cache = load_oracle_cache(dir)?;
            oracle_cases()?
                .into_iter()
                .map(|c| {
                    let expected = cache
                        .iter()
                        .find(|(s, _)| *s == c.seed)
                        .map(|p| p.1)
                        .ok_or(BenchError::StaleOracleCache(c.seed))?;
                    Ok(BenchCase {
                        label: c.label(),
                        instance: c.instance,
                        gap_tol: 0.0,
                        check: Check::Near { expected, tol: 1e-6 },
                    })
                })
                .collect()
        }
        "grids" => {
            let mut out = Vec::new();
            for size in [3usize, 4, 5] {
                for frac in [0.2, 0.4, 0.6, 0.8] {
                    let budget = ((size * size) as f64 * frac * 10.0).round() / 10.0;
                    let net = regular_grid(size, size, 1.0)?;
                    out.push(BenchCase {
                        label: format!("{size}x{size}"),
                        instance: ProblemInstance::single(net, 1, budget),
                        gap_tol: 0.0,
                        check: Check::Record,
                    });
                }
            }
            Ok(out)
        }
        "heuristics" => {
            let mut out = Vec::new();
            for budget in [10.7, 16.0, 21.3, 26.7] {
                let base = ProblemInstance::single(regular_grid(6, 6, 1.0)?, 1, budget);
                let row = out.len();
                out.push(BenchCase {
                    label: "6x6".into(),
                    instance: base.clone(),
                    gap_tol: ANYTIME_GAP,
                    check: Check::Record,
                });
                out.push(BenchCase {
                    label: "6x6 hops2".into(),
                    instance: restricted(base, 2),
                    gap_tol: ANYTIME_GAP,
                    check: Check::AtLeastRow { row, frac: 1.0 - ANYTIME_GAP },
                });
            }
            Ok(out)
        }
        other => Err(BenchError::UnknownSuite(other.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub grid: String,
    pub budget: f64,
    pub utility: Option<f64>,
    pub gap: Option<f64>,
    pub time_s: f64,
    pub nodes: usize,
    pub vars: usize,
    pub status: String,
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub rows: Vec<RunRow>,
}

impl SuiteReport {
    pub fn passed(&self) -> usize {
        self.rows.iter().filter(|r| r.pass == Some(true)).count()
    }

    pub fn failed(&self) -> usize {
        self.rows.iter().filter(|r| r.pass == Some(false)).count()
    }

    /// CSV with columns `grid,budget,utility,gap,time_s,nodes`.
    pub fn write_csv(&self, out: impl Write) -> Result<(), BenchError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["grid", "budget", "utility", "gap", "time_s", "nodes"])?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        for r in &self.rows {
            w.write_record([
                r.grid.clone(),
                r.budget.to_string(),
                opt(r.utility),
                opt(r.gap),
                format!("{:.3}", r.time_s),
                r.nodes.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), BenchError> {
        self.write_csv(File::create(path)?)
    }
}

fn run_case(case: &BenchCase, time_limit: Option<f64>) -> RunRow {
    let params = SolveParams { gap_tol: case.gap_tol, time_limit, node_limit: None };
    let start = Instant::now();
    let result = solve_instance(&case.instance, &params, &mut |_| {});
    let time_s = start.elapsed().as_secs_f64();
    let budget = case.instance.robots.first().map_or(0.0, |r| r.budget);
    match result {
        Ok(p) => RunRow {
            grid: case.label.clone(),
            budget,
            utility: Some(p.tours.utility),
            gap: Some(p.solution.gap),
            time_s,
            nodes: p.solution.stats.nodes_explored,
            vars: p.num_vars(),
            status: format!("{:?}", p.solution.status),
            pass: None,
        },
        Err(e) => RunRow {
            grid: case.label.clone(),
            budget,
            utility: None,
            gap: None,
            time_s,
            nodes: 0,
            vars: 0,
            status: e.to_string(),
            pass: None,
        },
    }
}

/// Solves every case on up to `jobs` threads and applies the checks. Row
/// order follows the suite definition.
pub fn run_cases(cases: &[BenchCase], time_limit: Option<f64>, jobs: usize) -> Vec<RunRow> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<RunRow>>> = Mutex::new(vec![None; cases.len()]);
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1).min(cases.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cases.len() {
                    break;
                }
                let row = run_case(&cases[i], time_limit);
                slots.lock().unwrap()[i] = Some(row);
            });
        }
    });
    let mut rows: Vec<RunRow> = slots.into_inner().unwrap().into_iter().map(|r| r.expect("every case ran")).collect();
    for i in 0..rows.len() {
        let got = rows[i].utility;
        rows[i].pass = match cases[i].check {
            Check::Record => None,
            Check::Near { expected, tol } => Some(got.is_some_and(|u| (u - expected).abs() <= tol)),
            Check::AtLeast { expected, frac } => Some(got.is_some_and(|u| u >= frac * expected - 1e-9)),
            Check::AtLeastRow { row, frac } => {
                Some(matches!((got, rows[row].utility), (Some(u), Some(r)) if u >= frac * r - 1e-9))
            }
        };
    }
    rows
}

pub fn run_suite(name: &str, time_limit: Option<f64>, cache_dir: Option<&Path>, jobs: usize) -> Result<SuiteReport, BenchError> {
    let cases = suite_cases(name, cache_dir)?;
    Ok(SuiteReport { suite: name.to_string(), rows: run_cases(&cases, time_limit, jobs) })
}

/// True when a status string from [`RunRow`] is a finished solve.
pub fn finished(status: &str) -> bool {
    status == format!("{:?}", SolveStatus::Optimal) || status == format!("{:?}", SolveStatus::GapReached)
}
