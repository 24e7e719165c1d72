//! Exhaustive tour enumeration for small instances.
//!
//! Every robot's closed tours are enumerated by depth-first search from its
//! base. Tours are reduced to their visited sets (the utility and the
//! estimation quality depend on nothing else), keeping the shortest tour per
//! set, and the best set or disjoint pair of sets wins.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bnb::TourSet;
use crate::estimation::{estimate_with_cache, quality_score, EstimationError, FitCache, TimeSeries};
use crate::instance::{blocking_violations, NodeNetwork, ProblemInstance, Violation};
use crate::model::{evaluate_tours, ModelError, BUDGET_TOL};

/// Largest network the oracle accepts.
pub const MAX_ORACLE_NODES: usize = 25;
/// Largest `max_nodes_per_tour` the oracle accepts.
pub const MAX_TOUR_NODES: usize = 8;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("network has {n} nodes; the oracle supports at most {MAX_ORACLE_NODES}")]
    TooManyNodes { n: usize },
    #[error("max_nodes_per_tour {0} outside 1..={MAX_TOUR_NODES}")]
    TourCap(usize),
    #[error("the oracle supports one or two robots, got {0}")]
    TooManyRobots(usize),
    #[error("invalid instance: {0:?}")]
    Invalid(Vec<Violation>),
    #[error("no tour set could be scored")]
    NothingScored,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub best_value: f64,
    pub best_tours: TourSet,
    /// Closed tours enumerated, summed over robots (one per reflection pair
    /// when distances are symmetric).
    pub enumerated: u64,
    /// Set when some tour could have been extended within budget but hit the
    /// node cap, so longer tours were never examined.
    pub truncated: bool,
}

#[derive(Debug, Clone)]
struct Candidate {
    length: f64,
    tour: Vec<usize>,
}

/// Closed tours of one robot grouped by visited-node bitmask.
#[derive(Debug, Clone, Default)]
pub struct TourEnumeration {
    sets: HashMap<u64, Candidate>,
    pub count: u64,
    pub truncated: bool,
}

impl TourEnumeration {
    pub fn num_sets(&self) -> usize {
        self.sets.len()
    }

    /// Shortest tour (lexicographically smallest on ties) per visited set,
    /// sorted by mask.
    pub fn sets(&self) -> Vec<(u64, f64, Vec<usize>)> {
        let mut v: Vec<_> = self.sets.iter().map(|(&m, c)| (m, c.length, c.tour.clone())).collect();
        v.sort_by_key(|e| e.0);
        v
    }
}

struct Dfs<'a> {
    net: &'a NodeNetwork,
    base: usize,
    budget: f64,
    cap: usize,
    forbidden: u64,
    triangle: bool,
    symmetric: bool,
    out: TourEnumeration,
}

impl Dfs<'_> {
    fn record(&mut self, seq: &[usize], mask: u64, length: f64) {
        let mut tour = seq.to_vec();
        if seq.len() > 1 {
            tour.push(self.base);
        }
        self.out.count += 1;
        let better = match self.out.sets.get(&mask) {
            None => true,
            Some(c) => length < c.length - 1e-12 || (length <= c.length + 1e-12 && tour < c.tour),
        };
        if better {
            self.out.sets.insert(mask, Candidate { length, tour });
        }
    }

    fn go(&mut self, seq: &mut Vec<usize>, mask: u64, len: f64) {
        let cur = *seq.last().unwrap();
        let back = if seq.len() == 1 { 0.0 } else { self.net.distance(cur, self.base) };
        let canonical = !self.symmetric || seq.len() <= 2 || seq[1] < cur;
        if len + back <= self.budget + BUDGET_TOL && canonical {
            self.record(seq, mask, len + back);
        }
        for j in 0..self.net.len() {
            let bit = 1u64 << j;
            if mask & bit != 0 || self.forbidden & bit != 0 {
                continue;
            }
            let step = len + self.net.distance(cur, j);
            let closes = step + self.net.distance(j, self.base) <= self.budget + BUDGET_TOL;
            if seq.len() == self.cap {
                if closes {
                    self.out.truncated = true;
                }
                continue;
            }
            let viable = if self.triangle { closes } else { step <= self.budget + BUDGET_TOL };
            if viable {
                seq.push(j);
                self.go(seq, mask | bit, step);
                seq.pop();
            }
        }
    }
}

/// Enumerates closed tours from `base` of length at most `budget` with at
/// most `max_nodes` distinct nodes, avoiding the `forbidden` nodes.
pub fn enumerate_tours(
    network: &NodeNetwork,
    base: usize,
    budget: f64,
    max_nodes: usize,
    forbidden: &[usize],
) -> TourEnumeration {
    let mut dfs = Dfs {
        net: network,
        base,
        budget,
        cap: max_nodes,
        forbidden: forbidden.iter().fold(0u64, |m, &v| m | (1u64 << v)),
        triangle: network.satisfies_triangle_inequality(),
        symmetric: network.is_symmetric(),
        out: TourEnumeration::default(),
    };
    dfs.go(&mut vec![base], 1u64 << base, 0.0);
    dfs.out
}

/// Utility of a visited bitmask, matching [`crate::model::utility_of_visited`].
struct MaskUtility {
    reward: Vec<f64>,
    credit: Vec<Vec<(usize, f64)>>,
}

impl MaskUtility {
    fn new(net: &NodeNetwork) -> Self {
        let mut credit = vec![Vec::new(); net.len()];
        for e in &net.edges {
            credit[e.dst].push((e.src, net.nodes[e.dst].utility * e.w));
        }
        MaskUtility { reward: net.utilities(), credit }
    }

    fn eval(&self, mask: u64) -> f64 {
        let mut u = 0.0;
        for (i, r) in self.reward.iter().enumerate() {
            if mask >> i & 1 == 1 {
                u += r;
            } else {
                u += self.credit[i].iter().filter(|(j, _)| mask >> j & 1 == 1).map(|(_, c)| c).sum::<f64>();
            }
        }
        u
    }
}

fn check(instance: &ProblemInstance, max_nodes: usize) -> Result<(), OracleError> {
    let n = instance.network.len();
    if n > MAX_ORACLE_NODES {
        return Err(OracleError::TooManyNodes { n });
    }
    if max_nodes == 0 || max_nodes > MAX_TOUR_NODES {
        return Err(OracleError::TourCap(max_nodes));
    }
    if instance.robots.is_empty() || instance.robots.len() > 2 {
        return Err(OracleError::TooManyRobots(instance.robots.len()));
    }
    let errors = blocking_violations(instance);
    if !errors.is_empty() {
        return Err(OracleError::Invalid(errors));
    }
    Ok(())
}

/// Per-robot enumerations; with two robots each avoids the other's base.
fn enumerate_all(instance: &ProblemInstance, max_nodes: usize) -> Vec<TourEnumeration> {
    let bases: Vec<usize> = instance.robots.iter().map(|r| r.base).collect();
    instance
        .robots
        .iter()
        .map(|r| {
            let others: Vec<usize> = bases.iter().copied().filter(|&b| b != r.base).collect();
            enumerate_tours(&instance.network, r.base, r.budget, max_nodes, &others)
        })
        .collect()
}

/// Scores every visited set (or disjoint pair) with `score` and keeps the
/// maximum; ties go to the larger visited set, then to the
/// lexicographically smallest tour list. Sets whose
/// score fails are skipped.
fn search<E>(
    instance: &ProblemInstance,
    max_nodes: usize,
    mut score: impl FnMut(u64) -> Result<f64, E>,
) -> Result<OracleResult, OracleError> {
    let per_robot = enumerate_all(instance, max_nodes);
    let enumerated = per_robot.iter().map(|e| e.count).sum();
    let truncated = per_robot.iter().any(|e| e.truncated);
    let lists: Vec<Vec<(u64, f64, Vec<usize>)>> = per_robot.iter().map(TourEnumeration::sets).collect();
    let mut memo: HashMap<u64, Option<f64>> = HashMap::new();
    let mut best: Option<(f64, u32, Vec<Vec<usize>>)> = None;
    let mut consider = |mask: u64, tours: Vec<Vec<usize>>| {
        let value = *memo.entry(mask).or_insert_with(|| score(mask).ok());
        let Some(value) = value else { return };
        let size = mask.count_ones();
        let better = match &best {
            None => true,
            Some((v, s, t)) => {
                value > *v + 1e-12 || (value >= *v - 1e-12 && (size > *s || (size == *s && tours < *t)))
            }
        };
        if better {
            best = Some((value, size, tours));
        }
    };
    if lists.len() == 1 {
        for (mask, _, tour) in &lists[0] {
            consider(*mask, vec![tour.clone()]);
        }
    } else {
        for (m0, _, t0) in &lists[0] {
            for (m1, _, t1) in &lists[1] {
                if m0 & m1 == 0 {
                    consider(m0 | m1, vec![t0.clone(), t1.clone()]);
                }
            }
        }
    }
    let (best_value, _, tours) = best.ok_or(OracleError::NothingScored)?;
    let eval = evaluate_tours(instance, &tours)?;
    Ok(OracleResult {
        best_value,
        best_tours: TourSet { tours, lengths: eval.lengths, utility: eval.utility },
        enumerated,
        truncated,
    })
}

/// Best joint utility over all feasible tours with at most
/// `max_nodes_per_tour` distinct nodes each.
pub fn exhaustive_best_tours(instance: &ProblemInstance, max_nodes_per_tour: usize) -> Result<OracleResult, OracleError> {
    check(instance, max_nodes_per_tour)?;
    let util = MaskUtility::new(&instance.network);
    search(instance, max_nodes_per_tour, |mask| Ok::<f64, ()>(util.eval(mask)))
}

/// Tour maximizing the estimation quality at `eval_times` when the visited
/// nodes are measured and the rest estimated from `train_range`.
pub fn exhaustive_best_estimation_tour(
    instance: &ProblemInstance,
    series: &TimeSeries,
    train_range: Range<usize>,
    eval_times: &[usize],
    max_nodes_per_tour: usize,
) -> Result<OracleResult, OracleError> {
    check(instance, max_nodes_per_tour)?;
    let net = &instance.network;
    if series.n_nodes() != net.len() {
        return Err(EstimationError::WidthMismatch { series: series.n_nodes(), network: net.len() }.into());
    }
    if let Some(&t) = eval_times.iter().find(|&&t| t >= series.len()) {
        return Err(EstimationError::TimeOutOfRange(t).into());
    }
    if let Some(&t) = eval_times.iter().find(|&&t| train_range.contains(&t)) {
        return Err(EstimationError::TargetInTraining(t).into());
    }
    let mut cache = FitCache::new(series, train_range)?;
    let n = net.len();
    search(instance, max_nodes_per_tour, |mask| {
        let visited: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
        let states = estimate_with_cache(net, &mut cache, &visited, eval_times)?;
        quality_score(series, &states, eval_times)
    })
}
