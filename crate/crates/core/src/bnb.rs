//! Anytime best-first branch and bound over the linearized model.
//!
//! The search keeps an incumbent (best integer solution) and a global upper
//! bound (best open LP bound) and reports both whenever either improves.
//! Subtour-elimination rows are held back and added to the LP only when an
//! integral candidate contains a cycle that misses its robot's base.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{NodeNetwork, ProblemInstance};
use crate::model::{
    build_model, evaluate_tours, linearize_objective, tighten, tour_length, MipModel, ModelError, RowRole, Sense,
    VarKind,
};
use crate::simplex::{LinearProgram, LpError, LpOptions, LpRow, LpStatus, WarmLp, FEAS_TOL, INT_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveParams {
    pub gap_tol: f64,
    /// Seconds.
    pub time_limit: Option<f64>,
    pub node_limit: Option<usize>,
}

impl Default for SolveParams {
    fn default() -> Self {
        Self { gap_tol: 0.0, time_limit: None, node_limit: None }
    }
}

impl SolveParams {
    pub fn exact() -> Self {
        Self::default()
    }

    pub fn with_gap(gap_tol: f64) -> Self {
        Self { gap_tol, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    GapReached,
    TimeLimit,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: f64,
    pub incumbent: Option<f64>,
    pub bound: f64,
    pub gap: Option<f64>,
    pub nodes: usize,
    pub open: usize,
}

impl TraceEvent {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace event serializes")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub events: Vec<TraceEvent>,
}

impl SolveTrace {
    /// Incumbent never decreases, bound never increases, gap never grows.
    pub fn is_monotone(&self) -> bool {
        self.events.windows(2).all(|w| {
            let (a, b) = (&w[0], &w[1]);
            let inc_ok = match (a.incumbent, b.incumbent) {
                (Some(x), Some(y)) => y >= x,
                (Some(_), None) => false,
                _ => true,
            };
            let gap_ok = match (a.gap, b.gap) {
                (Some(x), Some(y)) => y <= x + 1e-12,
                (Some(_), None) => false,
                _ => true,
            };
            inc_ok && b.bound <= a.bound && gap_ok
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub nodes_explored: usize,
    pub lp_solves: usize,
    pub lp_pivots: usize,
    pub lazy_rows: usize,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub status: SolveStatus,
    pub objective: f64,
    pub bound: f64,
    pub assignment: Vec<f64>,
    pub gap: f64,
    pub trace: SolveTrace,
    pub stats: SolveStats,
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("stopped by the {0} before any feasible solution was found")]
    NoIncumbent(&'static str),
    #[error(transparent)]
    Extract(#[from] ExtractError),
}

#[derive(Debug, Error, PartialEq)]
pub enum ExtractError {
    #[error("solution has status {0:?}; there are no tours to extract")]
    NoSolution(SolveStatus),
    #[error("robot {robot}: arcs do not return to base {base}")]
    OpenTour { robot: usize, base: usize },
    #[error("{0} positive arcs are not part of any robot's cycle")]
    LeftoverArcs(usize),
    #[error("tour utility {tours} differs from solver objective {objective}")]
    ObjectiveMismatch { tours: f64, objective: f64 },
    #[error("extracted tours are infeasible: {0}")]
    Infeasible(String),
}

/// Source of integer-feasible assignments for the search. Returned vectors
/// are checked against the model before they are accepted.
pub trait IncumbentHeuristic {
    fn at_root(&mut self, model: &MipModel) -> Vec<Vec<f64>>;
    fn at_node(&mut self, model: &MipModel, lp_values: &[f64]) -> Option<Vec<f64>>;
}

#[derive(Debug, Clone)]
struct OpenNode {
    bound: f64,
    depth: usize,
    id: usize,
    fixings: Vec<(usize, f64)>,
}

impl PartialEq for OpenNode {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for OpenNode {}
impl PartialOrd for OpenNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OpenNode {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.id.cmp(&self.id))
    }
}

/// Model columns that survive presolve, plus the constant contribution of
/// fixed columns to every row.
struct Reduced {
    var_of: Vec<usize>,
    fixed_value: Vec<f64>,
    lp: LinearProgram,
    lazy: Vec<LpRow>,
    lazy_arcs: Vec<Vec<usize>>,
    int_cols: Vec<usize>,
    node_cols: Vec<usize>,
    obj_const: f64,
}

fn presolve(model: &MipModel) -> Result<Option<Reduced>, SolveError> {
    let n = model.num_vars();
    let mut col_of = vec![None; n];
    let mut var_of = Vec::new();
    let mut fixed_value = vec![0.0; n];
    for v in &model.vars {
        if v.lo > v.hi {
            return Ok(None);
        }
        if v.lo == v.hi {
            fixed_value[v.index] = v.lo;
        } else {
            col_of[v.index] = Some(var_of.len());
            var_of.push(v.index);
        }
    }
    let mut lp = LinearProgram::new(var_of.len());
    for (c, &v) in var_of.iter().enumerate() {
        lp.lo[c] = model.vars[v].lo;
        lp.hi[c] = model.vars[v].hi;
    }
    let mut obj_const = 0.0;
    for &(v, c) in &model.linear_obj {
        match col_of[v] {
            Some(col) => lp.obj[col] += c,
            None => obj_const += c * fixed_value[v],
        }
    }
    let mut lazy = Vec::new();
    let mut lazy_arcs = Vec::new();
    for row in &model.constraints {
        let mut coeffs = Vec::with_capacity(row.coeffs.len());
        let mut rhs = row.rhs;
        for &(v, a) in &row.coeffs {
            match col_of[v] {
                Some(c) => coeffs.push((c, a)),
                None => rhs -= a * fixed_value[v],
            }
        }
        let (mut min_act, mut max_act) = (0.0, 0.0);
        for &(c, a) in &coeffs {
            let (l, h) = (lp.lo[c], lp.hi[c]);
            if a > 0.0 {
                min_act += a * l;
                max_act += a * h;
            } else {
                min_act += a * h;
                max_act += a * l;
            }
        }
        let tol = FEAS_TOL * (1.0 + rhs.abs());
        let infeasible = match row.sense {
            Sense::Le => min_act > rhs + tol,
            Sense::Ge => max_act < rhs - tol,
            Sense::Eq => min_act > rhs + tol || max_act < rhs - tol,
        };
        if infeasible {
            return Ok(None);
        }
        let redundant = match row.sense {
            Sense::Le => max_act <= rhs,
            Sense::Ge => min_act >= rhs,
            Sense::Eq => coeffs.is_empty(),
        };
        if redundant {
            continue;
        }
        let lp_row = LpRow { coeffs, sense: row.sense, rhs };
        if row.lazy {
            let arcs = row
                .coeffs
                .iter()
                .filter(|&&(v, _)| matches!(model.vars[v].kind, VarKind::XArc { .. }))
                .map(|&(v, _)| v)
                .collect();
            lazy.push(lp_row);
            lazy_arcs.push(arcs);
        } else {
            lp.rows.push(lp_row);
        }
    }
    let int_cols: Vec<usize> = (0..var_of.len()).filter(|&c| model.vars[var_of[c]].is_integer()).collect();
    let node_cols =
        int_cols.iter().copied().filter(|&c| matches!(model.vars[var_of[c]].kind, VarKind::XNode(_))).collect();
    Ok(Some(Reduced { var_of, fixed_value, lp, lazy, lazy_arcs, int_cols, node_cols, obj_const }))
}

impl Reduced {
    fn expand(&self, cols: &[f64]) -> Vec<f64> {
        let mut x = self.fixed_value.clone();
        for (c, &v) in self.var_of.iter().enumerate() {
            x[v] = cols[c];
        }
        x
    }

    /// Most fractional integer column, node indicators first; ties go to the
    /// lowest index.
    fn branching_column(&self, cols: &[f64]) -> Option<usize> {
        for group in [&self.node_cols, &self.int_cols] {
            let mut best = None;
            let mut best_frac = INT_TOL;
            for &c in group.iter() {
                let f = (cols[c] - cols[c].floor()).min(cols[c].ceil() - cols[c]);
                if f > best_frac {
                    best_frac = f;
                    best = Some(c);
                }
            }
            if best.is_some() {
                return best;
            }
        }
        None
    }
}

/// Decodes the arcs of an integral assignment. On success every positive arc
/// lies on a base cycle and the order variables are rewritten to tour
/// positions; otherwise returns the node sets of the offending cycles.
fn assign_orders(model: &MipModel, x: &mut [f64]) -> Result<(), Vec<Vec<usize>>> {
    let n = model.n_nodes;
    let m = model.bases.len();
    let mut succ = vec![vec![None; n]; m];
    let mut used = 0usize;
    for (v, k, i, j) in model.arcs() {
        if x[v] > 0.5 {
            succ[k][i] = Some(j);
            used += 1;
        }
    }
    let mut on_cycle = vec![vec![false; n]; m];
    let mut consumed = 0usize;
    for k in 0..m {
        let b = model.bases[k];
        let mut cur = b;
        let mut pos = 1.0;
        while let Some(nx) = succ[k][cur] {
            if on_cycle[k][nx] && nx != b {
                break;
            }
            consumed += 1;
            if nx == b {
                break;
            }
            on_cycle[k][nx] = true;
            pos += 1.0;
            if let Some(u) = model.index_of(VarKind::UOrder { i: nx, k }) {
                x[u] = pos;
            }
            cur = nx;
            if consumed > used {
                break;
            }
        }
    }
    if consumed == used {
        return Ok(());
    }
    let mut cycles = Vec::new();
    let mut seen = vec![vec![false; n]; m];
    for k in 0..m {
        for start in 0..n {
            if start == model.bases[k] || on_cycle[k][start] || seen[k][start] || succ[k][start].is_none() {
                continue;
            }
            let mut nodes = Vec::new();
            let mut cur = start;
            while !seen[k][cur] {
                seen[k][cur] = true;
                nodes.push(cur);
                match succ[k][cur] {
                    Some(nx) => cur = nx,
                    None => break,
                }
            }
            cycles.push(nodes);
        }
    }
    Err(cycles)
}

struct Search<'a> {
    model: &'a MipModel,
    start: Instant,
    deadline: Option<Instant>,
    incumbent: Option<(f64, Vec<f64>)>,
    bound: f64,
    trace: SolveTrace,
    stats: SolveStats,
}

impl Search<'_> {
    fn gap(&self) -> Option<f64> {
        self.incumbent.as_ref().map(|(v, _)| relative_gap(self.bound, *v))
    }

    fn emit(&mut self, open: usize, sink: &mut dyn FnMut(&TraceEvent)) {
        let ev = TraceEvent {
            t: self.start.elapsed().as_secs_f64(),
            incumbent: self.incumbent.as_ref().map(|i| i.0),
            bound: self.bound,
            gap: self.gap(),
            nodes: self.stats.nodes_explored,
            open,
        };
        sink(&ev);
        self.trace.events.push(ev);
    }

    /// Accepts `x` as the new incumbent when it is feasible and better.
    fn offer(&mut self, mut x: Vec<f64>) -> bool {
        let model = self.model;
        for v in &model.vars {
            if v.is_integer() {
                x[v.index] = x[v.index].round();
            }
        }
        if assign_orders(model, &mut x).is_err() {
            return false;
        }
        if model.max_violation(&x) > FEAS_TOL {
            return false;
        }
        let value = model.objective(&x);
        if self.incumbent.as_ref().is_some_and(|(v, _)| value <= *v) {
            return false;
        }
        self.incumbent = Some((value, x));
        true
    }

    fn prune_below(&self) -> f64 {
        match &self.incumbent {
            Some((v, _)) => v + 1e-9 * v.abs().max(1.0),
            None => f64::NEG_INFINITY,
        }
    }

    fn out_of_time(&self) -> bool {
        self.deadline.is_some_and(|d| Instant::now() >= d)
    }
}

fn row_violated(row: &LpRow, cols: &[f64]) -> bool {
    let act: f64 = row.coeffs.iter().map(|&(c, a)| a * cols[c]).sum();
    match row.sense {
        Sense::Le => act > row.rhs + FEAS_TOL,
        Sense::Ge => act < row.rhs - FEAS_TOL,
        Sense::Eq => (act - row.rhs).abs() > FEAS_TOL,
    }
}

fn relative_gap(bound: f64, incumbent: f64) -> f64 {
    ((bound - incumbent) / bound.abs().max(1e-12)).max(0.0)
}

/// Runs the search without a problem-specific heuristic.
pub fn solve_anytime(
    model: &MipModel,
    params: &SolveParams,
    progress: &mut dyn FnMut(&TraceEvent),
) -> Result<Solution, SolveError> {
    solve_anytime_with(model, params, None, progress)
}

pub fn solve_anytime_with(
    model: &MipModel,
    params: &SolveParams,
    mut heuristic: Option<&mut dyn IncumbentHeuristic>,
    progress: &mut dyn FnMut(&TraceEvent),
) -> Result<Solution, SolveError> {
    let linear;
    let model = if model.is_linear() {
        model
    } else {
        linear = linearize_objective(model);
        &linear
    };
    let start = Instant::now();
    let deadline = params.time_limit.map(|t| start + Duration::from_secs_f64(t.max(0.0)));
    let mut search = Search {
        model,
        start,
        deadline,
        incumbent: None,
        bound: f64::INFINITY,
        trace: SolveTrace::default(),
        stats: SolveStats::default(),
    };
    let infeasible = |search: Search| {
        let mut stats = search.stats;
        stats.wall_time = search.start.elapsed().as_secs_f64();
        Ok(Solution {
            status: SolveStatus::Infeasible,
            objective: f64::NAN,
            bound: f64::NEG_INFINITY,
            assignment: Vec::new(),
            gap: f64::INFINITY,
            trace: search.trace,
            stats,
        })
    };

    let Some(red) = presolve(model)? else {
        return infeasible(search);
    };
    let mut lp = WarmLp::new(red.lp.clone())?;
    let mut lazy_active = vec![false; red.lazy.len()];
    let root_lo = red.lp.lo.clone();
    let root_hi = red.lp.hi.clone();
    let lp_opts = LpOptions { deadline, max_pivots: None };

    if let Some(h) = heuristic.as_deref_mut() {
        for x in h.at_root(model) {
            search.offer(x);
        }
    }

    let mut heap = BinaryHeap::new();
    heap.push(OpenNode { bound: f64::INFINITY, depth: 0, id: 0, fixings: Vec::new() });
    let mut next_id = 1;
    let mut lo = root_lo.clone();
    let mut hi = root_hi.clone();
    let mut stopped: Option<&'static str> = None;
    let mut root_infeasible = false;

    while let Some(node) = heap.pop() {
        if node.bound <= search.prune_below() {
            continue;
        }
        if search.out_of_time() {
            heap.push(node);
            stopped = Some("time limit");
            break;
        }
        if params.node_limit.is_some_and(|l| search.stats.nodes_explored >= l) {
            heap.push(node);
            stopped = Some("node limit");
            break;
        }
        search.stats.nodes_explored += 1;
        lo.copy_from_slice(&root_lo);
        hi.copy_from_slice(&root_hi);
        for &(c, v) in &node.fixings {
            lo[c] = v;
            hi[c] = v;
        }
        lp.set_bounds(&lo, &hi);

        // Solve, adding held-back rows until the integral candidate is a
        // proper set of base cycles.
        let outcome = loop {
            search.stats.lp_solves += 1;
            let res = match lp.solve(&lp_opts) {
                Ok(r) => r,
                Err(LpError::Deadline) => break None,
                Err(e) => return Err(e.into()),
            };
            if res.status != LpStatus::Optimal {
                break Some(None);
            }
            let value = res.objective + red.obj_const;
            if value <= search.prune_below() {
                break Some(Some((value, res.primal, false)));
            }
            if red.branching_column(&res.primal).is_some() {
                break Some(Some((value, res.primal, true)));
            }
            let mut x = red.expand(&res.primal);
            for v in &model.vars {
                if v.is_integer() {
                    x[v.index] = x[v.index].round();
                }
            }
            let mut added = 0;
            if let Err(cycles) = assign_orders(model, &mut x) {
                for cyc in cycles {
                    let mut inside = vec![false; model.n_nodes];
                    for &v in &cyc {
                        inside[v] = true;
                    }
                    for (r, arcs) in red.lazy_arcs.iter().enumerate() {
                        if lazy_active[r] {
                            continue;
                        }
                        let hit = arcs.iter().any(|&a| match model.vars[a].kind {
                            VarKind::XArc { i, j, .. } => inside[i] && inside[j],
                            _ => false,
                        });
                        if hit {
                            lazy_active[r] = true;
                            lp.add_row(red.lazy[r].clone());
                            added += 1;
                        }
                    }
                }
                if added == 0 {
                    for (r, row) in red.lazy.iter().enumerate() {
                        if !lazy_active[r] && row_violated(row, &res.primal) {
                            lazy_active[r] = true;
                            lp.add_row(row.clone());
                            added += 1;
                        }
                    }
                }
                if added == 0 {
                    break Some(None);
                }
            }
            search.stats.lazy_rows += added;
            if added == 0 {
                break Some(Some((value, res.primal, false)));
            }
        };
        let Some(outcome) = outcome else {
            heap.push(node);
            stopped = Some("time limit");
            break;
        };
        let improved_before = search.incumbent.as_ref().map(|i| i.0);
        match outcome {
            None => {
                if node.id == 0 {
                    root_infeasible = true;
                }
            }
            Some((value, cols, fractional)) => {
                if value > search.prune_below() {
                    if fractional {
                        if let Some(h) = heuristic.as_deref_mut() {
                            if let Some(x) = h.at_node(model, &red.expand(&cols)) {
                                search.offer(x);
                            }
                        }
                        let c = red.branching_column(&cols).unwrap();
                        for v in [1.0, 0.0] {
                            if v < lo[c] || v > hi[c] {
                                continue;
                            }
                            let mut fixings = node.fixings.clone();
                            fixings.push((c, v));
                            heap.push(OpenNode { bound: value, depth: node.depth + 1, id: next_id, fixings });
                            next_id += 1;
                        }
                    } else {
                        search.offer(red.expand(&cols));
                    }
                }
            }
        }
        search.stats.lp_pivots = lp.total_pivots;
        let open_bound = heap.peek().map_or(f64::NEG_INFINITY, |n| n.bound);
        let inc = search.incumbent.as_ref().map_or(f64::NEG_INFINITY, |i| i.0);
        let new_bound = open_bound.max(inc).min(search.bound);
        let inc_changed = search.incumbent.as_ref().map(|i| i.0) != improved_before;
        if inc_changed || new_bound < search.bound {
            search.bound = new_bound;
            if new_bound.is_finite() || inc_changed {
                search.emit(heap.len(), progress);
            }
        }
        if search.incumbent.is_some() && params.gap_tol > 0.0 && !heap.is_empty() {
            if search.gap().unwrap() <= params.gap_tol {
                break;
            }
        }
    }

    search.stats.wall_time = start.elapsed().as_secs_f64();
    search.stats.lp_pivots = lp.total_pivots;
    let status = match (&search.incumbent, stopped, heap.is_empty()) {
        (None, Some(why), _) => return Err(SolveError::NoIncumbent(why)),
        (None, None, _) => {
            let _ = root_infeasible;
            return infeasible(search);
        }
        (Some(_), Some(_), _) => SolveStatus::TimeLimit,
        (Some(_), None, true) => SolveStatus::Optimal,
        (Some(_), None, false) => SolveStatus::GapReached,
    };
    let (objective, assignment) = search.incumbent.clone().unwrap();
    if status == SolveStatus::Optimal && search.bound != objective {
        search.bound = objective;
        search.emit(0, progress);
    }
    let gap = relative_gap(search.bound, objective);
    Ok(Solution {
        status,
        objective,
        bound: search.bound,
        assignment,
        gap,
        trace: search.trace,
        stats: search.stats,
    })
}

/// Closed tours in robot order, with their lengths and joint utility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TourSet {
    pub tours: Vec<Vec<usize>>,
    pub lengths: Vec<f64>,
    pub utility: f64,
}

impl TourSet {
    pub fn visited(&self, n: usize) -> Vec<bool> {
        let mut v = vec![false; n];
        for t in &self.tours {
            for &i in t {
                v[i] = true;
            }
        }
        v
    }
}

/// Follows the positive arcs of each robot from its base back to the base.
pub fn extract_tours(solution: &Solution, model: &MipModel, instance: &ProblemInstance) -> Result<TourSet, ExtractError> {
    if solution.status == SolveStatus::Infeasible || solution.assignment.is_empty() {
        return Err(ExtractError::NoSolution(solution.status));
    }
    let x = &solution.assignment;
    let n = model.n_nodes;
    let m = model.bases.len();
    let mut succ: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); m];
    let mut positive = 0;
    for (v, k, i, j) in model.arcs() {
        if x[v] > 0.5 {
            succ[k].insert(i, j);
            positive += 1;
        }
    }
    let mut tours = Vec::with_capacity(m);
    let mut used = 0;
    for (k, &b) in model.bases.iter().enumerate() {
        let mut tour = vec![b];
        let mut cur = b;
        loop {
            let Some(&nx) = succ[k].get(&cur) else {
                return Err(ExtractError::OpenTour { robot: k, base: b });
            };
            used += 1;
            tour.push(nx);
            if nx == b {
                break;
            }
            if tour.len() > n + 1 {
                return Err(ExtractError::OpenTour { robot: k, base: b });
            }
            cur = nx;
        }
        tours.push(tour);
    }
    if used != positive {
        return Err(ExtractError::LeftoverArcs(positive - used));
    }
    let eval = evaluate_tours(instance, &tours).map_err(|e| ExtractError::Infeasible(e.to_string()))?;
    if !eval.feasible {
        return Err(ExtractError::Infeasible(format!("lengths {:?}", eval.lengths)));
    }
    if (eval.utility - solution.objective).abs() > 1e-6 {
        return Err(ExtractError::ObjectiveMismatch { tours: eval.utility, objective: solution.objective });
    }
    Ok(TourSet { tours, lengths: eval.lengths, utility: eval.utility })
}

/// Greedy tour construction used as an incumbent source: insertion by
/// utility gain per unit of extra travel, followed by 2-opt to recover
/// budget. At search nodes, LP node values set the insertion order.
pub struct TourHeuristic {
    net: NodeNetwork,
    in_edges: Vec<Vec<(usize, f64)>>,
    out_edges: Vec<Vec<(usize, f64)>>,
}

impl TourHeuristic {
    pub fn new(network: &NodeNetwork) -> Self {
        let n = network.len();
        let mut in_edges = vec![Vec::new(); n];
        let mut out_edges = vec![Vec::new(); n];
        for e in &network.edges {
            in_edges[e.dst].push((e.src, e.w));
            out_edges[e.src].push((e.dst, e.w));
        }
        Self { net: network.clone(), in_edges, out_edges }
    }

    fn gain(&self, v: usize, visited: &[bool]) -> f64 {
        let r = |i: usize| self.net.nodes[i].utility;
        let mut g = r(v);
        for &(src, w) in &self.in_edges[v] {
            if visited[src] {
                g -= r(v) * w;
            }
        }
        for &(dst, w) in &self.out_edges[v] {
            if !visited[dst] {
                g += r(dst) * w;
            }
        }
        g
    }

    fn arc_ok(model: &MipModel, i: usize, j: usize, k: usize) -> bool {
        model.index_of(VarKind::XArc { i, j, k }).is_some_and(|v| model.vars[v].hi > 0.5)
    }

    fn node_ok(model: &MipModel, i: usize) -> bool {
        model.index_of(VarKind::XNode(i)).is_some_and(|v| model.vars[v].hi > 0.5)
    }

    /// Cheapest feasible insertion of `v` into tour `k`: (extra length, slot).
    fn best_slot(&self, model: &MipModel, tour: &[usize], len: f64, k: usize, v: usize) -> Option<(f64, usize)> {
        let d = |a: usize, b: usize| self.net.distance(a, b);
        let mut best: Option<(f64, usize)> = None;
        for p in 0..tour.len() - 1 {
            let (a, c) = (tour[p], tour[p + 1]);
            if !Self::arc_ok(model, a, v, k) || !Self::arc_ok(model, v, c, k) {
                continue;
            }
            let delta = if a == c { d(a, v) + d(v, c) } else { d(a, v) + d(v, c) - d(a, c) };
            if len + delta > model.budgets[k] + 1e-9 {
                continue;
            }
            if best.is_none_or(|(bd, _)| delta < bd - 1e-12) {
                best = Some((delta, p + 1));
            }
        }
        best
    }

    fn two_opt(&self, model: &MipModel, tour: &mut Vec<usize>, k: usize) {
        let d = |a: usize, b: usize| self.net.distance(a, b);
        let len = tour.len();
        if len < 5 {
            return;
        }
        let mut improved = true;
        while improved {
            improved = false;
            for a in 0..len - 3 {
                for b in a + 2..len - 1 {
                    let (p, q, r, s) = (tour[a], tour[a + 1], tour[b], tour[b + 1]);
                    let delta = d(p, r) + d(q, s) - d(p, q) - d(r, s);
                    if delta < -1e-10 {
                        let mut cand = tour.clone();
                        cand[a + 1..=b].reverse();
                        if cand.windows(2).all(|w| Self::arc_ok(model, w[0], w[1], k)) {
                            *tour = cand;
                            improved = true;
                        }
                    }
                }
            }
        }
    }

    /// Builds tours greedily. `priority`, when given, ranks nodes for a
    /// first insertion pass before the ratio-driven fill.
    fn construct(&self, model: &MipModel, priority: Option<&[f64]>, pure_gain: bool) -> Vec<Vec<usize>> {
        let n = model.n_nodes;
        let m = model.bases.len();
        let mut visited = vec![false; n];
        for &b in &model.bases {
            visited[b] = true;
        }
        let mut tours: Vec<Vec<usize>> = model.bases.iter().map(|&b| vec![b, b]).collect();
        let mut lens = vec![0.0; m];
        let candidates: Vec<usize> = (0..n).filter(|&i| !visited[i] && Self::node_ok(model, i)).collect();

        if let Some(pri) = priority {
            let mut order: Vec<usize> = candidates.iter().copied().filter(|&i| pri[i] > 0.05).collect();
            order.sort_by(|&a, &b| pri[b].total_cmp(&pri[a]).then(a.cmp(&b)));
            for v in order {
                let mut best: Option<(f64, usize, usize)> = None;
                for k in 0..m {
                    if let Some((delta, slot)) = self.best_slot(model, &tours[k], lens[k], k, v) {
                        if best.is_none_or(|b| delta < b.0) {
                            best = Some((delta, k, slot));
                        }
                    }
                }
                if let Some((delta, k, slot)) = best {
                    tours[k].insert(slot, v);
                    lens[k] += delta;
                    visited[v] = true;
                }
            }
            for k in 0..m {
                self.two_opt(model, &mut tours[k], k);
                lens[k] = tour_length(&self.net, &tours[k]);
            }
        }

        loop {
            let mut changed = false;
            loop {
                let mut best: Option<(f64, usize, usize, usize, f64)> = None;
                for &v in &candidates {
                    if visited[v] {
                        continue;
                    }
                    let g = self.gain(v, &visited);
                    for k in 0..m {
                        if let Some((delta, slot)) = self.best_slot(model, &tours[k], lens[k], k, v) {
                            let score = if pure_gain { g } else { g / (delta + 1e-6) };
                            if best.is_none_or(|b| score > b.0 + 1e-12) {
                                best = Some((score, v, k, slot, delta));
                            }
                        }
                    }
                }
                let Some((_, v, k, slot, delta)) = best else { break };
                tours[k].insert(slot, v);
                lens[k] += delta;
                visited[v] = true;
                changed = true;
            }
            if !changed {
                break;
            }
            let before: f64 = lens.iter().sum();
            for k in 0..m {
                self.two_opt(model, &mut tours[k], k);
                lens[k] = tour_length(&self.net, &tours[k]);
            }
            if lens.iter().sum::<f64>() >= before - 1e-9 {
                break;
            }
        }
        tours
    }
}

/// Encodes closed tours as a full model assignment. Returns `None` when a
/// tour uses an arc the model does not contain.
pub fn assignment_from_tours(model: &MipModel, tours: &[Vec<usize>]) -> Option<Vec<f64>> {
    let mut x = vec![0.0; model.num_vars()];
    for v in &model.vars {
        if let VarKind::UOrder { .. } = v.kind {
            x[v.index] = v.lo;
        }
    }
    let mut visited = vec![false; model.n_nodes];
    for (k, tour) in tours.iter().enumerate() {
        if tour.len() < 3 {
            return None;
        }
        for (pos, w) in tour.windows(2).enumerate() {
            let a = model.index_of(VarKind::XArc { i: w[0], j: w[1], k })?;
            x[a] = 1.0;
            visited[w[0]] = true;
            if let Some(u) = model.index_of(VarKind::UOrder { i: w[1], k }) {
                x[u] = pos as f64 + 2.0;
            }
        }
    }
    for (i, &vis) in visited.iter().enumerate() {
        if vis {
            x[model.index_of(VarKind::XNode(i))?] = 1.0;
        }
    }
    for v in &model.vars {
        if let VarKind::ZPair { i, j } = v.kind {
            x[v.index] = if visited[i] && !visited[j] { 1.0 } else { 0.0 };
        }
    }
    Some(x)
}

impl IncumbentHeuristic for TourHeuristic {
    fn at_root(&mut self, model: &MipModel) -> Vec<Vec<f64>> {
        [false, true]
            .into_iter()
            .filter_map(|pure| {
                let tours = self.construct(model, None, pure);
                if tours.iter().any(|t| t.len() < 3) {
                    return None;
                }
                assignment_from_tours(model, &tours)
            })
            .collect()
    }

    fn at_node(&mut self, model: &MipModel, lp_values: &[f64]) -> Option<Vec<f64>> {
        let pri: Vec<f64> = (0..model.n_nodes)
            .map(|i| model.index_of(VarKind::XNode(i)).map_or(0.0, |v| lp_values[v]))
            .collect();
        let tours = self.construct(model, Some(&pri), false);
        if tours.iter().any(|t| t.len() < 3) {
            return None;
        }
        assignment_from_tours(model, &tours)
    }
}

/// Result of planning an instance end to end.
#[derive(Debug, Clone)]
pub struct Planned {
    pub solution: Solution,
    pub tours: TourSet,
    pub model: MipModel,
}

impl Planned {
    pub fn num_vars(&self) -> usize {
        self.model.num_vars()
    }
}

/// Solver parameters taken from the instance options.
pub fn params_from_instance(instance: &ProblemInstance) -> SolveParams {
    SolveParams { gap_tol: instance.options.gap_tol, time_limit: instance.options.time_limit, node_limit: None }
}

/// Builds, linearizes, strengthens and solves the instance, then decodes the
/// tours and checks them against the reported objective.
pub fn solve_instance(
    instance: &ProblemInstance,
    params: &SolveParams,
    progress: &mut dyn FnMut(&TraceEvent),
) -> Result<Planned, SolveError> {
    let model = build_model(instance)?;
    let model = tighten(&linearize_objective(&model), &instance.network);
    let mut heuristic = TourHeuristic::new(&instance.network);
    let solution = solve_anytime_with(&model, params, Some(&mut heuristic), progress)?;
    if solution.status == SolveStatus::Infeasible {
        return Err(SolveError::Extract(ExtractError::NoSolution(SolveStatus::Infeasible)));
    }
    let tours = extract_tours(&solution, &model, instance)?;
    Ok(Planned { solution, tours, model })
}

/// Number of model rows of a given role (convenience for reports).
pub fn count_rows(model: &MipModel, role: RowRole) -> usize {
    model.count_role(role)
}
