//! Mixed-integer formulation of the tour planning problem.
//!
//! Variables are laid out as all node indicators first, then arcs ordered by
//! `(k, i, j)`, then order variables by `(k, i)`, then linearization pairs by
//! `(i, j)`. The objective is stored as a linear part plus bilinear products
//! of node indicators; [`linearize_objective`] replaces the products with
//! auxiliary binaries.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{blocking_violations, NodeNetwork, ProblemInstance, Violation};

/// Absolute slack when comparing tour lengths to budgets.
pub const BUDGET_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid instance: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("robot {robot}: budget {budget} is below the cheapest round trip {round_trip} from base {base}")]
    BudgetBelowRoundTrip { robot: usize, base: usize, budget: f64, round_trip: f64 },
    #[error("robot {robot}: arc mask leaves base {base} without an outgoing or incoming arc")]
    BaseMasked { robot: usize, base: usize },
    #[error("tour {tour} references node {node}, which does not exist")]
    UnknownNode { tour: usize, node: usize },
    #[error("tour {tour} must start and end at base {base}")]
    NotAtBase { tour: usize, base: usize },
    #[error("{tours} tours given for {robots} robots")]
    TooManyTours { tours: usize, robots: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VarKind {
    XNode(usize),
    XArc { i: usize, j: usize, k: usize },
    UOrder { i: usize, k: usize },
    ZPair { i: usize, j: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Integrality {
    Binary,
    Integer,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarRef {
    pub index: usize,
    pub kind: VarKind,
    pub lo: f64,
    pub hi: f64,
    pub integrality: Integrality,
}

impl VarRef {
    pub fn is_integer(&self) -> bool {
        self.integrality != Integrality::Continuous
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowRole {
    Degree,
    Coupling,
    Base,
    SubtourElimination,
    Budget,
    Linearization,
    Tightening,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
    pub role: RowRole,
    /// Rows that a solver may leave out until a candidate violates them.
    pub lazy: bool,
}

impl Constraint {
    fn new(coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64, role: RowRole) -> Self {
        Self { coeffs, sense, rhs, role, lazy: false }
    }

    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(v, a)| a * x[v]).sum()
    }

    /// Amount by which `x` violates the row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let a = self.activity(x);
        match self.sense {
            Sense::Le => (a - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - a).max(0.0),
            Sense::Eq => (a - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MipModel {
    pub vars: Vec<VarRef>,
    pub constraints: Vec<Constraint>,
    pub linear_obj: Vec<(usize, f64)>,
    pub quad_obj: Vec<(usize, usize, f64)>,
    pub n_nodes: usize,
    pub bases: Vec<usize>,
    pub budgets: Vec<f64>,
    lookup: BTreeMap<VarKind, usize>,
}

impl MipModel {
    pub fn index_of(&self, kind: VarKind) -> Option<usize> {
        self.lookup.get(&kind).copied()
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn is_linear(&self) -> bool {
        self.quad_obj.is_empty()
    }

    pub fn count_kind(&self, pred: impl Fn(&VarKind) -> bool) -> usize {
        self.vars.iter().filter(|v| pred(&v.kind)).count()
    }

    pub fn count_role(&self, role: RowRole) -> usize {
        self.constraints.iter().filter(|c| c.role == role).count()
    }

    /// Objective value (linear plus quadratic part) at `x`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.linear_obj.iter().map(|&(v, c)| c * x[v]).sum();
        let quad: f64 = self.quad_obj.iter().map(|&(a, b, c)| c * x[a] * x[b]).sum();
        lin + quad
    }

    /// Largest constraint or bound violation at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self.constraints.iter().map(|c| c.violation(x)).fold(0.0, f64::max);
        let bounds = self
            .vars
            .iter()
            .map(|v| (v.lo - x[v.index]).max(x[v.index] - v.hi).max(0.0))
            .fold(0.0, f64::max);
        rows.max(bounds)
    }

    /// Largest distance of an integer variable from the nearest integer.
    pub fn max_fractionality(&self, x: &[f64]) -> f64 {
        self.vars
            .iter()
            .filter(|v| v.is_integer())
            .map(|v| (x[v.index] - x[v.index].round()).abs())
            .fold(0.0, f64::max)
    }

    fn push_var(&mut self, kind: VarKind, lo: f64, hi: f64, integrality: Integrality) -> usize {
        let index = self.vars.len();
        self.vars.push(VarRef { index, kind, lo, hi, integrality });
        self.lookup.insert(kind, index);
        index
    }

    /// Arcs `(k, i, j)` present in the model, in variable order.
    pub fn arcs(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        self.vars.iter().filter_map(|v| match v.kind {
            VarKind::XArc { i, j, k } => Some((v.index, k, i, j)),
            _ => None,
        })
    }

    pub fn var_name(&self, index: usize) -> String {
        match self.vars[index].kind {
            VarKind::XNode(i) => format!("x_{i}"),
            VarKind::XArc { i, j, k } => format!("a_{k}_{i}_{j}"),
            VarKind::UOrder { i, k } => format!("u_{k}_{i}"),
            VarKind::ZPair { i, j } => format!("z_{i}_{j}"),
        }
    }

    /// LP-format text: objective, one constraint per line, bounds and
    /// integrality sections.
    pub fn to_lp_string(&self) -> String {
        let mut s = String::new();
        let term = |s: &mut String, c: f64, name: &str, first: bool| {
            if first {
                let _ = write!(s, " {} {}", fmt_num(c), name);
            } else if c < 0.0 {
                let _ = write!(s, " - {} {}", fmt_num(-c), name);
            } else {
                let _ = write!(s, " + {} {}", fmt_num(c), name);
            }
        };
        s.push_str("Maximize\n obj:");
        let mut first = true;
        for &(v, c) in &self.linear_obj {
            term(&mut s, c, &self.var_name(v), first);
            first = false;
        }
        if !self.quad_obj.is_empty() {
            s.push_str(if first { " [" } else { " + [" });
            for (q, &(a, b, c)) in self.quad_obj.iter().enumerate() {
                let name = format!("{} * {}", self.var_name(a), self.var_name(b));
                term(&mut s, 2.0 * c, &name, q == 0);
            }
            s.push_str(" ] / 2");
        } else if first {
            s.push_str(" 0");
        }
        s.push_str("\nSubject To\n");
        for (r, c) in self.constraints.iter().enumerate() {
            let _ = write!(s, " c{r}:");
            for (t, &(v, a)) in c.coeffs.iter().enumerate() {
                term(&mut s, a, &self.var_name(v), t == 0);
            }
            if c.coeffs.is_empty() {
                s.push_str(" 0");
            }
            let op = match c.sense {
                Sense::Le => "<=",
                Sense::Eq => "=",
                Sense::Ge => ">=",
            };
            let _ = writeln!(s, " {op} {}", fmt_num(c.rhs));
        }
        s.push_str("Bounds\n");
        for v in &self.vars {
            let _ = writeln!(s, " {} <= {} <= {}", fmt_num(v.lo), self.var_name(v.index), fmt_num(v.hi));
        }
        for (label, want) in [("Binaries", Integrality::Binary), ("Generals", Integrality::Integer)] {
            let names: Vec<String> =
                self.vars.iter().filter(|v| v.integrality == want).map(|v| self.var_name(v.index)).collect();
            if !names.is_empty() {
                let _ = writeln!(s, "{label}\n {}", names.join(" "));
            }
        }
        s.push_str("End\n");
        s
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x:?}")
}

/// Allowed travel arcs `(i, j, k)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ArcMask {
    pub allowed: BTreeSet<(usize, usize, usize)>,
}

impl ArcMask {
    pub fn contains(&self, i: usize, j: usize, k: usize) -> bool {
        self.allowed.contains(&(i, j, k))
    }
}

/// Hop distances in the undirected correlation graph from `src`.
pub fn hop_distances(network: &NodeNetwork, src: usize) -> Vec<Option<usize>> {
    let adj = network.undirected_neighbors();
    let mut dist = vec![None; network.len()];
    dist[src] = Some(0);
    let mut queue = VecDeque::from([src]);
    while let Some(v) = queue.pop_front() {
        let dv = dist[v].unwrap();
        for &w in &adj[v] {
            if dist[w].is_none() {
                dist[w] = Some(dv + 1);
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Keeps arc `(i, j, k)` when `j` is within `hops` correlation hops of `i`,
/// or when either endpoint is robot `k`'s base.
pub fn restrict_arcs(instance: &ProblemInstance, hops: usize) -> ArcMask {
    let net = &instance.network;
    let n = net.len();
    let hop: Vec<Vec<Option<usize>>> = (0..n).map(|i| hop_distances(net, i)).collect();
    let mut allowed = BTreeSet::new();
    for (k, robot) in instance.robots.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let near = hop[i][j].is_some_and(|h| h <= hops);
                if near || i == robot.base || j == robot.base {
                    allowed.insert((i, j, k));
                }
            }
        }
    }
    ArcMask { allowed }
}

/// Cheapest cycle `base -> j -> base`.
pub fn cheapest_round_trip(network: &NodeNetwork, base: usize) -> f64 {
    (0..network.len())
        .filter(|&j| j != base)
        .map(|j| network.distance(base, j) + network.distance(j, base))
        .fold(f64::INFINITY, f64::min)
}

/// Builds the quadratic model, applying the instance's `restrict_hops`
/// option when it is non-zero.
pub fn build_model(instance: &ProblemInstance) -> Result<MipModel, ModelError> {
    let mask = match instance.options.restrict_hops {
        0 => None,
        h => Some(restrict_arcs(instance, h as usize)),
    };
    build_model_with_mask(instance, mask.as_ref())
}

pub fn build_model_with_mask(instance: &ProblemInstance, mask: Option<&ArcMask>) -> Result<MipModel, ModelError> {
    let errors = blocking_violations(instance);
    if !errors.is_empty() {
        return Err(ModelError::Invalid(errors));
    }
    let net = &instance.network;
    let n = net.len();
    let m = instance.robots.len();
    let bases: Vec<usize> = instance.robots.iter().map(|r| r.base).collect();
    for (k, r) in instance.robots.iter().enumerate() {
        let round_trip = cheapest_round_trip(net, r.base);
        if r.budget + BUDGET_TOL < round_trip {
            return Err(ModelError::BudgetBelowRoundTrip { robot: k, base: r.base, budget: r.budget, round_trip });
        }
    }

    let mut model = MipModel {
        vars: Vec::new(),
        constraints: Vec::new(),
        linear_obj: Vec::new(),
        quad_obj: Vec::new(),
        n_nodes: n,
        bases: bases.clone(),
        budgets: instance.robots.iter().map(|r| r.budget).collect(),
        lookup: BTreeMap::new(),
    };

    for i in 0..n {
        let (lo, hi) = if bases.contains(&i) { (1.0, 1.0) } else { (0.0, 1.0) };
        model.push_var(VarKind::XNode(i), lo, hi, Integrality::Binary);
    }

    // A base only ever hosts its own robot.
    let foreign_base = |node: usize, k: usize| bases.iter().enumerate().any(|(k2, &b)| k2 != k && b == node);
    let mut out_arcs = vec![vec![Vec::new(); n]; m];
    let mut in_arcs = vec![vec![Vec::new(); n]; m];
    let mut arc_list = Vec::new();
    for k in 0..m {
        for i in 0..n {
            for j in 0..n {
                if i == j || foreign_base(i, k) || foreign_base(j, k) {
                    continue;
                }
                if let Some(mask) = mask {
                    if !mask.contains(i, j, k) {
                        continue;
                    }
                }
                let v = model.push_var(VarKind::XArc { i, j, k }, 0.0, 1.0, Integrality::Binary);
                out_arcs[k][i].push(v);
                in_arcs[k][j].push(v);
                arc_list.push((v, k, i, j));
            }
        }
    }
    for (k, &b) in bases.iter().enumerate() {
        if out_arcs[k][b].is_empty() || in_arcs[k][b].is_empty() {
            return Err(ModelError::BaseMasked { robot: k, base: b });
        }
    }

    let nf = n as f64;
    let mut order_var = vec![vec![None; n]; m];
    for k in 0..m {
        for i in 0..n {
            if i != bases[k] && (!out_arcs[k][i].is_empty() || !in_arcs[k][i].is_empty()) {
                order_var[k][i] = Some(model.push_var(VarKind::UOrder { i, k }, 2.0, nf.max(2.0), Integrality::Continuous));
            }
        }
    }

    let ones = |vars: &[usize]| vars.iter().map(|&v| (v, 1.0)).collect::<Vec<_>>();
    if m == 1 {
        let b = bases[0];
        for i in 0..n {
            if i == b {
                continue;
            }
            let mut out = ones(&out_arcs[0][i]);
            out.push((i, -1.0));
            let mut inn = ones(&in_arcs[0][i]);
            inn.push((i, -1.0));
            model.constraints.push(Constraint::new(out, Sense::Eq, 0.0, RowRole::Degree));
            model.constraints.push(Constraint::new(inn, Sense::Eq, 0.0, RowRole::Degree));
        }
        model.constraints.push(Constraint::new(ones(&out_arcs[0][b]), Sense::Eq, 1.0, RowRole::Base));
        model.constraints.push(Constraint::new(ones(&in_arcs[0][b]), Sense::Eq, 1.0, RowRole::Base));
    } else {
        for k in 0..m {
            for i in 0..n {
                if i == bases[k] || (out_arcs[k][i].is_empty() && in_arcs[k][i].is_empty()) {
                    continue;
                }
                let mut bal = ones(&out_arcs[k][i]);
                bal.extend(in_arcs[k][i].iter().map(|&v| (v, -1.0)));
                model.constraints.push(Constraint::new(bal, Sense::Eq, 0.0, RowRole::Degree));
                model.constraints.push(Constraint::new(ones(&out_arcs[k][i]), Sense::Le, 1.0, RowRole::Degree));
            }
        }
        for i in 0..n {
            if bases.contains(&i) {
                continue;
            }
            let mut out: Vec<(usize, f64)> = (0..m).flat_map(|k| ones(&out_arcs[k][i])).collect();
            out.push((i, -1.0));
            let mut inn: Vec<(usize, f64)> = (0..m).flat_map(|k| ones(&in_arcs[k][i])).collect();
            inn.push((i, -1.0));
            model.constraints.push(Constraint::new(out, Sense::Eq, 0.0, RowRole::Coupling));
            model.constraints.push(Constraint::new(inn, Sense::Eq, 0.0, RowRole::Coupling));
        }
        for (k, &b) in bases.iter().enumerate() {
            model.constraints.push(Constraint::new(ones(&out_arcs[k][b]), Sense::Eq, 1.0, RowRole::Base));
            model.constraints.push(Constraint::new(ones(&in_arcs[k][b]), Sense::Eq, 1.0, RowRole::Base));
        }
    }

    for &(v, k, i, j) in &arc_list {
        if let (Some(ui), Some(uj)) = (order_var[k][i], order_var[k][j]) {
            let mut row = Constraint::new(
                vec![(ui, 1.0), (uj, -1.0), (v, nf - 1.0)],
                Sense::Le,
                nf - 2.0,
                RowRole::SubtourElimination,
            );
            row.lazy = true;
            model.constraints.push(row);
        }
    }

    for k in 0..m {
        let coeffs: Vec<(usize, f64)> = arc_list
            .iter()
            .filter(|a| a.1 == k)
            .map(|&(v, _, i, j)| (v, net.distance(i, j)))
            .filter(|&(_, d)| d != 0.0)
            .collect();
        model.constraints.push(Constraint::new(coeffs, Sense::Le, instance.robots[k].budget, RowRole::Budget));
    }

    let mut lin = vec![0.0; n];
    let mut quad: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (i, node) in net.nodes.iter().enumerate() {
        lin[i] += node.utility;
    }
    for e in &net.edges {
        // measuring src while dst stays unvisited credits r_dst * w
        let c = net.nodes[e.dst].utility * e.w;
        if c != 0.0 {
            lin[e.src] += c;
            *quad.entry((e.src, e.dst)).or_insert(0.0) -= c;
        }
    }
    model.linear_obj = lin.into_iter().enumerate().filter(|&(_, c)| c != 0.0).collect();
    model.quad_obj = quad.into_iter().filter(|&(_, c)| c != 0.0).map(|((a, b), c)| (a, b, c)).collect();
    Ok(model)
}

/// Replaces every product `c * x_a * x_b` by `c * (x_a - z_ab)` where the new
/// binary `z_ab` stands for `x_a * (1 - x_b)`. Linear models are returned
/// unchanged.
pub fn linearize_objective(model: &MipModel) -> MipModel {
    let mut out = model.clone();
    if model.quad_obj.is_empty() {
        return out;
    }
    let node_of = |v: usize| match model.vars[v].kind {
        VarKind::XNode(i) => i,
        other => panic!("quadratic term on non-node variable {other:?}"),
    };
    let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for &(a, b, c) in &model.quad_obj {
        *merged.entry((node_of(a), node_of(b))).or_insert(0.0) += c;
    }
    let mut lin: BTreeMap<usize, f64> = model.linear_obj.iter().copied().collect();
    out.quad_obj.clear();
    for ((i, j), c) in merged {
        if c == 0.0 {
            continue;
        }
        let (xi, xj) = (model.lookup[&VarKind::XNode(i)], model.lookup[&VarKind::XNode(j)]);
        let z = out.push_var(VarKind::ZPair { i, j }, 0.0, 1.0, Integrality::Binary);
        out.constraints.push(Constraint::new(vec![(z, 1.0), (xi, -1.0)], Sense::Le, 0.0, RowRole::Linearization));
        out.constraints.push(Constraint::new(
            vec![(z, 2.0), (xi, -1.0), (xj, 1.0)],
            Sense::Le,
            1.0,
            RowRole::Linearization,
        ));
        if c > 0.0 {
            out.constraints.push(Constraint::new(
                vec![(z, 1.0), (xi, -1.0), (xj, 1.0)],
                Sense::Ge,
                0.0,
                RowRole::Linearization,
            ));
        }
        *lin.entry(xi).or_insert(0.0) += c;
        *lin.entry(z).or_insert(0.0) -= c;
    }
    out.linear_obj = lin.into_iter().filter(|&(_, c)| c.abs() > 1e-15).collect();
    out
}

/// Strengthens a linearized model without changing its integer optima.
///
/// Adds `z_ij + x_j <= 1` and, for each pair, `z_ij` plus the arcs joining
/// `i` and `j` is at most `x_i` (split per direction when a base is
/// involved, since a base round trip may use both). Arcs and nodes that no
/// robot can reach within its budget are fixed to zero; this needs the
/// triangle inequality and is skipped otherwise.
pub fn tighten(model: &MipModel, network: &NodeNetwork) -> MipModel {
    let mut out = model.clone();
    let n = model.n_nodes;
    let is_base = |v: usize| model.bases.contains(&v);
    let mut between: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (v, _, i, j) in model.arcs() {
        between.entry((i, j)).or_default().push(v);
    }
    let pairs: Vec<(usize, usize, usize)> = model
        .vars
        .iter()
        .filter_map(|v| match v.kind {
            VarKind::ZPair { i, j } => Some((v.index, i, j)),
            _ => None,
        })
        .collect();
    for (z, i, j) in pairs {
        let xi = model.lookup[&VarKind::XNode(i)];
        let xj = model.lookup[&VarKind::XNode(j)];
        out.constraints.push(Constraint::new(vec![(z, 1.0), (xj, 1.0)], Sense::Le, 1.0, RowRole::Tightening));
        let fwd = between.get(&(i, j)).cloned().unwrap_or_default();
        let bwd = between.get(&(j, i)).cloned().unwrap_or_default();
        let groups = if is_base(i) || is_base(j) { vec![fwd, bwd] } else { vec![[fwd, bwd].concat()] };
        for arcs in groups {
            if arcs.is_empty() {
                continue;
            }
            let mut coeffs = vec![(z, 1.0), (xi, -1.0)];
            coeffs.extend(arcs.into_iter().map(|a| (a, 1.0)));
            out.constraints.push(Constraint::new(coeffs, Sense::Le, 0.0, RowRole::Tightening));
        }
    }

    if network.len() == n && network.satisfies_triangle_inequality() {
        let mut reachable = vec![false; n];
        for (v, k, i, j) in model.arcs() {
            let b = model.bases[k];
            let cycle = network.distance(b, i) + network.distance(i, j) + network.distance(j, b);
            if cycle > model.budgets[k] + BUDGET_TOL {
                out.vars[v].hi = 0.0;
            } else {
                reachable[i] = true;
                reachable[j] = true;
            }
        }
        for (i, &r) in reachable.iter().enumerate() {
            if !r && !is_base(i) {
                let xi = model.lookup[&VarKind::XNode(i)];
                out.vars[xi].hi = 0.0;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TourEvaluation {
    pub utility: f64,
    pub lengths: Vec<f64>,
    pub feasible: bool,
}

/// Utility of a visited set: full reward for visited nodes, correlation
/// credit `r_i * w_ji` for each unvisited `i` with a visited neighbor `j`.
pub fn utility_of_visited(network: &NodeNetwork, visited: &[bool]) -> f64 {
    let mut u: f64 = network.nodes.iter().zip(visited).filter(|(_, &v)| v).map(|(n, _)| n.utility).sum();
    for e in &network.edges {
        if visited[e.src] && !visited[e.dst] {
            u += network.nodes[e.dst].utility * e.w;
        }
    }
    u
}

pub fn tour_length(network: &NodeNetwork, tour: &[usize]) -> f64 {
    tour.windows(2).map(|w| network.distance(w[0], w[1])).sum()
}

/// Evaluates closed tours, one per robot in robot order. A tour is written
/// `[base, v1, ..., base]`; `[base]` alone stays at the base.
pub fn evaluate_tours(instance: &ProblemInstance, tours: &[Vec<usize>]) -> Result<TourEvaluation, ModelError> {
    let net = &instance.network;
    let n = net.len();
    if tours.len() > instance.robots.len() {
        return Err(ModelError::TooManyTours { tours: tours.len(), robots: instance.robots.len() });
    }
    let mut visited = vec![false; n];
    let mut feasible = true;
    let mut lengths = Vec::with_capacity(tours.len());
    for (k, tour) in tours.iter().enumerate() {
        if let Some(&node) = tour.iter().find(|&&v| v >= n) {
            return Err(ModelError::UnknownNode { tour: k, node });
        }
        let base = instance.robots[k].base;
        if tour.first() != Some(&base) || tour.last() != Some(&base) {
            return Err(ModelError::NotAtBase { tour: k, base });
        }
        let inner = if tour.len() >= 2 { &tour[..tour.len() - 1] } else { &tour[..] };
        for &v in inner {
            if visited[v] {
                feasible = false;
            }
            visited[v] = true;
        }
        let len = tour_length(net, tour);
        if len > instance.robots[k].budget + BUDGET_TOL {
            feasible = false;
        }
        lengths.push(len);
    }
    Ok(TourEvaluation { utility: utility_of_visited(net, &visited), lengths, feasible })
}

impl fmt::Display for VarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            VarKind::XNode(i) => write!(f, "x_{i}"),
            VarKind::XArc { i, j, k } => write!(f, "a_{k}_{i}_{j}"),
            VarKind::UOrder { i, k } => write!(f, "u_{k}_{i}"),
            VarKind::ZPair { i, j } => write!(f, "z_{i}_{j}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{regular_grid, RobotSpec};

    fn grid3(budget: f64) -> ProblemInstance {
        ProblemInstance::single(regular_grid(3, 3, 1.0).unwrap(), 1, budget)
    }

    #[test]
    fn grid3_counts() {
        let m = build_model(&grid3(4.0)).unwrap();
        assert_eq!(m.count_kind(|k| matches!(k, VarKind::XNode(_))), 9);
        assert_eq!(m.count_kind(|k| matches!(k, VarKind::XArc { .. })), 72);
        assert_eq!(m.count_kind(|k| matches!(k, VarKind::UOrder { .. })), 8);
        assert_eq!(m.num_vars(), 89);
        assert_eq!(m.count_role(RowRole::Degree), 16);
        assert_eq!(m.count_role(RowRole::Base), 2);
        assert_eq!(m.count_role(RowRole::SubtourElimination), 56);
        assert_eq!(m.count_role(RowRole::Budget), 1);
        assert_eq!(m.constraints.len(), 75);
        let base = &m.vars[m.index_of(VarKind::XNode(1)).unwrap()];
        assert_eq!((base.lo, base.hi), (1.0, 1.0));
    }

    #[test]
    fn variable_layout_is_ordered() {
        let mut inst = ProblemInstance::single(regular_grid(2, 3, 1.0).unwrap(), 0, 5.0);
        inst.robots.push(RobotSpec { base: 5, budget: 5.0 });
        let m = linearize_objective(&build_model(&inst).unwrap());
        let rank = |k: &VarKind| match k {
            VarKind::XNode(_) => 0,
            VarKind::XArc { .. } => 1,
            VarKind::UOrder { .. } => 2,
            VarKind::ZPair { .. } => 3,
        };
        for w in m.vars.windows(2) {
            let (a, b) = (&w[0].kind, &w[1].kind);
            assert!(rank(a) <= rank(b));
            match (a, b) {
                (VarKind::XArc { i, j, k }, VarKind::XArc { i: i2, j: j2, k: k2 }) => {
                    assert!((k, i, j) < (k2, i2, j2))
                }
                (VarKind::UOrder { i, k }, VarKind::UOrder { i: i2, k: k2 }) => assert!((k, i) < (k2, i2)),
                (VarKind::ZPair { i, j }, VarKind::ZPair { i: i2, j: j2 }) => assert!((i, j) < (i2, j2)),
                _ => {}
            }
        }
        for (p, v) in m.vars.iter().enumerate() {
            assert_eq!(v.index, p);
        }
        // robot 0 never touches robot 1's base
        assert!(m.index_of(VarKind::XArc { i: 0, j: 5, k: 0 }).is_none());
        assert!(m.index_of(VarKind::XArc { i: 5, j: 4, k: 1 }).is_some());
    }

    #[test]
    fn budget_below_round_trip_is_rejected() {
        match build_model(&grid3(1.9)) {
            Err(ModelError::BudgetBelowRoundTrip { robot: 0, base: 1, round_trip, .. }) => assert_eq!(round_trip, 2.0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(build_model(&grid3(2.0)).is_ok());
    }

    #[test]
    fn invalid_instance_is_rejected() {
        let mut inst = grid3(4.0);
        inst.robots.push(RobotSpec { base: 1, budget: 4.0 });
        assert!(matches!(build_model(&inst), Err(ModelError::Invalid(_))));
    }

    #[test]
    fn objective_matches_direct_utility() {
        let inst = grid3(4.0);
        let m = build_model(&inst).unwrap();
        for mask in 0u32..512 {
            let visited: Vec<bool> = (0..9).map(|i| mask >> i & 1 == 1).collect();
            let mut x = vec![0.0; m.num_vars()];
            for i in 0..9 {
                x[i] = if visited[i] { 1.0 } else { 0.0 };
            }
            let want = utility_of_visited(&inst.network, &visited);
            assert!((m.objective(&x) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn linearization_constraint_arithmetic() {
        let m = linearize_objective(&build_model(&grid3(4.0)).unwrap());
        assert!(m.is_linear());
        let z = m.index_of(VarKind::ZPair { i: 1, j: 4 }).unwrap();
        let rows: Vec<&Constraint> = m.constraints.iter().filter(|c| c.coeffs.iter().any(|&(v, _)| v == z)).collect();
        assert_eq!(rows.len(), 2);
        let mut x = vec![0.0; m.num_vars()];
        let ok = |x: &[f64]| rows.iter().all(|r| r.violation(x) == 0.0);
        x[1] = 1.0;
        x[z] = 1.0;
        assert!(ok(&x));
        x[4] = 1.0;
        assert!(!ok(&x));
        x[1] = 0.0;
        x[4] = 0.0;
        assert!(!ok(&x));
        x[z] = 0.0;
        assert!(ok(&x));
        assert!(linearize_objective(&m) == m);
    }

    #[test]
    fn restrict_arcs_examples() {
        let inst = grid3(4.0);
        let one = restrict_arcs(&inst, 1);
        for &(i, j, _) in &one.allowed {
            let lattice = inst.network.distance(i, j) == 1.0;
            assert!(lattice || i == 1 || j == 1, "arc {i}->{j}");
        }
        let two = restrict_arcs(&inst, 2);
        let from0: BTreeSet<usize> = two.allowed.iter().filter(|a| a.0 == 0).map(|a| a.1).collect();
        assert_eq!(from0, BTreeSet::from([1, 2, 3, 4, 6]));
        let full = restrict_arcs(&ProblemInstance::single(regular_grid(2, 2, 1.0).unwrap(), 0, 4.0), 3);
        assert_eq!(full.allowed.len(), 12);
    }

    #[test]
    fn restricted_model_is_smaller_and_keeps_base_arcs() {
        let mut inst = ProblemInstance::single(regular_grid(4, 4, 1.0).unwrap(), 0, 6.0);
        let full = build_model(&inst).unwrap();
        inst.options.restrict_hops = 1;
        let small = build_model(&inst).unwrap();
        assert!(small.num_vars() < full.num_vars());
        for j in 1..16 {
            assert!(small.index_of(VarKind::XArc { i: 0, j, k: 0 }).is_some());
            assert!(small.index_of(VarKind::XArc { i: j, j: 0, k: 0 }).is_some());
        }
        let mut masked = ArcMask::default();
        masked.allowed.insert((1, 2, 0));
        assert!(matches!(
            build_model_with_mask(&inst, Some(&masked)),
            Err(ModelError::BaseMasked { robot: 0, base: 0 })
        ));
    }

    #[test]
    fn evaluate_figure_tours() {
        let inst = grid3(6.0);
        let short = evaluate_tours(&inst, &[vec![1, 4, 1]]).unwrap();
        assert!((short.utility - 4.0).abs() < 1e-12);
        assert_eq!(short.lengths, vec![2.0]);
        assert!(short.feasible);
        let diamond = evaluate_tours(&inst, &[vec![1, 5, 7, 3, 1]]).unwrap();
        assert!((diamond.utility - 9.0).abs() < 1e-12);
        assert!((diamond.lengths[0] - 4.0 * 2f64.sqrt()).abs() < 1e-12);
        let none = evaluate_tours(&inst, &[]).unwrap();
        assert_eq!(none.utility, 0.0);
        let repeat = evaluate_tours(&inst, &[vec![1, 4, 1, 4, 1]]).unwrap();
        assert!(!repeat.feasible);
        assert!(matches!(evaluate_tours(&inst, &[vec![0, 4, 0]]), Err(ModelError::NotAtBase { .. })));
        assert!(matches!(evaluate_tours(&inst, &[vec![1, 40, 1]]), Err(ModelError::UnknownNode { .. })));
    }

    #[test]
    fn tighten_fixes_unreachable_arcs() {
        let inst = ProblemInstance::single(regular_grid(4, 4, 1.0).unwrap(), 0, 4.0);
        let lin = linearize_objective(&build_model(&inst).unwrap());
        let t = tighten(&lin, &inst.network);
        assert_eq!(t.num_vars(), lin.num_vars());
        let far = t.index_of(VarKind::XNode(15)).unwrap();
        assert_eq!(t.vars[far].hi, 0.0);
        let near = t.index_of(VarKind::XArc { i: 0, j: 1, k: 0 }).unwrap();
        assert_eq!(t.vars[near].hi, 1.0);
        assert!(t.count_role(RowRole::Tightening) > 0);
    }

    #[test]
    fn lp_dump_names() {
        let m = linearize_objective(&build_model(&grid3(3.0)).unwrap());
        let s = m.to_lp_string();
        for name in ["x_4", "a_0_1_4", "u_0_4", "z_1_4", "Subject To", "Binaries", "End"] {
            assert!(s.contains(name), "missing {name}");
        }
        let q = build_model(&grid3(3.0)).unwrap().to_lp_string();
        assert!(q.contains("x_1 * x_4"));
        assert_eq!(s.lines().filter(|l| l.starts_with(" c")).count(), m.constraints.len());
    }
}
