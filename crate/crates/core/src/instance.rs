//! Node networks, robots and problem instances.
//!
//! Correlation edges and travel costs are independent: edges come from the
//! network's adjacency structure, while robots may fly straight between any
//! pair of nodes at the cost stored in the distance matrix.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack allowed on the per-node incoming weight sum.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("grid needs at least 2 rows and 2 columns, got {rows}x{cols}")]
    GridTooSmall { rows: usize, cols: usize },
    #[error("edge length must be positive, got {0}")]
    BadEdgeLength(f64),
    #[error("perturbation {noise} must be non-negative and below half the edge length {edge_len}")]
    BadNoise { noise: f64, edge_len: f64 },
    #[error("invalid instance: {}", format_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("malformed instance file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub pos: [f64; 2],
    pub utility: f64,
}

/// Directed correlation edge: measuring `src` tells us `w` of `dst`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeNetwork {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    distance: Vec<f64>,
    /// True when the distance matrix was supplied rather than derived from
    /// positions; only then is it written back out.
    explicit_distance: bool,
}

impl NodeNetwork {
    /// Builds a network with Euclidean travel costs between node positions.
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>) -> Self {
        let distance = euclidean_matrix(&nodes);
        Self { nodes, edges, distance, explicit_distance: false }
    }

    /// Builds a network with a caller-supplied (possibly asymmetric) cost matrix.
    pub fn with_distance(nodes: Vec<Node>, edges: Vec<Edge>, distance: Vec<Vec<f64>>) -> Self {
        let distance = distance.into_iter().flatten().collect();
        Self { nodes, edges, distance, explicit_distance: true }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distance[i * self.nodes.len() + j]
    }

    pub fn distance_rows(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        (0..n).map(|i| self.distance[i * n..(i + 1) * n].to_vec()).collect()
    }

    pub fn has_explicit_distance(&self) -> bool {
        self.explicit_distance
    }

    pub fn utilities(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.utility).collect()
    }

    /// Incoming correlation neighbors of every node (the sets `N_i`), sorted.
    pub fn in_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.len()];
        for e in &self.edges {
            if e.dst < nb.len() {
                nb[e.dst].push(e.src);
            }
        }
        for list in &mut nb {
            list.sort_unstable();
            list.dedup();
        }
        nb
    }

    /// Undirected adjacency (union of both edge directions), sorted.
    pub fn undirected_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![BTreeSet::new(); self.len()];
        for e in &self.edges {
            if e.src < nb.len() && e.dst < nb.len() && e.src != e.dst {
                nb[e.src].insert(e.dst);
                nb[e.dst].insert(e.src);
            }
        }
        nb.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.len();
        (0..n).all(|i| (0..i).all(|j| self.distance(i, j) == self.distance(j, i)))
    }

    /// Whether `d(i,k) <= d(i,j) + d(j,k)` holds for all triples (with a
    /// relative slack for rounding in Euclidean matrices).
    pub fn satisfies_triangle_inequality(&self) -> bool {
        let n = self.len();
        for i in 0..n {
            for j in 0..n {
                let dij = self.distance(i, j);
                for k in 0..n {
                    let direct = self.distance(i, k);
                    if direct > dij + self.distance(j, k) + 1e-9 * (1.0 + direct) {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Replaces the distance matrix with Euclidean distances of the current
    /// positions.
    pub fn recompute_distances(&mut self) {
        self.distance = euclidean_matrix(&self.nodes);
        self.explicit_distance = false;
    }
}

fn euclidean_matrix(nodes: &[Node]) -> Vec<f64> {
    let n = nodes.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let dx = nodes[i].pos[0] - nodes[j].pos[0];
                let dy = nodes[i].pos[1] - nodes[j].pos[1];
                d[i * n + j] = dx.hypot(dy);
            }
        }
    }
    d
}

/// Lattice of `rows x cols` nodes with unit utilities, 4-neighborhood
/// correlation edges in both directions and `1/|N_i|` weights.
///
/// Node `r * cols + c` sits at `(c, rows - 1 - r) * edge_len`, so row 0 is
/// the top row.
pub fn regular_grid(rows: usize, cols: usize, edge_len: f64) -> Result<NodeNetwork, InstanceError> {
    if rows < 2 || cols < 2 {
        return Err(InstanceError::GridTooSmall { rows, cols });
    }
    if !(edge_len > 0.0) || !edge_len.is_finite() {
        return Err(InstanceError::BadEdgeLength(edge_len));
    }
    let mut nodes = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            nodes.push(Node {
                id: r * cols + c,
                pos: [c as f64 * edge_len, (rows - 1 - r) as f64 * edge_len],
                utility: 1.0,
            });
        }
    }
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let dst = r * cols + c;
            let mut srcs = Vec::with_capacity(4);
            if r > 0 {
                srcs.push(dst - cols);
            }
            if c > 0 {
                srcs.push(dst - 1);
            }
            if c + 1 < cols {
                srcs.push(dst + 1);
            }
            if r + 1 < rows {
                srcs.push(dst + cols);
            }
            edges.extend(srcs.into_iter().map(|src| Edge { src, dst, w: 0.0 }));
        }
    }
    let net = NodeNetwork::new(nodes, edges);
    Ok(uniform_neighbor_weights(&net))
}

/// A regular grid whose node positions are jittered by independent uniform
/// offsets in `[-noise, noise]^2`, drawn from a seeded generator.
pub fn perturbed_grid(
    rows: usize,
    cols: usize,
    edge_len: f64,
    noise: f64,
    seed: u64,
) -> Result<NodeNetwork, InstanceError> {
    if !(noise >= 0.0) || noise >= edge_len / 2.0 {
        return Err(InstanceError::BadNoise { noise, edge_len });
    }
    let mut net = regular_grid(rows, cols, edge_len)?;
    if noise == 0.0 {
        return Ok(net);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for node in &mut net.nodes {
        node.pos[0] += rng.gen_range(-noise..=noise);
        node.pos[1] += rng.gen_range(-noise..=noise);
    }
    net.recompute_distances();
    Ok(net)
}

/// Sets every incoming weight of node `i` to `1/|N_i|`. Nodes without
/// incoming edges are left alone (validation reports them).
pub fn uniform_neighbor_weights(network: &NodeNetwork) -> NodeNetwork {
    let mut indegree = vec![0usize; network.len()];
    for e in &network.edges {
        if e.dst < indegree.len() {
            indegree[e.dst] += 1;
        }
    }
    let mut out = network.clone();
    for e in &mut out.edges {
        if let Some(&k) = indegree.get(e.dst) {
            e.w = 1.0 / k as f64;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    pub base: usize,
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    #[serde(default)]
    pub linearize: bool,
    /// 0 disables the travel restriction; 1..=3 limits hops per move.
    #[serde(default)]
    pub restrict_hops: u8,
    #[serde(default)]
    pub gap_tol: f64,
    /// Seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_limit: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { linearize: false, restrict_hops: 0, gap_tol: 0.0, time_limit: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub network: NodeNetwork,
    pub robots: Vec<RobotSpec>,
    pub options: SolverOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NodeIdMismatch { position: usize, id: usize },
    BadUtility { node: usize, utility: f64 },
    BadPosition { node: usize },
    SelfEdge { node: usize },
    EdgeEndpoint { src: usize, dst: usize },
    DuplicateEdge { src: usize, dst: usize },
    WeightOutOfRange { src: usize, dst: usize, w: f64 },
    WeightSumExceeded { node: usize, sum: f64 },
    DistanceShape { expected: usize, found: usize },
    DistanceDiagonal { node: usize, value: f64 },
    BadDistance { from: usize, to: usize, value: f64 },
    NoRobots,
    InvalidBase { robot: usize, base: usize },
    BadBudget { robot: usize, budget: f64 },
    DuplicateBase { first: usize, second: usize, base: usize },
    BadGapTolerance(f64),
    BadRestrictHops(u8),
    BadTimeLimit(f64),
    IsolatedNode { node: usize },
}

impl Violation {
    pub fn severity(&self) -> Severity {
        match self {
            Violation::IsolatedNode { .. } => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            NodeIdMismatch { position, id } => write!(f, "node at position {position} has id {id}"),
            BadUtility { node, utility } => write!(f, "node {node}: utility {utility} is not a finite non-negative number"),
            BadPosition { node } => write!(f, "node {node}: non-finite position"),
            SelfEdge { node } => write!(f, "self edge at node {node}"),
            EdgeEndpoint { src, dst } => write!(f, "edge {src}->{dst} references a missing node"),
            DuplicateEdge { src, dst } => write!(f, "duplicate edge {src}->{dst}"),
            WeightOutOfRange { src, dst, w } => write!(f, "edge {src}->{dst}: weight {w} outside (0, 1]"),
            WeightSumExceeded { node, sum } => write!(f, "node {node}: incoming weights sum to {sum} > 1"),
            DistanceShape { expected, found } => write!(f, "distance matrix has {found} entries, expected {expected}"),
            DistanceDiagonal { node, value } => write!(f, "distance diagonal at {node} is {value}, expected 0"),
            BadDistance { from, to, value } => write!(f, "distance {from}->{to} = {value} is not finite and non-negative"),
            NoRobots => write!(f, "instance has no robots"),
            InvalidBase { robot, base } => write!(f, "robot {robot}: base {base} is not a node"),
            BadBudget { robot, budget } => write!(f, "robot {robot}: budget {budget} is negative or not finite"),
            DuplicateBase { first, second, base } => write!(f, "robots {first} and {second} share base {base}"),
            BadGapTolerance(g) => write!(f, "gap tolerance {g} outside [0, 1)"),
            BadRestrictHops(h) => write!(f, "restrict_hops {h} outside 0..=3"),
            BadTimeLimit(t) => write!(f, "time limit {t} must be positive"),
            IsolatedNode { node } => write!(f, "node {node} has no incoming correlation edges"),
        }
    }
}

/// Checks every structural invariant. Empty result means the instance is
/// usable; entries with [`Severity::Warning`] do not block solving.
pub fn validate_instance(instance: &ProblemInstance) -> Vec<Violation> {
    let mut out = validate_network(&instance.network);
    let n = instance.network.len();
    if instance.robots.is_empty() {
        out.push(Violation::NoRobots);
    }
    for (k, r) in instance.robots.iter().enumerate() {
        if r.base >= n {
            out.push(Violation::InvalidBase { robot: k, base: r.base });
        }
        if !(r.budget >= 0.0) || !r.budget.is_finite() {
            out.push(Violation::BadBudget { robot: k, budget: r.budget });
        }
        for (k2, r2) in instance.robots.iter().enumerate().skip(k + 1) {
            if r.base == r2.base {
                out.push(Violation::DuplicateBase { first: k, second: k2, base: r.base });
            }
        }
    }
    let o = &instance.options;
    if !(o.gap_tol >= 0.0 && o.gap_tol < 1.0) {
        out.push(Violation::BadGapTolerance(o.gap_tol));
    }
    if o.restrict_hops > 3 {
        out.push(Violation::BadRestrictHops(o.restrict_hops));
    }
    if let Some(t) = o.time_limit {
        if !(t > 0.0) {
            out.push(Violation::BadTimeLimit(t));
        }
    }
    out
}

pub fn validate_network(net: &NodeNetwork) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = net.len();
    for (p, node) in net.nodes.iter().enumerate() {
        if node.id != p {
            out.push(Violation::NodeIdMismatch { position: p, id: node.id });
        }
        if !(node.utility >= 0.0) || !node.utility.is_finite() {
            out.push(Violation::BadUtility { node: p, utility: node.utility });
        }
        if !node.pos.iter().all(|c| c.is_finite()) {
            out.push(Violation::BadPosition { node: p });
        }
    }
    let mut seen = BTreeSet::new();
    let mut sums = vec![0.0; n];
    let mut indeg = vec![0usize; n];
    for e in &net.edges {
        if e.src >= n || e.dst >= n {
            out.push(Violation::EdgeEndpoint { src: e.src, dst: e.dst });
            continue;
        }
        if e.src == e.dst {
            out.push(Violation::SelfEdge { node: e.src });
            continue;
        }
        if !seen.insert((e.src, e.dst)) {
            out.push(Violation::DuplicateEdge { src: e.src, dst: e.dst });
        }
        if !(e.w > 0.0 && e.w <= 1.0) {
            out.push(Violation::WeightOutOfRange { src: e.src, dst: e.dst, w: e.w });
        }
        sums[e.dst] += e.w;
        indeg[e.dst] += 1;
    }
    for (i, &s) in sums.iter().enumerate() {
        if s > 1.0 + WEIGHT_SUM_TOL {
            out.push(Violation::WeightSumExceeded { node: i, sum: s });
        }
    }
    if net.distance.len() != n * n {
        out.push(Violation::DistanceShape { expected: n * n, found: net.distance.len() });
    } else {
        for i in 0..n {
            for j in 0..n {
                let v = net.distance(i, j);
                if i == j {
                    if v != 0.0 {
                        out.push(Violation::DistanceDiagonal { node: i, value: v });
                    }
                } else if !(v >= 0.0) || !v.is_finite() {
                    out.push(Violation::BadDistance { from: i, to: j, value: v });
                }
            }
        }
    }
    for (i, &k) in indeg.iter().enumerate() {
        if k == 0 && n > 1 {
            out.push(Violation::IsolatedNode { node: i });
        }
    }
    out
}

/// Violations that block solving (warnings filtered out).
pub fn blocking_violations(instance: &ProblemInstance) -> Vec<Violation> {
    validate_instance(instance)
        .into_iter()
        .filter(|v| v.severity() == Severity::Error)
        .collect()
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    distance: Option<Vec<Vec<f64>>>,
    robots: Vec<RobotSpec>,
    #[serde(default)]
    options: SolverOptions,
}

impl ProblemInstance {
    pub fn new(network: NodeNetwork, robots: Vec<RobotSpec>) -> Self {
        Self { network, robots, options: SolverOptions::default() }
    }

    pub fn single(network: NodeNetwork, base: usize, budget: f64) -> Self {
        Self::new(network, vec![RobotSpec { base, budget }])
    }

    pub fn with_budgets(&self, budget: f64) -> Self {
        let mut out = self.clone();
        for r in &mut out.robots {
            r.budget = budget;
        }
        out
    }

    /// Parses the JSON instance format. Distances are recomputed from node
    /// positions unless an explicit `distance` matrix is present.
    pub fn from_json_str(s: &str) -> Result<Self, InstanceError> {
        let file: InstanceFile = serde_json::from_str(s)?;
        let network = match file.distance {
            Some(d) => {
                let n = file.nodes.len();
                if d.len() != n || d.iter().any(|row| row.len() != n) {
                    let found = d.iter().map(|r| r.len()).sum();
                    return Err(InstanceError::Invalid(vec![Violation::DistanceShape {
                        expected: n * n,
                        found,
                    }]));
                }
                NodeNetwork::with_distance(file.nodes, file.edges, d)
            }
            None => NodeNetwork::new(file.nodes, file.edges),
        };
        Ok(Self { network, robots: file.robots, options: file.options })
    }

    pub fn to_json_string(&self) -> String {
        let file = InstanceFile {
            nodes: self.network.nodes.clone(),
            edges: self.network.edges.clone(),
            distance: self.network.explicit_distance.then(|| self.network.distance_rows()),
            robots: self.robots.clone(),
            options: self.options.clone(),
        };
        serde_json::to_string_pretty(&file).expect("instance serialization cannot fail")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, InstanceError> {
        let s = std::fs::read_to_string(path)?;
        Self::from_json_str(&s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), InstanceError> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    /// Fails with [`InstanceError::Invalid`] when any blocking violation exists.
    pub fn check(&self) -> Result<(), InstanceError> {
        let v = blocking_violations(self);
        if v.is_empty() {
            Ok(())
        } else {
            Err(InstanceError::Invalid(v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn incoming(net: &NodeNetwork, i: usize) -> Vec<f64> {
        net.edges.iter().filter(|e| e.dst == i).map(|e| e.w).collect()
    }

    #[test]
    fn grid_3x3_weights_follow_degree() {
        let g = regular_grid(3, 3, 1.0).unwrap();
        assert_eq!(g.len(), 9);
        for corner in [0, 2, 6, 8] {
            assert_eq!(incoming(&g, corner), vec![0.5, 0.5]);
        }
        for mid in [1, 3, 5, 7] {
            let w = incoming(&g, mid);
            assert_eq!(w.len(), 3);
            assert!(w.iter().all(|&x| x == 1.0 / 3.0));
        }
        assert_eq!(incoming(&g, 4), vec![0.25; 4]);
    }

    #[test]
    fn grid_2x2_diagonal() {
        let g = regular_grid(2, 2, 1.0).unwrap();
        for i in 0..4 {
            assert_eq!(incoming(&g, i), vec![0.5, 0.5]);
        }
        assert_eq!(g.distance(0, 3), 2f64.sqrt());
        assert_eq!(g.distance(1, 2), 2f64.sqrt());
    }

    #[test]
    fn grid_4x4_edge_count() {
        // 4 rows x 3 horizontal + 3 x 4 vertical adjacencies, both directions
        let g = regular_grid(4, 4, 1.0).unwrap();
        assert_eq!(g.edges.len(), 2 * (4 * 3 + 3 * 4));
        assert_eq!(g.edges.len(), 48);
    }

    #[test]
    fn grid_rejects_bad_parameters() {
        assert!(matches!(regular_grid(1, 3, 1.0), Err(InstanceError::GridTooSmall { .. })));
        assert!(matches!(regular_grid(3, 1, 1.0), Err(InstanceError::GridTooSmall { .. })));
        assert!(matches!(regular_grid(3, 3, 0.0), Err(InstanceError::BadEdgeLength(_))));
        assert!(matches!(regular_grid(3, 3, -1.0), Err(InstanceError::BadEdgeLength(_))));
    }

    #[test]
    fn perturbed_zero_noise_is_regular() {
        assert_eq!(perturbed_grid(5, 5, 1.0, 0.0, 99).unwrap(), regular_grid(5, 5, 1.0).unwrap());
    }

    #[test]
    fn perturbed_is_deterministic() {
        let a = ProblemInstance::single(perturbed_grid(5, 5, 1.0, 0.3, 7).unwrap(), 0, 5.0);
        let b = ProblemInstance::single(perturbed_grid(5, 5, 1.0, 0.3, 7).unwrap(), 0, 5.0);
        assert_eq!(a.to_json_string().as_bytes(), b.to_json_string().as_bytes());
        let c = perturbed_grid(5, 5, 1.0, 0.3, 8).unwrap();
        assert_ne!(a.network, c);
    }

    #[test]
    fn perturbed_stays_near_lattice() {
        let reg = regular_grid(4, 4, 1.0).unwrap();
        let p = perturbed_grid(4, 4, 1.0, 0.3, 1).unwrap();
        for (a, b) in reg.nodes.iter().zip(&p.nodes) {
            let linf = (a.pos[0] - b.pos[0]).abs().max((a.pos[1] - b.pos[1]).abs());
            assert!(linf <= 0.3, "node {} moved {linf}", a.id);
        }
        assert_eq!(reg.edges, p.edges);
        for i in 0..16 {
            for j in 0..16 {
                let want = (p.nodes[i].pos[0] - p.nodes[j].pos[0]).hypot(p.nodes[i].pos[1] - p.nodes[j].pos[1]);
                assert_eq!(p.distance(i, j), want);
            }
        }
    }

    #[test]
    fn perturbed_rejects_large_noise() {
        assert!(matches!(perturbed_grid(3, 3, 1.0, 0.5, 0), Err(InstanceError::BadNoise { .. })));
        assert!(matches!(perturbed_grid(3, 3, 1.0, -0.1, 0), Err(InstanceError::BadNoise { .. })));
    }

    fn path_graph() -> NodeNetwork {
        let nodes = (0..3).map(|i| Node { id: i, pos: [i as f64, 0.0], utility: 1.0 }).collect();
        let edges = vec![
            Edge { src: 0, dst: 1, w: 0.0 },
            Edge { src: 2, dst: 1, w: 0.0 },
            Edge { src: 1, dst: 0, w: 0.0 },
            Edge { src: 1, dst: 2, w: 0.0 },
        ];
        NodeNetwork::new(nodes, edges)
    }

    #[test]
    fn uniform_weights_small_graphs() {
        let g = uniform_neighbor_weights(&path_graph());
        assert_eq!(incoming(&g, 1), vec![0.5, 0.5]);
        assert_eq!(incoming(&g, 0), vec![1.0]);

        let nodes = (0..2).map(|i| Node { id: i, pos: [i as f64, 0.0], utility: 1.0 }).collect();
        let single = NodeNetwork::new(nodes, vec![Edge { src: 0, dst: 1, w: 0.3 }]);
        let single = uniform_neighbor_weights(&single);
        assert_eq!(single.edges[0].w, 1.0);
        let warnings = validate_network(&single);
        assert_eq!(warnings, vec![Violation::IsolatedNode { node: 0 }]);
        assert_eq!(warnings[0].severity(), Severity::Warning);
    }

    #[test]
    fn uniform_weights_idempotent() {
        let g = perturbed_grid(4, 5, 1.0, 0.2, 3).unwrap();
        let once = uniform_neighbor_weights(&g);
        assert_eq!(once, uniform_neighbor_weights(&once));
    }

    #[test]
    fn validation_catches_violations() {
        let inst = ProblemInstance::single(regular_grid(3, 3, 1.0).unwrap(), 1, 4.0);
        assert!(validate_instance(&inst).is_empty());

        let mut heavy = inst.clone();
        for e in heavy.network.edges.iter_mut().filter(|e| e.dst == 4) {
            e.w = 0.3;
        }
        let v = validate_instance(&heavy);
        assert_eq!(v.len(), 1);
        match &v[0] {
            Violation::WeightSumExceeded { node, sum } => {
                assert_eq!(*node, 4);
                assert!((sum - 1.2).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }

        let mut twins = inst.clone();
        twins.robots.push(RobotSpec { base: 1, budget: 3.0 });
        assert_eq!(validate_instance(&twins), vec![Violation::DuplicateBase { first: 0, second: 1, base: 1 }]);

        let mut bad = inst.clone();
        bad.robots[0].base = 9;
        bad.robots[0].budget = -1.0;
        bad.options.gap_tol = 1.0;
        let v = validate_instance(&bad);
        assert!(v.contains(&Violation::InvalidBase { robot: 0, base: 9 }));
        assert!(v.contains(&Violation::BadBudget { robot: 0, budget: -1.0 }));
        assert!(v.contains(&Violation::BadGapTolerance(1.0)));

        let mut none = inst;
        none.robots.clear();
        assert_eq!(validate_instance(&none), vec![Violation::NoRobots]);
    }

    #[test]
    fn json_keeps_explicit_asymmetric_distance() {
        let g = regular_grid(2, 2, 1.0).unwrap();
        let mut d = g.distance_rows();
        d[0][1] = 3.0;
        let net = NodeNetwork::with_distance(g.nodes.clone(), g.edges.clone(), d);
        let inst = ProblemInstance::single(net, 0, 10.0);
        let text = inst.to_json_string();
        assert!(text.contains("\"distance\""));
        let back = ProblemInstance::from_json_str(&text).unwrap();
        assert_eq!(back.network.distance(0, 1), 3.0);
        assert_eq!(back.network.distance(1, 0), 1.0);
        assert!(!back.network.is_symmetric());
        assert_eq!(back, inst);
    }

    #[test]
    fn json_without_distance_recomputes() {
        let text = r#"{"nodes":[{"id":0,"pos":[0,0],"utility":1.0},{"id":1,"pos":[3,4],"utility":2.0}],
            "edges":[{"src":0,"dst":1,"w":1.0},{"src":1,"dst":0,"w":1.0}],
            "robots":[{"base":0,"budget":10.0}],
            "options":{"linearize":false,"restrict_hops":0,"gap_tol":0.0,"time_limit":2500}}"#;
        let inst = ProblemInstance::from_json_str(text).unwrap();
        assert_eq!(inst.network.distance(0, 1), 5.0);
        assert_eq!(inst.options.time_limit, Some(2500.0));
        assert!(inst.check().is_ok());
    }

    #[test]
    fn corrupt_json_is_an_error() {
        assert!(matches!(ProblemInstance::from_json_str("{\"nodes\": [}"), Err(InstanceError::Parse(_))));
    }

    proptest! {
        #[test]
        fn json_round_trip(rows in 2usize..5, cols in 2usize..5, noise in 0.0f64..0.45,
                           seed in any::<u64>(), budget in 0.0f64..20.0, gap in 0.0f64..0.9) {
            let net = perturbed_grid(rows, cols, 1.0, noise, seed).unwrap();
            let mut inst = ProblemInstance::single(net, 0, budget);
            inst.options.gap_tol = gap;
            inst.options.restrict_hops = 2;
            let back = ProblemInstance::from_json_str(&inst.to_json_string()).unwrap();
            prop_assert_eq!(back, inst);
        }

        #[test]
        fn grid_distances_are_euclidean(rows in 2usize..6, cols in 2usize..6, len in 0.1f64..5.0) {
            let g = regular_grid(rows, cols, len).unwrap();
            for i in 0..g.len() {
                prop_assert_eq!(g.distance(i, i), 0.0);
                for j in 0..g.len() {
                    let a = g.nodes[i].pos;
                    let b = g.nodes[j].pos;
                    prop_assert_eq!(g.distance(i, j), (a[0] - b[0]).hypot(a[1] - b[1]));
                }
            }
        }
    }
}
