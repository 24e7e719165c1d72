//! Synthetic spatiotemporal fields, series files and raster output.
//!
//! The default field is a sum of three axis-aligned Gaussians with fixed
//! centers whose amplitudes and widths oscillate in time. It ships as
//! `data/field_default.json`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::{EstimationError, TimeSeries};
use crate::instance::{uniform_neighbor_weights, Edge, Node, NodeNetwork};

/// Added to every field value so the field stays strictly positive.
pub const FIELD_FLOOR: f64 = 1e-6;

const DEFAULT_SPEC: &str = include_str!("../data/field_default.json");

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("time step {t} outside 0..{steps}")]
    TimeOutOfRange { t: usize, steps: usize },
    #[error("invalid field spec: {0}")]
    BadSpec(String),
    #[error("empty series file")]
    Empty,
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("line {line}: expected {expected} cells, got {got}")]
    Ragged { line: usize, expected: usize, got: usize },
    #[error("line {line}, column {col}: not a number: {cell:?}")]
    NotNumeric { line: usize, col: usize, cell: String },
    #[error("series has {series} nodes, network has {network}")]
    Width { series: usize, network: usize },
    #[error(transparent)]
    Series(#[from] EstimationError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed field spec: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub center: [f64; 2],
    pub amp0: f64,
    /// Period of the amplitude oscillation in steps; `0` keeps it constant.
    pub amp_period: f64,
    pub amp_phase: f64,
    pub sigma0: [f64; 2],
    pub sigma_period: f64,
    pub sigma_phase: f64,
}

fn oscillate(base: f64, period: f64, phase: f64, t: f64) -> f64 {
    if period == 0.0 {
        return base;
    }
    base * (1.0 + 0.5 * (2.0 * PI * t / period + phase).sin())
}

impl GaussianComponent {
    pub fn amplitude(&self, t: f64) -> f64 {
        oscillate(self.amp0, self.amp_period, self.amp_phase, t)
    }

    pub fn sigma(&self, t: f64) -> [f64; 2] {
        [
            oscillate(self.sigma0[0], self.sigma_period, self.sigma_phase, t),
            oscillate(self.sigma0[1], self.sigma_period, self.sigma_phase, t),
        ]
    }

    pub fn eval(&self, t: f64, p: [f64; 2]) -> f64 {
        let s = self.sigma(t);
        let dx = (p[0] - self.center[0]) / s[0];
        let dy = (p[1] - self.center[1]) / s[1];
        self.amplitude(t) * (-0.5 * (dx * dx + dy * dy)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub components: Vec<GaussianComponent>,
    pub extent: Extent,
    pub steps: usize,
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec::from_json_str(DEFAULT_SPEC).expect("shipped field spec is valid")
    }
}

impl FieldSpec {
    pub fn from_json_str(s: &str) -> Result<Self, FieldError> {
        let spec: FieldSpec = serde_json::from_str(s)?;
        spec.check()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FieldError> {
        let mut s = String::new();
        File::open(path)?.read_to_string(&mut s)?;
        Self::from_json_str(&s)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("field spec serializes")
    }

    pub fn check(&self) -> Result<(), FieldError> {
        if self.steps < 2 {
            return Err(FieldError::BadSpec(format!("steps must be at least 2, got {}", self.steps)));
        }
        let e = &self.extent;
        if !(e.min[0] < e.max[0] && e.min[1] < e.max[1]) {
            return Err(FieldError::BadSpec("extent is empty".into()));
        }
        for (k, g) in self.components.iter().enumerate() {
            if !(g.amp0 > 0.0) {
                return Err(FieldError::BadSpec(format!("component {k}: amp0 must be positive")));
            }
            if !(g.sigma0[0] > 0.0 && g.sigma0[1] > 0.0) {
                return Err(FieldError::BadSpec(format!("component {k}: sigma must be positive")));
            }
            if !(g.amp_period >= 0.0 && g.sigma_period >= 0.0) {
                return Err(FieldError::BadSpec(format!("component {k}: periods must be non-negative")));
            }
        }
        Ok(())
    }

    /// Largest amplitude any component reaches, summed over components.
    pub fn peak_amplitude(&self) -> f64 {
        self.components.iter().map(|g| 1.5 * g.amp0).sum()
    }
}

pub fn field_value(spec: &FieldSpec, t: usize, p: [f64; 2]) -> Result<f64, FieldError> {
    if t >= spec.steps {
        return Err(FieldError::TimeOutOfRange { t, steps: spec.steps });
    }
    Ok(field_value_at(spec, t as f64, p))
}

/// Field value at a real-valued time, without the range check.
pub fn field_value_at(spec: &FieldSpec, t: f64, p: [f64; 2]) -> f64 {
    FIELD_FLOOR + spec.components.iter().map(|g| g.eval(t, p)).sum::<f64>()
}

/// Maps node positions affinely (per axis) onto the spec's extent. An axis
/// along which all nodes coincide maps to the extent's midpoint.
pub fn scale_to_extent(network: &NodeNetwork, extent: &Extent) -> Vec<[f64; 2]> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for n in &network.nodes {
        for a in 0..2 {
            lo[a] = lo[a].min(n.pos[a]);
            hi[a] = hi[a].max(n.pos[a]);
        }
    }
    network
        .nodes
        .iter()
        .map(|n| {
            let mut p = [0.0; 2];
            for a in 0..2 {
                let span = hi[a] - lo[a];
                p[a] = if span > 0.0 {
                    extent.min[a] + (n.pos[a] - lo[a]) / span * (extent.max[a] - extent.min[a])
                } else {
                    0.5 * (extent.min[a] + extent.max[a])
                };
            }
            p
        })
        .collect()
}

/// Samples the field at every node for steps `0..spec.steps`.
pub fn sample_series(spec: &FieldSpec, network: &NodeNetwork) -> Result<TimeSeries, FieldError> {
    spec.check()?;
    let pts = scale_to_extent(network, &spec.extent);
    let values = (0..spec.steps)
        .map(|t| pts.iter().map(|&p| field_value_at(spec, t as f64, p)).collect())
        .collect();
    Ok(TimeSeries::new((0..spec.steps).map(|t| t as f64).collect(), values)?)
}

pub fn write_series_csv(series: &TimeSeries, out: impl Write) -> Result<(), FieldError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((0..series.n_nodes()).map(|i| format!("node_{i}")));
    w.write_record(&header)?;
    for (t, row) in series.times.iter().zip(&series.values) {
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_series_csv(input: impl Read) -> Result<TimeSeries, FieldError> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(input);
    let mut records = r.records();
    let header = match records.next() {
        None => return Err(FieldError::Empty),
        Some(h) => h?,
    };
    if header.get(0) != Some("t") {
        return Err(FieldError::BadHeader("first column must be `t`".into()));
    }
    for (i, name) in header.iter().skip(1).enumerate() {
        if name != format!("node_{i}") {
            return Err(FieldError::BadHeader(format!("column {} should be node_{i}, found {name:?}", i + 1)));
        }
    }
    let width = header.len();
    if width < 2 {
        return Err(FieldError::BadHeader("no node columns".into()));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (k, rec) in records.enumerate() {
        let rec = rec?;
        let line = k + 2;
        if rec.len() != width {
            return Err(FieldError::Ragged { line, expected: width, got: rec.len() });
        }
        let mut row = Vec::with_capacity(width);
        for (col, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| FieldError::NotNumeric { line, col, cell: cell.to_string() })?;
            row.push(v);
        }
        times.push(row[0]);
        values.push(row[1..].to_vec());
    }
    if values.is_empty() {
        return Err(FieldError::Empty);
    }
    Ok(TimeSeries::new(times, values)?)
}

pub fn save_series_csv(series: &TimeSeries, path: impl AsRef<Path>) -> Result<(), FieldError> {
    write_series_csv(series, File::create(path)?)
}

pub fn load_series_csv(path: impl AsRef<Path>) -> Result<TimeSeries, FieldError> {
    read_series_csv(File::open(path)?)
}

pub fn check_series_width(series: &TimeSeries, network: &NodeNetwork) -> Result<(), FieldError> {
    if series.n_nodes() != network.len() {
        return Err(FieldError::Width { series: series.n_nodes(), network: network.len() });
    }
    Ok(())
}

/// Binary PGM (P5) of node values interpolated by inverse squared distance
/// over the network's bounding box. Row 0 is the top (largest y).
pub fn render_heatmap(network: &NodeNetwork, values: &[f64], width: usize, height: usize) -> Vec<u8> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for n in &network.nodes {
        for a in 0..2 {
            lo[a] = lo[a].min(n.pos[a]);
            hi[a] = hi[a].max(n.pos[a]);
        }
    }
    let vmin = values.iter().copied().fold(f64::INFINITY, f64::min);
    let vmax = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = if vmax > vmin { vmax - vmin } else { 1.0 };
    let coord = |k: usize, len: usize, a: usize| {
        if len <= 1 {
            0.5 * (lo[a] + hi[a])
        } else {
            lo[a] + (hi[a] - lo[a]) * k as f64 / (len - 1) as f64
        }
    };
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    for row in 0..height {
        let y = coord(height - 1 - row, height, 1);
        for col in 0..width {
            let x = coord(col, width, 0);
            let mut num = 0.0;
            let mut den = 0.0;
            let mut exact = None;
            for (node, &v) in network.nodes.iter().zip(values) {
                let d2 = (node.pos[0] - x).powi(2) + (node.pos[1] - y).powi(2);
                if d2 < 1e-18 {
                    exact = Some(v);
                    break;
                }
                num += v / d2;
                den += 1.0 / d2;
            }
            let v = exact.unwrap_or(if den > 0.0 { num / den } else { vmin });
            out.push((((v - vmin) / range).clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

/// Synthetic station layout standing in for a 14-site regional temperature
/// network. Positions are made-up longitude/latitude pairs treated as flat
/// coordinates; node 10 plays the coastal base.
const STAND_IN_SITES: [[f64; 2]; 14] = [
    [-73.20, 42.45],
    [-72.60, 42.10],
    [-72.50, 42.55],
    [-72.00, 42.25],
    [-71.80, 42.65],
    [-71.75, 42.00],
    [-71.40, 42.45],
    [-71.35, 41.95],
    [-71.00, 42.65],
    [-70.95, 41.75],
    [-71.06, 42.36],
    [-70.65, 42.05],
    [-70.30, 41.70],
    [-70.00, 41.95],
];

/// Base node of the stand-in network.
pub const STAND_IN_BASE: usize = 10;

/// The synthetic 14-node network: each site is linked both ways to its three
/// nearest sites, weights uniform.
pub fn stand_in_network() -> NodeNetwork {
    let nodes: Vec<Node> =
        STAND_IN_SITES.iter().enumerate().map(|(id, &pos)| Node { id, pos, utility: 1.0 }).collect();
    let n = nodes.len();
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let d = |j: usize| (nodes[i].pos[0] - nodes[j].pos[0]).hypot(nodes[i].pos[1] - nodes[j].pos[1]);
        order.sort_by(|&a, &b| d(a).total_cmp(&d(b)).then(a.cmp(&b)));
        for &j in order.iter().take(3) {
            adj[i][j] = true;
            adj[j][i] = true;
        }
    }
    let mut edges = Vec::new();
    for (i, row) in adj.iter().enumerate() {
        for (j, &a) in row.iter().enumerate() {
            if a {
                edges.push(Edge { src: j, dst: i, w: 0.0 });
            }
        }
    }
    uniform_neighbor_weights(&NodeNetwork::new(nodes, edges))
}

/// Monthly temperature-like series: a seasonal cycle whose mean and swing
/// vary smoothly across space, two spatially smooth random anomaly modes and
/// small independent noise. All values stay well above zero.
pub fn seasonal_series(network: &NodeNetwork, months: usize, seed: u64) -> Result<TimeSeries, FieldError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = network.len();
    let cx = network.nodes.iter().map(|v| v.pos[0]).sum::<f64>() / n.max(1) as f64;
    let cy = network.nodes.iter().map(|v| v.pos[1]).sum::<f64>() / n.max(1) as f64;
    let mean_slope = [rng.gen_range(0.5..1.5), rng.gen_range(-4.0..-2.0)];
    let swing_slope = [rng.gen_range(-2.0..-1.0), rng.gen_range(0.5..1.5)];
    let modes: Vec<[f64; 3]> =
        (0..2).map(|_| [rng.gen_range(0.5..1.5), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
    let mut values = Vec::with_capacity(months);
    for t in 0..months {
        let season = (2.0 * PI * (t as f64 - 6.5) / 12.0).cos();
        let amps: Vec<f64> = modes.iter().map(|_| rng.gen_range(-3.0..3.0)).collect();
        let row = network
            .nodes
            .iter()
            .map(|v| {
                let dx = v.pos[0] - cx;
                let dy = v.pos[1] - cy;
                let mean = 50.0 + mean_slope[0] * dx + mean_slope[1] * dy;
                let swing = 20.0 + swing_slope[0] * dx + swing_slope[1] * dy;
                let anomaly: f64 = modes.iter().zip(&amps).map(|(m, a)| a * (m[0] + m[1] * dx + m[2] * dy)).sum();
                mean + swing * season + anomaly + rng.gen_range(-0.1..0.1)
            })
            .collect();
        values.push(row);
    }
    Ok(TimeSeries::new((0..months).map(|t| t as f64).collect(), values)?)
}
