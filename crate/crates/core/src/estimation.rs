//! Correlation-weight learning, wave-propagated node estimates and
//! estimation scoring.
//!
//! All time arguments are row indices into a [`TimeSeries`]. Training ranges
//! are half-open row intervals.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{Edge, NodeNetwork};

/// Ridge term, relative to the largest diagonal entry, added to the normal
/// equations when they are singular.
pub const RIDGE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("time series needs at least 2 rows, got {0}")]
    TooShort(usize),
    #[error("row {row} has {got} values, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
    #[error("non-finite value at row {row}, node {node}")]
    NonFinite { row: usize, node: usize },
    #[error("series has {series} nodes but the network has {network}")]
    WidthMismatch { series: usize, network: usize },
    #[error("node {0} out of range")]
    NodeOutOfRange(usize),
    #[error("time index {0} out of range")]
    TimeOutOfRange(usize),
    #[error("training range {start}..{end} invalid for {rows} rows")]
    BadTrainingRange { start: usize, end: usize, rows: usize },
    #[error("{rows} training rows cannot fit {predictors} predictors plus intercept")]
    TooFewRows { rows: usize, predictors: usize },
    #[error("estimation time {0} lies inside the training range")]
    TargetInTraining(usize),
    #[error("no measured nodes")]
    NoMeasurements,
    #[error("true field mass at node {0} is not positive")]
    NonPositiveFieldMass(usize),
    #[error("{estimates} estimate rows for {times} evaluation times")]
    EstimateShape { estimates: usize, times: usize },
}

/// Samples `values[t][i]` of a field at `n` nodes over `T` time labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self, EstimationError> {
        if values.len() < 2 || times.len() != values.len() {
            return Err(EstimationError::TooShort(values.len().min(times.len())));
        }
        let n = values[0].len();
        for (row, v) in values.iter().enumerate() {
            if v.len() != n {
                return Err(EstimationError::Ragged { row, got: v.len(), expected: n });
            }
            if let Some(node) = v.iter().position(|x| !x.is_finite()) {
                return Err(EstimationError::NonFinite { row, node });
            }
        }
        Ok(TimeSeries { times, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_nodes(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn value(&self, t: usize, node: usize) -> f64 {
        self.values[t][node]
    }

    pub fn column(&self, node: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[node]).collect()
    }

    /// Row index whose label equals `label`.
    pub fn index_of(&self, label: f64) -> Option<usize> {
        self.times.iter().position(|&t| t == label)
    }

    fn check_range(&self, r: &Range<usize>) -> Result<(), EstimationError> {
        if r.start >= r.end || r.end > self.len() {
            return Err(EstimationError::BadTrainingRange { start: r.start, end: r.end, rows: self.len() });
        }
        Ok(())
    }

    fn check_node(&self, i: usize) -> Result<(), EstimationError> {
        if i >= self.n_nodes() {
            return Err(EstimationError::NodeOutOfRange(i));
        }
        Ok(())
    }
}

/// Linear model `target = intercept + sum coeffs[j] * x_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub intercept: f64,
    pub coeffs: BTreeMap<usize, f64>,
    pub residual_sse: f64,
}

impl RegressionFit {
    pub fn predict(&self, value_of: impl Fn(usize) -> f64) -> f64 {
        self.intercept + self.coeffs.iter().map(|(&j, &b)| b * value_of(j)).sum::<f64>()
    }
}

/// Ordinary least squares with intercept over the rows in `t_range`.
///
/// Predictors are centered before forming the normal equations; a singular
/// system is retried with [`RIDGE`] on the diagonal.
pub fn ols_fit(
    series: &TimeSeries,
    target: usize,
    predictors: &[usize],
    t_range: Range<usize>,
) -> Result<RegressionFit, EstimationError> {
    series.check_range(&t_range)?;
    series.check_node(target)?;
    for &j in predictors {
        series.check_node(j)?;
    }
    let mut preds = predictors.to_vec();
    preds.sort_unstable();
    preds.dedup();
    let rows = t_range.len();
    let p = preds.len();
    if rows < p + 1 {
        return Err(EstimationError::TooFewRows { rows, predictors: p });
    }
    let y: Vec<f64> = t_range.clone().map(|t| series.value(t, target)).collect();
    let y_mean = y.iter().sum::<f64>() / rows as f64;
    let sse_of = |fit: &RegressionFit| -> f64 {
        t_range
            .clone()
            .zip(&y)
            .map(|(t, &yt)| {
                let r = yt - fit.predict(|j| series.value(t, j));
                r * r
            })
            .sum()
    };
    let scale = y.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1.0);
    let constant = y.iter().all(|&v| (v - y_mean).abs() <= 1e-14 * scale);
    if p == 0 || constant {
        let mut fit = RegressionFit {
            intercept: if constant { y[0] } else { y_mean },
            coeffs: preds.iter().map(|&j| (j, 0.0)).collect(),
            residual_sse: 0.0,
        };
        fit.residual_sse = sse_of(&fit);
        return Ok(fit);
    }
    let cols: Vec<Vec<f64>> = preds.iter().map(|&j| t_range.clone().map(|t| series.value(t, j)).collect()).collect();
    let means: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / rows as f64).collect();
    let mut gram = vec![vec![0.0; p]; p];
    let mut rhs = vec![0.0; p];
    for a in 0..p {
        for b in 0..=a {
            let s: f64 = (0..rows).map(|t| (cols[a][t] - means[a]) * (cols[b][t] - means[b])).sum();
            gram[a][b] = s;
            gram[b][a] = s;
        }
        rhs[a] = (0..rows).map(|t| (cols[a][t] - means[a]) * (y[t] - y_mean)).sum();
    }
    let beta = match cholesky_solve(&gram, &rhs) {
        Some(b) => b,
        None => {
            let ridge = RIDGE * (0..p).map(|a| gram[a][a]).fold(0.0f64, f64::max);
            for (a, row) in gram.iter_mut().enumerate() {
                row[a] += ridge;
            }
            cholesky_solve(&gram, &rhs).unwrap_or_else(|| vec![0.0; p])
        }
    };
    let intercept = y_mean - beta.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    let mut fit = RegressionFit { intercept, coeffs: preds.into_iter().zip(beta).collect(), residual_sse: 0.0 };
    fit.residual_sse = sse_of(&fit);
    Ok(fit)
}

/// Solves `a x = b` for symmetric `a`; `None` when `a` is not numerically
/// positive definite.
fn cholesky_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let max_diag = (0..n).map(|i| a[i][i].abs()).fold(0.0f64, f64::max);
    if max_diag == 0.0 {
        return None;
    }
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if s <= 1e-12 * max_diag {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut z = vec![0.0; n];
    for i in 0..n {
        z[i] = (b[i] - (0..i).map(|k| l[i][k] * z[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (z[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    Some(x)
}

/// Learned incoming weights `w_ji`, keyed by `(j, i)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LearnedWeights {
    pub weights: BTreeMap<(usize, usize), f64>,
    /// Nodes whose clamped coefficients summed to zero and got uniform weights.
    pub fallbacks: Vec<usize>,
}

impl LearnedWeights {
    pub fn weight(&self, j: usize, i: usize) -> f64 {
        self.weights.get(&(j, i)).copied().unwrap_or(0.0)
    }

    /// Copy of `network` with its edge weights replaced.
    pub fn apply(&self, network: &NodeNetwork) -> NodeNetwork {
        let mut net = network.clone();
        net.edges = network
            .edges
            .iter()
            .map(|e| Edge { src: e.src, dst: e.dst, w: self.weight(e.src, e.dst) })
            .collect();
        net
    }

    pub fn weight_sum(&self, i: usize) -> f64 {
        self.weights.iter().filter(|((_, d), _)| *d == i).map(|(_, w)| w).sum()
    }
}

/// Weights from a joint fit on all of `N_i` plus one single-neighbor fit per
/// `j`, each coefficient clamped at zero, normalized per node.
pub fn learn_weights(
    series: &TimeSeries,
    network: &NodeNetwork,
    t_range: Range<usize>,
) -> Result<LearnedWeights, EstimationError> {
    if series.n_nodes() != network.len() {
        return Err(EstimationError::WidthMismatch { series: series.n_nodes(), network: network.len() });
    }
    let mut out = LearnedWeights::default();
    for (i, nb) in network.in_neighbors().iter().enumerate() {
        if nb.is_empty() {
            continue;
        }
        let joint = ols_fit(series, i, nb, t_range.clone())?;
        let mut raw = Vec::with_capacity(nb.len());
        for &j in nb {
            let single = ols_fit(series, i, &[j], t_range.clone())?;
            let a1 = joint.coeffs[&j];
            let a2 = single.coeffs[&j];
            if a1 < 0.0 || a2 < 0.0 {
                log::debug!("node {i}: clamping negative coefficient from neighbor {j} ({a1:.4}, {a2:.4})");
            }
            raw.push(a1.max(0.0) + a2.max(0.0));
        }
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            for (&j, r) in nb.iter().zip(&raw) {
                out.weights.insert((j, i), r / total);
            }
        } else {
            log::warn!("node {i}: no positive regression coefficients, using uniform weights");
            out.fallbacks.push(i);
            for &j in nb {
                out.weights.insert((j, i), 1.0 / nb.len() as f64);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Measured,
    Estimated(usize),
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateState {
    pub value: Vec<Option<f64>>,
    pub provenance: Vec<Provenance>,
    pub waves: usize,
}

impl EstimateState {
    pub fn unknown(&self) -> Vec<usize> {
        (0..self.value.len()).filter(|&i| self.provenance[i] == Provenance::Unknown).collect()
    }
}

/// Caches regressions by `(target, predictor set)` over one training range.
pub struct FitCache<'a> {
    series: &'a TimeSeries,
    t_range: Range<usize>,
    fits: HashMap<(usize, Vec<usize>), RegressionFit>,
}

impl<'a> FitCache<'a> {
    pub fn new(series: &'a TimeSeries, t_range: Range<usize>) -> Result<Self, EstimationError> {
        series.check_range(&t_range)?;
        Ok(FitCache { series, t_range, fits: HashMap::new() })
    }

    pub fn t_range(&self) -> Range<usize> {
        self.t_range.clone()
    }

    pub fn fit(&mut self, target: usize, predictors: &[usize]) -> Result<&RegressionFit, EstimationError> {
        let key = (target, predictors.to_vec());
        if !self.fits.contains_key(&key) {
            let f = ols_fit(self.series, target, predictors, self.t_range.clone())?;
            self.fits.insert(key.clone(), f);
        }
        Ok(&self.fits[&key])
    }
}

/// Order in which unknown nodes get estimated, fixed by the measured set.
#[derive(Debug, Clone, PartialEq)]
pub struct WavePlan {
    pub measured: Vec<bool>,
    /// Per wave: `(node, known neighbors)` in processing order.
    pub waves: Vec<Vec<(usize, Vec<usize>)>>,
}

impl WavePlan {
    pub fn new(network: &NodeNetwork, measured: &[bool]) -> Self {
        let nb = network.in_neighbors();
        let mut known = measured.to_vec();
        let mut waves = Vec::new();
        loop {
            let mut wave: Vec<(usize, Vec<usize>)> = (0..known.len())
                .filter(|&i| !known[i])
                .map(|i| (i, nb[i].iter().copied().filter(|&j| known[j]).collect::<Vec<_>>()))
                .filter(|(_, k)| !k.is_empty())
                .collect();
            if wave.is_empty() {
                break;
            }
            wave.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
            for (i, _) in &wave {
                known[*i] = true;
            }
            waves.push(wave);
        }
        WavePlan { measured: measured.to_vec(), waves }
    }

    /// Propagates `measured` values (indexed by node) through the waves.
    pub fn apply(&self, cache: &mut FitCache<'_>, measured: &[Option<f64>]) -> Result<EstimateState, EstimationError> {
        let n = self.measured.len();
        let mut value = vec![None; n];
        let mut provenance = vec![Provenance::Unknown; n];
        for i in 0..n {
            if self.measured[i] {
                value[i] = measured[i];
                provenance[i] = Provenance::Measured;
            }
        }
        for (w, wave) in self.waves.iter().enumerate() {
            let snapshot = value.clone();
            for (i, known) in wave {
                let fit = cache.fit(*i, known)?;
                value[*i] = Some(fit.predict(|j| snapshot[j].unwrap_or(0.0)));
                provenance[*i] = Provenance::Estimated(w + 1);
            }
        }
        Ok(EstimateState { value, provenance, waves: self.waves.len() })
    }
}

/// Estimates every reachable node from the measured values, fitting each
/// node on its already-known neighbors over `t_range`.
pub fn update_node_estimates(
    network: &NodeNetwork,
    measured: &BTreeMap<usize, f64>,
    series: &TimeSeries,
    t_range: Range<usize>,
) -> Result<EstimateState, EstimationError> {
    if series.n_nodes() != network.len() {
        return Err(EstimationError::WidthMismatch { series: series.n_nodes(), network: network.len() });
    }
    if measured.is_empty() {
        return Err(EstimationError::NoMeasurements);
    }
    let n = network.len();
    let mut mask = vec![false; n];
    let mut vals = vec![None; n];
    for (&i, &v) in measured {
        if i >= n {
            return Err(EstimationError::NodeOutOfRange(i));
        }
        mask[i] = true;
        vals[i] = Some(v);
    }
    let mut cache = FitCache::new(series, t_range)?;
    WavePlan::new(network, &mask).apply(&mut cache, &vals)
}

/// Runs the estimation at each time in `eval_times`, measuring the true
/// series values at the `visited` nodes.
pub fn estimate_visited(
    network: &NodeNetwork,
    series: &TimeSeries,
    visited: &[bool],
    t_range: Range<usize>,
    eval_times: &[usize],
) -> Result<Vec<EstimateState>, EstimationError> {
    let mut cache = FitCache::new(series, t_range)?;
    estimate_with_cache(network, &mut cache, visited, eval_times)
}

pub(crate) fn estimate_with_cache(
    network: &NodeNetwork,
    cache: &mut FitCache<'_>,
    visited: &[bool],
    eval_times: &[usize],
) -> Result<Vec<EstimateState>, EstimationError> {
    let series = cache.series;
    if series.n_nodes() != network.len() {
        return Err(EstimationError::WidthMismatch { series: series.n_nodes(), network: network.len() });
    }
    if !visited.iter().any(|&v| v) {
        return Err(EstimationError::NoMeasurements);
    }
    let plan = WavePlan::new(network, visited);
    let range = cache.t_range();
    eval_times
        .iter()
        .map(|&t| {
            if t >= series.len() {
                return Err(EstimationError::TimeOutOfRange(t));
            }
            if range.contains(&t) {
                return Err(EstimationError::TargetInTraining(t));
            }
            let measured: Vec<Option<f64>> =
                (0..visited.len()).map(|i| visited[i].then(|| series.value(t, i))).collect();
            plan.apply(cache, &measured)
        })
        .collect()
}

fn check_shape(truth: &TimeSeries, estimates: &[EstimateState], eval_times: &[usize]) -> Result<(), EstimationError> {
    if estimates.len() != eval_times.len() {
        return Err(EstimationError::EstimateShape { estimates: estimates.len(), times: eval_times.len() });
    }
    for e in estimates {
        if e.value.len() != truth.n_nodes() {
            return Err(EstimationError::WidthMismatch { series: truth.n_nodes(), network: e.value.len() });
        }
    }
    if let Some(&t) = eval_times.iter().find(|&&t| t >= truth.len()) {
        return Err(EstimationError::TimeOutOfRange(t));
    }
    Ok(())
}

/// Sum over nodes of `sum_t (psi - |psi' - psi|) / sum_t psi`; a perfect
/// estimate scores `n`. Nodes left unknown contribute nothing.
pub fn quality_score(
    truth: &TimeSeries,
    estimates: &[EstimateState],
    eval_times: &[usize],
) -> Result<f64, EstimationError> {
    check_shape(truth, estimates, eval_times)?;
    let mut q = 0.0;
    for i in 0..truth.n_nodes() {
        let mass: f64 = eval_times.iter().map(|&t| truth.value(t, i)).sum();
        if mass <= 0.0 {
            return Err(EstimationError::NonPositiveFieldMass(i));
        }
        let agree: f64 = eval_times
            .iter()
            .zip(estimates)
            .map(|(&t, e)| {
                let psi = truth.value(t, i);
                e.value[i].map_or(0.0, |est| psi - (est - psi).abs())
            })
            .sum();
        q += agree / mass;
    }
    Ok(q)
}

/// Mean absolute estimation error over nodes and evaluation times. Unknown
/// nodes count as an estimate of zero.
pub fn mean_abs_error(
    truth: &TimeSeries,
    estimates: &[EstimateState],
    eval_times: &[usize],
) -> Result<f64, EstimationError> {
    check_shape(truth, estimates, eval_times)?;
    let n = truth.n_nodes();
    let mut total = 0.0;
    for (&t, e) in eval_times.iter().zip(estimates) {
        for i in 0..n {
            total += (e.value[i].unwrap_or(0.0) - truth.value(t, i)).abs();
        }
    }
    Ok(total / (n * eval_times.len()).max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{regular_grid, Node};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn path3() -> NodeNetwork {
        let nodes = (0..3).map(|id| Node { id, pos: [id as f64, 0.0], utility: 1.0 }).collect();
        let edges = vec![
            Edge { src: 0, dst: 1, w: 0.5 },
            Edge { src: 2, dst: 1, w: 0.5 },
            Edge { src: 1, dst: 0, w: 1.0 },
            Edge { src: 1, dst: 2, w: 1.0 },
        ];
        NodeNetwork::new(nodes, edges)
    }

    fn series_from(cols: &[Vec<f64>]) -> TimeSeries {
        let t = cols[0].len();
        let values = (0..t).map(|r| cols.iter().map(|c| c[r]).collect()).collect();
        TimeSeries::new((0..t).map(|x| x as f64).collect(), values).unwrap()
    }

    #[test]
    fn exact_linear_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..5.0)).collect();
        let b: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..5.0)).collect();
        let y: Vec<f64> = a.iter().zip(&b).map(|(a, b)| 2.0 + 0.5 * a - 0.25 * b).collect();
        let s = series_from(&[y, a, b]);
        let fit = ols_fit(&s, 0, &[1, 2], 0..40).unwrap();
        assert!((fit.intercept - 2.0).abs() < 1e-8);
        assert!((fit.coeffs[&1] - 0.5).abs() < 1e-8);
        assert!((fit.coeffs[&2] + 0.25).abs() < 1e-8);
        assert!(fit.residual_sse < 1e-12);
    }

    #[test]
    fn identical_predictor() {
        let a: Vec<f64> = (0..10).map(|x| (x as f64).sin() + 3.0).collect();
        let s = series_from(&[a.clone(), a]);
        let fit = ols_fit(&s, 0, &[1], 0..10).unwrap();
        assert!(fit.intercept.abs() < 1e-10);
        assert!((fit.coeffs[&1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn degenerate_fits() {
        let s = series_from(&[vec![4.0; 6], (0..6).map(|x| x as f64).collect()]);
        let fit = ols_fit(&s, 0, &[1], 0..6).unwrap();
        assert_eq!(fit.intercept, 4.0);
        assert_eq!(fit.coeffs[&1], 0.0);
        let fit = ols_fit(&s, 1, &[], 0..6).unwrap();
        assert!((fit.intercept - 2.5).abs() < 1e-12);
        assert!(matches!(ols_fit(&s, 1, &[0], 0..1), Err(EstimationError::TooFewRows { .. })));
    }

    #[test]
    fn collinear_predictors_use_ridge() {
        let a: Vec<f64> = (0..12).map(|x| (x as f64 * 0.7).cos()).collect();
        let y: Vec<f64> = a.iter().map(|v| 1.0 + 2.0 * v).collect();
        let s = series_from(&[y, a.clone(), a]);
        let fit = ols_fit(&s, 0, &[1, 2], 0..12).unwrap();
        assert!((fit.coeffs[&1] + fit.coeffs[&2] - 2.0).abs() < 1e-6);
        assert!(fit.residual_sse < 1e-8);
    }

    #[test]
    fn sole_identical_neighbor_gets_full_weight() {
        let a: Vec<f64> = (0..20).map(|x| (x as f64 * 0.3).sin() + 2.0).collect();
        let b: Vec<f64> = (0..20).map(|x| (x as f64 * 0.5).cos() + 2.0).collect();
        let s = series_from(&[a.clone(), a.clone(), b]);
        let w = learn_weights(&s, &path3(), 0..20).unwrap();
        assert!((w.weight(1, 0) - 1.0).abs() < 1e-12);
        for i in 0..3 {
            assert!((w.weight_sum(i) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_denominator_falls_back_to_uniform() {
        let a: Vec<f64> = (0..20).map(|x| (x as f64 * 0.3).sin()).collect();
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let s = series_from(&[neg.clone(), a, neg]);
        let w = learn_weights(&s, &path3(), 0..20).unwrap();
        assert_eq!(w.fallbacks, vec![0, 1, 2]);
        assert_eq!(w.weight(0, 1), 0.5);
        assert_eq!(w.weight(1, 0), 1.0);
    }

    #[test]
    fn path_propagation_is_exact_on_linear_data() {
        let a: Vec<f64> = (0..30).map(|x| (x as f64 * 0.37).sin() * 3.0 + 5.0).collect();
        let b: Vec<f64> = a.iter().map(|v| 1.0 + 2.0 * v).collect();
        let c: Vec<f64> = b.iter().map(|v| 0.5 * v - 1.0).collect();
        let s = series_from(&[a, b, c]);
        let measured = BTreeMap::from([(0, s.value(25, 0))]);
        let est = update_node_estimates(&path3(), &measured, &s, 0..20).unwrap();
        assert_eq!(est.waves, 2);
        assert_eq!(est.provenance, vec![Provenance::Measured, Provenance::Estimated(1), Provenance::Estimated(2)]);
        assert!((est.value[1].unwrap() - s.value(25, 1)).abs() < 1e-9);
        assert!((est.value[2].unwrap() - s.value(25, 2)).abs() < 1e-9);
    }

    #[test]
    fn all_measured_needs_no_waves() {
        let s = TimeSeries::new(vec![0.0, 1.0, 2.0], vec![vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 5.0], vec![1.0, 1.0, 2.0]])
            .unwrap();
        let measured: BTreeMap<usize, f64> = (0..3).map(|i| (i, s.value(2, i))).collect();
        let est = update_node_estimates(&path3(), &measured, &s, 0..2).unwrap();
        assert_eq!(est.waves, 0);
        assert_eq!(est.value, vec![Some(1.0), Some(1.0), Some(2.0)]);
    }

    #[test]
    fn disconnected_nodes_stay_unknown() {
        let mut net = path3();
        net.edges.retain(|e| e.src != 2 && e.dst != 2);
        let s = series_from(&[vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.5], vec![1.0, 1.5, 0.5]]);
        let est = update_node_estimates(&net, &BTreeMap::from([(0, 2.0)]), &s, 0..2).unwrap();
        assert_eq!(est.unknown(), vec![2]);
    }

    #[test]
    fn training_overlap_is_rejected() {
        let s = series_from(&[vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.5], vec![1.0, 1.5, 0.5]]);
        let r = estimate_visited(&path3(), &s, &[true, false, false], 0..2, &[1]);
        assert_eq!(r, Err(EstimationError::TargetInTraining(1)));
    }

    #[test]
    fn scores() {
        let net = regular_grid(2, 2, 1.0).unwrap();
        let vals: Vec<Vec<f64>> = (0..4).map(|t| (0..4).map(|i| 1.0 + t as f64 + i as f64).collect()).collect();
        let s = TimeSeries::new((0..4).map(|t| t as f64).collect(), vals).unwrap();
        let times = [2, 3];
        let perfect: Vec<EstimateState> = estimate_visited(&net, &s, &[true; 4], 0..2, &times).unwrap();
        assert_eq!(quality_score(&s, &perfect, &times).unwrap(), 4.0);
        assert_eq!(mean_abs_error(&s, &perfect, &times).unwrap(), 0.0);
        let mut wrong = perfect.clone();
        for (e, &t) in wrong.iter_mut().zip(&times) {
            e.value[3] = Some(2.0 * s.value(t, 3));
        }
        assert!((quality_score(&s, &wrong, &times).unwrap() - 3.0).abs() < 1e-12);
        let shifted: Vec<EstimateState> = perfect
            .iter()
            .map(|e| EstimateState { value: e.value.iter().map(|v| v.map(|x| x + 0.3)).collect(), ..e.clone() })
            .collect();
        assert!((mean_abs_error(&s, &shifted, &times).unwrap() - 0.3).abs() < 1e-12);
    }
}
