//! Diagonal-covariance Gaussian mixtures: EM fitting and per-frame
//! log-likelihood scoring.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::{hex_prefix, FeatureMatrix};
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmMeta {
    pub training_frame_count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "GmmJson", try_from = "GmmJson")]
pub struct GmmModel {
    pub weights: Array1<f64>,
    /// K x D
    pub means: Array2<f64>,
    /// K x D
    pub variances: Array2<f64>,
    pub meta: GmmMeta,
    /// Content hash of the background model this one was adapted from.
    pub adapted_from: Option<String>,
}

#[derive(Clone, Serialize, Deserialize)]
struct GmmJson {
    version: u32,
    #[serde(rename = "K")]
    k: usize,
    dim: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
    meta: GmmMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    adapted_from: Option<String>,
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(rows: Vec<Vec<f64>>, k: usize, dim: usize, what: &str) -> Result<Array2<f64>> {
    if rows.len() != k || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::parse(
            "gmm model",
            format!("{what} must be {k} x {dim}"),
        ));
    }
    Ok(
        Array2::from_shape_vec((k, dim), rows.into_iter().flatten().collect())
            .expect("checked shape"),
    )
}

impl From<GmmModel> for GmmJson {
    fn from(m: GmmModel) -> Self {
        GmmJson {
            version: MODEL_FORMAT_VERSION,
            k: m.components(),
            dim: m.dim(),
            weights: m.weights.to_vec(),
            means: to_rows(&m.means),
            variances: to_rows(&m.variances),
            meta: m.meta,
            adapted_from: m.adapted_from,
        }
    }
}

impl TryFrom<GmmJson> for GmmModel {
    type Error = Error;

    fn try_from(j: GmmJson) -> Result<Self> {
        if j.version != MODEL_FORMAT_VERSION {
            return Err(Error::parse(
                "gmm model",
                format!("unsupported version {}", j.version),
            ));
        }
        let model = GmmModel {
            weights: Array1::from(j.weights),
            means: from_rows(j.means, j.k, j.dim, "means")?,
            variances: from_rows(j.variances, j.k, j.dim, "variances")?,
            meta: j.meta,
            adapted_from: j.adapted_from,
        };
        model.validate()?;
        Ok(model)
    }
}

impl GmmModel {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// Checks the simplex and positive-variance invariants.
    pub fn validate(&self) -> Result<()> {
        let (k, d) = self.means.dim();
        if k == 0 || self.weights.len() != k || self.variances.dim() != (k, d) {
            return Err(Error::parse("gmm model", "inconsistent parameter shapes"));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) || (self.weights.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::parse(
                "gmm model",
                "weights must be a probability vector",
            ));
        }
        if self.variances.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::parse(
                "gmm model",
                "variances must be positive and finite",
            ));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::parse("gmm model", "means must be finite"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("gmm model", e))
    }

    /// SHA-256 prefix of the serialized model.
    pub fn fingerprint(&self) -> String {
        hex_prefix(&Sha256::digest(self.to_json().as_bytes()), 16)
    }

    fn log_consts(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(self.variances.rows())
            .map(|(&w, var)| w.ln() - 0.5 * var.iter().map(|v| LN_2PI + v.ln()).sum::<f64>())
            .collect()
    }

    /// `log w_k + log N(x; mu_k, var_k)` for every component.
    fn joint_log_densities(&self, consts: &[f64], x: ArrayView1<f64>, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let mahal: f64 = x
                .iter()
                .zip(self.means.row(k))
                .zip(self.variances.row(k))
                .map(|((xi, m), v)| (xi - m) * (xi - m) / v)
                .sum();
            *o = consts[k] - 0.5 * mahal;
        }
    }

    /// Log-density of a single frame, via log-sum-exp.
    pub fn log_likelihood(&self, x: ArrayView1<f64>) -> f64 {
        let consts = self.log_consts();
        let mut buf = vec![0.0; self.components()];
        self.joint_log_densities(&consts, x, &mut buf);
        log_sum_exp(&buf)
    }

    /// Per-frame component responsibilities, T x K.
    pub fn responsibilities(&self, frames: ArrayView2<f64>) -> Array2<f64> {
        e_step(self, frames).0
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// How a sequence of frame log-likelihoods is reduced to a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    /// Average per frame; independent of utterance length.
    #[default]
    MeanPerFrame,
    Sum,
}

/// Average log-likelihood per frame.
pub fn score(model: &GmmModel, features: &FeatureMatrix) -> Result<f64> {
    score_with(model, features, ScoreMode::MeanPerFrame)
}

pub fn score_with(model: &GmmModel, features: &FeatureMatrix, mode: ScoreMode) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::EmptyFeatureMatrix);
    }
    if features.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: features.dim(),
        });
    }
    let consts = model.log_consts();
    let mut buf = vec![0.0; model.components()];
    let total: f64 = features
        .frames
        .rows()
        .into_iter()
        .map(|x| {
            model.joint_log_densities(&consts, x, &mut buf);
            log_sum_exp(&buf)
        })
        .sum();
    Ok(match mode {
        ScoreMode::MeanPerFrame => total / features.num_frames() as f64,
        ScoreMode::Sum => total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmFitConfig {
    pub components: usize,
    pub max_iters: usize,
    /// Stop once the relative gain in mean log-likelihood falls below this.
    pub rel_tol: f64,
    /// Per-dimension variance floor as a fraction of the global feature variance.
    pub variance_floor_ratio: f64,
    pub seed: u64,
    pub n_init: usize,
}

impl Default for GmmFitConfig {
    fn default() -> Self {
        Self {
            components: 10,
            max_iters: 200,
            rel_tol: 1e-6,
            variance_floor_ratio: 1e-4,
            seed: 0,
            n_init: 1,
        }
    }
}

impl GmmFitConfig {
    pub fn with_components(components: usize) -> Self {
        Self {
            components,
            ..Self::default()
        }
    }
}

/// Diagnostics of one EM run.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    /// Mean log-likelihood per frame before each M-step, plus the final one.
    pub log_likelihoods: Vec<f64>,
    /// Iterations (indices into `log_likelihoods`) after which a collapsed
    /// component was re-seeded.
    pub resets: Vec<usize>,
    pub converged: bool,
}

pub fn fit_gmm(features: ArrayView2<f64>, config: &GmmFitConfig) -> Result<GmmModel> {
    fit_gmm_traced(features, config).map(|(m, _)| m)
}

/// Fits with EM from a k-means++ start. With `n_init > 1` the run with the
/// highest final log-likelihood wins.
pub fn fit_gmm_traced(
    features: ArrayView2<f64>,
    config: &GmmFitConfig,
) -> Result<(GmmModel, FitTrace)> {
    let (n, d) = features.dim();
    if config.components == 0 || config.max_iters == 0 || config.n_init == 0 {
        return Err(Error::InvalidConfig(
            "components, max_iters and n_init must be >= 1".into(),
        ));
    }
    if n < config.components {
        return Err(Error::TooFewFrames {
            frames: n,
            components: config.components,
        });
    }
    if d == 0 {
        return Err(Error::EmptyFeatureMatrix);
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig(
            "features contain non-finite values".into(),
        ));
    }

    let global_mean = features.mean_axis(Axis(0)).expect("n > 0");
    let global_var = column_variance(features, &global_mean);
    let floor = global_var.mapv(|v| (config.variance_floor_ratio * v).max(1e-10));

    let mut best: Option<(GmmModel, FitTrace)> = None;
    for init in 0..config.n_init {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(init as u64));
        let run = em(features, config, &global_var, &floor, &mut rng)?;
        let better = match &best {
            None => true,
            Some((_, t)) => run.1.log_likelihoods.last() > t.log_likelihoods.last(),
        };
        if better {
            best = Some(run);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

fn column_variance(x: ArrayView2<f64>, mean: &Array1<f64>) -> Array1<f64> {
    let n = x.nrows() as f64;
    let mut var = Array1::zeros(x.ncols());
    for row in x.rows() {
        for ((v, xi), m) in var.iter_mut().zip(row).zip(mean) {
            *v += (xi - m) * (xi - m);
        }
    }
    var / n
}

fn em(
    x: ArrayView2<f64>,
    config: &GmmFitConfig,
    global_var: &Array1<f64>,
    floor: &Array1<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<(GmmModel, FitTrace)> {
    let (n, d) = x.dim();
    let k = config.components;

    let centers = kmeans_pp(x, k, rng);
    let mut hard = Array2::zeros((n, k));
    for (t, row) in x.rows().into_iter().enumerate() {
        let nearest = (0..k)
            .map(|c| sq_dist(row, centers.row(c)))
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(c, _)| c)
            .expect("k >= 1");
        hard[[t, nearest]] = 1.0;
    }

    let mut model = GmmModel {
        weights: Array1::zeros(k),
        means: Array2::zeros((k, d)),
        variances: Array2::zeros((k, d)),
        meta: GmmMeta {
            training_frame_count: n,
            seed: config.seed,
        },
        adapted_from: None,
    };
    let mut trace = FitTrace {
        log_likelihoods: Vec::new(),
        resets: Vec::new(),
        converged: false,
    };
    if m_step(&mut model, x, &hard, global_var, floor, rng) {
        trace.resets.push(0);
    }

    let mut iter = 0;
    loop {
        let (resp, mean_ll) = e_step(&model, x);
        if !mean_ll.is_finite() {
            let bad = (0..k)
                .find(|&c| model.variances.row(c).iter().any(|v| !v.is_finite()))
                .unwrap_or(0);
            return Err(Error::DegenerateComponent(bad));
        }
        if let Some(&prev) = trace.log_likelihoods.last() {
            let gain = (mean_ll - prev) / prev.abs().max(f64::MIN_POSITIVE);
            trace.log_likelihoods.push(mean_ll);
            if gain < config.rel_tol {
                trace.converged = true;
                break;
            }
        } else {
            trace.log_likelihoods.push(mean_ll);
        }
        if iter == config.max_iters {
            break;
        }
        iter += 1;
        if m_step(&mut model, x, &resp, global_var, floor, rng) {
            trace.resets.push(trace.log_likelihoods.len());
        }
    }
    Ok((model, trace))
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy k-means++: each new center is the best of `2 + ln k` candidates
/// drawn proportionally to squared distance, judged by the resulting
/// potential.
fn kmeans_pp(x: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = x.nrows();
    let trials = 2 + (k as f64).ln() as usize;
    let mut centers = Array2::zeros((k, x.ncols()));
    centers.row_mut(0).assign(&x.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = x
        .rows()
        .into_iter()
        .map(|r| sq_dist(r, centers.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            let pick = rng.random_range(0..n);
            centers.row_mut(c).assign(&x.row(pick));
            continue;
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..trials {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            let cand: Vec<f64> = d2
                .iter()
                .zip(x.rows())
                .map(|(&d, row)| d.min(sq_dist(row, x.row(pick))))
                .collect();
            let potential: f64 = cand.iter().sum();
            if best.as_ref().is_none_or(|(p, _)| potential < *p) {
                centers.row_mut(c).assign(&x.row(pick));
                best = Some((potential, cand));
            }
        }
        d2 = best.expect("trials >= 2").1;
    }
    centers
}

/// Responsibilities (T x K) and mean per-frame log-likelihood.
fn e_step(model: &GmmModel, x: ArrayView2<f64>) -> (Array2<f64>, f64) {
    let k = model.components();
    let consts = model.log_consts();
    let mut resp = Array2::zeros((x.nrows(), k));
    let mut buf = vec![0.0; k];
    let mut total = 0.0;
    for (row, mut r) in x.rows().into_iter().zip(resp.rows_mut()) {
        model.joint_log_densities(&consts, row, &mut buf);
        let lse = log_sum_exp(&buf);
        total += lse;
        for (ri, b) in r.iter_mut().zip(&buf) {
            *ri = (b - lse).exp();
        }
    }
    (resp, total / x.nrows() as f64)
}

/// Weighted M-step with variance flooring. Components whose responsibility
/// mass falls below `1e-8 * T` are re-seeded on a random frame with the
/// global variance. Returns whether any reset happened.
fn m_step(
    model: &mut GmmModel,
    x: ArrayView2<f64>,
    resp: &Array2<f64>,
    global_var: &Array1<f64>,
    floor: &Array1<f64>,
    rng: &mut ChaCha8Rng,
) -> bool {
    let n = x.nrows();
    let mut reset = false;
    for c in 0..model.components() {
        let gamma = resp.column(c);
        let mass: f64 = gamma.sum();
        if mass < 1e-8 * n as f64 {
            model
                .means
                .row_mut(c)
                .assign(&x.row(rng.random_range(0..n)));
            model.variances.row_mut(c).assign(global_var);
            model
                .variances
                .row_mut(c)
                .zip_mut_with(floor, |v, f| *v = v.max(*f));
            model.weights[c] = 1.0 / n as f64;
            reset = true;
            continue;
        }
        let mut mean = Array1::<f64>::zeros(x.ncols());
        for (row, &g) in x.rows().into_iter().zip(gamma) {
            mean.scaled_add(g, &row);
        }
        mean /= mass;
        let mut var = Array1::<f64>::zeros(x.ncols());
        for (row, &g) in x.rows().into_iter().zip(gamma) {
            for ((v, xi), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += g * (xi - m) * (xi - m);
            }
        }
        var /= mass;
        var.zip_mut_with(floor, |v, f| *v = v.max(*f));
        model.means.row_mut(c).assign(&mean);
        model.variances.row_mut(c).assign(&var);
        model.weights[c] = mass / n as f64;
    }
    let total = model.weights.sum();
    model.weights /= total;
    reset
}

/// Density of a diagonal Gaussian without logs, for tests and oracles.
pub fn diagonal_gaussian_pdf(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(var)
        .map(|((xi, m), v)| (-(xi - m) * (xi - m) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt())
        .product()
}
