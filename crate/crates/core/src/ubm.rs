//! Universal background model and means-only MAP adaptation.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{fit_gmm, GmmFitConfig, GmmModel};

/// A mixture trained on pooled development data.
#[derive(Debug, Clone, PartialEq)]
pub struct UbmModel(pub GmmModel);

impl UbmModel {
    pub fn model(&self) -> &GmmModel {
        &self.0
    }

    pub fn to_json(&self) -> String {
        self.0.to_json()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        GmmModel::from_json(text).map(UbmModel)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapConfig {
    pub relevance_factor: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            relevance_factor: 16.0,
        }
    }
}

/// Fits the background model on frames pooled across development subjects.
pub fn fit_ubm(development_frames: ArrayView2<f64>, config: &GmmFitConfig) -> Result<UbmModel> {
    fit_gmm(development_frames, config).map(UbmModel)
}

/// Sufficient statistics of subject data under the background model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationStats {
    /// Soft counts per component.
    pub counts: Array1<f64>,
    /// Posterior data means per component (the UBM mean where the count is
    /// negligible).
    pub data_means: Array2<f64>,
}

const MIN_COUNT: f64 = 1e-10;

pub fn adaptation_stats(ubm: &UbmModel, frames: ArrayView2<f64>) -> Result<AdaptationStats> {
    let model = ubm.model();
    if frames.nrows() == 0 {
        return Err(Error::EmptyFeatureMatrix);
    }
    if frames.ncols() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: frames.ncols(),
        });
    }
    let resp = model.responsibilities(frames);
    let counts = resp.sum_axis(ndarray::Axis(0));
    let mut data_means = resp.t().dot(&frames);
    for (k, mut row) in data_means.rows_mut().into_iter().enumerate() {
        if counts[k] < MIN_COUNT {
            row.assign(&model.means.row(k));
        } else {
            row /= counts[k];
        }
    }
    Ok(AdaptationStats { counts, data_means })
}

/// Means-only MAP adaptation: `m_k = a_k E_k + (1 - a_k) mu_k` with
/// `a_k = n_k / (n_k + r)`. Weights and variances are copied unchanged.
pub fn map_adapt(
    ubm: &UbmModel,
    subject_frames: ArrayView2<f64>,
    config: &MapConfig,
) -> Result<GmmModel> {
    if !(config.relevance_factor > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "relevance factor must be positive, got {}",
            config.relevance_factor
        )));
    }
    let stats = adaptation_stats(ubm, subject_frames)?;
    let base = ubm.model();
    let mut adapted = base.clone();
    for (k, mut mean) in adapted.means.rows_mut().into_iter().enumerate() {
        let n = stats.counts[k];
        let alpha = n / (n + config.relevance_factor);
        for (m, &e) in mean.iter_mut().zip(stats.data_means.row(k)) {
            *m = alpha * e + (1.0 - alpha) * *m;
        }
    }
    adapted.meta.training_frame_count = subject_frames.nrows();
    adapted.adapted_from = Some(base.fingerprint());
    Ok(adapted)
}
