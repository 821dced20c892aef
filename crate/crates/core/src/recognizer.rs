//! Enrollment registries, identification and verification, and the
//! evaluation metrics (accuracy, ROC, EER, operating-point TPR/TNR).

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dsp::FeatureMatrix;
use crate::embedder::{utterance_embedding, EmbeddingConfig, EmbeddingNetwork, SnoreEmbedding};
use crate::error::{Error, Result};
use crate::gmm::{score_with, GmmModel, ScoreMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Gmm,
    GmmUbm,
    Dnn,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Gmm => "gmm",
            Backend::GmmUbm => "gmm-ubm",
            Backend::Dnn => "dnn",
        }
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmm" => Ok(Backend::Gmm),
            "gmm-ubm" => Ok(Backend::GmmUbm),
            "dnn" => Ok(Backend::Dnn),
            other => Err(Error::InvalidConfig(format!(
                "unknown backend {other:?} (expected gmm, gmm-ubm or dnn)"
            ))),
        }
    }
}

/// Per-subject enrollment data.
#[derive(Debug, Clone, PartialEq)]
pub enum Enrollment {
    /// One mixture per subject (plain or MAP-adapted).
    Models {
        models: Vec<GmmModel>,
        score_mode: ScoreMode,
    },
    /// One subject-level embedding per subject, plus the extractor.
    Embeddings {
        embeddings: Vec<SnoreEmbedding>,
        network: EmbeddingNetwork,
        config: EmbeddingConfig,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    pub backend: Backend,
    /// Fingerprint of the MFCC configuration every entry was built with.
    pub feature_fingerprint: String,
    /// Stable subject order; column order of every score row.
    pub subjects: Vec<String>,
    pub enrollment: Enrollment,
}

/// Outcome of a verification claim.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verification {
    pub accepted: bool,
    pub score: f64,
}

impl Registry {
    pub fn new(
        backend: Backend,
        feature_fingerprint: String,
        subjects: Vec<String>,
        enrollment: Enrollment,
    ) -> Result<Self> {
        let n = match &enrollment {
            Enrollment::Models { models, .. } => models.len(),
            Enrollment::Embeddings { embeddings, .. } => embeddings.len(),
        };
        if n != subjects.len() {
            return Err(Error::DimensionMismatch {
                expected: subjects.len(),
                got: n,
            });
        }
        let consistent = matches!(
            (backend, &enrollment),
            (Backend::Gmm | Backend::GmmUbm, Enrollment::Models { .. })
                | (Backend::Dnn, Enrollment::Embeddings { .. })
        );
        if !consistent {
            return Err(Error::InvalidConfig(format!(
                "enrollment data does not match backend {backend}"
            )));
        }
        Ok(Self {
            backend,
            feature_fingerprint,
            subjects,
            enrollment,
        })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn index_of(&self, subject: &str) -> Option<usize> {
        self.subjects.iter().position(|s| s == subject)
    }

    /// Scores one test utterance against every enrolled subject.
    pub fn score_row(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::EmptyRegistry);
        }
        if features.is_empty() {
            return Err(Error::EmptyFeatureMatrix);
        }
        match &self.enrollment {
            Enrollment::Models {
                models, score_mode, ..
            } => models
                .iter()
                .map(|m| score_with(m, features, *score_mode))
                .collect(),
            Enrollment::Embeddings {
                embeddings,
                network,
                config,
            } => {
                let test = utterance_embedding(network, features, config)?;
                embeddings
                    .iter()
                    .map(|e| cosine_similarity(&test, e))
                    .collect()
            }
        }
    }

    /// Closed-set identification: the highest-scoring subject, earliest on ties.
    pub fn identify(&self, features: &FeatureMatrix) -> Result<(String, Vec<f64>)> {
        let row = self.score_row(features)?;
        let best = argmax_first(&row);
        Ok((self.subjects[best].clone(), row))
    }

    /// Accepts iff the claimed subject's score is at least `threshold`.
    pub fn verify(
        &self,
        claimed: &str,
        features: &FeatureMatrix,
        threshold: f64,
    ) -> Result<Verification> {
        let idx = self
            .index_of(claimed)
            .ok_or_else(|| Error::UnknownSubject(claimed.to_string()))?;
        let score = self.score_row(features)?[idx];
        Ok(Verification {
            accepted: score >= threshold,
            score,
        })
    }
}

pub const REGISTRY_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct RegistryJson {
    version: u32,
    backend: Backend,
    feature_fingerprint: String,
    subjects: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score_mode: Option<ScoreMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    models: Option<Vec<GmmModel>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embeddings: Option<Vec<SnoreEmbedding>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding_config: Option<EmbeddingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    network: Option<EmbeddingNetwork>,
}

impl Registry {
    pub fn to_json(&self) -> String {
        let mut j = RegistryJson {
            version: REGISTRY_FORMAT_VERSION,
            backend: self.backend,
            feature_fingerprint: self.feature_fingerprint.clone(),
            subjects: self.subjects.clone(),
            score_mode: None,
            models: None,
            embeddings: None,
            embedding_config: None,
            network: None,
        };
        match &self.enrollment {
            Enrollment::Models { models, score_mode } => {
                j.models = Some(models.clone());
                j.score_mode = Some(*score_mode);
            }
            Enrollment::Embeddings {
                embeddings,
                network,
                config,
            } => {
                j.embeddings = Some(embeddings.clone());
                j.network = Some(network.clone());
                j.embedding_config = Some(config.clone());
            }
        }
        serde_json::to_string(&j).expect("registry serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: RegistryJson =
            serde_json::from_str(text).map_err(|e| Error::parse("registry", e))?;
        if j.version != REGISTRY_FORMAT_VERSION {
            return Err(Error::parse(
                "registry",
                format!("unsupported version {}", j.version),
            ));
        }
        let enrollment = match (j.models, j.embeddings, j.network) {
            (Some(models), None, None) => Enrollment::Models {
                models,
                score_mode: j.score_mode.unwrap_or_default(),
            },
            (None, Some(embeddings), Some(network)) => Enrollment::Embeddings {
                embeddings,
                network,
                config: j.embedding_config.unwrap_or_default(),
            },
            _ => {
                return Err(Error::parse(
                    "registry",
                    "needs either models or embeddings plus network",
                ))
            }
        };
        Registry::new(j.backend, j.feature_fingerprint, j.subjects, enrollment)
    }
}

fn argmax_first(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Dot product of two unit-norm embeddings.
pub fn cosine_similarity(a: &SnoreEmbedding, b: &SnoreEmbedding) -> Result<f64> {
    for e in [a, b] {
        let n = e.norm();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::NonUnitInput(n));
        }
    }
    if a.vector.len() != b.vector.len() {
        return Err(Error::DimensionMismatch {
            expected: a.vector.len(),
            got: b.vector.len(),
        });
    }
    let dot: f64 = a.vector.iter().zip(&b.vector).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

/// Test utterances (rows) scored against enrolled subjects (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn row_argmax(&self, row: usize) -> usize {
        argmax_first(&self.values[row])
    }

    /// Header `test,<subject ids...>`, then one row per test utterance.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "test,{}", self.col_labels.join(","))?;
        for (label, row) in self.row_labels.iter().zip(&self.values) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.8e}")).collect();
            writeln!(out, "{label},{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Cross-scores every test against every enrolled subject.
pub fn score_matrix(registry: &Registry, tests: &[(String, FeatureMatrix)]) -> Result<ScoreMatrix> {
    if registry.is_empty() {
        return Err(Error::EmptyRegistry);
    }
    if tests.is_empty() {
        return Err(Error::EmptyInput);
    }
    let values = tests
        .par_iter()
        .map(|(_, f)| registry.score_row(f))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreMatrix {
        row_labels: tests.iter().map(|(s, _)| s.clone()).collect(),
        col_labels: registry.subjects.clone(),
        values,
    })
}

fn ser_threshold<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

fn de_threshold<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(v) => Ok(v),
        Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
        Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
        Repr::Text(t) => Err(serde::de::Error::custom(format!("bad threshold {t:?}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    #[serde(serialize_with = "ser_threshold", deserialize_with = "de_threshold")]
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    #[serde(serialize_with = "ser_threshold", deserialize_with = "de_threshold")]
    pub threshold: f64,
    pub tpr: f64,
    pub tnr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocAnalysis {
    /// Ascending thresholds, with `-inf` and `+inf` sentinels at the ends.
    pub roc: Vec<RocPoint>,
    pub eer: f64,
    pub eer_threshold: f64,
}

fn count_at_least(sorted: &[f64], threshold: f64) -> usize {
    sorted.len() - sorted.partition_point(|&v| v < threshold)
}

/// Pooled TPR / TNR of a verification threshold.
pub fn rates_at(genuine: &[f64], impostor: &[f64], threshold: f64) -> Result<OperatingPoint> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::EmptyScores);
    }
    let accepted = |scores: &[f64]| scores.iter().filter(|&&s| s >= threshold).count() as f64;
    Ok(OperatingPoint {
        threshold,
        tpr: accepted(genuine) / genuine.len() as f64,
        tnr: 1.0 - accepted(impostor) / impostor.len() as f64,
    })
}

/// ROC over every distinct score plus sentinels, and the equal error rate.
///
/// A trial is accepted when `score >= threshold`. The EER is taken where
/// FNR - FPR first becomes non-negative; if it is not exactly zero there,
/// FPR and the threshold are linearly interpolated between the two
/// bracketing points. An infinite bracket end yields the finite one as the
/// threshold.
pub fn roc_and_eer(genuine: &[f64], impostor: &[f64]) -> Result<RocAnalysis> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::EmptyScores);
    }
    if genuine.iter().chain(impostor).any(|s| s.is_nan()) {
        return Err(Error::InvalidConfig("scores contain NaN".into()));
    }
    let mut g = genuine.to_vec();
    let mut i = impostor.to_vec();
    g.sort_by(f64::total_cmp);
    i.sort_by(f64::total_cmp);

    let mut thresholds: Vec<f64> = g.iter().chain(&i).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.insert(0, f64::NEG_INFINITY);
    thresholds.push(f64::INFINITY);

    let (ng, ni) = (g.len(), i.len());
    let counts: Vec<(usize, usize)> = thresholds
        .iter()
        .map(|&t| (count_at_least(&g, t), count_at_least(&i, t)))
        .collect();
    let roc: Vec<RocPoint> = thresholds
        .iter()
        .zip(&counts)
        .map(|(&t, &(ga, ia))| RocPoint {
            threshold: t,
            tpr: ga as f64 / ng as f64,
            fpr: ia as f64 / ni as f64,
        })
        .collect();

    // (FNR - FPR) * ng * ni, exact in integers
    let gap = |(ga, ia): (usize, usize)| (ng - ga) as i128 * ni as i128 - ia as i128 * ng as i128;
    let hi = counts
        .iter()
        .position(|&c| gap(c) >= 0)
        .expect("+inf sentinel has positive gap");
    let (eer, eer_threshold) = if gap(counts[hi]) == 0 {
        (roc[hi].fpr, roc[hi].threshold)
    } else {
        let (ga, gb) = (gap(counts[hi - 1]), gap(counts[hi]));
        let (ia, ib) = (counts[hi - 1].1 as i128, counts[hi].1 as i128);
        // FPR at the crossing as one fraction, so a single rounding occurs
        let num = ia * (gb - ga) - ga * (ib - ia);
        let den = ni as i128 * (gb - ga);
        let t = -(ga as f64) / (gb - ga) as f64;
        let (a, b) = (roc[hi - 1].threshold, roc[hi].threshold);
        let thr = if !b.is_finite() {
            a
        } else if !a.is_finite() {
            b
        } else {
            a + t * (b - a)
        };
        (ratio(num, den), thr)
    };
    Ok(RocAnalysis {
        roc,
        eer,
        eer_threshold,
    })
}

/// `num / den` rounded once when both fit in an f64 mantissa.
fn ratio(num: i128, den: i128) -> f64 {
    const EXACT: i128 = 1 << 53;
    if num.abs() < EXACT && den.abs() < EXACT {
        num as f64 / den as f64
    } else {
        let g = gcd(num.unsigned_abs(), den.unsigned_abs()) as i128;
        (num / g) as f64 / (den / g) as f64
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

pub fn write_roc_csv<W: Write>(mut out: W, roc: &[RocPoint]) -> std::io::Result<()> {
    writeln!(out, "threshold,tpr,fpr")?;
    for p in roc {
        let t = if p.threshold.is_finite() {
            format!("{}", p.threshold)
        } else if p.threshold > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
        writeln!(out, "{t},{},{}", p.tpr, p.fpr)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub backend: Backend,
    pub identification_accuracy: f64,
    pub n_tests: usize,
    pub n_genuine: usize,
    pub n_impostor: usize,
    pub roc: Vec<RocPoint>,
    pub eer: f64,
    pub eer_threshold: f64,
    /// At the requested threshold, or the EER threshold when none was given.
    pub operating_point: OperatingPoint,
    /// TPR/TNR averaged over claimed subjects instead of pooled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_subject_operating_point: Option<OperatingPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalOptions {
    pub threshold: Option<f64>,
    pub per_subject_rates: bool,
}

/// Identification accuracy and pooled verification metrics. Every test is
/// claimed against every enrolled subject: genuine when the claim is its
/// true subject, impostor otherwise.
pub fn evaluate(
    registry: &Registry,
    tests: &[(String, FeatureMatrix)],
    options: EvalOptions,
) -> Result<(EvalReport, ScoreMatrix)> {
    for (subject, _) in tests {
        if registry.index_of(subject).is_none() {
            return Err(Error::UnknownSubject(subject.clone()));
        }
    }
    let matrix = score_matrix(registry, tests)?;

    let mut correct = 0;
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for (r, row) in matrix.values.iter().enumerate() {
        let truth = registry
            .index_of(&matrix.row_labels[r])
            .expect("checked above");
        if matrix.row_argmax(r) == truth {
            correct += 1;
        }
        for (c, &s) in row.iter().enumerate() {
            if c == truth {
                genuine.push(s);
            } else {
                impostor.push(s);
            }
        }
    }
    if impostor.is_empty() {
        return Err(Error::EmptyScores);
    }
    let analysis = roc_and_eer(&genuine, &impostor)?;
    let threshold = options.threshold.unwrap_or(analysis.eer_threshold);
    let operating_point = rates_at(&genuine, &impostor, threshold)?;
    let per_subject_operating_point = if options.per_subject_rates {
        Some(per_subject_rates(registry, &matrix, threshold)?)
    } else {
        None
    };

    let report = EvalReport {
        backend: registry.backend,
        identification_accuracy: correct as f64 / tests.len() as f64,
        n_tests: tests.len(),
        n_genuine: genuine.len(),
        n_impostor: impostor.len(),
        roc: analysis.roc,
        eer: analysis.eer,
        eer_threshold: analysis.eer_threshold,
        operating_point,
        per_subject_operating_point,
    };
    Ok((report, matrix))
}

fn per_subject_rates(
    registry: &Registry,
    matrix: &ScoreMatrix,
    threshold: f64,
) -> Result<OperatingPoint> {
    let (mut tpr_sum, mut tnr_sum, mut n) = (0.0, 0.0, 0usize);
    for (c, subject) in registry.subjects.iter().enumerate() {
        let (mut g, mut i) = (Vec::new(), Vec::new());
        for (r, row) in matrix.values.iter().enumerate() {
            if &matrix.row_labels[r] == subject {
                g.push(row[c]);
            } else {
                i.push(row[c]);
            }
        }
        if let Ok(p) = rates_at(&g, &i, threshold) {
            tpr_sum += p.tpr;
            tnr_sum += p.tnr;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyScores);
    }
    Ok(OperatingPoint {
        threshold,
        tpr: tpr_sum / n as f64,
        tnr: tnr_sum / n as f64,
    })
}
