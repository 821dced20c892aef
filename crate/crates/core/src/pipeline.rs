//! End-to-end protocol: development training, enrollment and evaluation over
//! a corpus manifest, plus the file-producing commands behind the CLI.
//!
//! Files written under the output directory:
//! `ubm.json` / `network.json` (shared model), `registry.json`,
//! `report.json`, `scores.csv`, `roc.csv`, `sweep.csv` and one
//! `run_<command>.json` metadata file per command.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{load_manifest, make_split, DatasetManifest, SplitPlan, UtteranceRecord};
use crate::dsp::{hex_prefix, write_matrix_csv, FeatureMatrix, MfccConfig, MfccExtractor};
use crate::embedder::{
    subject_embedding, train_network, utterance_embedding, EmbeddingConfig, EmbeddingNetwork,
    TrainConfig, TrainHistory,
};
use crate::error::{Error, Result};
use crate::gmm::{fit_gmm, GmmFitConfig, ScoreMode};
use crate::recognizer::{
    evaluate, write_roc_csv, Backend, Enrollment, EvalOptions, EvalReport, Registry, ScoreMatrix,
    Verification,
};
use crate::ubm::{fit_ubm, map_adapt, MapConfig, UbmModel};
use crate::wav::read_wav_at_rate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub backend: Backend,
    /// Seeds every stochastic step (mixture initialization, network
    /// initialization, shuffling, dropout).
    pub seed: u64,
    pub out_dir: PathBuf,
    pub threads: usize,
    pub min_utterances: usize,
    /// Verification threshold for the reported operating point; the EER
    /// threshold when unset.
    pub threshold: Option<f64>,
    pub per_subject_rates: bool,
    pub score_mode: ScoreMode,
    pub mfcc: MfccConfig,
    pub gmm: GmmFitConfig,
    pub map: MapConfig,
    pub train: TrainConfig,
    pub embedding: EmbeddingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.csv"),
            backend: Backend::GmmUbm,
            seed: 0,
            out_dir: PathBuf::from("out"),
            threads: 1,
            min_utterances: 5,
            threshold: None,
            per_subject_rates: false,
            score_mode: ScoreMode::MeanPerFrame,
            mfcc: MfccConfig::default(),
            gmm: GmmFitConfig::default(),
            map: MapConfig::default(),
            train: TrainConfig::default(),
            embedding: EmbeddingConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a TOML config. Relative `manifest` and `out_dir` paths are taken
    /// relative to the config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
        let root = path.parent().unwrap_or(Path::new(""));
        config.manifest = root.join(&config.manifest);
        config.out_dir = root.join(&config.out_dir);
        Ok(config)
    }

    pub fn gmm_config(&self) -> GmmFitConfig {
        GmmFitConfig {
            seed: self.seed,
            ..self.gmm.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn fingerprint(&self) -> String {
        hex_prefix(
            &Sha256::digest(serde_json::to_vec(self).expect("config serializes")),
            16,
        )
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

/// Runs `f` on a rayon pool with `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok(pool.install(f))
}

/// A manifest, its split, and MFCCs for every utterance the protocol uses.
pub struct Corpus {
    pub manifest: DatasetManifest,
    pub split: SplitPlan,
    features: BTreeMap<(String, usize), FeatureMatrix>,
}

impl Corpus {
    pub fn load(config: &RunConfig) -> Result<Self> {
        let manifest = load_manifest(&config.manifest)?;
        Self::from_manifest(manifest, config)
    }

    pub fn from_manifest(manifest: DatasetManifest, config: &RunConfig) -> Result<Self> {
        if manifest.sample_rate_hz != config.mfcc.sample_rate_hz {
            return Err(Error::InvalidConfig(format!(
                "manifest is {} Hz but the front-end is configured for {} Hz",
                manifest.sample_rate_hz, config.mfcc.sample_rate_hz
            )));
        }
        let split = make_split(&manifest, config.min_utterances)?;
        let mut needed: BTreeMap<(String, usize), &UtteranceRecord> = BTreeMap::new();
        for r in split
            .development
            .values()
            .flatten()
            .chain(split.enroll.values().flatten())
            .chain(split.test.values())
        {
            needed.insert((r.subject_id.clone(), r.utterance_index), r);
        }
        let extractor = MfccExtractor::new(config.mfcc.clone())?;
        let rate = manifest.sample_rate_hz;
        let features = needed
            .into_par_iter()
            .map(|(key, rec)| {
                let f = read_wav_at_rate(&rec.audio_path, rate)
                    .and_then(|clip| extractor.extract(&clip))
                    .map_err(|e| e.in_file(&rec.audio_path))?;
                Ok((key, f))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self {
            manifest,
            split,
            features,
        })
    }

    pub fn features(&self, record: &UtteranceRecord) -> &FeatureMatrix {
        &self.features[&(record.subject_id.clone(), record.utterance_index)]
    }

    fn stacked(&self, records: &[UtteranceRecord]) -> Result<FeatureMatrix> {
        FeatureMatrix::concat(records.iter().map(|r| self.features(r)))
    }

    /// Development frames of all subjects pooled in subject then utterance order.
    pub fn development_pool(&self) -> Result<FeatureMatrix> {
        FeatureMatrix::concat(
            self.split
                .development
                .values()
                .flatten()
                .map(|r| self.features(r)),
        )
    }

    /// Held-out test utterances of eligible subjects, labelled by subject.
    pub fn tests(&self) -> Vec<(String, FeatureMatrix)> {
        self.split
            .test_records()
            .map(|r| (r.subject_id.clone(), self.features(r).clone()))
            .collect()
    }
}

/// Model shared across subjects, produced by the development phase.
#[derive(Debug, Clone, PartialEq)]
pub enum SharedModel {
    Ubm(UbmModel),
    Network(EmbeddingNetwork),
}

impl SharedModel {
    pub fn file_name(backend: Backend) -> Option<&'static str> {
        match backend {
            Backend::Gmm => None,
            Backend::GmmUbm => Some("ubm.json"),
            Backend::Dnn => Some("network.json"),
        }
    }

    pub fn to_json(&self) -> String {
        match self {
            SharedModel::Ubm(u) => u.to_json(),
            SharedModel::Network(n) => n.to_json(),
        }
    }

    pub fn fingerprint(&self) -> String {
        hex_prefix(&Sha256::digest(self.to_json().as_bytes()), 16)
    }
}

/// Development phase. The plain GMM backend has no shared model.
pub fn train_shared(
    config: &RunConfig,
    corpus: &Corpus,
) -> Result<Option<(SharedModel, Option<TrainHistory>)>> {
    match config.backend {
        Backend::Gmm => Ok(None),
        Backend::GmmUbm => {
            let pool = corpus.development_pool()?;
            let ubm = fit_ubm(pool.frames.view(), &config.gmm_config())?;
            Ok(Some((SharedModel::Ubm(ubm), None)))
        }
        Backend::Dnn => {
            let development: BTreeMap<String, Vec<FeatureMatrix>> = corpus
                .split
                .development
                .iter()
                .map(|(s, recs)| {
                    (
                        s.clone(),
                        recs.iter().map(|r| corpus.features(r).clone()).collect(),
                    )
                })
                .collect();
            let (net, history) = train_network(&development, &config.train_config())?;
            Ok(Some((SharedModel::Network(net), Some(history))))
        }
    }
}

/// Enrollment phase over every eligible subject.
pub fn enroll(
    config: &RunConfig,
    corpus: &Corpus,
    shared: Option<&SharedModel>,
) -> Result<Registry> {
    let subjects = corpus.split.eligible_subjects.clone();
    let enroll_sets: Vec<&Vec<UtteranceRecord>> =
        subjects.iter().map(|s| &corpus.split.enroll[s]).collect();
    let missing = || {
        Error::InvalidConfig(format!(
            "backend {} needs a trained shared model; run `train` first",
            config.backend
        ))
    };
    let enrollment = match (config.backend, shared) {
        (Backend::Gmm, _) => {
            let gmm = config.gmm_config();
            let models = enroll_sets
                .par_iter()
                .map(|recs| fit_gmm(corpus.stacked(recs)?.frames.view(), &gmm))
                .collect::<Result<Vec<_>>>()?;
            Enrollment::Models {
                models,
                score_mode: config.score_mode,
            }
        }
        (Backend::GmmUbm, Some(SharedModel::Ubm(ubm))) => {
            let models = enroll_sets
                .par_iter()
                .map(|recs| map_adapt(ubm, corpus.stacked(recs)?.frames.view(), &config.map))
                .collect::<Result<Vec<_>>>()?;
            Enrollment::Models {
                models,
                score_mode: config.score_mode,
            }
        }
        (Backend::Dnn, Some(SharedModel::Network(net))) => {
            let embeddings = subjects
                .par_iter()
                .zip(&enroll_sets)
                .map(|(subject, recs)| {
                    let utts = recs
                        .iter()
                        .map(|r| utterance_embedding(net, corpus.features(r), &config.embedding))
                        .collect::<Result<Vec<_>>>()?;
                    subject_embedding(&utts, subject)
                })
                .collect::<Result<Vec<_>>>()?;
            Enrollment::Embeddings {
                embeddings,
                network: net.clone(),
                config: config.embedding.clone(),
            }
        }
        _ => return Err(missing()),
    };
    Registry::new(
        config.backend,
        config.mfcc.fingerprint(),
        subjects,
        enrollment,
    )
}

fn check_registry(config: &RunConfig, registry: &Registry) -> Result<()> {
    if registry.feature_fingerprint != config.mfcc.fingerprint() {
        return Err(Error::InvalidConfig(
            "registry was enrolled with a different MFCC configuration".into(),
        ));
    }
    if registry.is_empty() {
        return Err(Error::EmptyRegistry);
    }
    Ok(())
}

/// Evaluation phase: scores every held-out test utterance against the registry.
pub fn evaluate_split(
    config: &RunConfig,
    corpus: &Corpus,
    registry: &Registry,
) -> Result<(EvalReport, ScoreMatrix)> {
    check_registry(config, registry)?;
    evaluate(
        registry,
        &corpus.tests(),
        EvalOptions {
            threshold: config.threshold,
            per_subject_rates: config.per_subject_rates,
        },
    )
}

pub struct ProtocolRun {
    pub shared: Option<SharedModel>,
    pub train_history: Option<TrainHistory>,
    pub registry: Registry,
    pub report: EvalReport,
    pub scores: ScoreMatrix,
}

/// All three phases in memory on an already-loaded corpus.
pub fn run_protocol_on(config: &RunConfig, corpus: &Corpus) -> Result<ProtocolRun> {
    let (shared, train_history) = match train_shared(config, corpus)? {
        Some((m, h)) => (Some(m), h),
        None => (None, None),
    };
    let registry = enroll(config, corpus, shared.as_ref())?;
    let (report, scores) = evaluate_split(config, corpus, &registry)?;
    Ok(ProtocolRun {
        shared,
        train_history,
        registry,
        report,
        scores,
    })
}

pub fn report_json(report: &EvalReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

pub fn format_summary(report: &EvalReport) -> String {
    format!(
        "backend        {}\n\
         tests          {}\n\
         accuracy       {:.4}\n\
         EER            {:.4} (threshold {:.4})\n\
         operating      threshold {:.4}  TPR {:.4}  TNR {:.4}",
        report.backend,
        report.n_tests,
        report.identification_accuracy,
        report.eer,
        report.eer_threshold,
        report.operating_point.threshold,
        report.operating_point.tpr,
        report.operating_point.tnr,
    )
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    backend: Backend,
    seed: u64,
    config_hash: String,
    unix_time_s: u64,
    version: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_fingerprint: Option<String>,
}

fn write_run_meta(
    config: &RunConfig,
    command: &str,
    model_fingerprint: Option<String>,
) -> Result<()> {
    let meta = RunMeta {
        command,
        backend: config.backend,
        seed: config.seed,
        config_hash: config.fingerprint(),
        unix_time_s: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        version: env!("CARGO_PKG_VERSION"),
        model_fingerprint,
    };
    write_file(
        &config.path(&format!("run_{command}.json")),
        serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )
}

/// Development phase to disk. Returns the written model path, or `None` for
/// the plain GMM backend.
pub fn cmd_train(config: &RunConfig) -> Result<Option<PathBuf>> {
    with_threads(config.threads, || {
        let corpus = Corpus::load(config)?;
        let Some((shared, _)) = train_shared(config, &corpus)? else {
            write_run_meta(config, "train", None)?;
            return Ok(None);
        };
        let path = config.path(SharedModel::file_name(config.backend).expect("has shared model"));
        write_file(&path, shared.to_json())?;
        write_run_meta(config, "train", Some(shared.fingerprint()))?;
        Ok(Some(path))
    })?
}

pub fn load_shared(config: &RunConfig) -> Result<Option<SharedModel>> {
    let Some(name) = SharedModel::file_name(config.backend) else {
        return Ok(None);
    };
    let path = config.path(name);
    let text = read_file(&path)?;
    let model = match config.backend {
        Backend::GmmUbm => {
            SharedModel::Ubm(UbmModel::from_json(&text).map_err(|e| e.in_file(&path))?)
        }
        _ => {
            SharedModel::Network(EmbeddingNetwork::from_json(&text).map_err(|e| e.in_file(&path))?)
        }
    };
    Ok(Some(model))
}

/// Enrollment to disk (`registry.json`).
pub fn cmd_enroll(config: &RunConfig) -> Result<Registry> {
    with_threads(config.threads, || {
        let shared = load_shared(config)?;
        let corpus = Corpus::load(config)?;
        let registry = enroll(config, &corpus, shared.as_ref())?;
        write_file(&config.path("registry.json"), registry.to_json())?;
        write_run_meta(config, "enroll", shared.map(|s| s.fingerprint()))?;
        Ok(registry)
    })?
}

pub fn load_registry(config: &RunConfig) -> Result<Registry> {
    let path = config.path("registry.json");
    Registry::from_json(&read_file(&path)?).map_err(|e| e.in_file(&path))
}

fn write_eval_outputs(config: &RunConfig, report: &EvalReport, scores: &ScoreMatrix) -> Result<()> {
    write_file(&config.path("report.json"), report_json(report))?;
    let mut csv = Vec::new();
    scores.write_csv(&mut csv).expect("writing to memory");
    write_file(&config.path("scores.csv"), csv)?;
    let mut roc = Vec::new();
    write_roc_csv(&mut roc, &report.roc).expect("writing to memory");
    write_file(&config.path("roc.csv"), roc)
}

/// Evaluation to disk (`report.json`, `scores.csv`, `roc.csv`).
pub fn cmd_evaluate(config: &RunConfig) -> Result<EvalReport> {
    with_threads(config.threads, || {
        let registry = load_registry(config)?;
        if registry.backend != config.backend {
            return Err(Error::InvalidConfig(format!(
                "registry holds a {} backend but {} was requested",
                registry.backend, config.backend
            )));
        }
        let corpus = Corpus::load(config)?;
        let (report, scores) = evaluate_split(config, &corpus, &registry)?;
        write_eval_outputs(config, &report, &scores)?;
        write_run_meta(config, "evaluate", None)?;
        Ok(report)
    })?
}

/// Train, enroll and evaluate in one go, writing every artifact.
pub fn cmd_run(config: &RunConfig) -> Result<EvalReport> {
    with_threads(config.threads, || {
        let corpus = Corpus::load(config)?;
        let run = run_protocol_on(config, &corpus)?;
        if let (Some(shared), Some(name)) = (&run.shared, SharedModel::file_name(config.backend)) {
            write_file(&config.path(name), shared.to_json())?;
        }
        write_file(&config.path("registry.json"), run.registry.to_json())?;
        write_eval_outputs(config, &run.report, &run.scores)?;
        write_run_meta(config, "run", run.shared.map(|s| s.fingerprint()))?;
        Ok(run.report)
    })?
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub components: usize,
    pub identification_accuracy: f64,
    pub eer: f64,
}

/// Re-runs the mixture backends for each component count; writes `sweep.csv`.
pub fn cmd_sweep_k(config: &RunConfig, components: &[usize]) -> Result<Vec<SweepRow>> {
    if config.backend == Backend::Dnn {
        return Err(Error::InvalidConfig(
            "--sweep-k applies to the gmm and gmm-ubm backends".into(),
        ));
    }
    if components.is_empty() {
        return Err(Error::InvalidConfig(
            "--sweep-k needs at least one component count".into(),
        ));
    }
    with_threads(config.threads, || {
        let corpus = Corpus::load(config)?;
        let rows = components
            .iter()
            .map(|&k| {
                let mut cfg = config.clone();
                cfg.gmm.components = k;
                let run = run_protocol_on(&cfg, &corpus)?;
                Ok(SweepRow {
                    components: k,
                    identification_accuracy: run.report.identification_accuracy,
                    eer: run.report.eer,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut csv = String::from("components,accuracy,eer\n");
        for r in &rows {
            csv += &format!("{},{},{}\n", r.components, r.identification_accuracy, r.eer);
        }
        write_file(&config.path("sweep.csv"), csv)?;
        Ok(rows)
    })?
}

fn features_of(config: &RunConfig, wav: &Path) -> Result<FeatureMatrix> {
    read_wav_at_rate(wav, config.mfcc.sample_rate_hz)
        .and_then(|clip| MfccExtractor::new(config.mfcc.clone())?.extract(&clip))
        .map_err(|e| e.in_file(wav))
}

/// Identifies a single WAV against the stored registry.
pub fn identify_file(config: &RunConfig, wav: &Path) -> Result<(String, Vec<(String, f64)>)> {
    let registry = load_registry(config)?;
    check_registry(config, &registry)?;
    let (who, row) = registry.identify(&features_of(config, wav)?)?;
    Ok((who, registry.subjects.iter().cloned().zip(row).collect()))
}

pub fn verify_file(
    config: &RunConfig,
    wav: &Path,
    claimed: &str,
    threshold: f64,
) -> Result<Verification> {
    let registry = load_registry(config)?;
    check_registry(config, &registry)?;
    registry.verify(claimed, &features_of(config, wav)?, threshold)
}

/// Writes MFCCs (or the power spectrogram) of one WAV as CSV.
pub fn dump_features(
    config: &RunConfig,
    wav: &Path,
    out: &Path,
    spectrogram: bool,
) -> Result<usize> {
    let clip = read_wav_at_rate(wav, config.mfcc.sample_rate_hz)?;
    let extractor = MfccExtractor::new(config.mfcc.clone())?;
    let (rows, prefix) = if spectrogram {
        (
            extractor.spectrogram(&clip).map_err(|e| e.in_file(wav))?,
            "bin",
        )
    } else {
        (
            extractor.extract(&clip).map_err(|e| e.in_file(wav))?.frames,
            "c",
        )
    };
    let mut buf = Vec::new();
    write_matrix_csv(&mut buf, prefix, &rows).expect("writing to memory");
    write_file(out, buf)?;
    Ok(rows.nrows())
}
