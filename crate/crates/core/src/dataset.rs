//! Corpus manifests, the enroll/test/development split, and a deterministic
//! synthetic snore corpus for running the pipeline without restricted data.
//!
//! Manifest format: CSV with header `subject_id,utterance_index,audio_path,duration_s`,
//! preceded by an optional `# sample_rate_hz=<n>` line (16000 when absent).
//! Audio paths are relative to the manifest's directory.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::AudioClip;
use crate::error::{Error, Result};
use crate::wav;

pub const DEFAULT_SAMPLE_RATE_HZ: u32 = 16_000;
const RATE_KEY: &str = "sample_rate_hz";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub subject_id: String,
    pub utterance_index: usize,
    pub audio_path: PathBuf,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<UtteranceRecord>,
    pub sample_rate_hz: u32,
}

impl DatasetManifest {
    /// Validates and builds a manifest.
    pub fn new(records: Vec<UtteranceRecord>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::BadSampleRate(sample_rate_hz));
        }
        if records.is_empty() {
            return Err(Error::parse("manifest", "no utterance records"));
        }
        let mut seen = HashSet::new();
        for r in &records {
            if !(r.duration_s > 0.0) {
                return Err(Error::parse(
                    "manifest",
                    format!(
                        "({}, {}) has non-positive duration {}",
                        r.subject_id, r.utterance_index, r.duration_s
                    ),
                ));
            }
            if !seen.insert((r.subject_id.as_str(), r.utterance_index)) {
                return Err(Error::DuplicateUtterance {
                    subject: r.subject_id.clone(),
                    index: r.utterance_index,
                });
            }
        }
        Ok(Self {
            records,
            sample_rate_hz,
        })
    }

    pub fn subjects(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.subject_id.as_str()).collect()
    }
}

/// Reads a manifest CSV; audio paths are resolved against its directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let context = path.display().to_string();

    let mut sample_rate_hz = DEFAULT_SAMPLE_RATE_HZ;
    for line in text.lines().map(str::trim).filter(|l| l.starts_with('#')) {
        let body = line.trim_start_matches('#').trim();
        if let Some((key, value)) = body.split_once('=') {
            if key.trim() == RATE_KEY {
                sample_rate_hz = value
                    .trim()
                    .parse()
                    .map_err(|e| Error::parse(&context, format!("{RATE_KEY}: {e}")))?;
            }
        }
    }

    let root = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(&context, e))?
        .clone();
    let expected = ["subject_id", "utterance_index", "audio_path", "duration_s"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::parse(
            &context,
            format!("header must be {}", expected.join(",")),
        ));
    }
    let records = reader
        .deserialize::<UtteranceRecord>()
        .map(|row| {
            let mut r = row.map_err(|e| Error::parse(&context, e))?;
            r.audio_path = root.join(&r.audio_path);
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    DatasetManifest::new(records, sample_rate_hz)
}

/// Writes a manifest, storing audio paths relative to the manifest's
/// directory when possible.
pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let root = path.parent().unwrap_or(Path::new(""));
    let mut out = format!("# {RATE_KEY}={}\n", manifest.sample_rate_hz).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        for r in &manifest.records {
            let rel = r.audio_path.strip_prefix(root).unwrap_or(&r.audio_path);
            w.serialize(UtteranceRecord {
                audio_path: rel.to_path_buf(),
                ..r.clone()
            })
            .map_err(|e| Error::parse(path.display().to_string(), e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Enrollment / test / development partition.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    /// Subjects with enough utterances, in sorted order.
    pub eligible_subjects: Vec<String>,
    pub enroll: BTreeMap<String, Vec<UtteranceRecord>>,
    pub test: BTreeMap<String, UtteranceRecord>,
    /// Every subject in the manifest, at most four utterances each, never
    /// containing a test utterance.
    pub development: BTreeMap<String, Vec<UtteranceRecord>>,
}

impl SplitPlan {
    pub fn test_records(&self) -> impl Iterator<Item = &UtteranceRecord> {
        self.eligible_subjects.iter().map(|s| &self.test[s])
    }
}

/// Number of leading utterances used for enrollment and development.
pub const ENROLL_UTTERANCES: usize = 4;

/// Splits a manifest. Per subject, utterances are ordered by
/// `utterance_index`. Subjects with at least `min_utterances` recordings are
/// eligible: the first `min(4, min_utterances - 1)` enroll and the next one
/// is held out for testing. Development uses the enrollment utterances for
/// eligible subjects and the first four (or all) for the rest.
pub fn make_split(manifest: &DatasetManifest, min_utterances: usize) -> Result<SplitPlan> {
    if min_utterances < 2 {
        return Err(Error::InvalidConfig(format!(
            "min_utterances must be >= 2, got {min_utterances}"
        )));
    }
    let n_enroll = ENROLL_UTTERANCES.min(min_utterances - 1);

    let mut by_subject: BTreeMap<&str, Vec<&UtteranceRecord>> = BTreeMap::new();
    for r in &manifest.records {
        by_subject.entry(&r.subject_id).or_default().push(r);
    }

    let mut plan = SplitPlan {
        eligible_subjects: Vec::new(),
        enroll: BTreeMap::new(),
        test: BTreeMap::new(),
        development: BTreeMap::new(),
    };
    for (subject, mut records) in by_subject {
        records.sort_by_key(|r| r.utterance_index);
        let subject = subject.to_string();
        if records.len() >= min_utterances {
            let enroll: Vec<UtteranceRecord> =
                records[..n_enroll].iter().map(|&r| r.clone()).collect();
            plan.test.insert(subject.clone(), records[n_enroll].clone());
            plan.development.insert(subject.clone(), enroll.clone());
            plan.enroll.insert(subject.clone(), enroll);
            plan.eligible_subjects.push(subject);
        } else {
            let dev = records
                .iter()
                .take(ENROLL_UTTERANCES)
                .map(|&r| r.clone())
                .collect();
            plan.development.insert(subject, dev);
        }
    }
    if plan.eligible_subjects.is_empty() {
        return Err(Error::NoEligibleSubjects(min_utterances));
    }
    Ok(plan)
}

/// Parameters of the synthetic corpus. Each subject gets `n_peaks` resonances
/// with centers drawn log-uniformly in `[f_lo_hz, f_hi_hz]`; each utterance
/// jitters every center by up to `jitter` (relative) and adds white noise at
/// `snr_db`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_subjects: usize,
    pub utterances_per_subject: usize,
    pub duration_s: f64,
    pub seed: u64,
    pub sample_rate_hz: u32,
    pub n_peaks: usize,
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
    pub jitter: f64,
    pub snr_db: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_subjects: 10,
            utterances_per_subject: 5,
            duration_s: 2.0,
            seed: 7,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            n_peaks: 3,
            f_lo_hz: 80.0,
            f_hi_hz: 2000.0,
            jitter: 0.03,
            snr_db: 20.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_subjects < 2 {
            return bad(format!("n_subjects must be >= 2, got {}", self.n_subjects));
        }
        if self.utterances_per_subject < 5 {
            return bad(format!(
                "utterances_per_subject must be >= 5, got {}",
                self.utterances_per_subject
            ));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::BadSampleRate(0));
        }
        if !(self.duration_s * f64::from(self.sample_rate_hz) >= 1.0) {
            return bad(format!("duration {} s is too short", self.duration_s));
        }
        if self.n_peaks == 0
            || !(self.f_lo_hz > 0.0 && self.f_hi_hz > self.f_lo_hz)
            || self.f_hi_hz >= f64::from(self.sample_rate_hz) / 2.0
        {
            return bad("resonance range must satisfy 0 < f_lo < f_hi < Nyquist".into());
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return bad(format!("jitter {} outside [0, 0.5)", self.jitter));
        }
        Ok(())
    }

    pub fn subject_id(&self, subject: usize) -> String {
        let width = (self.n_subjects - 1).to_string().len().max(2);
        format!("s{subject:0width$}")
    }
}

/// Fixed per-subject resonance signature.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectSignature {
    pub centers_hz: Vec<f64>,
    pub bandwidths_hz: Vec<f64>,
    pub gains: Vec<f64>,
    pub pitch_hz: f64,
}

fn stream_seed(seed: u64, subject: usize, stream: u64) -> u64 {
    // splitmix-style mixing so neighbouring indices give unrelated streams
    let mut z = seed
        .wrapping_add((subject as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn subject_signature(spec: &SyntheticSpec, subject: usize) -> SubjectSignature {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, subject, u64::MAX));
    let (lo, hi) = (spec.f_lo_hz.ln(), spec.f_hi_hz.ln());
    let mut centers_hz: Vec<f64> = (0..spec.n_peaks)
        .map(|_| rng.random_range(lo..hi).exp())
        .collect();
    centers_hz.sort_by(f64::total_cmp);
    SubjectSignature {
        bandwidths_hz: (0..spec.n_peaks)
            .map(|_| rng.random_range(40.0..120.0))
            .collect(),
        gains: (0..spec.n_peaks)
            .map(|_| rng.random_range(0.5..1.0))
            .collect(),
        pitch_hz: rng.random_range(25.0..90.0),
        centers_hz,
    }
}

/// Renders one utterance of a subject. Deterministic in (spec, subject, utterance).
pub fn synthesize_utterance(spec: &SyntheticSpec, subject: usize, utterance: usize) -> AudioClip {
    let sig = subject_signature(spec, subject);
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, subject, utterance as u64));
    let sr = f64::from(spec.sample_rate_hz);
    let n = (spec.duration_s * sr).round() as usize;

    // excitation: jittered pulse train plus breath noise
    let mut excitation = vec![0.0; n];
    let mut next_pulse = rng.random_range(0.0..sr / sig.pitch_hz);
    for (i, e) in excitation.iter_mut().enumerate() {
        let g: f64 = StandardNormal.sample(&mut rng);
        *e = 0.5 * g;
        if i as f64 >= next_pulse {
            *e += 4.0;
            next_pulse += sr / sig.pitch_hz * rng.random_range(0.9..1.1);
        }
    }

    let mut voiced = vec![0.0; n];
    for ((&center, &bw), &gain) in sig
        .centers_hz
        .iter()
        .zip(&sig.bandwidths_hz)
        .zip(&sig.gains)
    {
        let f = center * (1.0 + rng.random_range(-spec.jitter..=spec.jitter));
        let r = (-PI * bw / sr).exp();
        let a1 = 2.0 * r * (2.0 * PI * f / sr).cos();
        let a2 = -r * r;
        let (mut y1, mut y2) = (0.0, 0.0);
        for (out, &x) in voiced.iter_mut().zip(&excitation) {
            let y = (1.0 - r) * x + a1 * y1 + a2 * y2;
            *out += gain * y;
            y2 = y1;
            y1 = y;
        }
    }

    // snore-like burst envelope with 10% raised-cosine fades
    let fade = (n / 10).max(1);
    for (i, v) in voiced.iter_mut().enumerate() {
        let edge = i.min(n - 1 - i);
        if edge < fade {
            *v *= 0.5 * (1.0 - (PI * edge as f64 / fade as f64).cos());
        }
    }

    let rms = (voiced.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let level = 0.1 * rng.random_range(0.9..1.1);
    let scale = if rms > 0.0 { level / rms } else { 0.0 };
    let noise_rms = level * 10f64.powf(-spec.snr_db / 20.0);
    let samples = voiced
        .into_iter()
        .map(|v| {
            let g: f64 = StandardNormal.sample(&mut rng);
            (v * scale + noise_rms * g).clamp(-1.0, 1.0)
        })
        .collect();
    AudioClip::new(samples, spec.sample_rate_hz)
}

/// Writes `n_subjects * utterances_per_subject` WAV files plus
/// `manifest.csv` into `out_dir` and returns the manifest.
pub fn generate_synthetic_corpus(
    spec: &SyntheticSpec,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let jobs: Vec<(usize, usize)> = (0..spec.n_subjects)
        .flat_map(|s| (0..spec.utterances_per_subject).map(move |u| (s, u)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(s, u)| {
            let subject_id = spec.subject_id(s);
            let path = out_dir.join(format!("{subject_id}_{u:02}.wav"));
            let clip = synthesize_utterance(spec, s, u);
            wav::write_wav(&path, &clip)?;
            Ok(UtteranceRecord {
                subject_id,
                utterance_index: u,
                audio_path: path,
                duration_s: clip.duration_s(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = DatasetManifest::new(records, spec.sample_rate_hz)?;
    write_manifest(&manifest, out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(subject: &str, index: usize) -> UtteranceRecord {
        UtteranceRecord {
            subject_id: subject.into(),
            utterance_index: index,
            audio_path: format!("{subject}_{index}.wav").into(),
            duration_s: 1.0,
        }
    }

    fn manifest(counts: &[(&str, usize)]) -> DatasetManifest {
        let records = counts
            .iter()
            .flat_map(|&(s, n)| (0..n).map(move |i| rec(s, i)))
            .collect();
        DatasetManifest::new(records, 16_000).unwrap()
    }

    #[test]
    fn load_two_by_five() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut text = String::from(
            "# sample_rate_hz=16000\nsubject_id,utterance_index,audio_path,duration_s\n",
        );
        for s in ["a", "b"] {
            for i in 0..5 {
                text += &format!("{s},{i},audio/{s}{i}.wav,1.5\n");
            }
        }
        fs::write(&path, text).unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.records.len(), 10);
        assert_eq!(m.sample_rate_hz, 16_000);
        assert_eq!(m.records[3].audio_path, dir.path().join("audio/a3.wav"));
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_manifest(dir.path().join("absent.csv")),
            Err(Error::MissingFile(_))
        ));

        let dup = dir.path().join("dup.csv");
        fs::write(
            &dup,
            "subject_id,utterance_index,audio_path,duration_s\ns1,2,a.wav,1\ns1,2,b.wav,1\n",
        )
        .unwrap();
        assert!(matches!(
            load_manifest(&dup),
            Err(Error::DuplicateUtterance { ref subject, index: 2 }) if subject == "s1"
        ));

        let rate = dir.path().join("rate.csv");
        fs::write(
            &rate,
            "# sample_rate_hz=0\nsubject_id,utterance_index,audio_path,duration_s\ns1,0,a.wav,1\n",
        )
        .unwrap();
        assert!(matches!(load_manifest(&rate), Err(Error::BadSampleRate(0))));

        let bad = dir.path().join("bad.csv");
        fs::write(
            &bad,
            "subject_id,utterance_index,audio_path,duration_s\ns1,x,a.wav,1\n",
        )
        .unwrap();
        assert!(matches!(load_manifest(&bad), Err(Error::Parse { .. })));

        let header = dir.path().join("header.csv");
        fs::write(&header, "who,idx,path,dur\ns1,0,a.wav,1\n").unwrap();
        assert!(matches!(load_manifest(&header), Err(Error::Parse { .. })));
    }

    #[test]
    fn write_then_load_keeps_records() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest(&[("a", 2)]);
        for r in &mut m.records {
            r.audio_path = dir.path().join(&r.audio_path);
        }
        let path = dir.path().join("manifest.csv");
        write_manifest(&m, &path).unwrap();
        assert!(fs::read_to_string(&path).unwrap().contains(",a_0.wav,"));
        assert_eq!(load_manifest(&path).unwrap(), m);
    }

    #[test]
    fn split_boundaries() {
        let m = manifest(&[("five", 5), ("three", 3), ("seven", 7)]);
        let plan = make_split(&m, 5).unwrap();
        assert_eq!(plan.eligible_subjects, vec!["five", "seven"]);

        let enroll: Vec<usize> = plan.enroll["five"]
            .iter()
            .map(|r| r.utterance_index)
            .collect();
        assert_eq!(enroll, vec![0, 1, 2, 3]);
        assert_eq!(plan.test["five"].utterance_index, 4);
        assert_eq!(plan.development["five"], plan.enroll["five"]);
        assert_eq!(plan.test["seven"].utterance_index, 4);

        assert!(!plan.enroll.contains_key("three"));
        assert_eq!(plan.development["three"].len(), 3);
    }

    #[test]
    fn split_uses_index_order_not_file_order() {
        let mut m = manifest(&[("a", 5)]);
        m.records.reverse();
        let plan = make_split(&m, 5).unwrap();
        assert_eq!(plan.test["a"].utterance_index, 4);
    }

    #[test]
    fn split_errors() {
        let m = manifest(&[("a", 3)]);
        assert!(matches!(
            make_split(&m, 5),
            Err(Error::NoEligibleSubjects(5))
        ));
        assert!(matches!(make_split(&m, 1), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn synthetic_rejects_too_few_utterances() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            utterances_per_subject: 4,
            ..Default::default()
        };
        assert!(matches!(
            generate_synthetic_corpus(&spec, dir.path()),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn synthetic_signatures_stay_in_range() {
        let spec = SyntheticSpec::default();
        for s in 0..spec.n_subjects {
            let sig = subject_signature(&spec, s);
            assert_eq!(sig.centers_hz.len(), 3);
            assert!(sig.centers_hz.iter().all(|&f| (80.0..2000.0).contains(&f)));
        }
        assert_ne!(subject_signature(&spec, 0), subject_signature(&spec, 1));
        let clip = synthesize_utterance(&spec, 0, 0);
        assert_eq!(clip.samples.len(), 32_000);
        assert!(clip.samples.iter().all(|s| s.abs() <= 1.0));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn split_is_disjoint(counts in proptest::collection::vec(1usize..9, 1..12)) {
            let names: Vec<String> = (0..counts.len()).map(|i| format!("s{i}")).collect();
            let pairs: Vec<(&str, usize)> = names.iter().map(String::as_str).zip(counts.iter().copied()).collect();
            let m = manifest(&pairs);
            match make_split(&m, 5) {
                Ok(plan) => {
                    for s in &plan.eligible_subjects {
                        let test = &plan.test[s];
                        proptest::prop_assert_eq!(plan.enroll[s].len(), 4);
                        proptest::prop_assert!(!plan.enroll[s].contains(test));
                        for dev in plan.development.values() {
                            proptest::prop_assert!(!dev.contains(test));
                        }
                    }
                    proptest::prop_assert!(plan.development.values().all(|d| d.len() <= 4));
                    proptest::prop_assert_eq!(plan.development.len(), counts.len());
                    proptest::prop_assert_eq!(make_split(&m, 5).unwrap(), plan);
                }
                Err(Error::NoEligibleSubjects(_)) => proptest::prop_assert!(counts.iter().all(|&c| c < 5)),
                Err(e) => proptest::prop_assert!(false, "unexpected {e}"),
            }
        }
    }
}
