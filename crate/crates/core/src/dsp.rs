//! Feature front-end: framing, Hann windowing, power spectrum, mel
//! filterbank, MFCCs and temporal context stacking.
//!
//! Defaults target 16 kHz audio: 25 ms frames (400 samples), 10 ms hop
//! (160 samples), 512-point FFT, 40 HTK-mel triangles over 0-8 kHz,
//! natural log with a 1e-10 floor, orthonormal DCT-II, coefficients
//! c0..c24. No pre-emphasis, liftering, deltas or mean normalization.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, Axis};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Mono PCM audio with samples nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        Self {
            samples,
            sample_rate_hz,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfccConfig {
    pub sample_rate_hz: u32,
    /// Frame length in samples.
    pub frame_len: usize,
    /// Hop between frame starts in samples.
    pub hop: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub n_coeffs: usize,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self::for_rate(16_000)
    }
}

impl MfccConfig {
    /// 25 ms / 10 ms framing at the given rate, FFT size rounded up to a
    /// power of two.
    pub fn for_rate(sample_rate_hz: u32) -> Self {
        let sr = f64::from(sample_rate_hz);
        let frame_len = (0.025 * sr).round() as usize;
        Self {
            sample_rate_hz,
            frame_len,
            hop: (0.010 * sr).round() as usize,
            n_fft: frame_len.next_power_of_two(),
            n_mels: 40,
            f_min_hz: 0.0,
            f_max_hz: sr / 2.0,
            n_coeffs: 25,
            log_floor: 1e-10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.sample_rate_hz == 0 {
            return Err(Error::BadSampleRate(0));
        }
        if self.frame_len < 2 || self.hop == 0 {
            return bad("frame_len must be >= 2 and hop >= 1");
        }
        if self.n_fft < self.frame_len {
            return bad("n_fft must be >= frame_len");
        }
        if self.n_mels == 0 || self.n_coeffs == 0 || self.n_coeffs > self.n_mels {
            return bad("need 1 <= n_coeffs <= n_mels");
        }
        if !(self.f_min_hz >= 0.0
            && self.f_max_hz > self.f_min_hz
            && self.f_max_hz <= f64::from(self.sample_rate_hz) / 2.0)
        {
            return bad("filterbank range must satisfy 0 <= f_min < f_max <= Nyquist");
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive");
        }
        Ok(())
    }

    /// Number of frames produced for a clip of `num_samples`, or 0 if the
    /// clip is shorter than one frame.
    pub fn frame_count(&self, num_samples: usize) -> usize {
        if num_samples < self.frame_len {
            0
        } else {
            (num_samples - self.frame_len) / self.hop + 1
        }
    }

    /// Short content hash identifying this front-end configuration.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex_prefix(&Sha256::digest(&json), 16)
    }
}

pub(crate) fn hex_prefix(bytes: &[u8], n: usize) -> String {
    bytes
        .iter()
        .take(n / 2)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Per-frame cepstral features for one utterance: `frames` is T x n_coeffs.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: Array2<f64>,
    pub frame_len_s: f64,
    pub frame_hop_s: f64,
}

impl FeatureMatrix {
    pub fn new(frames: Array2<f64>, frame_len_s: f64, frame_hop_s: f64) -> Self {
        Self {
            frames,
            frame_len_s,
            frame_hop_s,
        }
    }

    /// Wraps raw rows using the default 25 ms / 10 ms timing.
    pub fn from_rows(frames: Array2<f64>) -> Self {
        Self::new(frames, 0.025, 0.010)
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn row(&self, t: usize) -> ArrayView1<'_, f64> {
        self.frames.row(t)
    }

    /// Stacks several matrices into one aggregated matrix.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a FeatureMatrix>) -> Result<FeatureMatrix> {
        let parts: Vec<&FeatureMatrix> = parts.into_iter().collect();
        let first = parts.first().ok_or(Error::EmptyFeatureMatrix)?;
        let views: Vec<_> = parts.iter().map(|p| p.frames.view()).collect();
        let frames =
            ndarray::concatenate(Axis(0), &views).map_err(|_| Error::DimensionMismatch {
                expected: first.dim(),
                got: parts
                    .iter()
                    .map(|p| p.dim())
                    .find(|&d| d != first.dim())
                    .unwrap_or(0),
            })?;
        Ok(FeatureMatrix::new(
            frames,
            first.frame_len_s,
            first.frame_hop_s,
        ))
    }
}

/// Symmetric Hann window `w[n] = 0.5 (1 - cos(2 pi n / (N - 1)))`.
pub fn hann_window(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = (len - 1) as f64;
    (0..len)
        .map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / denom).cos()))
        .collect()
}

/// Splits a clip into overlapping Hann-windowed frames.
/// Frame `i` covers samples `[hop * i, hop * i + frame_len)`.
pub fn frame_and_window(clip: &AudioClip, config: &MfccConfig) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    check_rate(clip, config)?;
    let n = config.frame_count(clip.samples.len());
    if n == 0 {
        return Err(Error::ClipTooShort {
            samples: clip.samples.len(),
            needed: config.frame_len,
        });
    }
    let window = hann_window(config.frame_len);
    Ok((0..n)
        .map(|i| {
            let start = i * config.hop;
            clip.samples[start..start + config.frame_len]
                .iter()
                .zip(&window)
                .map(|(s, w)| s * w)
                .collect()
        })
        .collect())
}

fn check_rate(clip: &AudioClip, config: &MfccConfig) -> Result<()> {
    if clip.sample_rate_hz != config.sample_rate_hz {
        return Err(Error::InvalidConfig(format!(
            "clip is {} Hz but the front-end expects {} Hz",
            clip.sample_rate_hz, config.sample_rate_hz
        )));
    }
    Ok(())
}

/// `|DFT|^2` of a frame zero-padded to `n_fft`, bins `0..=n_fft/2`.
pub fn power_spectrum(frame: &[f64], n_fft: usize) -> Result<Vec<f64>> {
    if frame.len() > n_fft {
        return Err(Error::InvalidConfig(format!(
            "frame of {} samples exceeds n_fft = {n_fft}",
            frame.len()
        )));
    }
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    Ok(power_spectrum_with(&*fft, frame, &mut buf))
}

fn power_spectrum_with(fft: &dyn Fft<f64>, frame: &[f64], buf: &mut [Complex<f64>]) -> Vec<f64> {
    for (i, c) in buf.iter_mut().enumerate() {
        *c = Complex::new(frame.get(i).copied().unwrap_or(0.0), 0.0);
    }
    fft.process(buf);
    buf[..buf.len() / 2 + 1]
        .iter()
        .map(|c| c.norm_sqr())
        .collect()
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with unit peak height, centers equally spaced on the
/// HTK mel scale. Returns `n_mels` rows of `n_fft / 2 + 1` weights.
pub fn mel_filterbank(config: &MfccConfig) -> Vec<Vec<f64>> {
    let n_bins = config.n_fft / 2 + 1;
    let mel_lo = hz_to_mel(config.f_min_hz);
    let mel_hi = hz_to_mel(config.f_max_hz);
    let step = (mel_hi - mel_lo) / (config.n_mels + 1) as f64;
    let edges: Vec<f64> = (0..config.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + step * i as f64))
        .collect();
    let bin_hz = f64::from(config.sample_rate_hz) / config.n_fft as f64;
    (0..config.n_mels)
        .map(|m| {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let rising = (f - lo) / (center - lo);
                    let falling = (hi - f) / (hi - center);
                    rising.min(falling).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II basis, `n_coeffs` rows of length `n_inputs`.
pub fn dct_matrix(n_coeffs: usize, n_inputs: usize) -> Vec<Vec<f64>> {
    let m = n_inputs as f64;
    (0..n_coeffs)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / m).sqrt()
            } else {
                (2.0 / m).sqrt()
            };
            (0..n_inputs)
                .map(|n| scale * (PI * k as f64 * (2 * n + 1) as f64 / (2.0 * m)).cos())
                .collect()
        })
        .collect()
}

/// Reusable MFCC pipeline with precomputed window, filterbank, DCT basis and
/// FFT plan.
pub struct MfccExtractor {
    config: MfccConfig,
    window: Vec<f64>,
    filterbank: Vec<Vec<f64>>,
    dct: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl MfccExtractor {
    pub fn new(config: MfccConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            window: hann_window(config.frame_len),
            filterbank: mel_filterbank(&config),
            dct: dct_matrix(config.n_coeffs, config.n_mels),
            fft: FftPlanner::new().plan_fft_forward(config.n_fft),
            config,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.config
    }

    fn frames<'a>(&'a self, clip: &'a AudioClip) -> Result<impl Iterator<Item = Vec<f64>> + 'a> {
        check_rate(clip, &self.config)?;
        let n = self.config.frame_count(clip.samples.len());
        if n == 0 {
            return Err(Error::ClipTooShort {
                samples: clip.samples.len(),
                needed: self.config.frame_len,
            });
        }
        Ok((0..n).map(move |i| {
            let start = i * self.config.hop;
            clip.samples[start..start + self.config.frame_len]
                .iter()
                .zip(&self.window)
                .map(|(s, w)| s * w)
                .collect()
        }))
    }

    /// Power spectrogram, one row of `n_fft / 2 + 1` bins per frame.
    pub fn spectrogram(&self, clip: &AudioClip) -> Result<Array2<f64>> {
        let mut buf = vec![Complex::new(0.0, 0.0); self.config.n_fft];
        let rows: Vec<Vec<f64>> = self
            .frames(clip)?
            .map(|f| power_spectrum_with(&*self.fft, &f, &mut buf))
            .collect();
        Ok(rows_to_array(rows, self.config.n_fft / 2 + 1))
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<FeatureMatrix> {
        let cfg = &self.config;
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        let mut log_mel = vec![0.0; cfg.n_mels];
        let rows: Vec<Vec<f64>> = self
            .frames(clip)?
            .map(|frame| {
                let power = power_spectrum_with(&*self.fft, &frame, &mut buf);
                for (out, filter) in log_mel.iter_mut().zip(&self.filterbank) {
                    let energy: f64 = filter.iter().zip(&power).map(|(w, p)| w * p).sum();
                    *out = energy.max(cfg.log_floor).ln();
                }
                self.dct
                    .iter()
                    .map(|basis| basis.iter().zip(&log_mel).map(|(b, e)| b * e).sum())
                    .collect()
            })
            .collect();
        let sr = f64::from(cfg.sample_rate_hz);
        Ok(FeatureMatrix::new(
            rows_to_array(rows, cfg.n_coeffs),
            cfg.frame_len as f64 / sr,
            cfg.hop as f64 / sr,
        ))
    }
}

fn rows_to_array(rows: Vec<Vec<f64>>, cols: usize) -> Array2<f64> {
    let n = rows.len();
    Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect())
        .expect("rows have uniform length")
}

pub fn extract_mfcc(clip: &AudioClip, config: &MfccConfig) -> Result<FeatureMatrix> {
    MfccExtractor::new(config.clone())?.extract(clip)
}

/// Frames of left/right context around a center frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextLayout {
    pub left: usize,
    pub right: usize,
}

impl Default for ContextLayout {
    /// 24 left + center + 25 right = 50 frames (1250 values at 25 coefficients).
    fn default() -> Self {
        Self {
            left: 24,
            right: 25,
        }
    }
}

impl ContextLayout {
    pub fn width(&self) -> usize {
        self.left + 1 + self.right
    }
}

/// A context window of frames flattened in temporal order.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedFeature {
    pub vector: Vec<f64>,
    pub center_frame: usize,
}

/// Concatenates frames `[center - left, center + right]`; positions outside
/// the utterance repeat the first or last frame.
pub fn stack_context(
    features: &FeatureMatrix,
    center: usize,
    layout: ContextLayout,
) -> Result<StackedFeature> {
    let mut vector = Vec::with_capacity(layout.width() * features.dim());
    stack_into(features, center, layout, &mut vector)?;
    Ok(StackedFeature {
        vector,
        center_frame: center,
    })
}

/// Appends the stacked context of `center` to `out`.
pub(crate) fn stack_into(
    features: &FeatureMatrix,
    center: usize,
    layout: ContextLayout,
    out: &mut Vec<f64>,
) -> Result<()> {
    let t = features.num_frames();
    if t == 0 {
        return Err(Error::EmptyFeatureMatrix);
    }
    if center >= t {
        return Err(Error::InvalidConfig(format!(
            "center frame {center} out of range for {t} frames"
        )));
    }
    let first = center as isize - layout.left as isize;
    for offset in 0..layout.width() as isize {
        let idx = (first + offset).clamp(0, t as isize - 1) as usize;
        out.extend(features.row(idx).iter().copied());
    }
    Ok(())
}

/// Centers `0, stride, 2 * stride, ...` clamped to the last frame.
pub fn observation_centers(num_frames: usize, count: usize, stride: usize) -> Vec<usize> {
    (0..count)
        .map(|i| (i * stride).min(num_frames.saturating_sub(1)))
        .collect()
}

/// Picks `count` observations spaced `stride` frames apart and stacks their
/// context. Short utterances repeat the final frame's observation.
pub fn select_observations(
    features: &FeatureMatrix,
    count: usize,
    stride: usize,
    layout: ContextLayout,
) -> Result<Vec<StackedFeature>> {
    if features.is_empty() {
        return Err(Error::EmptyFeatureMatrix);
    }
    observation_centers(features.num_frames(), count, stride)
        .into_iter()
        .map(|c| stack_context(features, c, layout))
        .collect()
}

/// Writes one CSV row per frame with 9 significant digits.
pub fn write_matrix_csv<W: Write>(
    mut out: W,
    header_prefix: &str,
    rows: &Array2<f64>,
) -> std::io::Result<()> {
    let header: Vec<String> = (0..rows.ncols())
        .map(|i| format!("{header_prefix}{i}"))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for row in rows.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.8e}")).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn clip(n: usize) -> AudioClip {
        AudioClip::new(
            (0..n).map(|i| (i as f64 * 0.01).sin() * 0.3).collect(),
            16_000,
        )
    }

    #[test]
    fn one_second_gives_98_frames() {
        let frames = frame_and_window(&clip(16_000), &MfccConfig::default()).unwrap();
        assert_eq!(frames.len(), 98);
        assert!(frames.iter().all(|f| f.len() == 400));
    }

    #[test]
    fn hann_endpoints() {
        let w = hann_window(400);
        assert_eq!(w[0], 0.0);
        assert!((w[399]).abs() < 1e-15);
        assert!(w[199] > 0.9999 && w[200] > 0.9999);
        assert!((w[199] - w[200]).abs() < 1e-12);
    }

    #[test]
    fn short_clip_is_rejected() {
        let err = frame_and_window(&clip(399), &MfccConfig::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::ClipTooShort {
                samples: 399,
                needed: 400
            }
        ));
        assert!(matches!(
            extract_mfcc(&clip(399), &MfccConfig::default()),
            Err(Error::ClipTooShort { .. })
        ));
        assert_eq!(
            frame_and_window(&clip(400), &MfccConfig::default())
                .unwrap()
                .len(),
            1
        );
    }

    #[test]
    fn wrong_rate_is_rejected() {
        let c = AudioClip::new(vec![0.0; 1000], 8_000);
        assert!(matches!(
            extract_mfcc(&c, &MfccConfig::default()),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn zero_frame_has_zero_spectrum() {
        let p = power_spectrum(&[0.0; 400], 512).unwrap();
        assert_eq!(p.len(), 257);
        assert!(p.iter().all(|&v| v == 0.0));
        assert!(power_spectrum(&[0.0; 600], 512).is_err());
    }

    #[test]
    fn silent_clip_hits_log_floor() {
        let cfg = MfccConfig::default();
        let f = extract_mfcc(&AudioClip::new(vec![0.0; 1600], 16_000), &cfg).unwrap();
        let expected_c0 = (cfg.n_mels as f64).sqrt() * cfg.log_floor.ln();
        for row in f.frames.rows() {
            assert!((row[0] - expected_c0).abs() < 1e-9);
            assert!(row.iter().skip(1).all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn frame_count_formula() {
        let cfg = MfccConfig::default();
        for n in [400usize, 559, 560, 16_000, 32_123] {
            let f = extract_mfcc(&clip(n), &cfg).unwrap();
            assert_eq!(f.num_frames(), (n - 400) / 160 + 1);
            assert_eq!(f.dim(), 25);
        }
    }

    #[test]
    fn filterbank_shape_and_peaks() {
        let cfg = MfccConfig::default();
        let fb = mel_filterbank(&cfg);
        assert_eq!(fb.len(), 40);
        assert!(fb.iter().all(|f| f.len() == 257));
        assert!(fb.iter().flatten().all(|&w| (0.0..=1.0).contains(&w)));
        // every filter touches at least one bin
        assert!(fb.iter().all(|f| f.iter().any(|&w| w > 0.0)));
    }

    #[test]
    fn dct_basis_is_orthonormal() {
        let d = dct_matrix(40, 40);
        for i in 0..40 {
            for j in 0..40 {
                let dot: f64 = d[i].iter().zip(&d[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    fn numbered(t: usize) -> FeatureMatrix {
        FeatureMatrix::from_rows(Array2::from_shape_fn((t, 25), |(i, j)| {
            (i * 100 + j) as f64
        }))
    }

    #[test]
    fn stacking_interior_and_edges() {
        let f = numbered(100);
        let s = stack_context(&f, 50, ContextLayout::default()).unwrap();
        assert_eq!(s.vector.len(), 1250);
        assert_eq!(&s.vector[..25], f.row(26).to_vec().as_slice());
        assert_eq!(&s.vector[1225..], f.row(75).to_vec().as_slice());

        let f = numbered(10);
        let s = stack_context(&f, 0, ContextLayout::default()).unwrap();
        for block in 0..25 {
            assert_eq!(
                &s.vector[block * 25..block * 25 + 25],
                f.row(0).to_vec().as_slice()
            );
        }
        assert_eq!(&s.vector[25 * 25..26 * 25], f.row(1).to_vec().as_slice());
        assert!(stack_context(&f, 10, ContextLayout::default()).is_err());
    }

    #[test]
    fn constant_matrix_stacks_to_copies() {
        let row = array![1.5, -2.0, 3.25];
        let f = FeatureMatrix::from_rows(Array2::from_shape_fn((7, 3), |(_, j)| row[j]));
        let s = stack_context(&f, 3, ContextLayout::default()).unwrap();
        assert_eq!(s.vector.len(), 150);
        assert!(s.vector.chunks(3).all(|c| c == row.as_slice().unwrap()));
    }

    #[test]
    fn observation_selection() {
        assert_eq!(
            observation_centers(100, 15, 5),
            (0..15).map(|i| i * 5).collect::<Vec<_>>()
        );
        let mut short = vec![0, 5];
        short.extend(std::iter::repeat_n(7, 13));
        assert_eq!(observation_centers(8, 15, 5), short);

        let single = numbered(1);
        let obs = select_observations(&single, 15, 5, ContextLayout::default()).unwrap();
        assert_eq!(obs.len(), 15);
        assert!(obs.iter().all(|o| o.vector == obs[0].vector));

        let empty = FeatureMatrix::from_rows(Array2::zeros((0, 25)));
        assert!(matches!(
            select_observations(&empty, 15, 5, ContextLayout::default()),
            Err(Error::EmptyFeatureMatrix)
        ));
        assert!(matches!(
            stack_context(&empty, 0, ContextLayout::default()),
            Err(Error::EmptyFeatureMatrix)
        ));
    }

    #[test]
    fn csv_uses_nine_significant_digits() {
        let mut out = Vec::new();
        write_matrix_csv(&mut out, "c", &array![[1.0, -0.000123456789123]]).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert_eq!(s, "c0,c1\n1.00000000e0,-1.23456789e-4\n");
    }
}
