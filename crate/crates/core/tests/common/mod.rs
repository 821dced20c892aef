//! Independent reference implementations used by the integration tests.
//! Everything here is written from the textbook definitions with plain loops
//! and shares no code with the library beyond its public data types.

#![allow(
    dead_code,
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord
)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use snorer::dsp::FeatureMatrix;
use snorer::embedder::EmbeddingNetwork;

/// `|X_k|^2` for `k = 0..=n/2` by the direct O(n^2) DFT sum.
pub fn dft_power(frame: &[f64], n: usize) -> Vec<f64> {
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &x) in frame.iter().enumerate() {
                let angle = -2.0 * PI * (k * t % n) as f64 / n as f64;
                re += x * angle.cos();
                im += x * angle.sin();
            }
            re * re + im * im
        })
        .collect()
}

fn mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn inv_mel(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Weight of a unit-height triangle spanning `[lo, hi]` with apex `mid`.
fn triangle(f: f64, lo: f64, mid: f64, hi: f64) -> f64 {
    if f <= lo || f >= hi {
        0.0
    } else if f <= mid {
        (f - lo) / (mid - lo)
    } else {
        (hi - f) / (hi - mid)
    }
}

/// Brute-force MFCCs: 25 ms symmetric Hann frames every 10 ms, direct DFT at
/// 512 points, 40 HTK-mel triangles from 0 Hz to Nyquist, natural log with a
/// 1e-10 floor, orthonormal DCT-II, 25 coefficients. 16 kHz input.
pub fn mfcc_oracle(samples: &[f64]) -> Vec<Vec<f64>> {
    let (sr, len, hop, n_fft, n_mels, n_ceps) = (16_000.0, 400, 160, 512, 40, 25);
    let mut out = Vec::new();
    let mut start = 0;
    while start + len <= samples.len() {
        let frame: Vec<f64> = (0..len)
            .map(|n| {
                samples[start + n] * 0.5 * (1.0 - (2.0 * PI * n as f64 / (len - 1) as f64).cos())
            })
            .collect();
        let power = dft_power(&frame, n_fft);
        let top = mel(sr / 2.0);
        let edge = |i: usize| inv_mel(top * i as f64 / (n_mels + 1) as f64);
        let log_energy: Vec<f64> = (0..n_mels)
            .map(|m| {
                let e: f64 = power
                    .iter()
                    .enumerate()
                    .map(|(k, p)| {
                        p * triangle(
                            k as f64 * sr / n_fft as f64,
                            edge(m),
                            edge(m + 1),
                            edge(m + 2),
                        )
                    })
                    .sum();
                e.max(1e-10).ln()
            })
            .collect();
        let ceps = (0..n_ceps)
            .map(|q| {
                let norm = if q == 0 {
                    (1.0 / n_mels as f64).sqrt()
                } else {
                    (2.0 / n_mels as f64).sqrt()
                };
                norm * log_energy
                    .iter()
                    .enumerate()
                    .map(|(m, e)| e * (PI * q as f64 * (m as f64 + 0.5) / n_mels as f64).cos())
                    .sum::<f64>()
            })
            .collect();
        out.push(ceps);
        start += hop;
    }
    out
}

/// Random test clip: a few sinusoids, white noise, and sometimes a silent
/// stretch, 0.05 to 0.6 s long.
pub fn random_clip(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.random_range(800..9600);
    let tones: Vec<(f64, f64, f64)> = (0..rng.random_range(0..4))
        .map(|_| {
            (
                rng.random_range(50.0..7900.0),
                rng.random_range(0.01..0.5),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let noise = rng.random_range(0.0..0.2);
    let silent = if rng.random_bool(0.2) {
        rng.random_range(0..n)
    } else {
        n
    };
    (0..n)
        .map(|t| {
            if t >= silent {
                return 0.0;
            }
            let g: f64 = StandardNormal.sample(rng);
            tones
                .iter()
                .map(|(f, a, p)| a * (2.0 * PI * f * t as f64 / 16_000.0 + p).sin())
                .sum::<f64>()
                + noise * g
        })
        .collect()
}

/// Exact fraction with a positive denominator.
#[derive(Clone, Copy, Debug)]
pub struct Frac(pub i128, pub i128);

impl Frac {
    fn new(n: i128, d: i128) -> Self {
        if d < 0 {
            Frac(-n, -d)
        } else {
            Frac(n, d)
        }
    }
    fn sub(self, o: Frac) -> Frac {
        Frac::new(self.0 * o.1 - o.0 * self.1, self.1 * o.1)
    }
    fn add(self, o: Frac) -> Frac {
        Frac::new(self.0 * o.1 + o.0 * self.1, self.1 * o.1)
    }
    fn mul(self, o: Frac) -> Frac {
        Frac::new(self.0 * o.0, self.1 * o.1)
    }
    fn div(self, o: Frac) -> Frac {
        Frac::new(self.0 * o.1, self.1 * o.0)
    }
    fn reduce(self) -> Frac {
        let (mut a, mut b) = (self.0.unsigned_abs(), self.1.unsigned_abs());
        while b != 0 {
            (a, b) = (b, a % b);
        }
        let g = a.max(1) as i128;
        Frac(self.0 / g, self.1 / g)
    }
    fn sign(self) -> i128 {
        self.0.signum()
    }
    pub fn to_f64(self) -> f64 {
        let r = self.reduce();
        r.0 as f64 / r.1 as f64
    }
}

/// Equal error rate by exhaustive sweep in exact arithmetic: every distinct
/// score plus both infinities is a candidate threshold (accept iff
/// `score >= t`); the first candidate where FNR >= FPR is located by direct
/// counting, and the crossing of the segment joining it to its predecessor
/// with the line FNR = FPR gives the EER.
pub fn eer_oracle(genuine: &[f64], impostor: &[f64]) -> f64 {
    let mut cands: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    cands.push(f64::NEG_INFINITY);
    cands.push(f64::INFINITY);
    cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cands.dedup();
    let rates = |t: f64| {
        let fr = genuine.iter().filter(|&&s| !(s >= t)).count() as i128;
        let fa = impostor.iter().filter(|&&s| s >= t).count() as i128;
        (
            Frac::new(fr, genuine.len() as i128),
            Frac::new(fa, impostor.len() as i128),
        )
    };
    let mut prev = rates(cands[0]);
    for &t in &cands {
        let (fnr, fpr) = rates(t);
        let d = fnr.sub(fpr);
        if d.sign() == 0 {
            return fpr.to_f64();
        }
        if d.sign() > 0 {
            let (pfnr, pfpr) = prev;
            let dp = pfnr.sub(pfpr);
            // FPR(s) = pfpr + s (fpr - pfpr) where the gap dp + s (d - dp) is zero
            let s = Frac(0, 1).sub(dp).div(d.sub(dp));
            return pfpr.add(s.mul(fpr.sub(pfpr))).to_f64();
        }
        prev = (fnr, fpr);
    }
    unreachable!("at +inf every genuine trial is rejected")
}

/// Utterance embedding computed step by step: standardize, stack context
/// with edge replication, forward through the hidden layers with explicit
/// loops, normalize each activation, sum, normalize.
pub fn embedding_oracle(
    net: &EmbeddingNetwork,
    features: &FeatureMatrix,
    count: usize,
    stride: usize,
) -> Vec<f64> {
    let t = features.num_frames();
    let d = features.dim();
    let value = |row: usize, c: usize| {
        let v = features.frames[[row, c]];
        match &net.input_norm {
            Some(n) => (v - n.mean[c]) / n.std[c],
            None => v,
        }
    };
    let hidden = &net.layers[..net.layers.len() - 1];
    let mut total = vec![0.0; hidden.last().unwrap().bias.len()];
    for i in 0..count {
        let center = (i * stride).min(t - 1) as i64;
        let mut x = Vec::new();
        for off in -(net.context.left as i64)..=(net.context.right as i64) {
            let row = (center + off).clamp(0, t as i64 - 1) as usize;
            for c in 0..d {
                x.push(value(row, c));
            }
        }
        for layer in hidden {
            let (fan_in, fan_out) = layer.weights.dim();
            x = (0..fan_out)
                .map(|j| {
                    let mut z = layer.bias[j];
                    for k in 0..fan_in {
                        z += x[k] * layer.weights[[k, j]];
                    }
                    z.max(0.0)
                })
                .collect();
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (a, v) in total.iter_mut().zip(&x) {
            *a += v / norm;
        }
    }
    let norm = total.iter().map(|v| v * v).sum::<f64>().sqrt();
    total.iter().map(|v| v / norm).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Samples `n` points from an isotropic Gaussian around each mean.
pub fn gaussian_blobs(
    rng: &mut ChaCha8Rng,
    means: &[Vec<f64>],
    sigma: f64,
    n: usize,
) -> ndarray::Array2<f64> {
    let d = means[0].len();
    let mut data = Vec::with_capacity(means.len() * n * d);
    for m in means {
        for _ in 0..n {
            for &mu in m {
                let g: f64 = StandardNormal.sample(rng);
                data.push(mu + sigma * g);
            }
        }
    }
    ndarray::Array2::from_shape_vec((means.len() * n, d), data).unwrap()
}
