#![allow(clippy::needless_range_loop)]

mod common;

use std::f64::consts::PI;

use ndarray::{array, Array2};
use rand::Rng;

use snorer::dsp::{
    hann_window, mel_filterbank, power_spectrum, AudioClip, MfccConfig, MfccExtractor,
};
use snorer::gmm::{diagonal_gaussian_pdf, fit_gmm, score, GmmFitConfig, GmmMeta, GmmModel};
use snorer::recognizer::roc_and_eer;
use snorer::ubm::{adaptation_stats, map_adapt, MapConfig, UbmModel};

fn model(weights: Vec<f64>, means: Array2<f64>, variances: Array2<f64>) -> GmmModel {
    GmmModel {
        weights: weights.into(),
        means,
        variances,
        meta: GmmMeta {
            training_frame_count: 1,
            seed: 0,
        },
        adapted_from: None,
    }
}

#[test]
fn fft_power_matches_direct_dft() {
    let mut rng = common::rng(11);
    for _ in 0..20 {
        let frame: Vec<f64> = (0..400).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = power_spectrum(&frame, 512).unwrap();
        let slow = common::dft_power(&frame, 512);
        let scale = slow.iter().copied().fold(0.0, f64::max);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-9 * scale, "{a} vs {b}");
        }
    }
}

#[test]
fn sine_at_1khz_peaks_at_bin_32() {
    let window = hann_window(400);
    let frame: Vec<f64> = (0..400)
        .map(|n| window[n] * (2.0 * PI * 1000.0 * n as f64 / 16_000.0).sin())
        .collect();
    let p = power_spectrum(&frame, 512).unwrap();
    let peak = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
    assert_eq!(peak, 32);
    let direct = common::dft_power(&frame, 512);
    assert!((p[32] - direct[32]).abs() < 1e-9);
}

#[test]
fn parseval_holds_for_one_sided_power() {
    let mut rng = common::rng(12);
    let frame: Vec<f64> = (0..512).map(|_| rng.random_range(-1.0..1.0)).collect();
    let p = power_spectrum(&frame, 512).unwrap();
    let spectral = p[0] + p[256] + 2.0 * p[1..256].iter().sum::<f64>();
    let temporal = 512.0 * frame.iter().map(|x| x * x).sum::<f64>();
    assert!((spectral - temporal).abs() <= 1e-9 * temporal);
}

#[test]
fn filterbank_has_unit_peaks_and_covers_the_band() {
    let fb = mel_filterbank(&MfccConfig::default());
    assert_eq!(fb.len(), 40);
    for (m, row) in fb.iter().enumerate() {
        assert_eq!(row.len(), 257);
        let peak = row.iter().copied().fold(0.0, f64::max);
        assert!(peak > 0.5 && peak <= 1.0 + 1e-12, "filter {m} peak {peak}");
    }
    // only DC and Nyquist fall outside every triangle
    for k in 1..256 {
        assert!(fb.iter().any(|row| row[k] > 0.0), "bin {k} uncovered");
    }
}

#[test]
fn mfcc_matches_oracle_on_a_tone() {
    let samples: Vec<f64> = (0..4000)
        .map(|n| 0.3 * (2.0 * PI * 440.0 * n as f64 / 16_000.0).sin())
        .collect();
    let got = MfccExtractor::new(MfccConfig::default())
        .unwrap()
        .extract(&AudioClip::new(samples.clone(), 16_000))
        .unwrap();
    let want = common::mfcc_oracle(&samples);
    assert_eq!(got.num_frames(), want.len());
    for (t, row) in want.iter().enumerate() {
        for (c, w) in row.iter().enumerate() {
            assert!((got.frames[[t, c]] - w).abs() <= 1e-6 * w.abs().max(1e-3));
        }
    }
}

#[test]
fn delaying_by_one_hop_shifts_frames_by_one() {
    let mut rng = common::rng(13);
    let base: Vec<f64> = (0..6000).map(|_| rng.random_range(-0.5..0.5)).collect();
    let mut delayed = vec![0.0; 160];
    delayed.extend(&base);
    let ex = MfccExtractor::new(MfccConfig::default()).unwrap();
    let a = ex.extract(&AudioClip::new(base, 16_000)).unwrap();
    let b = ex.extract(&AudioClip::new(delayed, 16_000)).unwrap();
    assert_eq!(b.num_frames(), a.num_frames() + 1);
    for t in 0..a.num_frames() {
        for c in 0..a.dim() {
            assert!((a.frames[[t, c]] - b.frames[[t + 1, c]]).abs() < 1e-9);
        }
    }
}

/// Log-likelihood from plain densities, accumulated in extended form: the
/// log of each frame's mixture density, summed with Kahan compensation.
fn ll_oracle(m: &GmmModel, x: &Array2<f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for row in x.rows() {
        let p: f64 = (0..m.components())
            .map(|k| {
                m.weights[k]
                    * diagonal_gaussian_pdf(
                        row.as_slice().unwrap(),
                        m.means.row(k).as_slice().unwrap(),
                        m.variances.row(k).as_slice().unwrap(),
                    )
            })
            .sum();
        let y = p.ln() - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum / x.nrows() as f64
}

#[test]
fn gmm_score_matches_density_oracle() {
    let mut rng = common::rng(14);
    for _ in 0..10 {
        let x = common::gaussian_blobs(
            &mut rng,
            &[vec![0.0, 1.0, -1.0], vec![2.0, 0.0, 1.0]],
            1.0,
            100,
        );
        let m = fit_gmm(x.view(), &GmmFitConfig::with_components(3)).unwrap();
        let f = snorer::dsp::FeatureMatrix::from_rows(x.clone());
        let got = score(&m, &f).unwrap();
        assert!((got - ll_oracle(&m, &x)).abs() < 1e-9);
    }
}

#[test]
fn map_adaptation_matches_responsibility_oracle() {
    let ubm = UbmModel(model(
        vec![0.4, 0.6],
        array![[0.0, 0.0], [4.0, 4.0]],
        array![[1.0, 1.5], [2.0, 1.0]],
    ));
    let mut rng = common::rng(15);
    let frames = common::gaussian_blobs(&mut rng, &[vec![1.0, 0.5], vec![5.0, 5.5]], 0.8, 60);
    let r = 16.0;
    let adapted = map_adapt(
        &ubm,
        frames.view(),
        &MapConfig {
            relevance_factor: r,
        },
    )
    .unwrap();
    let stats = adaptation_stats(&ubm, frames.view()).unwrap();

    for k in 0..2 {
        let (mut n, mut first) = (0.0, [0.0; 2]);
        for row in frames.rows() {
            let dens: Vec<f64> = (0..2)
                .map(|j| {
                    ubm.0.weights[j]
                        * diagonal_gaussian_pdf(
                            row.as_slice().unwrap(),
                            ubm.0.means.row(j).as_slice().unwrap(),
                            ubm.0.variances.row(j).as_slice().unwrap(),
                        )
                })
                .collect();
            let g = dens[k] / (dens[0] + dens[1]);
            n += g;
            first[0] += g * row[0];
            first[1] += g * row[1];
        }
        assert!((stats.counts[k] - n).abs() < 1e-9);
        let alpha = n / (n + r);
        for d in 0..2 {
            let e = first[d] / n;
            let want = alpha * e + (1.0 - alpha) * ubm.0.means[[k, d]];
            assert!((adapted.means[[k, d]] - want).abs() < 1e-9);
            let (lo, hi) = (e.min(ubm.0.means[[k, d]]), e.max(ubm.0.means[[k, d]]));
            assert!(adapted.means[[k, d]] > lo && adapted.means[[k, d]] < hi);
        }
    }
    assert_eq!(adapted.weights, ubm.0.weights);
    assert_eq!(adapted.variances, ubm.0.variances);
}

#[test]
fn eer_small_cases_match_oracle() {
    let cases: [(&[f64], &[f64], f64); 3] = [
        (&[1.0, 0.9], &[0.1, 0.2], 0.0),
        (&[0.1, 0.5, 0.9], &[0.1, 0.5, 0.9], 0.5),
        (&[0.9, 0.8, 0.3], &[0.7, 0.2, 0.1], 1.0 / 3.0),
    ];
    for (g, i, want) in cases {
        let eer = roc_and_eer(g, i).unwrap().eer;
        assert_eq!(eer.to_bits(), common::eer_oracle(g, i).to_bits());
        assert!((eer - want).abs() < 1e-15);
    }
}
