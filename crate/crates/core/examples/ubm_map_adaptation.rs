//! Background model on pooled frames and means-only MAP adaptation to one
//! subject, showing how far each component moves.

use snorer::dataset::{synthesize_utterance, SyntheticSpec};
use snorer::dsp::{FeatureMatrix, MfccConfig, MfccExtractor};
use snorer::gmm::{score, GmmFitConfig};
use snorer::ubm::{adaptation_stats, fit_ubm, map_adapt, MapConfig};

fn main() -> snorer::Result<()> {
    let spec = SyntheticSpec::default();
    let extractor = MfccExtractor::new(MfccConfig::default())?;
    let mut per_subject = Vec::new();
    for s in 0..spec.n_subjects {
        let feats = (0..5)
            .map(|u| extractor.extract(&synthesize_utterance(&spec, s, u)))
            .collect::<snorer::Result<Vec<_>>>()?;
        per_subject.push(feats);
    }
    let pool = FeatureMatrix::concat(per_subject.iter().flat_map(|f| &f[..4]))?;
    let ubm = fit_ubm(pool.frames.view(), &GmmFitConfig::with_components(10))?;
    println!(
        "UBM: {} components on {} frames",
        ubm.model().components(),
        pool.num_frames()
    );

    let enroll = FeatureMatrix::concat(&per_subject[0][..4])?;
    let stats = adaptation_stats(&ubm, enroll.frames.view())?;
    let adapted = map_adapt(&ubm, enroll.frames.view(), &MapConfig::default())?;
    for k in 0..adapted.components() {
        let shift = (&adapted.means.row(k) - &ubm.model().means.row(k))
            .mapv(|v| v * v)
            .sum()
            .sqrt();
        println!("  k={k:2}  n_k={:8.1}  |shift|={shift:.4}", stats.counts[k]);
    }

    let test = &per_subject[0][4];
    println!(
        "held-out utterance: adapted {:.3}, UBM {:.3} per frame",
        score(&adapted, test)?,
        score(ubm.model(), test)?
    );
    Ok(())
}
