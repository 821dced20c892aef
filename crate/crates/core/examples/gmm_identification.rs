//! Per-subject GMMs fitted on enrollment frames, then closed-set
//! identification of held-out utterances.

use std::collections::BTreeMap;

use snorer::dataset::{synthesize_utterance, SyntheticSpec};
use snorer::dsp::{FeatureMatrix, MfccConfig, MfccExtractor};
use snorer::gmm::{fit_gmm, score, GmmFitConfig};

fn main() -> snorer::Result<()> {
    let spec = SyntheticSpec::default();
    let extractor = MfccExtractor::new(MfccConfig::default())?;
    let cfg = GmmFitConfig::with_components(10);

    let mut models = BTreeMap::new();
    let mut tests = Vec::new();
    for s in 0..spec.n_subjects {
        let feats = (0..5)
            .map(|u| extractor.extract(&synthesize_utterance(&spec, s, u)))
            .collect::<snorer::Result<Vec<_>>>()?;
        let enroll = FeatureMatrix::concat(&feats[..4])?;
        models.insert(spec.subject_id(s), fit_gmm(enroll.frames.view(), &cfg)?);
        tests.push((spec.subject_id(s), feats[4].clone()));
    }

    let mut correct = 0;
    for (truth, f) in &tests {
        let (best, ll) = models
            .iter()
            .map(|(id, m)| (id, score(m, f).expect("scorable")))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("models");
        correct += usize::from(best == truth);
        println!("{truth} -> {best} ({ll:.2} per frame)");
    }
    println!("accuracy {:.2}", correct as f64 / tests.len() as f64);
    Ok(())
}
