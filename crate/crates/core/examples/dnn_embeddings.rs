//! Trains the embedding network on development utterances and compares
//! subject embeddings of held-out utterances by cosine similarity.
//!
//! Uses fewer epochs than the default to keep the demo quick.

use std::collections::BTreeMap;

use snorer::dataset::{synthesize_utterance, SyntheticSpec};
use snorer::dsp::{MfccConfig, MfccExtractor};
use snorer::embedder::{
    subject_embedding, train_network, utterance_embedding, EmbeddingConfig, TrainConfig,
};
use snorer::recognizer::cosine_similarity;

fn main() -> snorer::Result<()> {
    let spec = SyntheticSpec {
        n_subjects: 5,
        ..SyntheticSpec::default()
    };
    let extractor = MfccExtractor::new(MfccConfig::default())?;
    let mut development = BTreeMap::new();
    let mut held_out = Vec::new();
    for s in 0..spec.n_subjects {
        let mut feats = (0..5)
            .map(|u| extractor.extract(&synthesize_utterance(&spec, s, u)))
            .collect::<snorer::Result<Vec<_>>>()?;
        held_out.push(feats.pop().expect("five utterances"));
        development.insert(spec.subject_id(s), feats);
    }

    let cfg = TrainConfig {
        epochs: 10,
        observation_stride: 2,
        seed: 1,
        ..TrainConfig::default()
    };
    let (net, history) = train_network(&development, &cfg)?;
    println!(
        "trained on {} examples; loss {:.3} -> {:.3}, accuracy {:.3}",
        history.num_examples,
        history.epoch_loss[0],
        history.epoch_loss.last().expect("epochs"),
        history.final_accuracy
    );

    let emb_cfg = EmbeddingConfig::default();
    let mut enrolled = Vec::new();
    for (id, feats) in &development {
        let utts = feats
            .iter()
            .map(|f| utterance_embedding(&net, f, &emb_cfg))
            .collect::<snorer::Result<Vec<_>>>()?;
        enrolled.push(subject_embedding(&utts, id)?);
    }
    for (i, f) in held_out.iter().enumerate() {
        let e = utterance_embedding(&net, f, &emb_cfg)?;
        let sims = enrolled
            .iter()
            .map(|s| cosine_similarity(&e, s))
            .collect::<snorer::Result<Vec<_>>>()?;
        let row: Vec<String> = sims.iter().map(|v| format!("{v:6.3}")).collect();
        println!("{}: {}", spec.subject_id(i), row.join(" "));
    }
    Ok(())
}
