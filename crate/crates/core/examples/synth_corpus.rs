//! Generates a synthetic snore corpus and prints its split.
//!
//! cargo run --example synth_corpus -- [out_dir]

use std::path::PathBuf;

use snorer::dataset::{generate_synthetic_corpus, make_split, subject_signature, SyntheticSpec};

fn main() -> snorer::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("snorer-synth"), PathBuf::from);
    let spec = SyntheticSpec::default();
    let manifest = generate_synthetic_corpus(&spec, &out)?;
    println!("{} utterances in {}", manifest.records.len(), out.display());

    for s in 0..spec.n_subjects {
        let sig = subject_signature(&spec, s);
        let centers: Vec<String> = sig.centers_hz.iter().map(|c| format!("{c:.0}")).collect();
        println!(
            "  {}  peaks {} Hz, pitch {:.1} Hz",
            spec.subject_id(s),
            centers.join("/"),
            sig.pitch_hz
        );
    }

    let split = make_split(&manifest, 5)?;
    println!(
        "{} eligible subjects, {} enrollment and {} test utterances",
        split.eligible_subjects.len(),
        split.enroll.values().map(Vec::len).sum::<usize>(),
        split.test.len()
    );
    Ok(())
}
