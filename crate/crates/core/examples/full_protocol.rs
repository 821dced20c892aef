//! Development, enrollment and evaluation for one backend on a synthetic
//! corpus, writing every artifact to the output directory.
//!
//! cargo run --release --example full_protocol -- [gmm|gmm-ubm|dnn] [out_dir]

use std::path::PathBuf;

use snorer::dataset::{generate_synthetic_corpus, SyntheticSpec};
use snorer::pipeline::{cmd_run, format_summary, RunConfig};
use snorer::recognizer::Backend;

fn main() -> snorer::Result<()> {
    let mut args = std::env::args().skip(1);
    let backend: Backend = args.next().as_deref().unwrap_or("gmm").parse()?;
    let out: PathBuf = args.next().map_or_else(
        || std::env::temp_dir().join("snorer-protocol"),
        PathBuf::from,
    );

    let corpus = out.join("corpus");
    generate_synthetic_corpus(&SyntheticSpec::default(), &corpus)?;
    let config = RunConfig {
        manifest: corpus.join("manifest.csv"),
        backend,
        out_dir: out.join(backend.name()),
        ..RunConfig::default()
    };
    let report = cmd_run(&config)?;
    println!("{}", format_summary(&report));
    println!("artifacts in {}", config.out_dir.display());
    Ok(())
}
