use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use snorer::dataset::{generate_synthetic_corpus, SyntheticSpec};
use snorer::pipeline::{self, RunConfig};
use snorer::recognizer::Backend;

#[derive(Parser)]
#[command(
    name = "snorer",
    version,
    about = "Snore-based user identification and verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    backend: Option<Backend>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with a manifest.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        subjects: usize,
        #[arg(long, default_value_t = 5)]
        utterances: usize,
        #[arg(long, default_value_t = 2.0)]
        duration: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Fit the shared model (UBM or embedding network) on development data.
    Train(Common),
    /// Enroll every eligible subject and write the registry.
    Enroll(Common),
    /// Score held-out utterances; write report, scores and ROC.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        threshold: Option<f64>,
        /// Comma-separated component counts, e.g. 5,10,15,20,25.
        #[arg(long, value_delimiter = ',')]
        sweep_k: Option<Vec<usize>>,
        #[arg(long)]
        per_subject: bool,
    },
    /// Train, enroll and evaluate in one step.
    Run(Common),
    /// Identify the subject of one recording.
    Identify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        wav: PathBuf,
    },
    /// Accept or reject an identity claim for one recording.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        claim: String,
        #[arg(long, allow_hyphen_values = true)]
        threshold: f64,
    },
    /// Write MFCCs (or the power spectrogram) of one recording as CSV.
    DumpFeatures {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        spectrogram: bool,
    },
}

fn resolve(common: &Common) -> snorer::Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(m) = &common.manifest {
        config.manifest = m.clone();
    }
    if let Some(b) = common.backend {
        config.backend = b;
    }
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if let Some(t) = common.threads {
        config.threads = t;
    }
    if let Some(o) = &common.out_dir {
        config.out_dir = o.clone();
    }
    Ok(config)
}

fn run(cli: Cli) -> snorer::Result<()> {
    match cli.command {
        Command::Synth {
            out_dir,
            subjects,
            utterances,
            duration,
            seed,
        } => {
            let spec = SyntheticSpec {
                n_subjects: subjects,
                utterances_per_subject: utterances,
                duration_s: duration,
                seed,
                ..SyntheticSpec::default()
            };
            let manifest = generate_synthetic_corpus(&spec, &out_dir)?;
            println!(
                "wrote {} utterances to {}",
                manifest.records.len(),
                out_dir.join("manifest.csv").display()
            );
        }
        Command::Train(common) => {
            let config = resolve(&common)?;
            match pipeline::cmd_train(&config)? {
                Some(path) => println!("wrote {}", path.display()),
                None => println!("backend gmm has no shared model; nothing to train"),
            }
        }
        Command::Enroll(common) => {
            let config = resolve(&common)?;
            let registry = pipeline::cmd_enroll(&config)?;
            println!(
                "enrolled {} subjects into {}",
                registry.len(),
                config.out_dir.join("registry.json").display()
            );
        }
        Command::Evaluate {
            common,
            threshold,
            sweep_k,
            per_subject,
        } => {
            let mut config = resolve(&common)?;
            config.threshold = threshold.or(config.threshold);
            config.per_subject_rates |= per_subject;
            if let Some(ks) = sweep_k {
                println!("{:>4}  {:>8}  {:>8}", "K", "accuracy", "EER");
                for row in pipeline::cmd_sweep_k(&config, &ks)? {
                    println!(
                        "{:>4}  {:>8.4}  {:>8.4}",
                        row.components, row.identification_accuracy, row.eer
                    );
                }
            } else {
                println!(
                    "{}",
                    pipeline::format_summary(&pipeline::cmd_evaluate(&config)?)
                );
            }
        }
        Command::Run(common) => {
            let config = resolve(&common)?;
            println!("{}", pipeline::format_summary(&pipeline::cmd_run(&config)?));
        }
        Command::Identify { common, wav } => {
            let config = resolve(&common)?;
            let (who, scores) = pipeline::identify_file(&config, &wav)?;
            println!("{who}");
            for (subject, score) in scores {
                println!("  {subject}\t{score:.6}");
            }
        }
        Command::Verify {
            common,
            wav,
            claim,
            threshold,
        } => {
            let config = resolve(&common)?;
            let v = pipeline::verify_file(&config, &wav, &claim, threshold)?;
            println!(
                "{} (score {:.6})",
                if v.accepted { "accept" } else { "reject" },
                v.score
            );
        }
        Command::DumpFeatures {
            common,
            wav,
            output,
            spectrogram,
        } => {
            let config = resolve(&common)?;
            let n = pipeline::dump_features(&config, Path::new(&wav), &output, spectrogram)?;
            println!("wrote {n} frames to {}", output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
