//! ROC and equal error rate from genuine and impostor score lists, plus the
//! rates at a fixed operating threshold.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snorer::recognizer::{rates_at, roc_and_eer, write_roc_csv};

fn main() -> snorer::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let genuine: Vec<f64> = (0..50).map(|_| rng.random_range(0.4..1.0)).collect();
    let impostor: Vec<f64> = (0..450).map(|_| rng.random_range(-0.2..0.6)).collect();

    let roc = roc_and_eer(&genuine, &impostor)?;
    println!(
        "EER {:.4} at threshold {:.4} ({} ROC points)",
        roc.eer,
        roc.eer_threshold,
        roc.roc.len()
    );
    let op = rates_at(&genuine, &impostor, 0.45)?;
    println!("threshold 0.45: TPR {:.4}, TNR {:.4}", op.tpr, op.tnr);

    let mut csv = Vec::new();
    write_roc_csv(&mut csv, &roc.roc).expect("in-memory write");
    let text = String::from_utf8(csv).expect("utf-8");
    for line in text.lines().take(4) {
        println!("  {line}");
    }
    Ok(())
}
