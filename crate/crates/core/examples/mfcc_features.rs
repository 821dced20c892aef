//! MFCC front-end on a synthetic clip: frame count, coefficient summary,
//! context stacking and observation selection.

use snorer::dataset::{synthesize_utterance, SyntheticSpec};
use snorer::dsp::{select_observations, ContextLayout, MfccConfig, MfccExtractor};

fn main() -> snorer::Result<()> {
    let clip = synthesize_utterance(&SyntheticSpec::default(), 0, 0);
    let extractor = MfccExtractor::new(MfccConfig::default())?;
    let features = extractor.extract(&clip)?;
    println!(
        "{:.2} s clip -> {} frames x {} coefficients",
        clip.duration_s(),
        features.num_frames(),
        features.dim()
    );

    let mean = features.frames.mean_axis(ndarray::Axis(0)).expect("frames");
    let head: Vec<String> = mean.iter().take(6).map(|v| format!("{v:.3}")).collect();
    println!("mean c0..c5: {}", head.join(" "));

    let spec = extractor.spectrogram(&clip)?;
    println!("power spectrogram: {} x {}", spec.nrows(), spec.ncols());

    let obs = select_observations(&features, 15, 5, ContextLayout::default())?;
    let centers: Vec<usize> = obs.iter().map(|o| o.center_frame).collect();
    println!(
        "{} observations of {} values, centers {:?}",
        obs.len(),
        obs[0].vector.len(),
        centers
    );
    Ok(())
}
