//! Calibrates a ViM threshold on held-in ID data and flags outliers in a
//! mixed stream of ID and shifted samples.
//!
//! Run with `cargo run --release --example calibrate_detect`.

use oodscore::datagen::{synth_dataset, SynthSpec};
use oodscore::fitstats::{fit_all, FitConfig};
use oodscore::metrics::{calibrate, detect};
use oodscore::scores::{score_vim, OodScores};

fn rate(flags: &[bool]) -> f64 {
    flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64
}

fn main() -> oodscore::Result<()> {
    let spec = SynthSpec::large_margin(2);
    let data = synth_dataset(&spec)?;
    let config = FitConfig {
        principal_dim: Some(spec.intrinsic_dim),
        ..FitConfig::default()
    };
    let stats = fit_all(
        &data.train.features,
        &data.train.logits,
        &data.train.labels,
        spec.num_classes,
        Some(data.head.clone()),
        &config,
    )?;

    let OodScores { values: cal, .. } =
        score_vim(&data.test.features, &data.test.logits, &stats.vim)?;
    let threshold = calibrate(&cal, 95.0)?;
    println!(
        "eta = {}, threshold T = {:.6}",
        threshold.eta, threshold.threshold
    );
    println!(
        "flagged on the calibration set: {:.2}%",
        100.0 * rate(&detect(&cal, &threshold))
    );

    for (name, set) in &data.ood {
        let s = score_vim(&set.features, &set.logits, &stats.vim)?;
        println!(
            "flagged on {name}: {:.2}%",
            100.0 * rate(&detect(&s.values, &threshold))
        );
    }
    Ok(())
}
