//! Writes score-distribution histograms for the ID split and each OOD set.
//!
//! Run with `cargo run --release --example score_curves [out.csv]`.

use oodscore::datagen::{synth_dataset, LabeledSet, SynthSpec};
use oodscore::fitstats::{fit_all, FitConfig};
use oodscore::io::{emit_curves, histogram, Split};
use oodscore::protocol::run_multiclass;
use oodscore::scores::ScoreKind;

fn split(set: &LabeledSet) -> Split {
    Split {
        features: set.features.clone(),
        logits: Some(set.logits.clone()),
        labels: None,
    }
}

fn main() -> oodscore::Result<()> {
    let spec = SynthSpec::large_margin(4);
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
    let ood: Vec<(String, Split)> = data
        .ood
        .iter()
        .map(|(n, s)| (n.clone(), split(s)))
        .collect();
    let result = run_multiclass(
        &stats,
        &split(&data.test),
        &ood,
        &[ScoreKind::Energy, ScoreKind::Vim],
    )?;

    // Coarse text rendering of the ViM histogram.
    let vim = &result.scores[1];
    for row in histogram(&vim.datasets, 12)? {
        let bar = "#".repeat((row.count as f64 / 20.0).ceil() as usize);
        println!(
            "{:<13} [{:>8.4}, {:>8.4}) {bar}",
            row.dataset, row.bin_left, row.bin_right
        );
    }

    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("oodscore-curves.csv"));
    emit_curves(&result.curve_input(), 40, &out)?;
    println!("\ncurves written to {}", out.display());
    Ok(())
}
