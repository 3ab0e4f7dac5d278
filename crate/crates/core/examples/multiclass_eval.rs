//! Generates the large-margin synthetic benchmark, fits ID statistics and
//! prints the multi-class report table.
//!
//! Run with `cargo run --release --example multiclass_eval`.

use oodscore::datagen::{synth_dataset, LabeledSet, SynthSpec};
use oodscore::fitstats::{fit_all, FitConfig};
use oodscore::io::{emit_report, Split};
use oodscore::protocol::run_multiclass;
use oodscore::scores::ScoreKind;

fn split(set: &LabeledSet) -> Split {
    Split {
        features: set.features.clone(),
        logits: Some(set.logits.clone()),
        labels: Some(set.labels.clone()),
    }
}

fn main() -> oodscore::Result<()> {
    let spec = SynthSpec::large_margin(11);
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
    let result = run_multiclass(&stats, &split(&data.test), &ood, &ScoreKind::ALL)?;

    let dir = std::env::temp_dir().join("oodscore-multiclass-example");
    let header = vec![format!("alpha = {}", stats.vim.alpha)];
    let table = emit_report(&result.entries, &header, &dir.join("report.csv"))?;
    print!(
        "{}",
        std::fs::read_to_string(&table).expect("table was just written")
    );
    println!("\nwritten to {}", dir.display());
    Ok(())
}
