//! Saves fitted statistics, loads them back and checks that every score is
//! reproduced bit for bit.
//!
//! Run with `cargo run --example stats_roundtrip`.

use oodscore::datagen::{synth_dataset, SynthSpec};
use oodscore::fitstats::{fit_all, FitConfig};
use oodscore::io::{load_stats, save_stats};
use oodscore::scores::{score_batch, ScoreKind};

fn main() -> oodscore::Result<()> {
    let spec = SynthSpec {
        samples_per_class: 200,
        eval_samples: 200,
        ..SynthSpec::large_margin(9)
    };
    let data = synth_dataset(&spec)?;
    let stats = fit_all(
        &data.train.features,
        &data.train.logits,
        &data.train.labels,
        spec.num_classes,
        Some(data.head.clone()),
        &FitConfig {
            principal_dim: Some(spec.intrinsic_dim),
            ..FitConfig::default()
        },
    )?;

    let dir = std::env::temp_dir().join("oodscore-stats-example");
    save_stats(&stats, &dir)?;
    let loaded = load_stats(&dir)?;
    println!("saved to {}", dir.display());

    let (f, l) = (&data.test.features, &data.test.logits);
    for kind in ScoreKind::ALL {
        let a = score_batch(kind, Some(f), Some(l), &stats)?;
        let b = score_batch(kind, Some(f), Some(l), &loaded)?;
        let same = a
            .values
            .iter()
            .zip(&b.values)
            .all(|(x, y)| x.to_bits() == y.to_bits());
        println!("{:<12} identical after reload: {same}", kind.name());
    }
    Ok(())
}
