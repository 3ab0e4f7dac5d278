//! One-class protocol on a 5-class synthetic dataset: every class takes a turn
//! as the in-distribution set and the rest are scored as OOD.
//!
//! Run with `cargo run --release --example one_class`.

use oodscore::datagen::{synth_dataset, LabeledSet, SynthSpec};
use oodscore::fitstats::FitConfig;
use oodscore::io::{emit_one_class_report, Split};
use oodscore::protocol::run_one_class;
use oodscore::scores::ScoreKind;

fn split(set: &LabeledSet) -> Split {
    Split {
        features: set.features.clone(),
        logits: Some(set.logits.clone()),
        labels: Some(set.labels.clone()),
    }
}

fn main() -> oodscore::Result<()> {
    let spec = SynthSpec {
        num_classes: 5,
        intrinsic_dim: 6,
        samples_per_class: 300,
        eval_samples: 1000,
        ..SynthSpec::large_margin(5)
    };
    let data = synth_dataset(&spec)?;
    let config = FitConfig {
        principal_dim: Some(spec.intrinsic_dim),
        ..FitConfig::default()
    };
    let kinds = [
        ScoreKind::Msp,
        ScoreKind::Energy,
        ScoreKind::Mahalanobis,
        ScoreKind::Vim,
    ];
    let result = run_one_class(
        &split(&data.train),
        &split(&data.test),
        Some(&data.head),
        &kinds,
        &config,
        None,
    )?;
    for run in &result.runs {
        println!(
            "class {}: fit on {} rows, {} ID / {} OOD test rows",
            run.id_class,
            run.train_task.id_rows.len(),
            run.test_task.id_rows.len(),
            run.test_task.ood_rows.len()
        );
    }

    let path = std::env::temp_dir()
        .join("oodscore-one-class-example")
        .join("report.csv");
    let table = emit_one_class_report(&result.entries, &[], &path)?;
    println!();
    print!(
        "{}",
        std::fs::read_to_string(table).expect("table was just written")
    );
    Ok(())
}
