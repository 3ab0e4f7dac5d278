//! Scores a handful of hand-made samples with every score function.
//!
//! Run with `cargo run --example score_functions`.

use oodscore::fitstats::{fit_all, FitConfig, LinearHead};
use oodscore::numerics::Matrix;
use oodscore::scores::{score_batch, ScoreKind};

fn main() -> oodscore::Result<()> {
    // Two classes on the x and y axes of a 3-d feature space.
    let train = Matrix::from_rows(&[
        [4.0, 0.1, 0.0],
        [5.0, -0.1, 0.1],
        [4.5, 0.0, -0.1],
        [0.1, 4.0, 0.0],
        [-0.1, 5.0, -0.1],
        [0.0, 4.5, 0.1],
    ])?;
    let labels = [0, 0, 0, 1, 1, 1];
    let head = LinearHead::new(
        Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])?,
        vec![0.0, 0.0],
    )?;
    let train_logits = head.logits_batch(&train)?;
    let config = FitConfig {
        principal_dim: Some(2),
        ..FitConfig::default()
    };
    let stats = fit_all(
        &train,
        &train_logits,
        &labels,
        2,
        Some(head.clone()),
        &config,
    )?;

    let probe = Matrix::from_rows(&[
        [4.5, 0.0, 0.0], // typical class 0
        [2.5, 2.5, 0.0], // between the classes
        [4.5, 0.0, 3.0], // class 0 plus an off-subspace component
    ])?;
    let probe_logits = head.logits_batch(&probe)?;

    println!("alpha = {:.4}", stats.vim.alpha);
    println!(
        "{:<12} {:>10} {:>10} {:>10}",
        "score", "typical", "between", "off-plane"
    );
    for kind in ScoreKind::ALL {
        let s = score_batch(kind, Some(&probe), Some(&probe_logits), &stats)?;
        println!(
            "{:<12} {:>10.4} {:>10.4} {:>10.4}",
            kind.name(),
            s.values[0],
            s.values[1],
            s.values[2]
        );
    }
    Ok(())
}
