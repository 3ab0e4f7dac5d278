//! Recovers a planted low-dimensional subspace with the Jacobi eigensolver and
//! shows how the residual norm separates points on and off that subspace.
//!
//! Run with `cargo run --example eigen_subspace`.

use oodscore::fitstats::fit_subspace;
use oodscore::numerics::{sym_eig, Matrix};

fn main() -> oodscore::Result<()> {
    // Points spread along (1,1,0) and (0,0,1) with a small component along (1,-1,0).
    let mut rows = Vec::new();
    for i in 0..40 {
        let t = i as f64 / 4.0 - 5.0;
        let s = ((i * 7) % 11) as f64 - 5.0;
        let e = if i % 2 == 0 { 0.01 } else { -0.01 };
        rows.push([t + e, t - e, s]);
    }
    let x = Matrix::from_rows(&rows)?;

    let mean = x.col_mean();
    let mut cov = Matrix::zeros(3, 3);
    for r in x.row_iter() {
        for i in 0..3 {
            for j in 0..3 {
                cov[(i, j)] += (r[i] - mean[i]) * (r[j] - mean[j]) / rows.len() as f64;
            }
        }
    }
    let eig = sym_eig(&cov)?;
    println!("eigenvalues: {:?}", eig.eigenvalues);
    println!("eigenvectors (columns):\n{:?}", eig.eigenvectors);

    let sub = fit_subspace(&x, None, 2)?;
    for probe in [[1.0, 1.0, 2.0], [1.0, -1.0, 0.0], [3.0, 3.0, -4.0]] {
        println!(
            "residual norm of {probe:?}: {:.4}",
            sub.residual_norm(&probe)?
        );
    }
    Ok(())
}
