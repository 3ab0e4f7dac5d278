//! Detection metrics and threshold calibration.
//!
//! OOD is the positive class throughout, and scores follow the "higher means
//! more OOD" orientation.

use crate::error::{Error, Result};
use crate::numerics::nearest_rank;

/// AUROC and FPR at 95% TPR for one (score, OOD set) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOutcome {
    pub auroc: f64,
    pub fpr95: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

/// TPR level used for the FPR column of every report.
pub const TPR_TARGET: f64 = 0.95;

fn check_sides(id: &[f64], ood: &[f64]) -> Result<()> {
    if id.is_empty() || ood.is_empty() {
        return Err(Error::Empty(format!(
            "metrics need scores on both sides (got {} ID, {} OOD)",
            id.len(),
            ood.len()
        )));
    }
    if let Some(i) = id.iter().chain(ood).position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: i, col: 0 });
    }
    Ok(())
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Mann–Whitney AUROC: the fraction of (ID, OOD) pairs where the OOD score is
/// higher, with ties counted as one half.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_sides(id_scores, ood_scores)?;
    let id = sorted(id_scores);
    let ood = sorted(ood_scores);

    // Twice the U statistic, kept integral so the division is the only rounding.
    let mut twice_u: u128 = 0;
    let (mut below, mut upto) = (0usize, 0usize);
    let mut i = 0;
    while i < ood.len() {
        let v = ood[i];
        let mut j = i;
        while j < ood.len() && ood[j] == v {
            j += 1;
        }
        while below < id.len() && id[below] < v {
            below += 1;
        }
        upto = upto.max(below);
        while upto < id.len() && id[upto] == v {
            upto += 1;
        }
        let group = (j - i) as u128;
        twice_u += group * (2 * below as u128 + (upto - below) as u128);
        i = j;
    }
    let pairs = 2 * id.len() as u128 * ood.len() as u128;
    Ok(twice_u as f64 / pairs as f64)
}

/// False positive rate at the largest OOD-score threshold whose TPR reaches
/// `tpr_target`. Thresholds are observed OOD scores and a sample is flagged
/// when its score is `>= t` (step ROC, no interpolation).
pub fn fpr_at_tpr(id_scores: &[f64], ood_scores: &[f64], tpr_target: f64) -> Result<f64> {
    check_sides(id_scores, ood_scores)?;
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "TPR target must lie in (0, 1], got {tpr_target}"
        )));
    }
    let id = sorted(id_scores);
    let mut ood = sorted(ood_scores);
    ood.reverse();
    let m = ood.len() as f64;

    let mut threshold = ood[ood.len() - 1];
    let mut k = 0;
    while k < ood.len() {
        let v = ood[k];
        while k < ood.len() && ood[k] == v {
            k += 1;
        }
        if k as f64 / m >= tpr_target {
            threshold = v;
            break;
        }
    }
    let below = id.partition_point(|&s| s < threshold);
    Ok((id.len() - below) as f64 / id.len() as f64)
}

pub fn evaluate(id_scores: &[f64], ood_scores: &[f64]) -> Result<EvalOutcome> {
    Ok(EvalOutcome {
        auroc: auroc(id_scores, ood_scores)?,
        fpr95: fpr_at_tpr(id_scores, ood_scores, TPR_TARGET)?,
        n_id: id_scores.len(),
        n_ood: ood_scores.len(),
    })
}

/// Outlier threshold taken from in-distribution calibration scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationResult {
    pub threshold: f64,
    pub eta: f64,
}

/// Threshold `T` = nearest-rank `eta`-th percentile of the calibration scores.
pub fn calibrate(cal_scores: &[f64], eta: f64) -> Result<CalibrationResult> {
    if cal_scores.is_empty() {
        return Err(Error::Empty("calibration set is empty".into()));
    }
    if let Some(i) = cal_scores.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: i, col: 0 });
    }
    Ok(CalibrationResult {
        threshold: nearest_rank(cal_scores, eta)?,
        eta,
    })
}

/// Flags samples whose score is strictly above the calibrated threshold.
pub fn detect(test_scores: &[f64], calibration: &CalibrationResult) -> Vec<bool> {
    test_scores
        .iter()
        .map(|&s| s > calibration.threshold)
        .collect()
}
