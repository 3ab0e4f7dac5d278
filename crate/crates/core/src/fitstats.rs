//! In-distribution statistics consumed by the score functions.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::numerics::{
    max_of, nearest_rank, norm2, regularized_precision, softmax, sym_eig, sym_pseudo_inverse,
    Matrix,
};

/// Class centroids and the shared precision used by the Mahalanobis score.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub centroids: Matrix,
    pub shared_precision: Matrix,
    pub class_counts: Vec<usize>,
}

/// Origin and residual basis of the principal subspace of training features.
///
/// `residual_basis` is `d × (d − principal_dim)`; its columns are the
/// eigenvectors of the feature second-moment matrix (about `origin`) after the
/// leading `principal_dim`, in descending eigenvalue order.
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalSubspace {
    pub origin: Vec<f64>,
    pub residual_basis: Matrix,
    pub principal_dim: usize,
}

impl PrincipalSubspace {
    pub fn feature_dim(&self) -> usize {
        self.origin.len()
    }

    /// `‖Rᵀ(x − u)‖₂`.
    pub fn residual_norm(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.origin.len() {
            return Err(Error::Shape(format!(
                "feature has {} dims, subspace expects {}",
                x.len(),
                self.origin.len()
            )));
        }
        if self.residual_basis.cols() == 0 {
            return Ok(0.0);
        }
        let centered: Vec<f64> = x.iter().zip(&self.origin).map(|(a, u)| a - u).collect();
        Ok(norm2(&self.residual_basis.tr_mul_vec(&centered)?))
    }
}

/// Scale `alpha` of the virtual logit together with the subspace it measures.
#[derive(Debug, Clone, PartialEq)]
pub struct VimParams {
    pub alpha: f64,
    pub subspace: PrincipalSubspace,
}

/// Per-class mean softmax distributions, one row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct KlTemplates {
    pub class_dists: Matrix,
}

/// Activation clip value for ReAct and the percentile it was taken at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReactParams {
    pub clip_value: f64,
    pub percentile: f64,
}

/// Final linear layer `logits = W x + b`, with `W` of shape `C × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    weights: Matrix,
    bias: Vec<f64>,
}

impl LinearHead {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weights.rows() != bias.len() {
            return Err(Error::Shape(format!(
                "head weights have {} rows but bias has {} entries",
                weights.rows(),
                bias.len()
            )));
        }
        if let Some(col) = bias.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: 0, col });
        }
        Ok(Self { weights, bias })
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut l = self.weights.mul_vec(x)?;
        l.iter_mut().zip(&self.bias).for_each(|(l, b)| *l += b);
        Ok(l)
    }

    pub fn logits_batch(&self, features: &Matrix) -> Result<Matrix> {
        let mut data = Vec::with_capacity(features.rows() * self.num_classes());
        for row in features.row_iter() {
            data.extend(self.logits(row)?);
        }
        Matrix::new(features.rows(), self.num_classes(), data)
    }
}

/// Knobs for [`fit_all`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    /// Principal subspace dimension. `None` means `min(d, 512)`.
    pub principal_dim: Option<usize>,
    /// Eigenvalue floor for the shared precision, relative to the mean eigenvalue.
    pub shrink: f64,
    /// Activation percentile for the ReAct clip value.
    pub react_percentile: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            principal_dim: None,
            shrink: 1e-6,
            react_percentile: 90.0,
        }
    }
}

impl FitConfig {
    pub fn resolved_principal_dim(&self, feature_dim: usize) -> usize {
        self.principal_dim.unwrap_or(feature_dim.min(512))
    }
}

/// Everything fitted on the in-distribution training set.
#[derive(Debug, Clone, PartialEq)]
pub struct IdStats {
    pub class_stats: ClassStats,
    pub vim: VimParams,
    pub kl: KlTemplates,
    pub react: ReactParams,
    pub head: Option<LinearHead>,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub shrink: f64,
}

impl IdStats {
    pub fn subspace(&self) -> &PrincipalSubspace {
        &self.vim.subspace
    }

    /// Width of the logit vectors these statistics were fitted against.
    pub fn logit_dim(&self) -> usize {
        self.kl.class_dists.cols()
    }
}

fn check_labels(labels: &[usize], num_classes: usize) -> Result<Vec<Vec<usize>>> {
    let mut members = vec![Vec::new(); num_classes];
    for (row, &label) in labels.iter().enumerate() {
        if label >= num_classes {
            return Err(Error::LabelOutOfRange {
                row,
                label: label as i64,
                num_classes,
            });
        }
        members[label].push(row);
    }
    if let Some(class) = members.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass { class });
    }
    Ok(members)
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Class centroids and shared within-class precision.
///
/// Rows of each class are summed in lexicographic order of their values, so
/// the result is bit-identical under any permutation of the samples.
pub fn fit_class_stats(
    features: &Matrix,
    labels: &[usize],
    num_classes: usize,
    shrink: f64,
) -> Result<ClassStats> {
    let (n, d) = features.shape();
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{n} feature rows but {} labels",
            labels.len()
        )));
    }
    if num_classes == 0 {
        return Err(Error::InvalidArgument("need at least one class".into()));
    }
    let mut members = check_labels(labels, num_classes)?;
    for rows in &mut members {
        rows.sort_by(|&a, &b| lexicographic(features.row(a), features.row(b)));
    }

    let mut centroids = Matrix::zeros(num_classes, d);
    let mut cov = Matrix::zeros(d, d);
    for (k, rows) in members.iter().enumerate() {
        let centroid = centroids.row_mut(k);
        for &r in rows {
            for (c, &v) in centroid.iter_mut().zip(features.row(r)) {
                *c += v;
            }
        }
        let count = rows.len() as f64;
        centroid.iter_mut().for_each(|c| *c /= count);
        let centroid = centroids.row(k).to_vec();
        for &r in rows {
            let dev: Vec<f64> = features
                .row(r)
                .iter()
                .zip(&centroid)
                .map(|(x, m)| x - m)
                .collect();
            for i in 0..d {
                for j in i..d {
                    cov[(i, j)] += dev[i] * dev[j];
                }
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let shared_precision = regularized_precision(&cov, shrink)?;
    Ok(ClassStats {
        centroids,
        shared_precision,
        class_counts: members.iter().map(Vec::len).collect(),
    })
}

/// Residual basis of the training features.
///
/// The origin is `−W⁺b` when a head is given (the point where all logits
/// vanish, in the least-squares sense), otherwise the feature mean.
pub fn fit_subspace(
    features: &Matrix,
    head: Option<&LinearHead>,
    principal_dim: usize,
) -> Result<PrincipalSubspace> {
    let (n, d) = features.shape();
    if n < 2 {
        return Err(Error::Empty(format!(
            "subspace fitting needs at least 2 samples, got {n}"
        )));
    }
    if principal_dim > d {
        return Err(Error::InvalidArgument(format!(
            "principal dimension {principal_dim} exceeds feature dimension {d}"
        )));
    }
    let origin = match head {
        Some(head) => {
            if head.feature_dim() != d {
                return Err(Error::Shape(format!(
                    "head expects {} feature dims, features have {d}",
                    head.feature_dim()
                )));
            }
            head_origin(head)?
        }
        None => features.col_mean(),
    };

    let mut moment = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for row in features.row_iter() {
        for ((c, &x), &u) in centered.iter_mut().zip(row).zip(&origin) {
            *c = x - u;
        }
        for i in 0..d {
            for j in i..d {
                moment[(i, j)] += centered[i] * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = moment[(i, j)] / n as f64;
            moment[(i, j)] = v;
            moment[(j, i)] = v;
        }
    }
    let eig = sym_eig(&moment)?;
    Ok(PrincipalSubspace {
        origin,
        residual_basis: eig.eigenvectors.select_cols(principal_dim, d),
        principal_dim,
    })
}

// u = −(WᵀW)⁺ Wᵀ b
fn head_origin(head: &LinearHead) -> Result<Vec<f64>> {
    let w = head.weights();
    let gram = w.transpose().matmul(w)?;
    let pinv = sym_pseudo_inverse(&gram, 1e-10)?;
    let wtb = w.tr_mul_vec(head.bias())?;
    Ok(pinv.mul_vec(&wtb)?.into_iter().map(|v| -v).collect())
}

/// Ratio of summed max-logits to summed residual norms over the training set.
///
/// When every residual norm is zero (empty residual space) alpha is 1.
pub fn fit_alpha(
    features: &Matrix,
    logits: &Matrix,
    subspace: PrincipalSubspace,
) -> Result<VimParams> {
    if features.rows() != logits.rows() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} logit rows",
            features.rows(),
            logits.rows()
        )));
    }
    if features.rows() == 0 {
        return Err(Error::Empty("alpha needs at least one sample".into()));
    }
    let max_logit_sum: f64 = logits
        .row_iter()
        .map(|l| max_of(l).ok_or_else(|| Error::Empty("logit rows are empty".into())))
        .sum::<Result<f64>>()?;
    let residual_sum: f64 = features
        .row_iter()
        .map(|x| subspace.residual_norm(x))
        .sum::<Result<f64>>()?;
    let alpha = if residual_sum == 0.0 {
        1.0
    } else {
        max_logit_sum / residual_sum
    };
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Degenerate(format!(
            "alpha = {alpha}: mean max-logit must be positive for the virtual logit to be meaningful"
        )));
    }
    Ok(VimParams { alpha, subspace })
}

/// Mean softmax per class, renormalized so each row sums to one.
pub fn fit_kl_templates(
    logits: &Matrix,
    labels: &[usize],
    num_classes: usize,
) -> Result<KlTemplates> {
    if labels.len() != logits.rows() {
        return Err(Error::Shape(format!(
            "{} logit rows but {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    let members = check_labels(labels, num_classes)?;
    let c = logits.cols();
    let mut dists = Matrix::zeros(num_classes, c);
    for (k, rows) in members.iter().enumerate() {
        let acc = dists.row_mut(k);
        for &r in rows {
            for (a, p) in acc.iter_mut().zip(softmax(logits.row(r))?) {
                *a += p;
            }
        }
        let count = rows.len() as f64;
        acc.iter_mut().for_each(|a| *a /= count);
        let total: f64 = acc.iter().sum();
        acc.iter_mut().for_each(|a| *a /= total);
        if let Some(i) = acc.iter().position(|&p| p <= 0.0) {
            return Err(Error::Degenerate(format!(
                "template for class {k} has zero probability at logit {i}"
            )));
        }
    }
    Ok(KlTemplates { class_dists: dists })
}

/// Nearest-rank percentile of all activation values.
pub fn fit_react(features: &Matrix, percentile: f64) -> Result<ReactParams> {
    if features.as_slice().is_empty() {
        return Err(Error::Empty("ReAct needs at least one activation".into()));
    }
    Ok(ReactParams {
        clip_value: nearest_rank(features.as_slice(), percentile)?,
        percentile,
    })
}

/// Fits every statistic in one pass.
///
/// `num_classes` is the number of label groups; it may be smaller than the
/// logit width, e.g. a single group under the one-class protocol.
pub fn fit_all(
    features: &Matrix,
    logits: &Matrix,
    labels: &[usize],
    num_classes: usize,
    head: Option<LinearHead>,
    config: &FitConfig,
) -> Result<IdStats> {
    let (n, d) = features.shape();
    if logits.rows() != n || labels.len() != n {
        return Err(Error::Shape(format!(
            "row counts disagree: {n} features, {} logits, {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if let Some(head) = &head {
        check_head(head, features, logits).map_err(Error::stage("head"))?;
    }
    let class_stats = fit_class_stats(features, labels, num_classes, config.shrink)
        .map_err(Error::stage("class statistics"))?;
    let subspace = fit_subspace(features, head.as_ref(), config.resolved_principal_dim(d))
        .map_err(Error::stage("principal subspace"))?;
    let vim = fit_alpha(features, logits, subspace).map_err(Error::stage("alpha"))?;
    let kl = fit_kl_templates(logits, labels, num_classes).map_err(Error::stage("kl templates"))?;
    let react = fit_react(features, config.react_percentile).map_err(Error::stage("react"))?;
    Ok(IdStats {
        class_stats,
        vim,
        kl,
        react,
        head,
        num_classes,
        feature_dim: d,
        shrink: config.shrink,
    })
}

const HEAD_CHECK_ROWS: usize = 16;
const HEAD_CHECK_TOLERANCE: f64 = 1e-4;

/// The head must reproduce the supplied logits on a sample of rows.
fn check_head(head: &LinearHead, features: &Matrix, logits: &Matrix) -> Result<()> {
    if head.feature_dim() != features.cols() || head.num_classes() != logits.cols() {
        return Err(Error::Shape(format!(
            "head is {}x{} but data has {} logits over {} features",
            head.num_classes(),
            head.feature_dim(),
            logits.cols(),
            features.cols()
        )));
    }
    let n = features.rows();
    let step = (n / HEAD_CHECK_ROWS).max(1);
    for r in (0..n).step_by(step).take(HEAD_CHECK_ROWS) {
        let recomputed = head.logits(features.row(r))?;
        for (i, (&a, &b)) in recomputed.iter().zip(logits.row(r)).enumerate() {
            if (a - b).abs() > HEAD_CHECK_TOLERANCE * b.abs().max(1.0) {
                return Err(Error::Degenerate(format!(
                    "head does not reproduce logits at row {r}, class {i}: {a} vs {b}"
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn single_point_classes() {
        let f = m(&[&[0.0, 0.0], &[2.0, 0.0]]);
        let s = fit_class_stats(&f, &[0, 1], 2, 1e-6).unwrap();
        assert_eq!(s.centroids, f);
        assert_eq!(s.class_counts, vec![1, 1]);
        // zero covariance: floor of 1e-6 on a unit scale
        assert_eq!(
            s.shared_precision,
            Matrix::from_diag(&[1.0 / 1e-6, 1.0 / 1e-6])
        );
    }

    #[test]
    fn shared_covariance_by_hand() {
        let f = m(&[&[-1.0, 0.0], &[1.0, 0.0], &[9.0, 0.0], &[11.0, 0.0]]);
        let s = fit_class_stats(&f, &[0, 0, 1, 1], 2, 1e-9).unwrap();
        assert_eq!(s.centroids, m(&[&[0.0, 0.0], &[10.0, 0.0]]));
        // covariance diag(1, 0) floored at 1e-9 * 0.5
        assert_eq!(s.shared_precision, Matrix::from_diag(&[1.0, 1.0 / 5e-10]));
    }

    #[test]
    fn class_stats_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 60;
        let data: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let f = Matrix::new(n, 3, data).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let base = fit_class_stats(&f, &labels, 3, 1e-6).unwrap();

        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let shuffled = f.select_rows(&perm);
        let shuffled_labels: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let other = fit_class_stats(&shuffled, &shuffled_labels, 3, 1e-6).unwrap();
        assert_eq!(base, other);
    }

    #[test]
    fn class_stats_errors() {
        let f = m(&[&[0.0], &[1.0]]);
        assert!(matches!(
            fit_class_stats(&f, &[0, 0], 2, 1e-6),
            Err(Error::EmptyClass { class: 1 })
        ));
        assert!(matches!(
            fit_class_stats(&f, &[0, 5], 2, 1e-6),
            Err(Error::LabelOutOfRange {
                row: 1,
                label: 5,
                ..
            })
        ));
    }

    #[test]
    fn axis_aligned_subspace() {
        let f = m(&[&[-2.0, 0.0], &[-1.0, 0.0], &[1.0, 0.0], &[2.0, 0.0]]);
        let s = fit_subspace(&f, None, 1).unwrap();
        assert_eq!(s.origin, vec![0.0, 0.0]);
        assert_eq!(s.residual_basis, m(&[&[0.0], &[1.0]]));
        assert_eq!(s.residual_norm(&[3.0, 4.0]).unwrap(), 4.0);
    }

    #[test]
    fn full_principal_dim_leaves_no_residual() {
        let f = m(&[&[1.0, 2.0], &[3.0, -1.0], &[0.5, 0.5]]);
        let s = fit_subspace(&f, None, 2).unwrap();
        assert_eq!(s.residual_basis.shape(), (2, 0));
        for row in f.row_iter() {
            assert_eq!(s.residual_norm(row).unwrap(), 0.0);
        }
        let logits = m(&[&[1.0, 0.0], &[2.0, 0.0], &[0.0, 3.0]]);
        assert_eq!(fit_alpha(&f, &logits, s).unwrap().alpha, 1.0);
    }

    #[test]
    fn residual_basis_orthogonal_to_principal() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let data: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = Matrix::new(50, 4, data).unwrap();
        let s = fit_subspace(&f, None, 2).unwrap();
        let r = &s.residual_basis;
        let rtr = r.transpose().matmul(r).unwrap();
        assert!(rtr.sub(&Matrix::identity(2)).unwrap().frobenius_norm() <= 1e-8);

        // Oracle: top-2 eigenvectors straight from sym_eig on the covariance.
        let mean = f.col_mean();
        let mut cov = Matrix::zeros(4, 4);
        for row in f.row_iter() {
            for i in 0..4 {
                for j in 0..4 {
                    cov[(i, j)] += (row[i] - mean[i]) * (row[j] - mean[j]) / 50.0;
                }
            }
        }
        let top = sym_eig(&cov).unwrap().eigenvectors.select_cols(0, 2);
        let cross = r.transpose().matmul(&top).unwrap();
        assert!(cross.frobenius_norm() <= 1e-8);
    }

    #[test]
    fn subspace_errors() {
        let f = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert!(fit_subspace(&f, None, 3).is_err());
        assert!(fit_subspace(&m(&[&[1.0, 2.0]]), None, 1).is_err());
    }

    #[test]
    fn head_origin_zeroes_logits() {
        let w = m(&[&[1.0, 0.0, 0.0], &[0.0, 2.0, 0.0]]);
        let head = LinearHead::new(w, vec![3.0, -4.0]).unwrap();
        let u = head_origin(&head).unwrap();
        let l = head.logits(&u).unwrap();
        assert!(l.iter().all(|v| v.abs() < 1e-12), "{l:?}");
        assert!(u[2].abs() < 1e-12);
    }

    #[test]
    fn alpha_ratio_of_sums() {
        // residual norm 2 for every row, max logit 4 for every row
        let f = m(&[&[0.0, 2.0], &[1.0, -2.0], &[-1.0, 2.0]]);
        let sub = PrincipalSubspace {
            origin: vec![0.0, 0.0],
            residual_basis: m(&[&[0.0], &[1.0]]),
            principal_dim: 1,
        };
        let logits = m(&[&[4.0, 1.0], &[0.0, 4.0], &[4.0, 4.0]]);
        assert_eq!(fit_alpha(&f, &logits, sub.clone()).unwrap().alpha, 2.0);

        let doubled = m(&[&[0.0, 4.0], &[1.0, -4.0], &[-1.0, 4.0]]);
        assert_eq!(
            fit_alpha(&doubled, &logits, sub.clone()).unwrap().alpha,
            1.0
        );

        let scaled = logits.scale(3.0);
        assert_eq!(fit_alpha(&f, &scaled, sub.clone()).unwrap().alpha, 6.0);

        assert!(fit_alpha(&f, &logits.scale(-1.0), sub.clone()).is_err());
        assert!(fit_alpha(&f, &m(&[&[1.0]]), sub).is_err());
    }

    #[test]
    fn kl_template_examples() {
        let t = fit_kl_templates(&m(&[&[0.0, 0.0], &[0.0, 0.0]]), &[0, 1], 2).unwrap();
        assert_eq!(t.class_dists, m(&[&[0.5, 0.5], &[0.5, 0.5]]));

        let l = m(&[&[0.0, 3f64.ln()], &[3f64.ln(), 0.0], &[0.0, 0.0]]);
        let t = fit_kl_templates(&l, &[0, 0, 1], 2).unwrap();
        for v in t.class_dists.row(0) {
            assert!((v - 0.5).abs() < 1e-15);
        }

        assert!(fit_kl_templates(&l, &[0, 0, 0], 2).is_err());
        let underflow = m(&[&[0.0, -1e4]]);
        assert!(matches!(
            fit_kl_templates(&underflow, &[0], 1),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn kl_templates_permute_with_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..30 * 3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let l = Matrix::new(30, 3, data).unwrap();
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let base = fit_kl_templates(&l, &labels, 3).unwrap();
        for row in base.class_dists.row_iter() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let perm = [2usize, 0, 1];
        let relabeled: Vec<usize> = labels.iter().map(|&k| perm[k]).collect();
        let other = fit_kl_templates(&l, &relabeled, 3).unwrap();
        for (k, &p) in perm.iter().enumerate() {
            assert_eq!(base.class_dists.row(k), other.class_dists.row(p));
        }
    }

    #[test]
    fn react_percentile() {
        let f = Matrix::new(10, 10, (1..=100).map(f64::from).collect()).unwrap();
        assert_eq!(fit_react(&f, 90.0).unwrap().clip_value, 90.0);
        assert_eq!(fit_react(&f, 100.0).unwrap().clip_value, 100.0);
        let c = Matrix::new(3, 2, vec![2.5; 6]).unwrap();
        assert_eq!(fit_react(&c, 37.0).unwrap().clip_value, 2.5);
        assert!(fit_react(&Matrix::zeros(0, 3), 90.0).is_err());
    }

    #[test]
    fn fit_all_without_head_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 40;
        let f = Matrix::new(n, 3, (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let l = Matrix::new(n, 2, (0..n * 2).map(|_| rng.gen_range(0.5..3.0)).collect()).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let cfg = FitConfig {
            principal_dim: Some(1),
            ..FitConfig::default()
        };
        let a = fit_all(&f, &l, &labels, 2, None, &cfg).unwrap();
        let b = fit_all(&f, &l, &labels, 2, None, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.head.is_none());
        assert_eq!(a.subspace().residual_basis.shape(), (3, 2));
    }

    #[test]
    fn fit_all_names_failing_stage() {
        let f = m(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let l = m(&[&[1.0], &[1.0]]);
        let err = fit_all(&f, &l, &[0, 0], 2, None, &FitConfig::default()).unwrap_err();
        assert!(err.to_string().starts_with("class statistics"), "{err}");

        let head = LinearHead::new(m(&[&[1.0, 1.0]]), vec![0.0]).unwrap();
        let err = fit_all(
            &f,
            &l.scale(5.0),
            &[0, 0],
            1,
            Some(head),
            &FitConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().starts_with("head"), "{err}");
    }
}
