//! Per-sample OOD scores. Every score is oriented so that a higher value means
//! the sample looks more out-of-distribution; confidence-style scores are
//! negated.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fitstats::{
    ClassStats, IdStats, KlTemplates, LinearHead, PrincipalSubspace, ReactParams, VimParams,
};
use crate::numerics::{dot, logistic, logsumexp, max_of, softmax, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoreKind {
    Msp,
    MaxLogit,
    Energy,
    KlMatching,
    Mahalanobis,
    Residual,
    React,
    Vim,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 8] = [
        ScoreKind::Msp,
        ScoreKind::Energy,
        ScoreKind::MaxLogit,
        ScoreKind::KlMatching,
        ScoreKind::Residual,
        ScoreKind::React,
        ScoreKind::Mahalanobis,
        ScoreKind::Vim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Msp => "msp",
            ScoreKind::MaxLogit => "maxlogit",
            ScoreKind::Energy => "energy",
            ScoreKind::KlMatching => "kl_matching",
            ScoreKind::Mahalanobis => "mahalanobis",
            ScoreKind::Residual => "residual",
            ScoreKind::React => "react",
            ScoreKind::Vim => "vim",
        }
    }

    pub fn needs_features(self) -> bool {
        matches!(
            self,
            ScoreKind::Mahalanobis | ScoreKind::Residual | ScoreKind::React | ScoreKind::Vim
        )
    }

    pub fn needs_logits(self) -> bool {
        matches!(
            self,
            ScoreKind::Msp
                | ScoreKind::MaxLogit
                | ScoreKind::Energy
                | ScoreKind::KlMatching
                | ScoreKind::Vim
        )
    }

    /// Parses a comma-separated list, preserving order.
    pub fn parse_list(list: &str) -> Result<Vec<ScoreKind>> {
        let kinds = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        if kinds.is_empty() {
            return Err(Error::InvalidArgument("empty score list".into()));
        }
        Ok(kinds)
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        if let Some(kind) = ScoreKind::ALL.into_iter().find(|k| k.name() == lower) {
            return Ok(kind);
        }
        match lower.as_str() {
            "odin" => Err(Error::UnsupportedScore(s.to_string())),
            _ => Err(Error::UnknownScore {
                name: s.to_string(),
                valid: ScoreKind::ALL.map(ScoreKind::name).join(", "),
            }),
        }
    }
}

/// Scores for a batch, in input row order.
#[derive(Debug, Clone, PartialEq)]
pub struct OodScores {
    pub kind: ScoreKind,
    pub values: Vec<f64>,
}

impl OodScores {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn per_row(
    kind: ScoreKind,
    m: &Matrix,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<OodScores> {
    let values = m.row_iter().map(&mut f).collect::<Result<Vec<_>>>()?;
    Ok(OodScores { kind, values })
}

fn check_width(what: &str, m: &Matrix, expected: usize) -> Result<()> {
    if m.cols() != expected {
        return Err(Error::Shape(format!(
            "{what} have {} columns, expected {expected}",
            m.cols()
        )));
    }
    Ok(())
}

/// Negated maximum softmax probability.
pub fn score_msp(logits: &Matrix) -> Result<OodScores> {
    if logits.cols() < 2 {
        return Err(Error::Shape(format!(
            "MSP needs at least 2 classes, got {}",
            logits.cols()
        )));
    }
    per_row(ScoreKind::Msp, logits, |l| {
        Ok(-max_of(&softmax(l)?).expect("non-empty"))
    })
}

pub fn score_maxlogit(logits: &Matrix) -> Result<OodScores> {
    per_row(ScoreKind::MaxLogit, logits, |l| {
        max_of(l)
            .map(|m| -m)
            .ok_or_else(|| Error::Empty("logit rows are empty".into()))
    })
}

/// Negated free energy, `−logsumexp(l)`.
pub fn score_energy(logits: &Matrix) -> Result<OodScores> {
    per_row(ScoreKind::Energy, logits, |l| Ok(-logsumexp(l)?))
}

const TEMPLATE_FLOOR: f64 = 1e-12;

/// Smallest KL divergence from the sample softmax to any class template.
pub fn score_kl_matching(logits: &Matrix, templates: &KlTemplates) -> Result<OodScores> {
    let dists = &templates.class_dists;
    check_width("logits", logits, dists.cols())?;
    per_row(ScoreKind::KlMatching, logits, |l| {
        let p = softmax(l)?;
        let best = dists
            .row_iter()
            .map(|q| {
                p.iter()
                    .zip(q)
                    .filter(|(&pi, _)| pi > 0.0)
                    .map(|(&pi, &qi)| pi * (pi / qi.max(TEMPLATE_FLOOR)).ln())
                    .sum::<f64>()
            })
            .reduce(f64::min)
            .ok_or_else(|| Error::Empty("no KL templates".into()))?;
        // rounding can leave a -1e-17 where the divergence is zero
        Ok(best.max(0.0))
    })
}

/// Minimum squared Mahalanobis distance to the class centroids.
pub fn score_mahalanobis(features: &Matrix, stats: &ClassStats) -> Result<OodScores> {
    let d = stats.centroids.cols();
    check_width("features", features, d)?;
    let mut diff = vec![0.0; d];
    per_row(ScoreKind::Mahalanobis, features, |x| {
        let mut best = f64::INFINITY;
        for mu in stats.centroids.row_iter() {
            for ((o, &a), &b) in diff.iter_mut().zip(x).zip(mu) {
                *o = a - b;
            }
            let q = dot(&diff, &stats.shared_precision.mul_vec(&diff)?);
            best = best.min(q);
        }
        Ok(best)
    })
}

/// Norm of the component of `x − u` outside the principal subspace.
pub fn score_residual(features: &Matrix, subspace: &PrincipalSubspace) -> Result<OodScores> {
    check_width("features", features, subspace.feature_dim())?;
    per_row(ScoreKind::Residual, features, |x| subspace.residual_norm(x))
}

/// Energy score of the logits recomputed from activations clipped at `c`.
pub fn score_react(
    features: &Matrix,
    head: Option<&LinearHead>,
    react: &ReactParams,
) -> Result<OodScores> {
    let head = head.ok_or_else(|| {
        Error::MissingInput("ReAct requires head weights (W, b) to recompute logits".into())
    })?;
    check_width("features", features, head.feature_dim())?;
    let c = react.clip_value;
    let mut clipped = vec![0.0; head.feature_dim()];
    per_row(ScoreKind::React, features, |x| {
        for (o, &v) in clipped.iter_mut().zip(x) {
            *o = v.min(c);
        }
        Ok(-logsumexp(&head.logits(&clipped)?)?)
    })
}

/// Virtual-logit score `e^{αr} / (Σ e^{l_i} + e^{αr})`, evaluated as
/// `σ(αr − logsumexp(l))`.
pub fn score_vim(features: &Matrix, logits: &Matrix, vim: &VimParams) -> Result<OodScores> {
    check_width("features", features, vim.subspace.feature_dim())?;
    if features.rows() != logits.rows() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} logit rows",
            features.rows(),
            logits.rows()
        )));
    }
    let values = features
        .row_iter()
        .zip(logits.row_iter())
        .map(|(x, l)| {
            let r = vim.subspace.residual_norm(x)?;
            Ok(logistic(vim.alpha * r - logsumexp(l)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OodScores {
        kind: ScoreKind::Vim,
        values,
    })
}

/// Dispatches to the score function for `kind`, checking that the inputs it
/// needs are present and shaped for `stats`.
pub fn score_batch(
    kind: ScoreKind,
    features: Option<&Matrix>,
    logits: Option<&Matrix>,
    stats: &IdStats,
) -> Result<OodScores> {
    let features = if kind.needs_features() {
        let f = features
            .ok_or_else(|| Error::MissingInput(format!("score '{kind}' requires features")))?;
        check_width("features", f, stats.feature_dim)?;
        Some(f)
    } else {
        None
    };
    let logits = if kind.needs_logits() {
        let l =
            logits.ok_or_else(|| Error::MissingInput(format!("score '{kind}' requires logits")))?;
        check_width("logits", l, stats.logit_dim())?;
        Some(l)
    } else {
        None
    };
    match kind {
        ScoreKind::Msp => score_msp(logits.unwrap()),
        ScoreKind::MaxLogit => score_maxlogit(logits.unwrap()),
        ScoreKind::Energy => score_energy(logits.unwrap()),
        ScoreKind::KlMatching => score_kl_matching(logits.unwrap(), &stats.kl),
        ScoreKind::Mahalanobis => score_mahalanobis(features.unwrap(), &stats.class_stats),
        ScoreKind::Residual => score_residual(features.unwrap(), stats.subspace()),
        ScoreKind::React => score_react(features.unwrap(), stats.head.as_ref(), &stats.react),
        ScoreKind::Vim => score_vim(features.unwrap(), logits.unwrap(), &stats.vim),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn one(scores: Result<OodScores>) -> f64 {
        let s = scores.unwrap();
        assert_eq!(s.len(), 1);
        s.values[0]
    }

    #[test]
    fn msp_values() {
        assert_eq!(one(score_msp(&m(&[&[0.0, 0.0]]))), -0.5);
        let v = one(score_msp(&m(&[&[1f64.ln(), 3f64.ln()]])));
        assert!((v + 0.75).abs() < 1e-15);
        let a = score_msp(&m(&[&[0.3, -1.2, 2.0]])).unwrap().values[0];
        let b = score_msp(&m(&[&[7.3, 5.8, 9.0]])).unwrap().values[0];
        assert!((a - b).abs() <= 1e-12);
        assert!(score_msp(&m(&[&[1.0]])).is_err());
    }

    #[test]
    fn maxlogit_values() {
        assert_eq!(one(score_maxlogit(&m(&[&[1.0, 3.0]]))), -3.0);
        assert_eq!(one(score_maxlogit(&m(&[&[-5.0]]))), 5.0);
    }

    #[test]
    fn maxlogit_ranks_reverse_row_maxima() {
        let l = m(&[&[0.1, 4.0], &[2.0, -1.0], &[9.0, 3.0], &[-2.0, -3.0]]);
        let scores = score_maxlogit(&l).unwrap().values;
        let mut by_score: Vec<usize> = (0..4).collect();
        by_score.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        let maxima: Vec<f64> = l
            .row_iter()
            .map(|r| r.iter().copied().fold(f64::MIN, f64::max))
            .collect();
        let mut by_max: Vec<usize> = (0..4).collect();
        by_max.sort_by(|&a, &b| maxima[b].total_cmp(&maxima[a]));
        assert_eq!(by_score, by_max);
    }

    #[test]
    fn energy_values() {
        assert!((one(score_energy(&m(&[&[0.0, 0.0]]))) + 2f64.ln()).abs() < 1e-15);
        assert_eq!(
            one(score_energy(&m(&[&[1000.0, 1000.0]]))),
            -(1000.0 + 2f64.ln())
        );
        let base = one(score_energy(&m(&[&[0.5, -1.0, 2.0]])));
        let shifted = one(score_energy(&m(&[&[7.5, 6.0, 9.0]])));
        assert!((shifted - (base - 7.0)).abs() <= 1e-9);
    }

    #[test]
    fn kl_values() {
        let t = KlTemplates {
            class_dists: m(&[&[0.25, 0.75]]),
        };
        let v = one(score_kl_matching(&m(&[&[0.0, 0.0]]), &t));
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.1438).abs() < 1e-4);

        let v = one(score_kl_matching(&m(&[&[1f64.ln(), 3f64.ln()]]), &t));
        assert!(v.abs() < 1e-15);

        let two = KlTemplates {
            class_dists: m(&[&[0.9, 0.1], &[0.5, 0.5]]),
        };
        assert!(one(score_kl_matching(&m(&[&[0.0, 0.0]]), &two)).abs() < 1e-15);
        assert!(score_kl_matching(&m(&[&[0.0, 0.0, 0.0]]), &two).is_err());
    }

    #[test]
    fn mahalanobis_values() {
        let stats = ClassStats {
            centroids: m(&[&[0.0, 0.0]]),
            shared_precision: Matrix::identity(2),
            class_counts: vec![1],
        };
        assert_eq!(one(score_mahalanobis(&m(&[&[3.0, 4.0]]), &stats)), 25.0);
        assert_eq!(one(score_mahalanobis(&m(&[&[0.0, 0.0]]), &stats)), 0.0);

        let diag = ClassStats {
            centroids: m(&[&[0.0, 0.0], &[100.0, 100.0]]),
            shared_precision: Matrix::from_diag(&[0.5, 0.125]),
            class_counts: vec![1, 1],
        };
        assert_eq!(one(score_mahalanobis(&m(&[&[2.0, 4.0]]), &diag)), 4.0);
        assert!(score_mahalanobis(&m(&[&[1.0, 2.0, 3.0]]), &diag).is_err());
    }

    #[test]
    fn residual_values() {
        let sub = PrincipalSubspace {
            origin: vec![0.0, 0.0],
            residual_basis: m(&[&[0.0], &[1.0]]),
            principal_dim: 1,
        };
        assert_eq!(one(score_residual(&m(&[&[3.0, 4.0]]), &sub)), 4.0);
        assert_eq!(one(score_residual(&m(&[&[0.0, 0.0]]), &sub)), 0.0);
        let empty = PrincipalSubspace {
            origin: vec![1.0, 1.0],
            residual_basis: Matrix::zeros(2, 0),
            principal_dim: 2,
        };
        let s = score_residual(&m(&[&[3.0, 4.0], &[-1.0, 9.0]]), &empty).unwrap();
        assert_eq!(s.values, vec![0.0, 0.0]);
    }

    #[test]
    fn react_values() {
        let head = LinearHead::new(m(&[&[1.0]]), vec![0.0]).unwrap();
        let react = ReactParams {
            clip_value: 3.0,
            percentile: 90.0,
        };
        assert_eq!(one(score_react(&m(&[&[5.0]]), Some(&head), &react)), -3.0);

        let head = LinearHead::new(m(&[&[1.0, -2.0], &[0.5, 1.5]]), vec![0.2, -0.7]).unwrap();
        let f = m(&[&[0.3, 1.0], &[2.0, -1.0]]);
        let logits = head.logits_batch(&f).unwrap();
        let wide = ReactParams {
            clip_value: 10.0,
            percentile: 100.0,
        };
        let r = score_react(&f, Some(&head), &wide).unwrap();
        let e = score_energy(&logits).unwrap();
        for (a, b) in r.values.iter().zip(&e.values) {
            assert!((a - b).abs() <= 1e-9);
        }

        let zero = ReactParams {
            clip_value: 0.0,
            percentile: 1.0,
        };
        let pos = m(&[&[0.3, 1.0], &[2.0, 4.0]]);
        let expected = -logsumexp(&[0.2, -0.7]).unwrap();
        for v in score_react(&pos, Some(&head), &zero).unwrap().values {
            assert_eq!(v, expected);
        }

        let err = score_react(&f, None, &wide).unwrap_err();
        assert!(err.to_string().contains("ReAct requires head weights"));
    }

    fn vim_params(alpha: f64) -> VimParams {
        VimParams {
            alpha,
            subspace: PrincipalSubspace {
                origin: vec![0.0, 0.0],
                residual_basis: m(&[&[0.0], &[1.0]]),
                principal_dim: 1,
            },
        }
    }

    #[test]
    fn vim_values() {
        let v = one(score_vim(
            &m(&[&[5.0, 0.0]]),
            &m(&[&[0.0, 0.0]]),
            &vim_params(1.0),
        ));
        assert!((v - 1.0 / 3.0).abs() < 1e-15);

        let v = one(score_vim(
            &m(&[&[0.0, 2f64.ln()]]),
            &m(&[&[0.0, 0.0]]),
            &vim_params(1.0),
        ));
        assert!((v - 0.5).abs() < 1e-15);

        // matches the fraction form where it does not overflow
        let (alpha, r, l) = (1.7, 0.8, [0.4, -1.1, 2.3]);
        let v = one(score_vim(&m(&[&[0.0, r]]), &m(&[&l]), &vim_params(alpha)));
        let virt = (alpha * r).exp();
        let direct = virt / (l.iter().map(|x: &f64| x.exp()).sum::<f64>() + virt);
        assert!((v - direct).abs() < 1e-15);
    }

    #[test]
    fn vim_increasing_in_residual() {
        let logits = m(&[&[0.5, 1.5, -0.3]]);
        let p = vim_params(0.7);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..200 {
            let r = i as f64 * 0.05;
            let v = one(score_vim(&m(&[&[1.0, r]]), &logits, &p));
            assert!(v > prev && v > 0.0 && v < 1.0);
            prev = v;
        }
    }

    #[test]
    fn vim_saturates_at_the_ends() {
        let logits = m(&[&[0.0, 0.0]]);
        let p = vim_params(1.0);
        assert_eq!(one(score_vim(&m(&[&[0.0, 60.0]]), &logits, &p)), 1.0);
        let tiny = m(&[&[800.0, 800.0]]);
        assert_eq!(one(score_vim(&m(&[&[0.0, 0.0]]), &tiny, &p)), 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn vim_stays_in_unit_interval(
                r in 0.0f64..1e6,
                l in prop::collection::vec(-1e4f64..1e4, 2..6),
                alpha in 1e-3f64..1e3,
            ) {
                let v = one(score_vim(&m(&[&[0.0, r]]), &m(&[&l]), &vim_params(alpha)));
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("energy".parse::<ScoreKind>().unwrap(), ScoreKind::Energy);
        assert_eq!(
            "KL_Matching".parse::<ScoreKind>().unwrap(),
            ScoreKind::KlMatching
        );
        let err = "odin".parse::<ScoreKind>().unwrap_err();
        assert!(matches!(err, Error::UnsupportedScore(_)));
        assert!(err.to_string().contains("odin"));
        let err = "entropy".parse::<ScoreKind>().unwrap_err();
        assert!(err.to_string().contains("mahalanobis"));
        assert_eq!(
            ScoreKind::parse_list("vim, msp,energy").unwrap(),
            vec![ScoreKind::Vim, ScoreKind::Msp, ScoreKind::Energy]
        );
        assert!(ScoreKind::parse_list(" , ").is_err());
        for kind in ScoreKind::ALL {
            assert_eq!(kind.name().parse::<ScoreKind>().unwrap(), kind);
        }
    }
}
