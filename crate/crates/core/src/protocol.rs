//! Evaluation protocols built from the fit, score and metric layers.
//!
//! The multi-class protocol scores the ID test split and every OOD set with
//! one set of fitted statistics. The one-class protocol treats each class in
//! turn as in-distribution, fits statistics on that class alone, and averages
//! the per-OOD-class results of each task.

use std::collections::BTreeSet;
use std::path::Path;

use crate::datagen::{one_class_split, OneClassTask};
use crate::error::{Error, Result};
use crate::fitstats::{fit_all, FitConfig, IdStats, LinearHead};
use crate::io::{save_stats, NamedScores, OneClassEntry, ReportEntry, Split};
use crate::metrics::{evaluate, EvalOutcome};
use crate::scores::{score_batch, ScoreKind};

/// Name used for the ID split in curves and tables.
pub const ID_DATASET: &str = "id_test";

/// Scores of one score function on the ID split and each OOD set, ID first.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub kind: ScoreKind,
    pub datasets: Vec<NamedScores>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiClassResult {
    pub entries: Vec<ReportEntry>,
    pub scores: Vec<ScoreTable>,
}

impl MultiClassResult {
    /// Input for [`crate::io::emit_curves`].
    pub fn curve_input(&self) -> Vec<(String, Vec<NamedScores>)> {
        self.scores
            .iter()
            .map(|t| (t.kind.name().to_string(), t.datasets.clone()))
            .collect()
    }
}

fn score_split(kind: ScoreKind, split: &Split, stats: &IdStats, name: &str) -> Result<Vec<f64>> {
    score_batch(kind, Some(&split.features), split.logits.as_ref(), stats)
        .map(|s| s.values)
        .map_err(|e| match e {
            Error::MissingInput(msg) => Error::MissingInput(format!("{name}: {msg}")),
            other => other,
        })
}

/// Scores `id` and each OOD set under every requested score and evaluates
/// each (score, OOD set) pair. Result order follows `kinds`, then `ood`.
pub fn run_multiclass(
    stats: &IdStats,
    id: &Split,
    ood: &[(String, Split)],
    kinds: &[ScoreKind],
) -> Result<MultiClassResult> {
    if kinds.is_empty() {
        return Err(Error::InvalidArgument(
            "no score functions requested".into(),
        ));
    }
    if ood.is_empty() {
        return Err(Error::Empty("no OOD sets to evaluate".into()));
    }
    if id.is_empty() {
        return Err(Error::Empty("ID test split is empty".into()));
    }
    let mut entries = Vec::new();
    let mut tables = Vec::new();
    for &kind in kinds {
        let id_scores = score_split(kind, id, stats, ID_DATASET)?;
        let mut datasets = vec![(ID_DATASET.to_string(), id_scores)];
        for (name, split) in ood {
            let ood_scores = score_split(kind, split, stats, &format!("ood.{name}"))?;
            let outcome = evaluate(&datasets[0].1, &ood_scores)?;
            entries.push(ReportEntry {
                score: kind.name().to_string(),
                dataset: name.clone(),
                outcome,
            });
            datasets.push((name.clone(), ood_scores));
        }
        tables.push(ScoreTable { kind, datasets });
    }
    Ok(MultiClassResult {
        entries,
        scores: tables,
    })
}

/// One task of the one-class protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct OneClassRun {
    pub id_class: usize,
    /// Split of the training rows: the ID rows are the fit set.
    pub train_task: OneClassTask,
    /// Split of the test rows into ID and OOD.
    pub test_task: OneClassTask,
    /// `(score, ood_class, outcome)` for every OOD class present in the test split.
    pub outcomes: Vec<(ScoreKind, usize, EvalOutcome)>,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneClassResult {
    pub runs: Vec<OneClassRun>,
    /// Per (score, ID class) results averaged across OOD classes.
    pub entries: Vec<OneClassEntry>,
}

fn require_labels<'a>(split: &'a Split, name: &str) -> Result<&'a [usize]> {
    split
        .labels
        .as_deref()
        .ok_or_else(|| Error::MissingInput(format!("one-class protocol requires {name}.labels")))
}

/// Runs one task per class found in the training labels.
///
/// Each task fits statistics on the training rows of its class (as a single
/// label group), scores the test split, and evaluates the test rows of the
/// class against the test rows of every other class separately. When
/// `stats_dir` is given the statistics of task `k` are saved to
/// `stats_dir/class_<k>`.
pub fn run_one_class(
    train: &Split,
    test: &Split,
    head: Option<&LinearHead>,
    kinds: &[ScoreKind],
    config: &FitConfig,
    stats_dir: Option<&Path>,
) -> Result<OneClassResult> {
    if kinds.is_empty() {
        return Err(Error::InvalidArgument(
            "no score functions requested".into(),
        ));
    }
    let train_labels = require_labels(train, "id_train")?;
    let test_labels = require_labels(test, "id_test")?;
    let train_logits = train
        .logits
        .as_ref()
        .ok_or_else(|| Error::MissingInput("fitting requires id_train.logits".into()))?;
    let classes: BTreeSet<usize> = train_labels.iter().copied().collect();

    let mut runs = Vec::new();
    let mut entries = Vec::new();
    for &k in &classes {
        let train_task = one_class_split(train_labels, k)?;
        let test_task = one_class_split(test_labels, k)
            .map_err(|_| Error::Degenerate(format!("class {k} has no rows in id_test")))?;
        if test_task.is_degenerate() {
            return Err(Error::Degenerate(format!(
                "one-class task {k} has no OOD rows in id_test"
            )));
        }
        let rows = &train_task.id_rows;
        let stats = fit_all(
            &train.features.select_rows(rows),
            &train_logits.select_rows(rows),
            &vec![0; rows.len()],
            1,
            head.cloned(),
            config,
        )
        .map_err(|e| Error::Stage {
            stage: "one-class fit",
            source: Box::new(e),
        })?;
        if let Some(dir) = stats_dir {
            save_stats(&stats, &dir.join(format!("class_{k}")))?;
        }

        let ood_classes: BTreeSet<usize> =
            test_task.ood_rows.iter().map(|&r| test_labels[r]).collect();
        let mut outcomes = Vec::new();
        for &kind in kinds {
            let all = score_split(kind, test, &stats, ID_DATASET)?;
            let id_scores: Vec<f64> = test_task.id_rows.iter().map(|&r| all[r]).collect();
            let (mut auroc_sum, mut fpr_sum) = (0.0, 0.0);
            for &j in &ood_classes {
                let ood_scores: Vec<f64> = test_task
                    .ood_rows
                    .iter()
                    .filter(|&&r| test_labels[r] == j)
                    .map(|&r| all[r])
                    .collect();
                let outcome = evaluate(&id_scores, &ood_scores)?;
                auroc_sum += outcome.auroc;
                fpr_sum += outcome.fpr95;
                outcomes.push((kind, j, outcome));
            }
            let m = ood_classes.len() as f64;
            entries.push(OneClassEntry {
                score: kind.name().to_string(),
                id_class: k.to_string(),
                auroc: auroc_sum / m,
                fpr95: fpr_sum / m,
            });
        }
        runs.push(OneClassRun {
            id_class: k,
            train_task,
            test_task,
            outcomes,
            alpha: stats.vim.alpha,
        });
    }
    // Entries were pushed task-major; reports want score-major.
    entries.sort_by_key(|e| kinds.iter().position(|k| k.name() == e.score));
    Ok(OneClassResult { runs, entries })
}
