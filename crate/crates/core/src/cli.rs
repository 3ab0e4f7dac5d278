//! Command-line front end. Each verb runs one pipeline stage and reads or
//! writes its artifacts on disk.
//!
//! Exit codes: 0 success, 2 usage, 3 data or format error, 4 numeric failure.
//! Failures print one line to stderr of the form `error[<class>]: <message>`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::datagen::{synth_dataset, LabeledSet, SynthSpec};
use crate::error::{Error, ErrorClass, Result};
use crate::fitstats::{fit_all, FitConfig, IdStats};
use crate::io::{
    emit_curves, emit_one_class_report, emit_report, load_stats, read_calibration, read_matrix,
    save_stats, write_atomic, write_calibration, write_labels, write_matrix, Manifest,
    ManifestConfig, MatrixFormat, SplitPaths,
};
use crate::metrics::{calibrate, detect};
use crate::numerics::Matrix;
use crate::protocol::{run_multiclass, run_one_class};
use crate::scores::{score_batch, ScoreKind};

#[derive(Debug, Parser)]
#[command(
    name = "oodscore",
    version,
    about = "Post-hoc OOD scoring, calibration and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit ID statistics from the manifest's training split
    Fit(FitArgs),
    /// Score one feature/logit matrix with fitted statistics
    Score(ScoreArgs),
    /// Multi-class evaluation over every OOD set in the manifest
    Eval(EvalArgs),
    /// One-class evaluation: each class in turn is in-distribution
    Oneclass(OneClassArgs),
    /// Threshold at the eta-th percentile of ID calibration scores
    Calibrate(CalibrateArgs),
    /// Flag samples scoring above a calibrated threshold
    Detect(DetectArgs),
    /// Histogram score files into distribution curves
    Curves(CurvesArgs),
    /// Generate a synthetic dataset with a manifest
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct FitOverrides {
    /// Principal subspace dimension D (default: manifest, else min(d, 512))
    #[arg(long)]
    pub principal_dim: Option<usize>,
    /// Covariance eigenvalue floor relative to trace/d
    #[arg(long)]
    pub shrink: Option<f64>,
    /// ReAct clip percentile in (0, 100]
    #[arg(long)]
    pub react_p: Option<f64>,
}

impl FitOverrides {
    fn config(&self, manifest: &ManifestConfig) -> FitConfig {
        let defaults = FitConfig::default();
        FitConfig {
            principal_dim: self.principal_dim.or(manifest.principal_dim),
            shrink: self.shrink.or(manifest.shrink).unwrap_or(defaults.shrink),
            react_percentile: self
                .react_p
                .or(manifest.react_p)
                .unwrap_or(defaults.react_percentile),
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_stats: PathBuf,
    #[command(flatten)]
    pub overrides: FitOverrides,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub stats: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub logits: Option<PathBuf>,
    #[arg(long)]
    pub score: String,
    /// One score per line (csv)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub stats: PathBuf,
    /// Comma-separated score names, in report order
    #[arg(long)]
    pub scores: String,
    /// Report csv; the aligned table goes next to it with a .txt extension
    #[arg(long)]
    pub out_report: PathBuf,
    #[arg(long)]
    pub out_curves: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    /// Record the wall-clock time in the report header
    #[arg(long)]
    pub stamp: bool,
}

#[derive(Debug, Args)]
pub struct OneClassArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Per-task statistics are written to <dir>/class_<k>
    #[arg(long)]
    pub stats_dir: PathBuf,
    #[arg(long)]
    pub scores: String,
    #[arg(long)]
    pub out_report: PathBuf,
    #[command(flatten)]
    pub overrides: FitOverrides,
    #[arg(long)]
    pub stamp: bool,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub stats: PathBuf,
    #[arg(long)]
    pub cal_features: PathBuf,
    #[arg(long)]
    pub cal_logits: Option<PathBuf>,
    #[arg(long)]
    pub score: String,
    /// Percentile in (0, 100]
    #[arg(long, default_value_t = 95.0)]
    pub eta: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub stats: PathBuf,
    #[arg(long)]
    pub calibration: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub logits: Option<PathBuf>,
    #[arg(long)]
    pub score: String,
    /// csv with columns score,is_outlier
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CurvesArgs {
    /// NAME=PATH of a one-column score file; repeat per dataset
    #[arg(long = "input", required = true)]
    pub inputs: Vec<String>,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    /// Value of the score column in the output
    #[arg(long, default_value = "score")]
    pub score_name: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    LargeMargin,
    Null,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataFormat {
    Fmat,
    Csv,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::LargeMargin)]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub intrinsic_dim: Option<usize>,
    #[arg(long)]
    pub samples_per_class: Option<usize>,
    /// Rows in the ID test split and in each OOD set
    #[arg(long)]
    pub eval_samples: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub off_subspace_noise: Option<f64>,
    #[arg(long)]
    pub ood_shift: Option<f64>,
    #[arg(long)]
    pub ood_off_subspace: Option<f64>,
    #[arg(long, value_enum, default_value_t = DataFormat::Fmat)]
    pub format: DataFormat,
}

impl SynthArgs {
    pub fn spec(&self) -> SynthSpec {
        let mut s = match self.preset {
            Preset::LargeMargin => SynthSpec::large_margin(self.seed),
            Preset::Null => SynthSpec::null(self.seed),
        };
        macro_rules! apply {
            ($($field:ident <- $flag:ident),*) => {
                $(if let Some(v) = self.$flag { s.$field = v; })*
            };
        }
        apply!(
            num_classes <- classes,
            feature_dim <- dim,
            intrinsic_dim <- intrinsic_dim,
            samples_per_class <- samples_per_class,
            eval_samples <- eval_samples,
            separation <- separation,
            noise <- noise,
            off_subspace_noise <- off_subspace_noise,
            ood_shift <- ood_shift,
            ood_off_subspace <- ood_off_subspace
        );
        s
    }
}

/// Parses `args` (including the program name) and runs the verb, returning
/// the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ErrorClass::Usage.exit_code()
            } else {
                0
            };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let class = e.class();
            eprintln!("error[{}]: {e}", class.tag());
            class.exit_code()
        }
    }
}

pub fn main() -> i32 {
    run_from(std::env::args_os())
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Fit(a) => fit(&a),
        Command::Score(a) => score(&a),
        Command::Eval(a) => eval(&a),
        Command::Oneclass(a) => oneclass(&a),
        Command::Calibrate(a) => calibrate_cmd(&a),
        Command::Detect(a) => detect_cmd(&a),
        Command::Curves(a) => curves(&a),
        Command::Synth(a) => synth(&a),
    }
}

fn fit(a: &FitArgs) -> Result<()> {
    let manifest = Manifest::parse(&a.manifest)?;
    let config = a.overrides.config(&manifest.config);
    let data = manifest.load()?;
    let train = &data.train;
    let logits = train
        .logits
        .as_ref()
        .ok_or_else(|| Error::MissingInput("fit requires id_train.logits".into()))?;
    let labels = train
        .labels
        .as_ref()
        .ok_or_else(|| Error::MissingInput("fit requires id_train.labels".into()))?;
    let num_classes = logits.cols();
    let stats = fit_all(
        &train.features,
        logits,
        labels,
        num_classes,
        data.head,
        &config,
    )?;
    save_stats(&stats, &a.out_stats)
}

fn read_optional(path: Option<&PathBuf>) -> Result<Option<Matrix>> {
    path.map(|p| read_matrix(p)).transpose()
}

fn score_file(
    stats: &IdStats,
    kind: ScoreKind,
    features: &Path,
    logits: Option<&PathBuf>,
) -> Result<Vec<f64>> {
    let f = read_matrix(features)?;
    let l = read_optional(logits)?;
    if let Some(l) = &l {
        if l.rows() != f.rows() {
            return Err(Error::Shape(format!(
                "{} has {} rows but {} has {}",
                logits.unwrap().display(),
                l.rows(),
                features.display(),
                f.rows()
            )));
        }
    }
    Ok(score_batch(kind, Some(&f), l.as_ref(), stats)?.values)
}

fn column(values: Vec<f64>) -> Result<Matrix> {
    Matrix::new(values.len(), 1, values)
}

fn score(a: &ScoreArgs) -> Result<()> {
    let kind: ScoreKind = a.score.parse()?;
    let stats = load_stats(&a.stats)?;
    let values = score_file(&stats, kind, &a.features, a.logits.as_ref())?;
    write_matrix(&column(values)?, &a.out, MatrixFormat::Csv)
}

fn header(stats_line: String, stamp: bool) -> Vec<String> {
    let mut h = vec![
        "AUROC and FPR95 in percent; OOD is the positive class".to_string(),
        "FPR95: step-function ROC, thresholds at observed OOD scores, flagged when score >= t, no interpolation".to_string(),
        stats_line,
    ];
    if stamp {
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        h.push(format!("generated at unix time {secs}"));
    }
    h
}

fn eval(a: &EvalArgs) -> Result<()> {
    let kinds = ScoreKind::parse_list(&a.scores)?;
    if a.bins < 2 {
        return Err(Error::InvalidArgument(format!(
            "--bins must be at least 2, got {}",
            a.bins
        )));
    }
    let manifest = Manifest::parse(&a.manifest)?;
    let data = manifest.load()?;
    let stats = load_stats(&a.stats)?;
    if data.test.is_empty() {
        return Err(Error::MissingInput("eval requires id_test.features".into()));
    }
    for kind in &kinds {
        let missing = |s: &crate::io::Split| kind.needs_logits() && s.logits.is_none();
        if let Some(name) = std::iter::once(("id_test", &data.test))
            .chain(data.ood.iter().map(|(n, s)| (n.as_str(), s)))
            .find(|(_, s)| missing(s))
            .map(|(n, _)| n)
        {
            return Err(Error::MissingInput(format!(
                "score '{kind}' requires logits, but the manifest gives none for {name}"
            )));
        }
    }
    let result = run_multiclass(&stats, &data.test, &data.ood, &kinds)?;
    let stats_line = format!(
        "alpha = {}; principal_dim = {}; feature_dim = {}; classes = {}",
        stats.vim.alpha,
        stats.subspace().principal_dim,
        stats.feature_dim,
        stats.num_classes
    );
    emit_report(&result.entries, &header(stats_line, a.stamp), &a.out_report)?;
    emit_curves(&result.curve_input(), a.bins, &a.out_curves)
}

fn oneclass(a: &OneClassArgs) -> Result<()> {
    let kinds = ScoreKind::parse_list(&a.scores)?;
    let manifest = Manifest::parse(&a.manifest)?;
    let config = a.overrides.config(&manifest.config);
    let data = manifest.load()?;
    let result = run_one_class(
        &data.train,
        &data.test,
        data.head.as_ref(),
        &kinds,
        &config,
        Some(&a.stats_dir),
    )?;

    let mut tasks = String::from("id_class,train_id_rows,test_id_rows,test_ood_rows,alpha\n");
    for run in &result.runs {
        tasks.push_str(&format!(
            "{},{},{},{},{}\n",
            run.id_class,
            run.train_task.id_rows.len(),
            run.test_task.id_rows.len(),
            run.test_task.ood_rows.len(),
            run.alpha
        ));
    }
    write_atomic(&a.stats_dir.join("tasks.csv"), tasks.as_bytes())?;

    let line = format!(
        "one-class protocol: {} tasks; each cell averages over the OOD classes of its task",
        result.runs.len()
    );
    emit_one_class_report(&result.entries, &header(line, a.stamp), &a.out_report)?;
    Ok(())
}

fn calibrate_cmd(a: &CalibrateArgs) -> Result<()> {
    let kind: ScoreKind = a.score.parse()?;
    if !(a.eta > 0.0 && a.eta <= 100.0) {
        return Err(Error::InvalidArgument(format!(
            "--eta must lie in (0, 100], got {}",
            a.eta
        )));
    }
    let stats = load_stats(&a.stats)?;
    let values = score_file(&stats, kind, &a.cal_features, a.cal_logits.as_ref())?;
    let cal = calibrate(&values, a.eta)?;
    write_calibration(kind.name(), &cal, values.len(), &a.out)
}

fn detect_cmd(a: &DetectArgs) -> Result<()> {
    let kind: ScoreKind = a.score.parse()?;
    let (cal_score, cal) = read_calibration(&a.calibration)?;
    if cal_score != kind.name() {
        return Err(Error::InvalidArgument(format!(
            "calibration was made for '{cal_score}', not '{kind}'"
        )));
    }
    let stats = load_stats(&a.stats)?;
    let values = score_file(&stats, kind, &a.features, a.logits.as_ref())?;
    let flags = detect(&values, &cal);
    let mut out = String::from("# score,is_outlier\n");
    for (v, f) in values.iter().zip(&flags) {
        out.push_str(&format!("{v},{}\n", u8::from(*f)));
    }
    write_atomic(&a.out, out.as_bytes())
}

fn curves(a: &CurvesArgs) -> Result<()> {
    let datasets = a
        .inputs
        .iter()
        .map(|spec| {
            let (name, path) = spec.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("--input expects NAME=PATH, got '{spec}'"))
            })?;
            let m = read_matrix(Path::new(path))?;
            if m.cols() != 1 {
                return Err(Error::Shape(format!(
                    "{path}: score files have one column, found {}",
                    m.cols()
                )));
            }
            Ok((name.to_string(), m.into_vec()))
        })
        .collect::<Result<Vec<_>>>()?;
    emit_curves(&[(a.score_name.clone(), datasets)], a.bins, &a.out)
}

fn synth(a: &SynthArgs) -> Result<()> {
    let spec = a.spec();
    let data = synth_dataset(&spec)?;
    let dir = &a.out_dir;
    let fmt = match a.format {
        DataFormat::Fmat => MatrixFormat::Fmat,
        DataFormat::Csv => MatrixFormat::Csv,
    };
    let ext = fmt.extension();
    let write_set = |prefix: &str, set: &LabeledSet, labels: bool| -> Result<SplitPaths> {
        let features = dir.join(format!("{prefix}_features.{ext}"));
        let logits = dir.join(format!("{prefix}_logits.{ext}"));
        write_matrix(&set.features, &features, fmt)?;
        write_matrix(&set.logits, &logits, fmt)?;
        let labels = if labels {
            let p = dir.join(format!("{prefix}_labels.csv"));
            write_labels(&set.labels, &p, MatrixFormat::Csv)?;
            Some(p)
        } else {
            None
        };
        Ok(SplitPaths {
            features: Some(features),
            logits: Some(logits),
            labels,
        })
    };

    let mut manifest = Manifest {
        id_train: write_set("id_train", &data.train, true)?,
        id_test: write_set("id_test", &data.test, true)?,
        ..Manifest::default()
    };
    for (name, set) in &data.ood {
        let paths = write_set(&format!("ood_{name}"), set, false)?;
        manifest.ood_sets.push((name.clone(), paths));
    }
    let w = dir.join(format!("head_weights.{ext}"));
    let b = dir.join(format!("head_bias.{ext}"));
    write_matrix(data.head.weights(), &w, fmt)?;
    write_matrix(&column(data.head.bias().to_vec())?, &b, fmt)?;
    manifest.head_weights = Some(w);
    manifest.head_bias = Some(b);
    manifest.config.principal_dim = Some(spec.intrinsic_dim);
    manifest.write(&dir.join("manifest.txt"))
}
