//! On-disk artifacts: matrices, labels, manifests, fitted statistics, reports
//! and score-distribution curves.
//!
//! # Matrix formats
//!
//! * `fmat`: the bytes `FMAT1\n`, then rows and cols as `u32` little-endian,
//!   then `rows * cols` little-endian `f32` values in row-major order.
//! * `fmat64`: identical layout with magic `FMAT2\n` and `f64` values. Used for
//!   fitted statistics so a saved model scores bit-identically after reload.
//! * `csv`: comma-separated decimals, one row per line, with an optional first
//!   line starting with `#`.
//!
//! [`read_matrix`] tells the formats apart by their magic bytes. Every write
//! goes to a temporary file that is renamed into place once complete.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fitstats::{
    ClassStats, IdStats, KlTemplates, LinearHead, PrincipalSubspace, ReactParams, VimParams,
};
use crate::metrics::{CalibrationResult, EvalOutcome};
use crate::numerics::Matrix;

const FMAT32_MAGIC: &[u8; 6] = b"FMAT1\n";
const FMAT64_MAGIC: &[u8; 6] = b"FMAT2\n";
const FMAT_HEADER_LEN: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Fmat,
    Fmat64,
}

impl MatrixFormat {
    /// `.fmat` → [`MatrixFormat::Fmat`], `.fmat64` → [`MatrixFormat::Fmat64`],
    /// anything else is csv.
    pub fn from_path(path: &Path) -> MatrixFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("fmat") => MatrixFormat::Fmat,
            Some("fmat64") => MatrixFormat::Fmat64,
            _ => MatrixFormat::Csv,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            MatrixFormat::Csv => "csv",
            MatrixFormat::Fmat => "fmat",
            MatrixFormat::Fmat64 => "fmat64",
        }
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(Error::io(parent))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(Error::io(&tmp))?;
    fs::rename(&tmp, path).map_err(Error::io(path))
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    if bytes.starts_with(FMAT32_MAGIC) {
        decode_fmat(path, &bytes, 4)
    } else if bytes.starts_with(FMAT64_MAGIC) {
        decode_fmat(path, &bytes, 8)
    } else {
        let text = String::from_utf8(bytes).map_err(|e| {
            Error::format(
                path,
                format!(
                    "not fmat and not UTF-8 text (byte {})",
                    e.utf8_error().valid_up_to()
                ),
            )
        })?;
        parse_csv(path, &text)
    }
}

pub fn write_matrix(matrix: &Matrix, path: &Path, format: MatrixFormat) -> Result<()> {
    let bytes = match format {
        MatrixFormat::Csv => encode_csv(matrix).into_bytes(),
        MatrixFormat::Fmat => encode_fmat(path, matrix, false)?,
        MatrixFormat::Fmat64 => encode_fmat(path, matrix, true)?,
    };
    write_atomic(path, &bytes)
}

fn decode_fmat(path: &Path, bytes: &[u8], width: usize) -> Result<Matrix> {
    if bytes.len() < FMAT_HEADER_LEN {
        return Err(Error::format(
            path,
            format!(
                "truncated header: expected {FMAT_HEADER_LEN} bytes, found {}",
                bytes.len()
            ),
        ));
    }
    let rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(width))
        .and_then(|n| n.checked_add(FMAT_HEADER_LEN))
        .ok_or_else(|| Error::format(path, format!("dimensions {rows}x{cols} overflow")))?;
    if bytes.len() != expected {
        let kind = if bytes.len() < expected {
            "truncated"
        } else {
            "trailing bytes in"
        };
        return Err(Error::format(
            path,
            format!(
                "{kind} {rows}x{cols} matrix: expected {expected} bytes, found {}",
                bytes.len()
            ),
        ));
    }
    let body = &bytes[FMAT_HEADER_LEN..];
    let data: Vec<f64> = if width == 4 {
        body.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect()
    } else {
        body.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    Matrix::new(rows, cols, data).map_err(|e| match e {
        Error::NonFinite { row, col } => Error::format(
            path,
            format!(
                "non-finite value at row {row}, column {col} (byte {})",
                FMAT_HEADER_LEN + (row * cols + col) * width
            ),
        ),
        other => other,
    })
}

fn encode_fmat(path: &Path, matrix: &Matrix, wide: bool) -> Result<Vec<u8>> {
    let dim = |n: usize| {
        u32::try_from(n)
            .map_err(|_| Error::format(path, format!("dimension {n} does not fit in u32")))
    };
    let (rows, cols) = (dim(matrix.rows())?, dim(matrix.cols())?);
    let width = if wide { 8 } else { 4 };
    let mut out = Vec::with_capacity(FMAT_HEADER_LEN + matrix.as_slice().len() * width);
    out.extend_from_slice(if wide { FMAT64_MAGIC } else { FMAT32_MAGIC });
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for &v in matrix.as_slice() {
        if wide {
            out.extend_from_slice(&v.to_le_bytes());
        } else {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn parse_csv(path: &Path, text: &str) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut cols: Option<usize> = None;
    let mut rows = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if idx == 0 && line.starts_with('#') {
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for (c, cell) in line.split(',').enumerate() {
            let cell = cell.trim();
            let v: f64 = cell.parse().map_err(|_| {
                Error::format(
                    path,
                    format!(
                        "line {line_no}, column {}: cannot parse '{cell}' as a number",
                        c + 1
                    ),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::format(
                    path,
                    format!("line {line_no}, column {}: non-finite value", c + 1),
                ));
            }
            data.push(v);
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(expected) if expected != count => {
                return Err(Error::format(
                    path,
                    format!("line {line_no}: {count} columns, expected {expected}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    Matrix::new(rows, cols.unwrap_or(0), data)
}

fn encode_csv(matrix: &Matrix) -> String {
    let mut out = String::new();
    for row in matrix.row_iter() {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Reads a one-column matrix of non-negative integer class labels.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let m = read_matrix(path)?;
    if m.cols() != 1 && m.rows() > 0 {
        return Err(Error::format(
            path,
            format!("labels must have one column, found {}", m.cols()),
        ));
    }
    m.as_slice()
        .iter()
        .enumerate()
        .map(|(row, &v)| {
            if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(Error::format(
                    path,
                    format!("row {}: label {v} is not a non-negative integer", row + 1),
                ))
            }
        })
        .collect()
}

pub fn write_labels(labels: &[usize], path: &Path, format: MatrixFormat) -> Result<()> {
    let m = Matrix::new(labels.len(), 1, labels.iter().map(|&l| l as f64).collect())?;
    write_matrix(&m, path, format)
}

/// Paths for one split. Only `features` is mandatory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitPaths {
    pub features: Option<PathBuf>,
    pub logits: Option<PathBuf>,
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ManifestConfig {
    pub principal_dim: Option<usize>,
    pub shrink: Option<f64>,
    pub react_p: Option<f64>,
    pub eta: Option<f64>,
}

/// Flat `key = value` description of a dataset layout.
///
/// ```text
/// id_train.features = train_features.fmat
/// id_train.logits   = train_logits.fmat
/// id_train.labels   = train_labels.csv
/// id_test.features  = test_features.fmat
/// id_test.logits    = test_logits.fmat
/// head.weights      = head_w.fmat
/// head.bias         = head_b.csv
/// ood.texture.features = texture_features.fmat
/// ood.texture.logits   = texture_logits.fmat
/// config.principal_dim = 4
/// ```
///
/// Relative paths resolve against the manifest's directory. OOD sets keep the
/// order in which they first appear.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub id_train: SplitPaths,
    pub id_test: SplitPaths,
    pub head_weights: Option<PathBuf>,
    pub head_bias: Option<PathBuf>,
    pub ood_sets: Vec<(String, SplitPaths)>,
    pub config: ManifestConfig,
}

fn set_split_field(split: &mut SplitPaths, field: &str, value: PathBuf) -> bool {
    match field {
        "features" => split.features = Some(value),
        "logits" => split.logits = Some(value),
        "labels" => split.labels = Some(value),
        _ => return false,
    }
    true
}

impl Manifest {
    pub fn parse(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        let mut m = Manifest::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::format(path, format!("line {line_no}: expected key = value"))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad_key = || Error::format(path, format!("line {line_no}: unknown key '{key}'"));
            let bad_value = |what: &str| {
                Error::format(
                    path,
                    format!("line {line_no}: {key} must be {what}, got '{value}'"),
                )
            };
            let resolved = base.join(value);
            let parts: Vec<&str> = key.split('.').collect();
            match parts.as_slice() {
                ["id_train", field] => {
                    if !set_split_field(&mut m.id_train, field, resolved) {
                        return Err(bad_key());
                    }
                }
                ["id_test", field] => {
                    if !set_split_field(&mut m.id_test, field, resolved) {
                        return Err(bad_key());
                    }
                }
                ["head", "weights"] => m.head_weights = Some(resolved),
                ["head", "bias"] => m.head_bias = Some(resolved),
                ["ood", name, field] => {
                    let slot = match m.ood_sets.iter().position(|(n, _)| n == name) {
                        Some(i) => i,
                        None => {
                            m.ood_sets.push((name.to_string(), SplitPaths::default()));
                            m.ood_sets.len() - 1
                        }
                    };
                    if !set_split_field(&mut m.ood_sets[slot].1, field, resolved) {
                        return Err(bad_key());
                    }
                }
                ["config", "principal_dim"] => {
                    m.config.principal_dim = Some(value.parse().map_err(|_| bad_value("a count"))?)
                }
                ["config", "shrink"] => {
                    m.config.shrink = Some(value.parse().map_err(|_| bad_value("a number"))?)
                }
                ["config", "react_p"] => {
                    m.config.react_p = Some(value.parse().map_err(|_| bad_value("a number"))?)
                }
                ["config", "eta"] => {
                    m.config.eta = Some(value.parse().map_err(|_| bad_value("a number"))?)
                }
                _ => return Err(bad_key()),
            }
        }
        if m.id_train.features.is_none() {
            return Err(Error::format(path, "missing id_train.features"));
        }
        if m.head_weights.is_some() != m.head_bias.is_some() {
            return Err(Error::format(
                path,
                "head.weights and head.bias must be given together",
            ));
        }
        Ok(m)
    }

    /// Writes the manifest with paths relative to `path`'s directory where possible.
    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        let rel = |p: &Path| -> String {
            p.strip_prefix(base)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned()
        };
        let mut out = String::new();
        let split = |prefix: &str, s: &SplitPaths, out: &mut String| {
            for (field, p) in [
                ("features", &s.features),
                ("logits", &s.logits),
                ("labels", &s.labels),
            ] {
                if let Some(p) = p {
                    writeln!(out, "{prefix}.{field} = {}", rel(p)).unwrap();
                }
            }
        };
        split("id_train", &self.id_train, &mut out);
        split("id_test", &self.id_test, &mut out);
        if let (Some(w), Some(b)) = (&self.head_weights, &self.head_bias) {
            writeln!(out, "head.weights = {}", rel(w)).unwrap();
            writeln!(out, "head.bias = {}", rel(b)).unwrap();
        }
        for (name, s) in &self.ood_sets {
            split(&format!("ood.{name}"), s, &mut out);
        }
        let c = &self.config;
        if let Some(v) = c.principal_dim {
            writeln!(out, "config.principal_dim = {v}").unwrap();
        }
        if let Some(v) = c.shrink {
            writeln!(out, "config.shrink = {v}").unwrap();
        }
        if let Some(v) = c.react_p {
            writeln!(out, "config.react_p = {v}").unwrap();
        }
        if let Some(v) = c.eta {
            writeln!(out, "config.eta = {v}").unwrap();
        }
        write_atomic(path, out.as_bytes())
    }

    /// Loads every referenced file and checks that feature and logit widths
    /// agree across all of them.
    pub fn load(&self) -> Result<LoadedData> {
        let train = load_split("id_train", &self.id_train)?;
        let test = load_split("id_test", &self.id_test)?;
        let ood = self
            .ood_sets
            .iter()
            .map(|(name, s)| Ok((name.clone(), load_split(&format!("ood.{name}"), s)?)))
            .collect::<Result<Vec<_>>>()?;
        let head = match (&self.head_weights, &self.head_bias) {
            (Some(w), Some(b)) => {
                let weights = read_matrix(w)?;
                let bias = read_matrix(b)?.into_vec();
                Some(LinearHead::new(weights, bias).map_err(|e| Error::format(b, e.to_string()))?)
            }
            _ => None,
        };

        let d = train.features.cols();
        let c = train.logits.as_ref().map(Matrix::cols);
        let mut splits: Vec<(String, &Split)> = vec![("id_train".into(), &train)];
        if !test.is_empty() {
            splits.push(("id_test".into(), &test));
        }
        for (name, s) in &ood {
            splits.push((format!("ood.{name}"), s));
        }
        for (name, s) in &splits {
            if s.features.cols() != d {
                return Err(Error::Shape(format!(
                    "{name}.features has {} columns, expected d = {d} from id_train.features",
                    s.features.cols()
                )));
            }
            if let (Some(l), Some(c)) = (&s.logits, c) {
                if l.cols() != c {
                    return Err(Error::Shape(format!(
                        "{name}.logits has {} columns, expected C = {c} from id_train.logits",
                        l.cols()
                    )));
                }
            }
        }
        if let Some(h) = &head {
            if h.feature_dim() != d || c.is_some_and(|c| c != h.num_classes()) {
                return Err(Error::Shape(format!(
                    "head.weights is {}x{}, expected {}x{d}",
                    h.num_classes(),
                    h.feature_dim(),
                    c.map_or("C".to_string(), |c| c.to_string())
                )));
            }
        }
        Ok(LoadedData {
            train,
            test,
            ood,
            head,
        })
    }
}

/// One loaded split. `features` is empty (0×0) for an absent split.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub features: Matrix,
    pub logits: Option<Matrix>,
    pub labels: Option<Vec<usize>>,
}

impl Split {
    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedData {
    pub train: Split,
    pub test: Split,
    pub ood: Vec<(String, Split)>,
    pub head: Option<LinearHead>,
}

fn load_split(name: &str, paths: &SplitPaths) -> Result<Split> {
    let features = match &paths.features {
        Some(p) => read_matrix(p)?,
        None if paths.logits.is_none() && paths.labels.is_none() => {
            return Ok(Split {
                features: Matrix::zeros(0, 0),
                logits: None,
                labels: None,
            })
        }
        None => return Err(Error::MissingInput(format!("{name}.features"))),
    };
    let n = features.rows();
    let logits = paths.logits.as_deref().map(read_matrix).transpose()?;
    let labels = paths.labels.as_deref().map(read_labels).transpose()?;
    if let Some(l) = &logits {
        if l.rows() != n {
            return Err(Error::Shape(format!(
                "{name}.logits has {} rows but {name}.features has {n}",
                l.rows()
            )));
        }
    }
    if let Some(l) = &labels {
        if l.len() != n {
            return Err(Error::Shape(format!(
                "{name}.labels has {} rows but {name}.features has {n}",
                l.len()
            )));
        }
    }
    Ok(Split {
        features,
        logits,
        labels,
    })
}

pub const STATS_FORMAT_VERSION: &str = "1";
const STATS_META: &str = "meta.txt";

/// Saves fitted statistics as `fmat64` matrices plus `meta.txt`.
pub fn save_stats(stats: &IdStats, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let put = |name: &str, m: &Matrix| write_matrix(m, &dir.join(name), MatrixFormat::Fmat64);
    let sub = stats.subspace();
    put("centroids.fmat64", &stats.class_stats.centroids)?;
    put("precision.fmat64", &stats.class_stats.shared_precision)?;
    put(
        "origin.fmat64",
        &Matrix::new(1, sub.origin.len(), sub.origin.clone())?,
    )?;
    put("residual_basis.fmat64", &sub.residual_basis)?;
    put("kl_templates.fmat64", &stats.kl.class_dists)?;
    if let Some(head) = &stats.head {
        put("head_weights.fmat64", head.weights())?;
        put(
            "head_bias.fmat64",
            &Matrix::new(1, head.bias().len(), head.bias().to_vec())?,
        )?;
    }

    let counts: Vec<String> = stats
        .class_stats
        .class_counts
        .iter()
        .map(usize::to_string)
        .collect();
    let mut meta = String::new();
    writeln!(meta, "format_version = {STATS_FORMAT_VERSION}").unwrap();
    writeln!(meta, "num_classes = {}", stats.num_classes).unwrap();
    writeln!(meta, "feature_dim = {}", stats.feature_dim).unwrap();
    writeln!(meta, "logit_dim = {}", stats.logit_dim()).unwrap();
    writeln!(meta, "principal_dim = {}", sub.principal_dim).unwrap();
    writeln!(meta, "alpha = {}", stats.vim.alpha).unwrap();
    writeln!(meta, "react_clip = {}", stats.react.clip_value).unwrap();
    writeln!(meta, "react_percentile = {}", stats.react.percentile).unwrap();
    writeln!(meta, "shrink = {}", stats.shrink).unwrap();
    writeln!(meta, "class_counts = {}", counts.join(",")).unwrap();
    writeln!(meta, "head = {}", stats.head.is_some()).unwrap();
    write_atomic(&dir.join(STATS_META), meta.as_bytes())
}

/// Parsed `meta.txt` of a stats directory.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsMeta {
    entries: BTreeMap<String, String>,
    path: PathBuf,
}

impl StatsMeta {
    pub fn read(dir: &Path) -> Result<StatsMeta> {
        let path = dir.join(STATS_META);
        let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
        let mut entries = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::format(&path, format!("line {}: expected key = value", idx + 1))
            })?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        let meta = StatsMeta { entries, path };
        let found = meta.raw("format_version")?;
        if found != STATS_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: found.to_string(),
                expected: STATS_FORMAT_VERSION.to_string(),
            });
        }
        Ok(meta)
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::format(&self.path, format!("missing component '{key}'")))
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| Error::format(&self.path, format!("cannot parse {key} = '{raw}'")))
    }

    pub fn alpha(&self) -> Result<f64> {
        self.get("alpha")
    }
}

pub fn load_stats(dir: &Path) -> Result<IdStats> {
    let meta = StatsMeta::read(dir)?;
    let get = |name: &str| -> Result<Matrix> {
        let path = dir.join(name);
        if !path.exists() {
            return Err(Error::format(
                dir,
                format!("missing component '{}'", name.trim_end_matches(".fmat64")),
            ));
        }
        read_matrix(&path)
    };
    let num_classes: usize = meta.get("num_classes")?;
    let feature_dim: usize = meta.get("feature_dim")?;
    let logit_dim: usize = meta.get("logit_dim")?;
    let principal_dim: usize = meta.get("principal_dim")?;
    let class_counts = meta
        .raw("class_counts")?
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::format(dir, format!("bad class count '{s}'")))
        })
        .collect::<Result<Vec<_>>>()?;

    let centroids = get("centroids.fmat64")?;
    let shared_precision = get("precision.fmat64")?;
    let origin = get("origin.fmat64")?.into_vec();
    let residual_basis = get("residual_basis.fmat64")?;
    let class_dists = get("kl_templates.fmat64")?;
    let head = if meta.get::<bool>("head")? {
        let w = get("head_weights.fmat64")?;
        let b = get("head_bias.fmat64")?.into_vec();
        Some(LinearHead::new(w, b)?)
    } else {
        None
    };

    let expect = |what: &str, got: (usize, usize), want: (usize, usize)| -> Result<()> {
        if got != want {
            return Err(Error::format(
                dir,
                format!(
                    "{what} is {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                ),
            ));
        }
        Ok(())
    };
    expect("centroids", centroids.shape(), (num_classes, feature_dim))?;
    expect(
        "precision",
        shared_precision.shape(),
        (feature_dim, feature_dim),
    )?;
    expect("origin", (1, origin.len()), (1, feature_dim))?;
    expect(
        "residual_basis",
        residual_basis.shape(),
        (feature_dim, feature_dim.saturating_sub(principal_dim)),
    )?;
    expect(
        "kl_templates",
        class_dists.shape(),
        (num_classes, logit_dim),
    )?;
    if class_counts.len() != num_classes {
        return Err(Error::format(
            dir,
            "class_counts length disagrees with num_classes",
        ));
    }

    Ok(IdStats {
        class_stats: ClassStats {
            centroids,
            shared_precision,
            class_counts,
        },
        vim: VimParams {
            alpha: meta.alpha()?,
            subspace: PrincipalSubspace {
                origin,
                residual_basis,
                principal_dim,
            },
        },
        kl: KlTemplates { class_dists },
        react: ReactParams {
            clip_value: meta.get("react_clip")?,
            percentile: meta.get("react_percentile")?,
        },
        head,
        num_classes,
        feature_dim,
        shrink: meta.get("shrink")?,
    })
}

/// Writes a calibrated threshold as `key = value` lines.
pub fn write_calibration(
    score: &str,
    cal: &CalibrationResult,
    n: usize,
    path: &Path,
) -> Result<()> {
    let text = format!(
        "score = {score}\neta = {}\nthreshold = {}\nn_calibration = {n}\n",
        cal.eta, cal.threshold
    );
    write_atomic(path, text.as_bytes())
}

/// Reads a file written by [`write_calibration`], returning the score name too.
pub fn read_calibration(path: &Path) -> Result<(String, CalibrationResult)> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let mut fields = BTreeMap::new();
    for line in text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
    {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(path, format!("expected key = value, got '{line}'")))?;
        fields.insert(k.trim().to_string(), v.trim().to_string());
    }
    let field = |key: &str| {
        fields
            .get(key)
            .ok_or_else(|| Error::format(path, format!("missing '{key}'")))
    };
    let number = |key: &str| -> Result<f64> {
        let raw = field(key)?;
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::format(path, format!("{key} = '{raw}' is not a finite number")))
    };
    Ok((
        field("score")?.clone(),
        CalibrationResult {
            threshold: number("threshold")?,
            eta: number("eta")?,
        },
    ))
}

/// One (score, dataset) cell of a multi-class report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportEntry {
    pub score: String,
    pub dataset: String,
    pub outcome: EvalOutcome,
}

/// Percentage with two decimals, as printed in every report.
pub fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

fn ordered_unique<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for s in items {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

pub const AVERAGE_LABEL: &str = "Average";

/// Writes `<path>` as csv (`score,dataset,auroc_pct,fpr95_pct`, with one
/// `Average` row per score after its datasets) and `<path>.txt` as an aligned
/// table: scores as rows, datasets as AUROC/FPR95 column pairs, then Average.
///
/// `header` lines are written at the top of the text table, prefixed `# `.
/// Returns the path of the text table.
pub fn emit_report(entries: &[ReportEntry], header: &[String], path: &Path) -> Result<PathBuf> {
    if entries.is_empty() {
        return Err(Error::Empty("report has no results".into()));
    }
    let scores = ordered_unique(entries.iter().map(|e| e.score.as_str()));
    let datasets = ordered_unique(entries.iter().map(|e| e.dataset.as_str()));
    let cell = |s: &str, d: &str| {
        entries
            .iter()
            .find(|e| e.score == s && e.dataset == d)
            .map(|e| e.outcome)
    };

    let mut csv = String::from("score,dataset,auroc_pct,fpr95_pct\n");
    let mut rows: Vec<Vec<String>> = Vec::new();
    for &s in &scores {
        let mut row = vec![s.to_string()];
        let mut present = Vec::new();
        for &d in &datasets {
            match cell(s, d) {
                Some(o) => {
                    writeln!(csv, "{s},{d},{},{}", pct(o.auroc), pct(o.fpr95)).unwrap();
                    row.push(pct(o.auroc));
                    row.push(pct(o.fpr95));
                    present.push(o);
                }
                None => {
                    row.push("-".into());
                    row.push("-".into());
                }
            }
        }
        let auroc = mean(present.iter().map(|o| o.auroc));
        let fpr = mean(present.iter().map(|o| o.fpr95));
        writeln!(csv, "{s},{AVERAGE_LABEL},{},{}", pct(auroc), pct(fpr)).unwrap();
        row.push(pct(auroc));
        row.push(pct(fpr));
        rows.push(row);
    }

    let mut groups: Vec<String> = datasets.iter().map(|d| d.to_string()).collect();
    groups.push(AVERAGE_LABEL.into());
    let text = render_paired_table("Methods", &groups, &rows, header);
    write_atomic(path, csv.as_bytes())?;
    let txt = path.with_extension("txt");
    write_atomic(&txt, text.as_bytes())?;
    Ok(txt)
}

/// Table with a label column and one AUROC/FPR95 column pair per group.
fn render_paired_table(
    label: &str,
    groups: &[String],
    rows: &[Vec<String>],
    header: &[String],
) -> String {
    let label_w = rows
        .iter()
        .map(|r| r[0].len())
        .chain([label.len()])
        .max()
        .unwrap_or(0);
    let group_w = groups.iter().map(|g| g.len()).max().unwrap_or(0).max(15);
    let half = (group_w - 1) / 2;
    let mut out = String::new();
    for h in header {
        writeln!(out, "# {h}").unwrap();
    }
    write!(out, "{label:<label_w$}").unwrap();
    for g in groups {
        write!(out, " | {g:^group_w$}").unwrap();
    }
    out.push('\n');
    write!(out, "{:<label_w$}", "").unwrap();
    for _ in groups {
        write!(
            out,
            " | {:>half$} {:>w2$}",
            "AUROC",
            "FPR95",
            w2 = group_w - half - 1
        )
        .unwrap();
    }
    out.push('\n');
    for row in rows {
        write!(out, "{:<label_w$}", row[0]).unwrap();
        for pair in row[1..].chunks(2) {
            write!(
                out,
                " | {:>half$} {:>w2$}",
                pair[0],
                pair[1],
                w2 = group_w - half - 1
            )
            .unwrap();
        }
        out.push('\n');
    }
    out
}

/// Per-ID-class result of the one-class protocol, already averaged over the
/// OOD classes of that task.
#[derive(Debug, Clone, PartialEq)]
pub struct OneClassEntry {
    pub score: String,
    pub id_class: String,
    pub auroc: f64,
    pub fpr95: f64,
}

/// Writes `<path>` as csv (`score,id_class,auroc_pct,fpr95_pct`, plus an
/// `Average` row per score) and `<path>.txt` with an AUROC table and an FPR95
/// table, each with scores as rows, ID classes as columns and a trailing
/// Average column.
pub fn emit_one_class_report(
    entries: &[OneClassEntry],
    header: &[String],
    path: &Path,
) -> Result<PathBuf> {
    if entries.is_empty() {
        return Err(Error::Empty("report has no results".into()));
    }
    let scores = ordered_unique(entries.iter().map(|e| e.score.as_str()));
    let classes = ordered_unique(entries.iter().map(|e| e.id_class.as_str()));
    let mut csv = String::from("score,id_class,auroc_pct,fpr95_pct\n");
    let mut auroc_rows = Vec::new();
    let mut fpr_rows = Vec::new();
    for &s in &scores {
        let mut a_row = vec![s.to_string()];
        let mut f_row = vec![s.to_string()];
        let cells: Vec<&OneClassEntry> = classes
            .iter()
            .filter_map(|&c| entries.iter().find(|e| e.score == s && e.id_class == c))
            .collect();
        for &c in &classes {
            match cells.iter().find(|e| e.id_class == c) {
                Some(e) => {
                    writeln!(csv, "{s},{c},{},{}", pct(e.auroc), pct(e.fpr95)).unwrap();
                    a_row.push(pct(e.auroc));
                    f_row.push(pct(e.fpr95));
                }
                None => {
                    a_row.push("-".into());
                    f_row.push("-".into());
                }
            }
        }
        let a = mean(cells.iter().map(|e| e.auroc));
        let f = mean(cells.iter().map(|e| e.fpr95));
        writeln!(csv, "{s},{AVERAGE_LABEL},{},{}", pct(a), pct(f)).unwrap();
        a_row.push(pct(a));
        f_row.push(pct(f));
        auroc_rows.push(a_row);
        fpr_rows.push(f_row);
    }
    let mut columns: Vec<String> = classes.iter().map(|c| c.to_string()).collect();
    columns.push(AVERAGE_LABEL.into());

    let mut text = String::new();
    for h in header {
        writeln!(text, "# {h}").unwrap();
    }
    text.push_str(&render_single_table("AUROC", &columns, &auroc_rows));
    text.push('\n');
    text.push_str(&render_single_table("FPR95", &columns, &fpr_rows));
    write_atomic(path, csv.as_bytes())?;
    let txt = path.with_extension("txt");
    write_atomic(&txt, text.as_bytes())?;
    Ok(txt)
}

fn render_single_table(title: &str, columns: &[String], rows: &[Vec<String>]) -> String {
    let label_w = rows
        .iter()
        .map(|r| r[0].len())
        .chain(["Methods".len()])
        .max()
        .unwrap_or(0);
    let col_w = columns.iter().map(|c| c.len()).max().unwrap_or(0).max(6);
    let mut out = format!("[{title}] ID class\n");
    write!(out, "{:<label_w$}", "Methods").unwrap();
    for (i, c) in columns.iter().enumerate() {
        let sep = if i + 1 == columns.len() { " | " } else { " " };
        write!(out, "{sep}{c:>col_w$}").unwrap();
    }
    out.push('\n');
    for row in rows {
        write!(out, "{:<label_w$}", row[0]).unwrap();
        for (i, v) in row[1..].iter().enumerate() {
            let sep = if i + 1 == columns.len() { " | " } else { " " };
            write!(out, "{sep}{v:>col_w$}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// One histogram bin of one dataset's score distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramRow {
    pub dataset: String,
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: usize,
    pub density: f64,
}

/// Histograms over shared bin edges spanning the pooled score range. A
/// constant pool is widened by 1e-9 so the bins have positive width.
pub fn histogram(datasets: &[NamedScores], bins: usize) -> Result<Vec<HistogramRow>> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 bins, got {bins}"
        )));
    }
    let pooled = datasets.iter().flat_map(|(_, v)| v.iter().copied());
    let (mut lo, mut hi) = pooled.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Empty("no finite scores to bin".into()));
    }
    if hi - lo <= 0.0 {
        lo -= 0.5e-9;
        hi += 0.5e-9;
    }
    let width = (hi - lo) / bins as f64;
    let mut rows = Vec::with_capacity(datasets.len() * bins);
    for (name, values) in datasets {
        let mut counts = vec![0usize; bins];
        for &v in values {
            let b = (((v - lo) / width).floor() as usize).min(bins - 1);
            counts[b] += 1;
        }
        let n = values.len() as f64;
        for (b, &count) in counts.iter().enumerate() {
            rows.push(HistogramRow {
                dataset: name.clone(),
                bin_left: lo + b as f64 * width,
                bin_right: lo + (b + 1) as f64 * width,
                count,
                density: if n > 0.0 {
                    count as f64 / (n * width)
                } else {
                    0.0
                },
            });
        }
    }
    Ok(rows)
}

/// Scores of one dataset, labelled with the dataset name.
pub type NamedScores = (String, Vec<f64>);

/// Writes score-distribution curves for one or more scores as csv:
/// `score,dataset,bin_left,bin_right,count,density`. Bin edges are shared by
/// all datasets of the same score.
pub fn emit_curves(curves: &[(String, Vec<NamedScores>)], bins: usize, path: &Path) -> Result<()> {
    let mut csv = String::from("score,dataset,bin_left,bin_right,count,density\n");
    for (score, datasets) in curves {
        for r in histogram(datasets, bins)? {
            writeln!(
                csv,
                "{score},{},{},{},{},{}",
                r.dataset, r.bin_left, r.bin_right, r.count, r.density
            )
            .unwrap();
        }
    }
    write_atomic(path, csv.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn fmat_layout_and_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("eye.fmat");
        write_matrix(&Matrix::identity(2), &p, MatrixFormat::Fmat).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..6], b"FMAT1\n");
        assert_eq!(&bytes[6..10], &2u32.to_le_bytes());
        assert_eq!(&bytes[10..14], &2u32.to_le_bytes());
        assert_eq!(bytes.len(), 14 + 4 * 4);
        assert_eq!(&bytes[14..18], &1f32.to_le_bytes());
        assert_eq!(read_matrix(&p).unwrap(), Matrix::identity(2));
    }

    #[test]
    fn fmat64_keeps_full_precision() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("x.fmat64");
        let m = Matrix::from_rows(&[[0.1, 1.0 / 3.0], [std::f64::consts::PI, -2e-300]]).unwrap();
        write_matrix(&m, &p, MatrixFormat::Fmat64).unwrap();
        assert_eq!(read_matrix(&p).unwrap(), m);
    }

    #[test]
    fn truncated_fmat_reports_sizes() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("t.fmat");
        let mut bytes = b"FMAT1\n".to_vec();
        bytes.extend_from_slice(&10u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        for i in 0..9 {
            bytes.extend_from_slice(&(i as f32).to_le_bytes());
        }
        fs::write(&p, &bytes).unwrap();
        let err = read_matrix(&p).unwrap_err().to_string();
        assert!(err.contains("expected 54 bytes, found 50"), "{err}");

        fs::write(&p, b"FMAT1\n\x01").unwrap();
        assert!(read_matrix(&p)
            .unwrap_err()
            .to_string()
            .contains("truncated header"));
    }

    #[test]
    fn csv_parsing() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(&p, "1,2\n3,4\n").unwrap();
        assert_eq!(
            read_matrix(&p).unwrap(),
            Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap()
        );
        fs::write(&p, "# a,b\n1, 2\r\n3,4\n\n").unwrap();
        assert_eq!(read_matrix(&p).unwrap().shape(), (2, 2));

        fs::write(&p, "1,2\n3,x\n").unwrap();
        let err = read_matrix(&p).unwrap_err().to_string();
        assert!(err.contains("line 2, column 2"), "{err}");
        fs::write(&p, "1,2\n3\n").unwrap();
        assert!(read_matrix(&p).unwrap_err().to_string().contains("line 2"));
        fs::write(&p, "1,nan\n").unwrap();
        assert!(read_matrix(&p).is_err());
    }

    #[test]
    fn labels_must_be_integers() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("l.csv");
        write_labels(&[0, 2, 1], &p, MatrixFormat::Csv).unwrap();
        assert_eq!(read_labels(&p).unwrap(), vec![0, 2, 1]);
        fs::write(&p, "0\n1.5\n").unwrap();
        assert!(read_labels(&p).unwrap_err().to_string().contains("row 2"));
        fs::write(&p, "-1\n").unwrap();
        assert!(read_labels(&p).is_err());
    }

    #[test]
    fn manifest_parse_and_write() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("manifest.txt");
        fs::write(
            &p,
            "# layout\nid_train.features = a.fmat\nid_train.logits=b.fmat\n\
             ood.texture.features = t.fmat\nood.inat.features = i.fmat\nood.texture.logits = tl.fmat\n\
             config.principal_dim = 4\nconfig.eta = 95\n",
        )
        .unwrap();
        let m = Manifest::parse(&p).unwrap();
        assert_eq!(m.id_train.features, Some(dir.path().join("a.fmat")));
        assert_eq!(m.ood_sets.len(), 2);
        assert_eq!(m.ood_sets[0].0, "texture");
        assert_eq!(m.ood_sets[0].1.logits, Some(dir.path().join("tl.fmat")));
        assert_eq!(m.config.principal_dim, Some(4));
        assert_eq!(m.config.eta, Some(95.0));

        let q = dir.path().join("copy.txt");
        m.write(&q).unwrap();
        assert_eq!(Manifest::parse(&q).unwrap(), m);
        assert!(fs::read_to_string(&q)
            .unwrap()
            .contains("ood.inat.features = i.fmat"));

        fs::write(&p, "id_train.features = a\nid_train.colour = x\n").unwrap();
        assert!(Manifest::parse(&p)
            .unwrap_err()
            .to_string()
            .contains("id_train.colour"));
        fs::write(&p, "id_test.features = a\n").unwrap();
        assert!(Manifest::parse(&p).is_err());
    }

    #[test]
    fn manifest_rejects_width_mismatch() {
        let dir = tempdir().unwrap();
        let w = |name: &str, m: Matrix| write_matrix(&m, &dir.path().join(name), MatrixFormat::Csv);
        w("f.csv", Matrix::zeros(3, 2)).unwrap();
        w("l.csv", Matrix::zeros(3, 4)).unwrap();
        w("of.csv", Matrix::zeros(2, 2)).unwrap();
        w("ol.csv", Matrix::zeros(2, 5)).unwrap();
        let p = dir.path().join("m.txt");
        fs::write(
            &p,
            "id_train.features=f.csv\nid_train.logits=l.csv\nood.x.features=of.csv\nood.x.logits=ol.csv\n",
        )
        .unwrap();
        let err = Manifest::parse(&p).unwrap().load().unwrap_err().to_string();
        assert!(err.contains("ood.x.logits"), "{err}");
    }

    #[test]
    fn report_layout_and_percentages() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let o = |a, f| EvalOutcome {
            auroc: a,
            fpr95: f,
            n_id: 1,
            n_ood: 1,
        };
        let entries = vec![ReportEntry {
            score: "vim".into(),
            dataset: "texture".into(),
            outcome: o(0.9568, 0.2022),
        }];
        let txt = emit_report(&entries, &["alpha = 2".into()], &p).unwrap();
        let csv = fs::read_to_string(&p).unwrap();
        assert_eq!(
            csv,
            "score,dataset,auroc_pct,fpr95_pct\nvim,texture,95.68,20.22\nvim,Average,95.68,20.22\n"
        );
        let table = fs::read_to_string(txt).unwrap();
        assert!(table.starts_with("# alpha = 2\n"));
        assert!(table.contains("95.68"));
        assert!(emit_report(&[], &[], &p).is_err());
    }

    #[test]
    fn calibration_file_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("cal.txt");
        let cal = CalibrationResult {
            threshold: 0.1 + 0.2,
            eta: 95.0,
        };
        write_calibration("vim", &cal, 10, &p).unwrap();
        assert_eq!(read_calibration(&p).unwrap(), ("vim".to_string(), cal));
        fs::write(&p, "score = vim\neta = 95\n").unwrap();
        assert!(read_calibration(&p)
            .unwrap_err()
            .to_string()
            .contains("threshold"));
    }

    #[test]
    fn histogram_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let rows = histogram(&[("a".into(), v.clone()), ("b".into(), v)], 10).unwrap();
        assert_eq!(rows.len(), 20);
        assert!(rows.iter().all(|r| r.count == 10));
        for (x, y) in rows[..10].iter().zip(&rows[10..]) {
            assert_eq!(
                (x.bin_left, x.count, x.density),
                (y.bin_left, y.count, y.density)
            );
        }
        let total: f64 = rows[..10]
            .iter()
            .map(|r| r.density * (r.bin_right - r.bin_left))
            .sum();
        assert!((total - 1.0).abs() <= 1e-9);

        let rows = histogram(&[("c".into(), vec![3.0; 5])], 4).unwrap();
        assert_eq!(rows.iter().map(|r| r.count).sum::<usize>(), 5);
        assert!(rows.iter().all(|r| r.bin_right > r.bin_left));
        assert!(histogram(&[("c".into(), vec![1.0])], 1).is_err());
    }
}
