use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn oodscore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oodscore"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small synthetic dataset plus fitted stats.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let o = oodscore(&[
            "synth",
            "--out-dir",
            s(&data),
            "--samples-per-class",
            "150",
            "--eval-samples",
            "300",
            "--seed",
            "4",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let f = Fixture { dir };
        let o = oodscore(&[
            "fit",
            "--manifest",
            s(&f.manifest()),
            "--out-stats",
            s(&f.stats()),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        f
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn manifest(&self) -> PathBuf {
        self.path("data/manifest.txt")
    }

    fn stats(&self) -> PathBuf {
        self.path("stats")
    }
}

#[test]
fn usage_errors_exit_2() {
    let o = oodscore(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    let o = oodscore(&["fit", "--manifest", "m.txt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--out-stats"));
    let o = oodscore(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("oneclass"));
}

#[test]
fn unknown_score_names_the_valid_ones() {
    let f = Fixture::new();
    let o = oodscore(&[
        "eval",
        "--manifest",
        s(&f.manifest()),
        "--stats",
        s(&f.stats()),
        "--scores",
        "vim,softmax",
        "--out-report",
        s(&f.path("r.csv")),
        "--out-curves",
        s(&f.path("c.csv")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error[usage]:"), "{err}");
    assert!(
        err.contains("softmax") && err.contains("mahalanobis"),
        "{err}"
    );
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn eval_report_shape_and_stamp() {
    let f = Fixture::new();
    let (manifest, stats) = (f.manifest(), f.stats());
    let (report, curves) = (f.path("r.csv"), f.path("c.csv"));
    let eval = |stamp: bool| {
        let mut args = vec![
            "eval",
            "--manifest",
            s(&manifest),
            "--stats",
            s(&stats),
            "--scores",
            "energy,vim,msp",
            "--out-report",
            s(&report),
            "--out-curves",
            s(&curves),
            "--bins",
            "20",
        ];
        if stamp {
            args.push("--stamp");
        }
        let o = oodscore(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read_to_string(f.path("r.txt")).unwrap()
    };
    let plain = eval(false);
    assert!(!plain.contains("unix time"));
    let alpha = fs::read_to_string(f.stats().join("meta.txt"))
        .unwrap()
        .lines()
        .find_map(|l| l.strip_prefix("alpha = ").map(str::to_string))
        .unwrap();
    assert!(plain.contains(&format!("alpha = {alpha};")), "{plain}");
    assert!(plain.contains("step-function"));
    assert!(eval(true).contains("unix time"));

    let csv = fs::read_to_string(f.path("r.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 1 + 3 * 2 + 3);
    assert_eq!(rows[1].split(',').next(), Some("energy"));
    assert!(rows[3].starts_with("energy,Average,"));
    for row in &rows[1..] {
        if row.contains(",shifted,") {
            let auroc: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
            assert!(auroc >= 99.0, "{row}");
        }
    }

    let curves = fs::read_to_string(f.path("c.csv")).unwrap();
    // 3 scores x 3 datasets x 20 bins
    assert_eq!(curves.lines().count(), 1 + 3 * 3 * 20);
}

#[test]
fn vim_without_logits_names_the_requirement() {
    let f = Fixture::new();
    let text = fs::read_to_string(f.manifest()).unwrap();
    let stripped: String = text
        .lines()
        .filter(|l| !l.starts_with("id_test.logits"))
        .map(|l| format!("{l}\n"))
        .collect();
    let m = f.path("data/no_logits.txt");
    fs::write(&m, stripped).unwrap();
    let o = oodscore(&[
        "eval",
        "--manifest",
        s(&m),
        "--stats",
        s(&f.stats()),
        "--scores",
        "vim",
        "--out-report",
        s(&f.path("r.csv")),
        "--out-curves",
        s(&f.path("c.csv")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(
        err.contains("requires logits") && err.contains("id_test"),
        "{err}"
    );
}

#[test]
fn manifest_mismatch_names_file_and_field() {
    let f = Fixture::new();
    let bad = f.path("data/bad.csv");
    fs::write(&bad, "1,2,3\n4,5,6\n").unwrap();
    let text = fs::read_to_string(f.manifest()).unwrap();
    let m = f.path("data/bad_manifest.txt");
    fs::write(&m, format!("{text}ood.broken.features = bad.csv\n")).unwrap();
    let o = oodscore(&["fit", "--manifest", s(&m), "--out-stats", s(&f.path("s2"))]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(
        err.contains("ood.broken.features") && err.contains("16"),
        "{err}"
    );
    assert!(!f.path("s2").exists());
}

#[test]
fn calibrate_then_detect_on_calibration_set() {
    let f = Fixture::new();
    let feats = f.path("data/id_test_features.fmat");
    let logits = f.path("data/id_test_logits.fmat");
    let cal = f.path("cal.txt");
    let o = oodscore(&[
        "calibrate",
        "--stats",
        s(&f.stats()),
        "--cal-features",
        s(&feats),
        "--cal-logits",
        s(&logits),
        "--score",
        "vim",
        "--eta",
        "95",
        "--out",
        s(&cal),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let flags = f.path("flags.csv");
    let o = oodscore(&[
        "detect",
        "--stats",
        s(&f.stats()),
        "--calibration",
        s(&cal),
        "--features",
        s(&feats),
        "--logits",
        s(&logits),
        "--score",
        "vim",
        "--out",
        s(&flags),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&flags).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 300);
    let flagged = rows.iter().filter(|r| r.ends_with(",1")).count();
    assert!(flagged as f64 <= 0.05 * 300.0, "{flagged}");

    let o = oodscore(&[
        "calibrate",
        "--stats",
        s(&f.stats()),
        "--cal-features",
        s(&feats),
        "--score",
        "vim",
        "--eta",
        "0",
        "--out",
        s(&cal),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn score_and_curves_verbs() {
    let f = Fixture::new();
    let out = f.path("res.csv");
    let o = oodscore(&[
        "score",
        "--stats",
        s(&f.stats()),
        "--features",
        s(&f.path("data/id_test_features.fmat")),
        "--score",
        "mahalanobis",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 300);

    let curves = f.path("curves.csv");
    let o = oodscore(&[
        "curves",
        "--input",
        &format!("id={}", s(&out)),
        "--bins",
        "8",
        "--score-name",
        "mahalanobis",
        "--out",
        s(&curves),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&curves).unwrap();
    assert_eq!(text.lines().count(), 9);
    let total: usize = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(4).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 300);

    let o = oodscore(&["curves", "--input", "no-equals-sign", "--out", s(&curves)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stats_errors() {
    let f = Fixture::new();
    let feats = f.path("data/id_test_features.fmat");
    fs::remove_file(f.stats().join("residual_basis.fmat64")).unwrap();
    let o = oodscore(&[
        "score",
        "--stats",
        s(&f.stats()),
        "--features",
        s(&feats),
        "--score",
        "residual",
        "--out",
        s(&f.path("x.csv")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("residual_basis"), "{}", stderr(&o));

    let meta = f.stats().join("meta.txt");
    let text = fs::read_to_string(&meta)
        .unwrap()
        .replace("format_version = 1", "format_version = 7");
    fs::write(&meta, text).unwrap();
    let o = oodscore(&[
        "score",
        "--stats",
        s(&f.stats()),
        "--features",
        s(&feats),
        "--score",
        "msp",
        "--out",
        s(&f.path("x.csv")),
    ]);
    let err = stderr(&o);
    assert!(
        err.contains('7') && err.contains('1') && err.contains("version"),
        "{err}"
    );
}

#[test]
fn degenerate_fit_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let w = |name: &str, body: &str| fs::write(dir.path().join(name), body).unwrap();
    // Zero logits make every max-logit zero, so alpha cannot be positive.
    w("f.csv", "1,0\n0,1\n2,1\n1,2\n");
    w("l.csv", "0,0\n0,0\n0,0\n0,0\n");
    w("y.csv", "0\n1\n0\n1\n");
    w("m.txt", "id_train.features=f.csv\nid_train.logits=l.csv\nid_train.labels=y.csv\nconfig.principal_dim=1\n");
    let o = oodscore(&[
        "fit",
        "--manifest",
        s(&dir.path().join("m.txt")),
        "--out-stats",
        s(&dir.path().join("st")),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(
        stderr(&o).starts_with("error[numeric]: alpha:"),
        "{}",
        stderr(&o)
    );
}
