use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn seiv3(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seiv3"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn polylines(svg: &str) -> Vec<usize> {
    svg.split("<polyline")
        .skip(1)
        .map(|p| {
            let start = p.find("points=\"").unwrap() + 8;
            let end = start + p[start..].find('"').unwrap();
            p[start..end].split_whitespace().count()
        })
        .collect()
}

#[test]
fn history_gives_one_two_point_line_per_metric() {
    let out = tempfile::tempdir().unwrap();
    let status = seiv3(&["curves", "--input", s(&fixture("history_2epochs.csv")), "--out", s(out.path())]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let metrics = ["train_loss", "train_acc", "val_loss", "val_acc", "precision", "recall", "f1"];
    for m in metrics {
        let svg = fs::read_to_string(out.path().join(format!("{m}.svg"))).unwrap();
        assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
        assert!(!svg.contains("href"), "{m}.svg references an external asset");
        assert_eq!(polylines(&svg), [2], "{m}.svg");
    }
    assert_eq!(fs::read_dir(out.path()).unwrap().count(), metrics.len());
}

#[test]
fn sweep_gives_one_line_per_value() {
    let out = tempfile::tempdir().unwrap();
    let status = seiv3(&["curves", "--input", s(&fixture("sweep_lr.csv")), "--out", s(out.path())]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let svg = fs::read_to_string(out.path().join("val_acc.svg")).unwrap();
    assert_eq!(polylines(&svg), [3, 3, 3]);
    for lr in ["lr=0.001", "lr=0.0001", "lr=0.00001"] {
        assert!(svg.contains(lr), "legend lacks {lr}");
    }
}

#[test]
fn curves_are_byte_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        assert!(seiv3(&["curves", "--input", s(&fixture("sweep_lr.csv")), "--out", s(dir.path())]).status.success());
    }
    for m in ["train_loss", "val_acc", "f1"] {
        let name = format!("{m}.svg");
        assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap());
    }
}

#[test]
fn header_only_input_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.csv");
    fs::write(&input, "epoch,train_loss,train_acc,val_loss,val_acc,precision,recall,f1,seconds\n").unwrap();
    let out = dir.path().join("svg");
    let r = seiv3(&["curves", "--input", s(&input), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(!out.exists() || fs::read_dir(&out).unwrap().count() == 0);
}

#[test]
fn malformed_csv_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    fs::write(
        &input,
        "epoch,train_loss,train_acc,val_loss,val_acc,precision,recall,f1,seconds\n1,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0\n2,zero,0.5,0.5,0.5,0.5,0.5,0.5,0\n",
    )
    .unwrap();
    let r = seiv3(&["curves", "--input", s(&input), "--out", s(&dir.path().join("svg"))]);
    assert_eq!(r.status.code(), Some(1));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn exit_codes() {
    assert_eq!(seiv3(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(seiv3(&["summary", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(seiv3(&["--help"]).status.code(), Some(0));
    assert_eq!(seiv3(&["anova", "--input", "/nonexistent/runs.csv"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"model": {"use_se": true, "colour": "red"}}"#).unwrap();
    let r = seiv3(&["summary", "--config", s(&cfg)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("colour"));

    // zero within-group variance
    let flat = dir.path().join("flat.csv");
    fs::write(&flat, "model,n,mean,sd\na,5,0.5,0\nb,5,0.7,0\n").unwrap();
    assert_eq!(seiv3(&["anova", "--input", s(&flat)]).status.code(), Some(1));
}

#[test]
fn anova_reads_both_layouts() {
    let long = seiv3(&["anova", "--input", s(&fixture("toy_anova.csv")), "--metric", "accuracy"]);
    assert!(String::from_utf8_lossy(&long.stdout).lines().any(|l| l == "F=3.0000,p=0.1250"));

    let dir = tempfile::tempdir().unwrap();
    let summary = dir.path().join("summary.csv");
    let sd = 1.0f64;
    fs::write(&summary, format!("model,n,mean,sd\na,3,2,{sd}\nb,3,3,{sd}\nc,3,4,{sd}\n")).unwrap();
    let r = seiv3(&["anova", "--input", s(&summary)]);
    let out = String::from_utf8_lossy(&r.stdout);
    assert!(out.lines().any(|l| l == "df=2,6"), "{out}");
    assert!(out.lines().any(|l| l == "F=3.0000,p=0.1250"), "{out}");
}

#[test]
fn predict_and_eval_on_a_trained_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    assert!(seiv3(&["dataset", "synth", "--out", s(&images), "--per-class", "2", "--size", "96"]).status.success());
    let manifest = images.join("manifest.csv");
    let run = dir.path().join("run");
    let r = seiv3(&[
        "train",
        "--config",
        s(&fixture("mini.json")),
        "--epochs",
        "1",
        "--train-manifest",
        s(&manifest),
        "--val-manifest",
        s(&manifest),
        "--out",
        s(&run),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let ckpt = run.join("best.ckpt");

    let metrics = dir.path().join("metrics.csv");
    let r = seiv3(&["eval", "--checkpoint", s(&ckpt), "--manifest", s(&manifest), "--out", s(&metrics)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = fs::read_to_string(&metrics).unwrap();
    assert_eq!(text.lines().next().unwrap(), "Test_acc(%),Test_loss,Test_Precision,Test_Recall,Test_F1");
    assert_eq!(text.lines().count(), 2);

    let scores = dir.path().join("scores.csv");
    let r = seiv3(&["predict", "--checkpoint", s(&ckpt), "--manifest", s(&manifest), "--out", s(&scores)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = fs::read_to_string(&scores).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "path,score_class0,score_class1,predicted_label");
    for line in lines.by_ref() {
        let cells: Vec<&str> = line.split(',').collect();
        let p0: f64 = cells[1].parse().unwrap();
        let p1: f64 = cells[2].parse().unwrap();
        assert!((p0 + p1 - 1.0).abs() < 1e-5);
        assert_eq!(cells[3], if p1 > p0 { "1" } else { "0" });
    }
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn epoch_sweep_writes_one_run_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    assert!(seiv3(&["dataset", "synth", "--out", s(&images), "--per-class", "2", "--size", "96"]).status.success());
    let manifest = images.join("manifest.csv");
    let out = dir.path().join("sweep");
    let r = seiv3(&[
        "sweep",
        "--config",
        s(&fixture("mini.json")),
        "--axis",
        "epochs",
        "--values",
        "1,2",
        "--set",
        "output.emit_svg=true",
        "--train-manifest",
        s(&manifest),
        "--val-manifest",
        s(&manifest),
        "--out",
        s(&out),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 3, "{table}");
    assert!(rows.iter().all(|r| r.starts_with("epochs,") && r.ends_with(",ok")));
    assert!(out.join("epochs_1/history.csv").exists() && out.join("epochs_2/history.csv").exists());
    let svg = fs::read_to_string(out.join("curves/val_loss.svg")).unwrap();
    assert_eq!(polylines(&svg), [1, 2]);
}
