use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cmf(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmf"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn cmf")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path) {
    let o = cmf(&["synth", "--out", "toy", "--per-class", "10", "--classes", "4", "--size", "32"], dir);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

const FAST: [&str; 8] = ["--preset", "toy", "--set", "model.input_size=32", "--set", "train.epochs=2", "--data", "toy"];

fn train(dir: &Path, out: &str) -> Output {
    let mut args = vec!["train", "--out", out];
    args.extend(FAST);
    cmf(&args, dir)
}

#[test]
fn train_writes_every_artifact_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let o = train(dir, "a");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = stdout(&o);
    assert_eq!(line.lines().count(), 1, "{line}");
    assert!(line.starts_with("train: test accuracy"));
    for f in
        ["config.resolved", "manifest.csv", "history.csv", "checkpoint.bin", "metrics.json", "confusion.csv", "roc.csv"]
    {
        assert!(dir.join("a").join(f).is_file(), "missing {f}");
    }
    let history = fs::read_to_string(dir.join("a/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    let o = train(dir, "b");
    assert_eq!(o.status.code(), Some(0));
    for f in ["metrics.json", "manifest.csv", "history.csv", "checkpoint.bin", "confusion.csv", "roc.csv"] {
        assert_eq!(fs::read(dir.join("a").join(f)).unwrap(), fs::read(dir.join("b").join(f)).unwrap(), "{f} differs");
    }

    let o = train(dir, "a");
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("not empty"));

    let o = cmf(&["eval", "--data", "toy", "--checkpoint", "a/checkpoint.bin", "--split", "all", "--out", "e"], dir);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("e/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["num_samples"], 40);

    for method in ["gradcam", "gradcampp", "lime"] {
        let out = format!("x-{method}");
        let o = cmf(
            &[
                "explain",
                "--checkpoint",
                "a/checkpoint.bin",
                "--image",
                "toy/class2/003.png",
                "--method",
                method,
                "--set",
                "explain.lime_samples=40",
                "--set",
                "explain.lime_grid=4",
                "--out",
                &out,
            ],
            dir,
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let ex = dir.join(&out).join("explanations");
        assert!(ex.join("overlay.png").is_file());
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(ex.join("explanation.json")).unwrap()).unwrap();
        assert_eq!(json["method"], method);
        assert_eq!(json["class_selection"], "predicted");
        assert_eq!(json["target_class"], json["predicted_class"]);
        if method == "lime" {
            assert_eq!(json["coefficients"].as_object().unwrap().len(), 16);
        } else {
            assert!(ex.join("saliency.cmft").is_file());
        }
    }
    let o = cmf(
        &[
            "explain",
            "--checkpoint",
            "a/checkpoint.bin",
            "--image",
            "toy/class0/000.png",
            "--class",
            "2",
            "--out",
            "x-class",
        ],
        dir,
    );
    assert_eq!(o.status.code(), Some(0));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("x-class/explanations/explanation.json")).unwrap()).unwrap();
    assert_eq!(json["target_class"], 2);
    assert_eq!(json["class_selection"], "given");
}

#[test]
fn missing_inputs_exit_with_data_code() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cmf(&["train", "--data", "does-not-exist", "--out", "r"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does-not-exist"));
    assert!(stdout(&o).is_empty());
    let o = cmf(&["eval", "--checkpoint", "nope.bin", "--data", ".", "--out", "r"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_configuration_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        vec!["train", "--set", "train.epochz=3"],
        vec!["train", "--set", "train.epochs"],
        vec!["train", "--preset", "giant"],
        vec!["train", "--set", "data.split_ratios=0.5,0.5,0.5"],
        vec!["frobnicate"],
    ] {
        let o = cmf(&args, tmp.path());
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
    }
    assert_eq!(cmf(&["--help"], tmp.path()).status.code(), Some(0));
    assert_eq!(cmf(&["--version"], tmp.path()).status.code(), Some(0));
}

fn write_cv(path: &Path, accs: &[f64]) {
    let mut s = String::from("fold,accuracy,macro_precision,macro_recall,macro_f1,checksum\n");
    for (i, a) in accs.iter().enumerate() {
        s.push_str(&format!("{i},{a},{a},{a},{a},x\n"));
    }
    s.push_str("mean,0,0,0,0,\nstd,0,0,0,0,\n");
    fs::write(path, s).unwrap();
}

#[test]
fn ttest_compares_fold_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_cv(&dir.join("a.csv"), &[0.91, 0.92, 0.93, 0.94]);
    write_cv(&dir.join("b.csv"), &[0.90, 0.91, 0.92, 0.95]);
    let o = cmf(&["ttest", "a.csv", "b.csv", "--out", "t"], dir);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = stdout(&o);
    assert!(line.contains("t=1.0000") && line.contains("p=0.391") && line.contains("significant: no"), "{line}");
    let csv = fs::read_to_string(dir.join("t/ttest.csv")).unwrap();
    assert!(csv.starts_with("metric,folds,"));

    write_cv(&dir.join("c.csv"), &[0.91, 0.92, 0.93]);
    assert_eq!(cmf(&["ttest", "a.csv", "c.csv"], dir).status.code(), Some(2));
    assert_eq!(cmf(&["ttest", "a.csv", "a.csv"], dir).status.code(), Some(0));
    assert_eq!(cmf(&["ttest", "a.csv", "b.csv", "--metric", "kappa"], dir).status.code(), Some(2));
    assert_eq!(cmf(&["ttest", "a.csv", "missing.csv"], dir).status.code(), Some(2));
}

#[test]
fn cv_writes_fold_table() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let mut args = vec!["cv", "--out", "cv", "--folds", "2", "--set", "train.epochs=1"];
    args.extend(&FAST[..4]);
    args.extend(["--data", "toy"]);
    let o = cmf(&args, dir);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.join("cv/cv.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[3].starts_with("mean,") && rows[4].starts_with("std,"));
}

#[test]
fn params_and_gradcheck() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let o = cmf(&["params", "--preset", "paper", "--out", "p"], dir);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("36330000"));
    assert!(stderr(&o).contains("reference"));
    let csv = fs::read_to_string(dir.join("p/params.csv")).unwrap();
    assert!(csv.lines().any(|l| l == "head,fc,3076,3072"));

    let o = cmf(&["gradcheck", "--out", "g"], dir);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.join("g/gradcheck.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("check,max_rel_error,limit,passed"));
    assert_eq!(csv.lines().count(), 13);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn resolved_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let o = train(dir, "first");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = cmf(&["train", "--config", "first/config.resolved", "--out", "second"], dir);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["metrics.json", "checkpoint.bin", "manifest.csv"] {
        assert_eq!(fs::read(dir.join("first").join(f)).unwrap(), fs::read(dir.join("second").join(f)).unwrap(), "{f}");
    }
    let settled = |run: &str| -> Vec<String> {
        let text = fs::read_to_string(dir.join(run).join("config.resolved")).unwrap();
        text.lines().filter(|l| !l.starts_with("data.out")).map(String::from).collect()
    };
    assert_eq!(settled("first"), settled("second"));
}
