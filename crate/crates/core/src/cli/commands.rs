use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::json;

use super::config::{EvalSplit, RunConfig};
use crate::data::{
    balance_classes, binary_targets, decode_image, dfuc2021_targets, load_dataset, resize_bilinear, resolve_targets,
    stratified_split, write_manifest, write_synthetic_tree, Dataset, LoadOptions, Sample, Split,
};
use crate::error::{CmfError, Result};
use crate::eval::{evaluate, kfold_cv, paired_t_test, predict_samples, write_text, CvSummary, FoldOutcome};
use crate::gradsuite::run_gradient_suite_for;
use crate::model::{
    build_seeded, count_params_macs, load_checkpoint, save_checkpoint, softmax_rows, ConMatFormer,
    REFERENCE_TOTAL_MACS, REFERENCE_TOTAL_PARAMS,
};
use crate::tensor::{write_tensor_file, Tensor};
use crate::train::train;
use crate::xai::{
    grad_cam, grad_cam_pp, lime_model, render_lime_overlay, render_overlay, segment_grid, write_overlay, Method,
};

/// Failure of a command: an error, or checks that ran but did not pass.
#[derive(Debug)]
pub enum CommandError {
    Failed(CmfError),
    Checks(String),
}

impl<E: Into<CmfError>> From<E> for CommandError {
    fn from(e: E) -> Self {
        CommandError::Failed(e.into())
    }
}

pub type CommandResult = std::result::Result<String, CommandError>;

/// Creates the run directory: `data.out` if set, else
/// `runs/<unix-seconds>-<tag>`. An existing non-empty directory is refused.
pub fn prepare_out(cfg: &RunConfig, command: &str) -> Result<PathBuf> {
    let dir = match &cfg.out {
        Some(p) => p.clone(),
        None => {
            let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            let tag = if cfg.tag.is_empty() { command } else { cfg.tag.as_str() };
            let base = PathBuf::from("runs").join(format!("{secs}-{tag}"));
            let mut dir = base.clone();
            let mut n = 1;
            while dir.exists() {
                dir = PathBuf::from(format!("{}-{n}", base.display()));
                n += 1;
            }
            dir
        }
    };
    if dir.exists() && fs::read_dir(&dir)?.next().is_some() {
        return Err(CmfError::Config(format!("output directory {} is not empty", dir.display())));
    }
    fs::create_dir_all(&dir)?;
    write_text(dir.join("config.resolved"), &cfg.to_kv())?;
    Ok(dir)
}

fn load(cfg: &mut RunConfig) -> Result<Dataset> {
    let root = cfg.data_root.clone().ok_or_else(|| CmfError::Data("no data root given (--data)".into()))?;
    if !root.is_dir() {
        return Err(CmfError::Data(format!("data root {} does not exist", root.display())));
    }
    let ds = load_dataset(&root, &LoadOptions { resize: Some(cfg.model.input_size) })?;
    if ds.num_classes() != cfg.model.num_classes {
        log::info!("using {} classes found under {}", ds.num_classes(), root.display());
        cfg.model.num_classes = ds.num_classes();
    }
    Ok(ds)
}

fn parse_targets(spec: &str) -> Result<Option<crate::data::BalanceTargets>> {
    match spec {
        "none" | "" => Ok(None),
        "dfuc2021" => Ok(Some(dfuc2021_targets())),
        "binary" => Ok(Some(binary_targets())),
        custom => {
            let mut t = crate::data::BalanceTargets::default();
            for item in custom.split(',') {
                let parts: Vec<&str> = item.trim().split(':').collect();
                let [name, tr, va] = parts[..] else {
                    return Err(CmfError::Config(format!("balance entry {item:?} is not name:train:val")));
                };
                let num = |v: &str| v.parse::<usize>().map_err(|_| CmfError::Config(format!("bad count in {item:?}")));
                t.train.push((name.to_string(), num(tr)?));
                t.val.push((name.to_string(), num(va)?));
            }
            Ok(Some(t))
        }
    }
}

struct Splits {
    train: Vec<Sample>,
    val: Vec<Sample>,
    test: Vec<Sample>,
}

fn split_and_balance(cfg: &RunConfig, ds: &mut Dataset) -> Result<Splits> {
    let split = stratified_split(&ds.labels(), cfg.split_ratios, cfg.seed)?;
    ds.assign_split(&split);
    let take = |which| ds.by_split(which).into_iter().cloned().collect::<Vec<_>>();
    let (mut train, mut val, test) = (take(Split::Train), take(Split::Val), take(Split::Test));
    if let Some(targets) = parse_targets(&cfg.balance)? {
        let t = resolve_targets(&targets.train, &ds.class_names)?;
        train = balance_classes(&train, &t, &cfg.augment, cfg.seed)?;
        if cfg.augment_val {
            let v = resolve_targets(&targets.val, &ds.class_names)?;
            val = balance_classes(&val, &v, &cfg.augment, cfg.seed.wrapping_add(1))?;
        }
    }
    Ok(Splits { train, val, test })
}

fn refs(s: &[Sample]) -> Vec<&Sample> {
    s.iter().collect()
}

pub fn cmd_train(mut cfg: RunConfig) -> CommandResult {
    cfg.validate()?;
    let mut ds = load(&mut cfg)?;
    let splits = split_and_balance(&cfg, &mut ds)?;
    if splits.test.is_empty() {
        return Err(CmfError::Data("test split is empty; adjust data.split_ratios".into()).into());
    }
    let out = prepare_out(&cfg, "train")?;
    let all: Vec<Sample> = splits.train.iter().chain(&splits.val).chain(&splits.test).cloned().collect();
    write_manifest(&all, fs::File::create(out.join("manifest.csv"))?)?;
    write_text(out.join("classes.txt"), &(ds.class_names.join("\n") + "\n"))?;

    let mut model = build_seeded::<f32>(&cfg.model, cfg.seed)?;
    let outcome = train(&mut model, &refs(&splits.train), &refs(&splits.val), &ds.class_names, &cfg.train_config())?;
    outcome.history.write_csv(out.join("history.csv"))?;
    model.params = outcome.best_params;
    save_checkpoint(&model, out.join("checkpoint.bin"))?;
    let report = evaluate(&model, &refs(&splits.test), &ds.class_names)?;
    report.write_files(&out)?;
    Ok(format!(
        "train: test accuracy {:.4}, macro F1 {:.4}, best epoch {} -> {}",
        report.accuracy,
        report.macro_f1,
        outcome.best_epoch,
        out.display()
    ))
}

fn load_model(cfg: &mut RunConfig) -> Result<ConMatFormer<f32>> {
    let path = cfg.checkpoint.clone().ok_or_else(|| CmfError::Config("no checkpoint given (--checkpoint)".into()))?;
    if !path.is_file() {
        return Err(CmfError::Data(format!("checkpoint {} does not exist", path.display())));
    }
    let model = load_checkpoint::<f32>(&path)?;
    cfg.model = model.config.clone();
    cfg.augment.size = cfg.model.input_size;
    Ok(model)
}

pub fn cmd_eval(mut cfg: RunConfig) -> CommandResult {
    let model = load_model(&mut cfg)?;
    let mut ds = load(&mut cfg)?;
    if ds.num_classes() != model.num_classes() {
        return Err(CmfError::Config(format!(
            "checkpoint has {} classes, data has {}",
            model.num_classes(),
            ds.num_classes()
        ))
        .into());
    }
    cfg.validate()?;
    let split = stratified_split(&ds.labels(), cfg.split_ratios, cfg.seed)?;
    ds.assign_split(&split);
    let samples: Vec<&Sample> = match cfg.eval_split {
        EvalSplit::All => ds.samples.iter().collect(),
        EvalSplit::Train => ds.by_split(Split::Train),
        EvalSplit::Val => ds.by_split(Split::Val),
        EvalSplit::Test => ds.by_split(Split::Test),
    };
    if samples.is_empty() {
        return Err(CmfError::Data("selected split is empty".into()).into());
    }
    let out = prepare_out(&cfg, "eval")?;
    let report = evaluate(&model, &samples, &ds.class_names)?;
    report.write_files(&out)?;
    Ok(format!(
        "eval: {} samples, accuracy {:.4}, macro F1 {:.4} -> {}",
        samples.len(),
        report.accuracy,
        report.macro_f1,
        out.display()
    ))
}

pub fn cmd_cv(mut cfg: RunConfig) -> CommandResult {
    cfg.validate()?;
    let ds = load(&mut cfg)?;
    let out = prepare_out(&cfg, "cv")?;
    let targets = parse_targets(&cfg.balance)?.map(|t| resolve_targets(&t.train, &ds.class_names)).transpose()?;
    let train_cfg = cfg.train_config();
    let summary = kfold_cv(&ds.labels(), cfg.folds, cfg.seed, |fold, tr, te| {
        let mut train_set: Vec<Sample> = tr.iter().map(|&i| ds.samples[i].clone()).collect();
        for s in &mut train_set {
            s.split = Some(Split::Train);
        }
        if let Some(t) = &targets {
            train_set = balance_classes(&train_set, t, &cfg.augment, cfg.seed.wrapping_add(fold as u64))?;
        }
        let test: Vec<&Sample> = te.iter().map(|&i| &ds.samples[i]).collect();
        let mut model = build_seeded::<f32>(&cfg.model, cfg.seed)?;
        train(&mut model, &refs(&train_set), &[], &ds.class_names, &train_cfg)?;
        let report = evaluate(&model, &test, &ds.class_names)?;
        log::info!("fold {fold}: accuracy {:.4}", report.accuracy);
        Ok(FoldOutcome { report, checksum: model.params.checksum() })
    })?;
    summary.write_csv(out.join("cv.csv"))?;
    Ok(format!(
        "cv: accuracy {:.4} ± {:.4} over {} folds -> {}",
        summary.mean[0],
        summary.std[0],
        summary.folds.len(),
        out.display()
    ))
}

pub fn cmd_ttest(cfg: RunConfig, run_a: &Path, run_b: &Path) -> CommandResult {
    cfg.validate()?;
    let metric = &cfg.ttest_metric;
    let column = |p: &Path| -> Result<Vec<f64>> {
        CvSummary::read_csv(p)?
            .metric(metric)
            .ok_or_else(|| CmfError::Data(format!("{} has no {metric:?} column", p.display())))
    };
    let (a, b) = (column(run_a)?, column(run_b)?);
    if a.len() != b.len() {
        return Err(CmfError::Data(format!("fold counts differ: {} vs {}", a.len(), b.len())).into());
    }
    let r = paired_t_test(&a, &b)?;
    let significant = if r.significant(cfg.ttest_alpha) { "yes" } else { "no" };
    if cfg.out.is_some() {
        let out = prepare_out(&cfg, "ttest")?;
        let text = format!(
            "metric,folds,mean_a,mean_b,t,p,df,significant\n{metric},{},{},{},{},{},{},{significant}\n",
            a.len(),
            crate::eval::mean(&a),
            crate::eval::mean(&b),
            r.t,
            r.p,
            r.df
        );
        write_text(out.join("ttest.csv"), &text)?;
    }
    Ok(format!("ttest: {metric} t={:.4} p={:.4} df={} significant: {significant}", r.t, r.p, r.df))
}

pub fn cmd_explain(mut cfg: RunConfig) -> CommandResult {
    let model = load_model(&mut cfg)?;
    cfg.validate()?;
    let path = cfg.image.clone().ok_or_else(|| CmfError::Config("no image given (--image)".into()))?;
    if !path.is_file() {
        return Err(CmfError::Data(format!("image {} does not exist", path.display())).into());
    }
    let s = model.input_size();
    let image = resize_bilinear(&decode_image(&path)?, s, s)?;
    let sample = Sample::new(image.clone(), 0, path.display().to_string());
    let probs = softmax_rows(&predict_samples(&model, &[&sample])?).to_f64_vec();
    let predicted = Tensor::from_vec(&[probs.len()], probs.clone()).argmax();
    let out = prepare_out(&cfg, "explain")?;
    let dir = out.join("explanations");
    fs::create_dir_all(&dir)?;
    let selection = if cfg.target_class.is_some() { "given" } else { "predicted" };
    let summary = match cfg.method {
        Method::GradCam | Method::GradCamPp => {
            let sal = if cfg.method == Method::GradCam {
                grad_cam(&model, &image, cfg.target_class, cfg.tap)?
            } else {
                grad_cam_pp(&model, &image, cfg.target_class, cfg.tap)?
            };
            write_overlay(dir.join("overlay.png"), &render_overlay(&image, &sal.upsampled)?)?;
            write_tensor_file(dir.join("saliency.cmft"), &sal.map)?;
            json!({
                "method": cfg.method.name(),
                "image": path.display().to_string(),
                "target_class": sal.target_class,
                "class_selection": selection,
                "predicted_class": predicted,
                "probabilities": probs,
                "score": sal.score,
                "tap": cfg.tap.name(),
                "map_shape": sal.map.shape(),
            })
        }
        Method::Lime => {
            let seg = segment_grid(s, s, cfg.lime_grid)?;
            let lime = cfg.lime_config();
            let e = lime_model(&model, &image, cfg.target_class, &seg, &lime)?;
            write_overlay(dir.join("overlay.png"), &render_lime_overlay(&image, &e, cfg.lime_top)?)?;
            let labels = Tensor::from_vec(&[s, s], e.segments.labels.iter().map(|&l| l as f64).collect());
            write_tensor_file(dir.join("segments.cmft"), &labels)?;
            let coefficients: serde_json::Map<String, serde_json::Value> =
                e.coefficients.iter().enumerate().map(|(i, c)| (i.to_string(), json!(c))).collect();
            json!({
                "method": "lime",
                "image": path.display().to_string(),
                "target_class": e.target_class,
                "class_selection": selection,
                "predicted_class": predicted,
                "probabilities": probs,
                "grid": cfg.lime_grid,
                "n_samples": lime.n_samples,
                "kernel_width": lime.kernel_width,
                "ridge_lambda": lime.ridge_lambda,
                "intercept": e.intercept,
                "fit_r2": e.fit_r2,
                "top_segments": e.top_segments(cfg.lime_top),
                "coefficients": coefficients,
            })
        }
    };
    let class = summary["target_class"].as_u64().unwrap_or_default();
    write_text(dir.join("explanation.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    Ok(format!("explain: {} for class {class} -> {}", cfg.method, dir.display()))
}

pub fn cmd_gradcheck(cfg: RunConfig) -> CommandResult {
    cfg.validate()?;
    if cfg.model.input_size > 64 {
        log::warn!("end-to-end check at {} pixels in 64-bit will be slow", cfg.model.input_size);
    }
    let out = prepare_out(&cfg, "gradcheck")?;
    let entries = run_gradient_suite_for(cfg.seed, &cfg.model, 4)?;
    let mut csv = String::from("check,max_rel_error,limit,passed\n");
    eprintln!("{:<20} {:>12} {:>8}  result", "check", "rel. error", "limit");
    for e in &entries {
        csv.push_str(&format!("{},{:e},{:e},{}\n", e.name, e.max_rel_error, e.limit, e.passed));
        eprintln!(
            "{:<20} {:>12.3e} {:>8.0e}  {}",
            e.name,
            e.max_rel_error,
            e.limit,
            if e.passed { "pass" } else { "FAIL" }
        );
    }
    write_text(out.join("gradcheck.csv"), &csv)?;
    let failed: Vec<&str> = entries.iter().filter(|e| !e.passed).map(|e| e.name.as_str()).collect();
    if failed.is_empty() {
        Ok(format!("gradcheck: {}/{} checks passed -> {}", entries.len(), entries.len(), out.display()))
    } else {
        Err(CommandError::Checks(format!("gradcheck: failed {}", failed.join(", "))))
    }
}

pub fn cmd_params(cfg: RunConfig) -> CommandResult {
    cfg.validate()?;
    let out = prepare_out(&cfg, "params")?;
    let model = build_seeded::<f32>(&cfg.model, cfg.seed)?;
    let report = count_params_macs(&model);
    write_text(out.join("params.csv"), &report.to_csv()?)?;
    let pct = |ours: usize, reference: usize| 100.0 * (ours as f64 - reference as f64) / reference as f64;
    eprintln!("{:<8} {:>14} {:>14} {:>9}", "", "this model", "reference", "diff");
    eprintln!(
        "{:<8} {:>14} {:>14} {:>+8.2}%",
        "params",
        report.total_params,
        REFERENCE_TOTAL_PARAMS,
        pct(report.total_params, REFERENCE_TOTAL_PARAMS)
    );
    eprintln!(
        "{:<8} {:>14} {:>14} {:>+8.2}%",
        "MACs",
        report.total_macs,
        REFERENCE_TOTAL_MACS,
        pct(report.total_macs, REFERENCE_TOTAL_MACS)
    );
    Ok(format!(
        "params: {} parameters (reference {}), {} MACs at {} px -> {}",
        report.total_params,
        REFERENCE_TOTAL_PARAMS,
        report.total_macs,
        report.input_size,
        out.display()
    ))
}

pub fn cmd_synth(root: &Path, per_class: usize, classes: usize, size: usize, seed: u64) -> CommandResult {
    if per_class == 0 || classes == 0 || size == 0 {
        return Err(CmfError::Config("synth needs positive --per-class, --classes and --size".into()).into());
    }
    if root.exists() && fs::read_dir(root)?.next().is_some() {
        return Err(CmfError::Config(format!("output directory {} is not empty", root.display())).into());
    }
    let n = write_synthetic_tree(root, per_class, classes, size, seed)?;
    Ok(format!("synth: wrote {n} images in {classes} classes to {}", root.display()))
}
