use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::data::AugmentSpec;
use crate::error::{CmfError, Result};
use crate::model::{kv_lines, ModelConfig, Tap};
use crate::train::TrainConfig;
use crate::xai::{LimeConfig, Method, Replacement};

/// Which samples `eval` scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Train,
    Val,
    Test,
    All,
}

impl FromStr for EvalSplit {
    type Err = CmfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(EvalSplit::Train),
            "val" => Ok(EvalSplit::Val),
            "test" => Ok(EvalSplit::Test),
            "all" => Ok(EvalSplit::All),
            _ => Err(CmfError::Config(format!("unknown split {s:?} (train, val, test, all)"))),
        }
    }
}

impl EvalSplit {
    fn name(self) -> &'static str {
        match self {
            EvalSplit::Train => "train",
            EvalSplit::Val => "val",
            EvalSplit::Test => "test",
            EvalSplit::All => "all",
        }
    }
}

/// Every setting of a run. Resolution order: preset defaults, then the
/// config file, then `--set` overrides, then dedicated flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub seed: u64,
    pub tag: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentSpec,
    pub data_root: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub split_ratios: (f64, f64, f64),
    /// `none`, `dfuc2021`, `binary` or `name:train:val,...`.
    pub balance: String,
    pub augment_val: bool,
    pub eval_split: EvalSplit,
    pub folds: usize,
    pub method: Method,
    pub target_class: Option<usize>,
    pub tap: Tap,
    pub lime_grid: usize,
    pub lime: LimeConfig,
    pub lime_top: usize,
    pub ttest_metric: String,
    pub ttest_alpha: f64,
}

impl RunConfig {
    /// `paper`: full network and optimizer settings. `desk`: reduced widths
    /// and a shorter, faster schedule. `toy`: desk network tuned to the
    /// 40-image synthetic set.
    pub fn preset(name: &str) -> Result<Self> {
        let model = match name {
            "paper" => ModelConfig::paper(),
            "desk" | "toy" => ModelConfig::desk(),
            _ => return Err(CmfError::Config(format!("unknown preset {name:?} (paper, desk, toy)"))),
        };
        let train = match name {
            "paper" => TrainConfig::default(),
            "desk" => TrainConfig { epochs: 30, batch_size: 16, lr: 1e-4, ..Default::default() },
            _ => TrainConfig { epochs: 20, batch_size: 8, lr: 1e-3, ..Default::default() },
        };
        Ok(Self {
            preset: name.into(),
            seed: 0,
            tag: String::new(),
            augment: AugmentSpec::new(model.input_size),
            model,
            train,
            data_root: None,
            out: None,
            checkpoint: None,
            image: None,
            split_ratios: (0.6, 0.2, 0.2),
            balance: "none".into(),
            augment_val: false,
            eval_split: EvalSplit::Test,
            folds: 4,
            method: Method::GradCam,
            target_class: None,
            tap: Tap::Stage(4),
            lime_grid: 7,
            lime: LimeConfig::default(),
            lime_top: 5,
            ttest_metric: "accuracy".into(),
            ttest_alpha: 0.05,
        })
    }

    /// Applies `key=value` lines; a `preset` line, if any, must come first.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in kv_lines(text)? {
            if k == "preset" {
                if v != self.preset {
                    return Err(CmfError::Config(format!(
                        "preset {v:?} must be chosen before other settings (current {:?})",
                        self.preset
                    )));
                }
                continue;
            }
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Builds from optional file text and `key=value` overrides. The preset
    /// comes from `preset_flag`, else a `preset` line in the file, else
    /// `desk`.
    pub fn resolve(file_text: Option<&str>, preset_flag: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let file_preset = match file_text {
            Some(t) => kv_lines(t)?.into_iter().find(|(k, _)| *k == "preset").map(|(_, v)| v.to_string()),
            None => None,
        };
        let preset = preset_flag.map(str::to_string).or(file_preset).unwrap_or_else(|| "desk".into());
        let mut cfg = Self::preset(&preset)?;
        if let Some(t) = file_text {
            for (k, v) in kv_lines(t)? {
                if k != "preset" {
                    cfg.set(k, v)?;
                }
            }
        }
        for (k, v) in overrides {
            if k == "preset" {
                return Err(CmfError::Config("use --preset to choose the preset".into()));
            }
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let path = |v: &str| if v.is_empty() { None } else { Some(PathBuf::from(v)) };
        if let Some(k) = key.strip_prefix("model.") {
            self.model.set(k, v)?;
            if k == "input_size" {
                self.augment.size = self.model.input_size;
            }
            return Ok(());
        }
        match key {
            "seed" => self.seed = parse(key, v)?,
            "tag" => self.tag = v.into(),
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.lr" => self.train.lr = parse(key, v)?,
            "train.weight_decay" => self.train.weight_decay = parse(key, v)?,
            "train.beta1" => self.train.beta1 = parse(key, v)?,
            "train.beta2" => self.train.beta2 = parse(key, v)?,
            "train.adam_eps" => self.train.adam_eps = parse(key, v)?,
            "train.decoupled_weight_decay" => self.train.decoupled_weight_decay = parse(key, v)?,
            "augment.flip_probabilities" => self.augment.flip_probabilities = parse_list(key, v)?,
            "augment.rotation_degrees" => self.augment.rotation_degrees = parse_list(key, v)?,
            "augment.affine_degrees" => self.augment.affine_degrees = parse(key, v)?,
            "augment.translate" => self.augment.translate = parse_pair(key, v)?,
            "augment.scale" => self.augment.scale = parse_pair(key, v)?,
            "data.root" => self.data_root = path(v),
            "data.out" => self.out = path(v),
            "data.checkpoint" => self.checkpoint = path(v),
            "data.image" => self.image = path(v),
            "data.split_ratios" => {
                let r: Vec<f64> = parse_list(key, v)?;
                let [a, b, c] = r[..] else {
                    return Err(CmfError::Config(format!("{key} needs three values, got {v:?}")));
                };
                self.split_ratios = (a, b, c);
            }
            "data.balance" => self.balance = v.into(),
            "data.augment_val" => self.augment_val = parse(key, v)?,
            "data.eval_split" => self.eval_split = v.parse()?,
            "cv.folds" => self.folds = parse(key, v)?,
            "explain.method" => self.method = v.parse()?,
            "explain.class" => self.target_class = if v.is_empty() { None } else { Some(parse(key, v)?) },
            "explain.tap" => self.tap = v.parse()?,
            "explain.lime_grid" => self.lime_grid = parse(key, v)?,
            "explain.lime_samples" => self.lime.n_samples = parse(key, v)?,
            "explain.lime_width" => self.lime.kernel_width = parse(key, v)?,
            "explain.lime_lambda" => self.lime.ridge_lambda = parse(key, v)?,
            "explain.lime_replacement" => self.lime.replacement = v.parse()?,
            "explain.lime_top" => self.lime_top = parse(key, v)?,
            "ttest.metric" => self.ttest_metric = v.into(),
            "ttest.alpha" => self.ttest_alpha = parse(key, v)?,
            _ => return Err(CmfError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Seed-dependent settings follow `seed`.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    pub fn lime_config(&self) -> LimeConfig {
        LimeConfig { seed: self.seed, ..self.lime }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train_config().validate()?;
        let (a, b, c) = self.split_ratios;
        if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(CmfError::Config(format!("split ratios must be in [0, 1] and sum to 1, got {a},{b},{c}")));
        }
        if self.folds < 2 {
            return Err(CmfError::Config("cv.folds must be at least 2".into()));
        }
        if !(self.ttest_alpha > 0.0 && self.ttest_alpha < 1.0) {
            return Err(CmfError::Config("ttest.alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Fully resolved settings, one `key = value` per line; feeding the text
    /// back through [`RunConfig::resolve`] reproduces this value.
    pub fn to_kv(&self) -> String {
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let t = &self.train;
        let a = &self.augment;
        let mut s = String::new();
        let _ = writeln!(s, "preset = {}", self.preset);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "tag = {}", self.tag);
        for line in self.model.to_kv().lines() {
            let (k, v) = line.split_once('=').expect("model kv line");
            let _ = writeln!(s, "model.{k} = {v}");
        }
        let _ = writeln!(s, "train.epochs = {}", t.epochs);
        let _ = writeln!(s, "train.batch_size = {}", t.batch_size);
        let _ = writeln!(s, "train.lr = {}", t.lr);
        let _ = writeln!(s, "train.weight_decay = {}", t.weight_decay);
        let _ = writeln!(s, "train.beta1 = {}", t.beta1);
        let _ = writeln!(s, "train.beta2 = {}", t.beta2);
        let _ = writeln!(s, "train.adam_eps = {}", t.adam_eps);
        let _ = writeln!(s, "train.decoupled_weight_decay = {}", t.decoupled_weight_decay);
        let _ = writeln!(s, "augment.flip_probabilities = {}", list(&a.flip_probabilities));
        let _ = writeln!(s, "augment.rotation_degrees = {}", list(&a.rotation_degrees));
        let _ = writeln!(s, "augment.affine_degrees = {}", a.affine_degrees);
        let _ = writeln!(s, "augment.translate = {},{}", a.translate.0, a.translate.1);
        let _ = writeln!(s, "augment.scale = {},{}", a.scale.0, a.scale.1);
        let _ = writeln!(s, "data.root = {}", path(&self.data_root));
        let _ = writeln!(s, "data.out = {}", path(&self.out));
        let _ = writeln!(s, "data.checkpoint = {}", path(&self.checkpoint));
        let _ = writeln!(s, "data.image = {}", path(&self.image));
        let (r0, r1, r2) = self.split_ratios;
        let _ = writeln!(s, "data.split_ratios = {r0},{r1},{r2}");
        let _ = writeln!(s, "data.balance = {}", self.balance);
        let _ = writeln!(s, "data.augment_val = {}", self.augment_val);
        let _ = writeln!(s, "data.eval_split = {}", self.eval_split.name());
        let _ = writeln!(s, "cv.folds = {}", self.folds);
        let _ = writeln!(s, "explain.method = {}", self.method);
        let _ = writeln!(s, "explain.class = {}", self.target_class.map(|c| c.to_string()).unwrap_or_default());
        let _ = writeln!(s, "explain.tap = {}", self.tap.name());
        let _ = writeln!(s, "explain.lime_grid = {}", self.lime_grid);
        let _ = writeln!(s, "explain.lime_samples = {}", self.lime.n_samples);
        let _ = writeln!(s, "explain.lime_width = {}", self.lime.kernel_width);
        let _ = writeln!(s, "explain.lime_lambda = {}", self.lime.ridge_lambda);
        let replacement = match self.lime.replacement {
            Replacement::Mean => "mean",
            Replacement::Black => "black",
            Replacement::Blur => "blur",
        };
        let _ = writeln!(s, "explain.lime_replacement = {replacement}");
        let _ = writeln!(s, "explain.lime_top = {}", self.lime_top);
        let _ = writeln!(s, "ttest.metric = {}", self.ttest_metric);
        let _ = writeln!(s, "ttest.alpha = {}", self.ttest_alpha);
        s
    }
}

fn parse<V: FromStr>(key: &str, v: &str) -> Result<V> {
    v.parse().map_err(|_| CmfError::Config(format!("cannot parse {key} = {v:?}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

fn parse_pair(key: &str, v: &str) -> Result<(f64, f64)> {
    match parse_list(key, v)?[..] {
        [a, b] => Ok((a, b)),
        _ => Err(CmfError::Config(format!("{key} needs two values, got {v:?}"))),
    }
}
