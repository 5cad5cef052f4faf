//! The `cmf` command-line tool.

mod commands;
mod config;

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{prepare_out, CommandError, CommandResult};
pub use config::{EvalSplit, RunConfig};

use crate::error::CmfError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_CHECKS: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "cmf", version, about = "Train, evaluate and explain ConMatFormer image classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root with one folder per class.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory (must be empty or absent).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// paper, desk or toy.
    #[arg(long)]
    preset: Option<String>,
    /// Override any configuration key, e.g. --set train.epochs=5.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split, balance, train and evaluate on the test split.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on one split of a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// train, val, test or all.
        #[arg(long)]
        split: Option<String>,
    },
    /// Stratified k-fold cross-validation.
    Cv {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Paired t-test between two cross-validation runs.
    Ttest {
        #[command(flatten)]
        common: Common,
        /// cv.csv of the first run.
        run_a: PathBuf,
        /// cv.csv of the second run.
        run_b: PathBuf,
        #[arg(long)]
        metric: Option<String>,
    },
    /// Saliency map for one image.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
        /// gradcam, gradcampp or lime.
        #[arg(long)]
        method: Option<String>,
        /// Target class index; the predicted class when omitted.
        #[arg(long)]
        class: Option<usize>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Per-module parameter and MAC census.
    Params {
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic image-folder dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        per_class: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Exit code for an error.
pub fn exit_code(e: &CmfError) -> i32 {
    match e {
        CmfError::Config(_) | CmfError::InvalidArgument(_) => EXIT_CONFIG,
        CmfError::Data(_)
        | CmfError::Io(_)
        | CmfError::Image(_)
        | CmfError::Csv(_)
        | CmfError::Json(_)
        | CmfError::Format(_) => EXIT_DATA,
        CmfError::NonFinite(_) | CmfError::Numerical(_) | CmfError::Autodiff(_) | CmfError::Shape(_) => EXIT_NUMERIC,
    }
}

fn resolve(common: &Common, extra: Vec<(String, String)>) -> crate::Result<RunConfig> {
    let text = match &common.config {
        Some(p) => Some(
            fs::read_to_string(p).map_err(|e| CmfError::Config(format!("cannot read config {}: {e}", p.display())))?,
        ),
        None => None,
    };
    let mut overrides = Vec::new();
    if let Some(s) = common.seed {
        overrides.push(("seed".to_string(), s.to_string()));
    }
    if let Some(d) = &common.data {
        overrides.push(("data.root".to_string(), d.display().to_string()));
    }
    if let Some(o) = &common.out {
        overrides.push(("data.out".to_string(), o.display().to_string()));
    }
    overrides.extend(extra);
    for item in &common.set {
        let (k, v) =
            item.split_once('=').ok_or_else(|| CmfError::Config(format!("--set expects KEY=VALUE, got {item:?}")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    RunConfig::resolve(text.as_deref(), common.preset.as_deref(), &overrides)
}

fn path_kv(key: &str, p: &Option<PathBuf>) -> Option<(String, String)> {
    p.as_ref().map(|p| (key.to_string(), p.display().to_string()))
}

fn dispatch(command: Command) -> CommandResult {
    match command {
        Command::Train { common } => commands::cmd_train(resolve(&common, vec![])?),
        Command::Eval { common, checkpoint, split } => {
            let mut extra: Vec<_> = path_kv("data.checkpoint", &checkpoint).into_iter().collect();
            extra.extend(split.map(|s| ("data.eval_split".to_string(), s)));
            commands::cmd_eval(resolve(&common, extra)?)
        }
        Command::Cv { common, folds } => {
            let extra = folds.map(|k| ("cv.folds".to_string(), k.to_string())).into_iter().collect();
            commands::cmd_cv(resolve(&common, extra)?)
        }
        Command::Ttest { common, run_a, run_b, metric } => {
            let extra = metric.map(|m| ("ttest.metric".to_string(), m)).into_iter().collect();
            commands::cmd_ttest(resolve(&common, extra)?, &run_a, &run_b)
        }
        Command::Explain { common, checkpoint, image, method, class } => {
            let mut extra: Vec<_> = path_kv("data.checkpoint", &checkpoint).into_iter().collect();
            extra.extend(path_kv("data.image", &image));
            extra.extend(method.map(|m| ("explain.method".to_string(), m)));
            extra.extend(class.map(|c| ("explain.class".to_string(), c.to_string())));
            commands::cmd_explain(resolve(&common, extra)?)
        }
        Command::Gradcheck { common } => commands::cmd_gradcheck(resolve(&common, vec![])?),
        Command::Params { common } => commands::cmd_params(resolve(&common, vec![])?),
        Command::Synth { out, per_class, classes, size, seed } => {
            commands::cmd_synth(&out, per_class, classes, size, seed)
        }
    }
}

fn init_threads() {
    if let Some(n) = std::env::var("CMF_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Runs the tool on `args` (program name first) and returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_target(false)
        .try_init();
    init_threads();
    match dispatch(cli.command) {
        Ok(line) => {
            println!("{line}");
            EXIT_OK
        }
        Err(CommandError::Checks(msg)) => {
            eprintln!("error: {msg}");
            println!("{msg}");
            EXIT_CHECKS
        }
        Err(CommandError::Failed(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
