//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when a verification fails (gradient check,
//! divergence), 2 for usage errors and unusable inputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::data::{self, export_csv, load_checkpoint, load_dataset, save_checkpoint, save_dataset, Checkpoint, GenConfig, Split};
use crate::error::{Result, TagmError};
use crate::exec::{with_jobs, Execution};
use crate::gradcheck::{gradient_check, GradCheckConfig};
use crate::heads::HeadMode;
use crate::model::{param_count_for, ModelDims, ModelKind};
use crate::salience::{fraction_localized, median, traces};
use crate::training::{check_compatible, evaluate, grid_search, train, ModelSpec, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "tagm", version, about = "Temporal attention-gated model for noisy sequence classification")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// JSON file with `gen` and/or `train` sections; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for batch gradients, evaluation and grid search.
    /// Results do not depend on this value.
    #[arg(long, global = true, value_name = "N", default_value_t = 0)]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic noisy-sequence dataset.
    GenData(GenArgs),
    /// Train a model and write a checkpoint plus a JSON-lines log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Export per-timestep attention scores as CSV.
    Salience(SalienceArgs),
    /// Print the parameter count for given dimensions.
    Params(ParamsArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a CSV export (one row per timestep).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_val: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub jitter_sigma: Option<f64>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub salient_min: Option<usize>,
    #[arg(long)]
    pub salient_max: Option<usize>,
    #[arg(long)]
    pub pad_min: Option<usize>,
    #[arg(long)]
    pub pad_max: Option<usize>,
    /// Several templates per sample with multi-hot labels.
    #[arg(long)]
    pub multilabel: bool,
    #[arg(long)]
    pub max_labels: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "tagm")]
    pub model: ModelKind,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Training log path (JSON lines). Defaults to the checkpoint path with
    /// a `.log.jsonl` suffix.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub attn_hidden: usize,
    #[arg(long, default_value_t = 16)]
    pub cell_hidden: usize,
    /// Search the configured grid of sizes and dropout rates instead of
    /// training the single size given above.
    #[arg(long)]
    pub grid: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub fusion_lr_multiplier: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Symmetric gradient clip: gradients are limited to [-CLIP, CLIP].
    #[arg(long)]
    pub clip: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
}

#[derive(Debug, Args)]
pub struct SalienceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long, default_value = "tagm")]
    pub model: ModelKind,
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub attn_hidden: usize,
    #[arg(long)]
    pub cell_hidden: usize,
    #[arg(long)]
    pub classes: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Model to check; all three when omitted.
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long)]
    pub multilabel: bool,
    /// Scale the largest analytic gradient coordinate by 1.01 before
    /// comparing, to confirm the check can fail.
    #[arg(long, hide = true)]
    pub corrupt: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    gen: Option<GenConfig>,
    train: Option<TrainConfig>,
}

fn read_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| TagmError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| TagmError::InvalidArgument(format!("{}: {e}", path.display())))
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn init_logging() -> std::result::Result<(), String> {
    let level = match std::env::var("TAGM_LOG").as_deref() {
        Err(_) | Ok("info") => log::LevelFilter::Info,
        Ok("quiet") => log::LevelFilter::Error,
        Ok("debug") => log::LevelFilter::Debug,
        Ok(other) => return Err(format!("TAGM_LOG must be quiet, info or debug, got '{other}'")),
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .try_init();
    Ok(())
}

fn exit_code(err: &TagmError) -> i32 {
    match err {
        TagmError::Diverged { .. } | TagmError::NonFinite(_) => EXIT_VERIFY,
        _ => EXIT_USAGE,
    }
}

/// Parses the process arguments, runs the command, and returns the exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Err(msg) = init_logging() {
        eprintln!("error: {msg}");
        return EXIT_USAGE;
    }
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs a parsed command line and returns the exit code for a completed run.
pub fn execute(cli: &Cli) -> Result<i32> {
    let file = read_config(cli.config.as_deref())?;
    let exec = if cli.jobs == 1 {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    with_jobs(cli.jobs, || match &cli.command {
        Command::GenData(a) => gen_data(a, cli.seed, file.gen.unwrap_or_default(), exec),
        Command::Train(a) => cmd_train(a, cli.seed, file.train.unwrap_or_default(), exec),
        Command::Eval(a) => cmd_eval(a, exec),
        Command::Salience(a) => cmd_salience(a, exec),
        Command::Params(a) => cmd_params(a),
        Command::Gradcheck(a) => cmd_gradcheck(a, cli.seed.unwrap_or(0)),
    })
}

fn gen_data(a: &GenArgs, seed: Option<u64>, mut cfg: GenConfig, exec: Execution) -> Result<i32> {
    set(&mut cfg.seed, seed);
    set(&mut cfg.classes, a.classes);
    set(&mut cfg.dim, a.dim);
    set(&mut cfg.n_train, a.n_train);
    set(&mut cfg.n_val, a.n_val);
    set(&mut cfg.n_test, a.n_test);
    set(&mut cfg.noise_sigma, a.noise_sigma);
    set(&mut cfg.jitter_sigma, a.jitter_sigma);
    set(&mut cfg.amplitude, a.amplitude);
    set(&mut cfg.salient_min, a.salient_min);
    set(&mut cfg.salient_max, a.salient_max);
    set(&mut cfg.pad_min, a.pad_min);
    set(&mut cfg.pad_max, a.pad_max);
    set(&mut cfg.max_labels, a.max_labels);
    cfg.multilabel |= a.multilabel;

    let ds = data::generator::generate_with(&cfg, exec)?;
    save_dataset(&ds, &a.out)?;
    if let Some(csv) = &a.csv {
        export_csv(&ds, csv)?;
    }
    println!("wrote {}", a.out.display());
    println!("config_hash: {}", cfg.config_hash());
    println!("{}", ds.summary());
    Ok(EXIT_OK)
}

fn cmd_train(a: &TrainArgs, seed: Option<u64>, mut cfg: TrainConfig, exec: Execution) -> Result<i32> {
    set(&mut cfg.seed, seed);
    set(&mut cfg.epochs, a.epochs);
    set(&mut cfg.learning_rate, a.lr);
    set(&mut cfg.fusion_lr_multiplier, a.fusion_lr_multiplier);
    set(&mut cfg.batch_size, a.batch_size);
    set(&mut cfg.dropout, a.dropout);
    set(&mut cfg.patience, a.patience);
    if let Some(c) = a.clip {
        if !(c >= 0.0) {
            return Err(TagmError::InvalidArgument(format!("--clip must be non-negative, got {c}")));
        }
        cfg.clip_lo = -c;
        cfg.clip_hi = c;
    }
    cfg.validate()?;
    let ds = load_dataset(&a.data)?;

    let outcome = if a.grid {
        let res = grid_search(&ds, a.model, &cfg, exec)?;
        println!("attn_hidden,cell_hidden,dropout,params,best_epoch,val_score");
        for r in &res.rows {
            println!(
                "{},{},{},{},{},{}",
                r.attn_hidden, r.cell_hidden, r.dropout, r.params, r.best_epoch, r.val_score
            );
        }
        let s = &res.rows[res.selected];
        println!(
            "selected: attn_hidden={} cell_hidden={} dropout={}",
            s.attn_hidden, s.cell_hidden, s.dropout
        );
        res.outcome
    } else {
        let spec = ModelSpec {
            kind: a.model,
            attn_hidden: a.attn_hidden,
            cell_hidden: a.cell_hidden,
        };
        train(&ds, spec, &cfg, exec)?
    };

    let mut ckpt = Checkpoint::new(outcome.model, cfg.seed);
    ckpt.optimizer = Some(outcome.optimizer);
    save_checkpoint(&ckpt, &a.out)?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    write_log(&log_path, &outcome.log)?;

    let val = evaluate(&ckpt.model, &ds, Split::Val, exec)?;
    let test = evaluate(&ckpt.model, &ds, Split::Test, exec)?;
    println!("wrote {} and {}", a.out.display(), log_path.display());
    println!(
        "model={} params={} selected_epoch={} val_acc={} test_acc={}",
        a.model,
        crate::params::Parameters::param_count(&ckpt.model),
        outcome.best_epoch,
        val.score(),
        test.score()
    );
    Ok(EXIT_OK)
}

fn write_log(path: &Path, log: &[crate::training::EpochRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| TagmError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in log {
        writeln!(w, "{}", serde_json::to_string(r)?).map_err(|e| TagmError::io(path, e))?;
    }
    w.flush().map_err(|e| TagmError::io(path, e))
}

fn load_pair(checkpoint: &Path, data: &Path) -> Result<(Checkpoint, data::Dataset)> {
    let ckpt = load_checkpoint(checkpoint)?;
    let ds = load_dataset(data)?;
    check_compatible(&ckpt.model, &ds)?;
    Ok((ckpt, ds))
}

fn cmd_eval(a: &EvalArgs, exec: Execution) -> Result<i32> {
    let (ckpt, ds) = load_pair(&a.checkpoint, &a.data)?;
    let r = evaluate(&ckpt.model, &ds, a.split, exec)?;
    println!("split={} sequences={} loss={} accuracy={}", r.split, r.sequences, r.mean_loss, r.accuracy);
    if let (Some(aps), Some(mean)) = (&r.per_class_ap, r.mean_ap) {
        for (k, ap) in aps.iter().enumerate() {
            match ap {
                Some(v) => println!("ap[{k}]={v}"),
                None => println!("ap[{k}]=n/a"),
            }
        }
        println!("mean_ap={mean}");
    }
    Ok(EXIT_OK)
}

fn cmd_salience(a: &SalienceArgs, exec: Execution) -> Result<i32> {
    let (ckpt, ds) = load_pair(&a.checkpoint, &a.data)?;
    let ts = traces(&ckpt.model, &ds, a.split, exec)?;
    let has_mask = ts.iter().any(|t| t.mask.is_some());

    let (sink, label): (Box<dyn Write>, PathBuf) = match &a.out {
        Some(p) => (Box::new(File::create(p).map_err(|e| TagmError::io(p, e))?), p.clone()),
        None => (Box::new(std::io::stdout().lock()), PathBuf::from("<stdout>")),
    };
    let mut w = BufWriter::new(sink);
    let io = |e| TagmError::io(&label, e);
    if has_mask {
        writeln!(w, "sample_id,t,a_t,mask,ratio").map_err(io)?;
    } else {
        writeln!(w, "sample_id,t,a_t").map_err(io)?;
    }
    for tr in &ts {
        for (t, a_t) in tr.a.iter().enumerate() {
            if has_mask {
                let m = tr.mask.as_ref().map(|m| u8::from(m[t]).to_string()).unwrap_or_default();
                let ratio = tr.ratio.map(|r| r.to_string()).unwrap_or_default();
                writeln!(w, "{},{t},{a_t},{m},{ratio}", tr.sample_id).map_err(io)?;
            } else {
                writeln!(w, "{},{t},{a_t}", tr.sample_id).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)?;
    drop(w);

    let mut ratios: Vec<f64> = ts.iter().filter_map(|t| t.ratio).collect();
    if let (Some(frac), Some(med)) = (fraction_localized(&ts, 2.0), median(&mut ratios)) {
        eprintln!(
            "localization over {} sequences: median ratio {med:.3}, fraction with ratio >= 2: {frac:.3}",
            ratios.len()
        );
    }
    Ok(EXIT_OK)
}

fn cmd_params(a: &ParamsArgs) -> Result<i32> {
    let dims = ModelDims::new(a.dim, a.attn_hidden, a.cell_hidden, a.classes);
    crate::model::Model::zeros(a.model, dims, HeadMode::Multiclass)?;
    println!("{}", param_count_for(a.model, &dims));
    Ok(EXIT_OK)
}

fn cmd_gradcheck(a: &GradcheckArgs, first_seed: u64) -> Result<i32> {
    let kinds: Vec<ModelKind> = match a.model {
        Some(k) => vec![k],
        None => ModelKind::ALL.to_vec(),
    };
    let mut all_passed = true;
    for kind in kinds {
        let mut cfg = GradCheckConfig::new(kind);
        cfg.corrupt = a.corrupt;
        if a.multilabel {
            cfg.mode = HeadMode::Multilabel;
        }
        let report = gradient_check(&cfg, first_seed..first_seed + a.seeds)?;
        for s in &report.seeds {
            log::debug!(
                "{kind} seed {}: max rel error {:.3e} at {}[{}], {} coordinates, {} resamples",
                s.seed,
                s.max_rel_error,
                s.worst_tensor,
                s.worst_index,
                s.coordinates,
                s.resamples
            );
        }
        let failed = report.seeds.iter().filter(|s| !s.passed).count();
        println!(
            "{kind}: {} seeds, max relative error {:.3e}, tolerance {:.0e}: {}",
            report.seeds.len(),
            report.max_rel_error(),
            report.tolerance,
            if report.passed { "PASS".to_string() } else { format!("FAIL ({failed} seeds)") }
        );
        all_passed &= report.passed;
    }
    Ok(if all_passed { EXIT_OK } else { EXIT_VERIFY })
}
