//! Command-line front end: `synth | train | eval | gradcheck | sweep`.
//!
//! Configuration files are JSON (see [`SynthConfig`] and [`TrainConfig`]);
//! flags override individual fields. Log level comes from `RUST_LOG`.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::data::{load_dataset, save_dataset, split, synth_generate, DatasetHeader, FeatureRecord, SynthConfig};
use crate::error::{Error, Result};
use crate::model::SingleTask;
use crate::params::Parameterized;
use crate::training::{evaluate, run_scope, train, Checkpoint, EpochStats, EvalReport, Scope, TrainConfig};

const CURVE_HELP: &str = "\
Outputs in --out-dir:
  curve.csv        one row per epoch: epoch,lr,L_total,L_share,L_topic,L_sentiment,
                   val_topic_mAP,val_sentiment_mAP (NaN for an ablated task)
  checkpoint.json  parameters of the epoch with the best mean validation mAP
  manifest.json    resolved configuration, dataset path, git revision";

#[derive(Debug, Parser)]
#[command(name = "deepmm", version, about = "Multimodal multitask ad-understanding network")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic planted-structure dataset.
    Synth(SynthArgs),
    /// Train a model and write curve, checkpoint and manifest.
    #[command(after_help = CURVE_HELP)]
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Compare analytic gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// Train once per value of one hyper-parameter and tabulate test mAP.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON synth configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub records: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub topics: Option<usize>,
    #[arg(long)]
    pub sentiments: Option<usize>,
    /// Sets d_img, d_obj and d_word together.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Topic,
    Sentiment,
}

#[derive(Debug, Args, Clone, Default)]
pub struct TrainOverrides {
    /// JSON training configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Shared width; the BLSTM hidden size becomes half of it.
    #[arg(long)]
    pub d_shared: Option<usize>,
    #[arg(long)]
    pub head_hidden: Option<usize>,
    #[arg(long)]
    pub no_autoencoder: bool,
    #[arg(long)]
    pub no_hier_attention: bool,
    #[arg(long, value_enum)]
    pub single_task: Option<TaskArg>,
    /// Single-threaded execution.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Split recomputed from the checkpoint's training seed and fractions.
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Directory for report.json and report.txt.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScopeArg {
    Layers,
    Attention,
    Full,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "full")]
    pub scope: ScopeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Negative control: flip the sign of every analytic gradient.
    #[arg(long)]
    pub corrupt: bool,
    /// Also write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Lr,
    Dropout,
    DShared,
    Alpha,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Comma-separated values, at least two.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV: param,value,best_epoch,test_topic_mAP,test_sentiment_mAP,
    /// test_topic_F1C,test_topic_F1O,test_sentiment_F1C,test_sentiment_F1O
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

/// Exit status of a command that ran to completion.
pub const EXIT_OK: i32 = 0;
/// A check ran and failed.
pub const EXIT_CHECK_FAILED: i32 = 1;

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    write_text(path, &text)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_synth(a: &SynthArgs) -> Result<i32> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(v) = a.records {
        cfg.n_records = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.topics {
        cfg.n_topics = v;
    }
    if let Some(v) = a.sentiments {
        cfg.n_sentiments = v;
    }
    if let Some(v) = a.dim {
        (cfg.d_img, cfg.d_obj, cfg.d_word) = (v, v, v);
    }
    if let Some(v) = a.noise {
        cfg.noise_std = v;
    }
    if cfg.n_records == 0 {
        log::warn!("n_records is 0; writing a header-only dataset");
    }
    let (header, records) = synth_generate(&cfg)?;
    save_dataset(&a.out, &header, &records)?;
    println!(
        "wrote {} records to {} (d_img {}, d_obj {}, d_word {}, {} topics, {} sentiments)",
        header.records,
        a.out.display(),
        header.d_img,
        header.d_obj,
        header.d_word,
        header.n_topics,
        header.n_sentiments
    );
    Ok(EXIT_OK)
}

/// Resolves a training configuration: file, then flags, then the dataset
/// header's dimensions.
pub fn resolve_train_config(o: &TrainOverrides, header: &DatasetHeader) -> Result<TrainConfig> {
    let mut c: TrainConfig = match &o.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = o.seed {
        c.seed = v;
    }
    if let Some(v) = o.epochs {
        c.schedule.total_epochs = v;
    }
    if let Some(v) = o.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = o.lr {
        c.optimizer.lr = v;
    }
    if let Some(v) = o.alpha {
        c.weights.alpha = v;
    }
    if let Some(v) = o.beta {
        c.weights.beta = v;
    }
    if let Some(v) = o.dropout {
        c.model.dropout_rate = v;
    }
    if let Some(v) = o.d_shared {
        set_d_shared(&mut c, v)?;
    }
    if let Some(v) = o.head_hidden {
        c.model.head_hidden = v;
    }
    c.model.ablation.no_autoencoder |= o.no_autoencoder;
    c.model.ablation.no_hier_attention |= o.no_hier_attention;
    if let Some(t) = o.single_task {
        c.model.ablation.single_task = match t {
            TaskArg::Topic => SingleTask::Topic,
            TaskArg::Sentiment => SingleTask::Sentiment,
        };
    }
    c.deterministic |= o.deterministic;
    c.model.d_img = header.d_img;
    c.model.d_obj = header.d_obj;
    c.model.d_word = header.d_word;
    c.model.n_topics = header.n_topics;
    c.model.n_sentiments = header.n_sentiments;
    c.validate()?;
    Ok(c)
}

fn set_d_shared(c: &mut TrainConfig, v: usize) -> Result<()> {
    if !v.is_multiple_of(2) {
        return Err(Error::config(format!("d_shared {v} must be even (BLSTM halves)")));
    }
    c.model.d_shared = v;
    c.model.lstm_hidden = v / 2;
    Ok(())
}

type Splits = (Vec<FeatureRecord>, Vec<FeatureRecord>, Vec<FeatureRecord>);

fn split_records(records: &[FeatureRecord], config: &TrainConfig) -> Result<Splits> {
    split(records, config.split, config.seed)
}

fn git_revision() -> Option<String> {
    let out = std::process::Command::new("git").args(["rev-parse", "HEAD"]).output().ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

#[derive(Serialize)]
struct Manifest<'a> {
    program: &'static str,
    version: &'static str,
    git_revision: Option<String>,
    dataset: String,
    split_sizes: [usize; 3],
    parameter_count: usize,
    best_epoch: usize,
    config: &'a TrainConfig,
}

/// Trains on `data` under `config`, writing the artifacts into `out_dir`.
fn train_run(config: &TrainConfig, data: &Path, records: &[FeatureRecord], out_dir: &Path) -> Result<(Checkpoint, Splits)> {
    create_dir(out_dir)?;
    let splits = split_records(records, config)?;
    let (tr, va, te) = &splits;
    log::info!("split sizes: train {}, val {}, test {}", tr.len(), va.len(), te.len());

    let curve_path = out_dir.join("curve.csv");
    let mut curve = fs::File::create(&curve_path).map_err(|e| Error::io(&curve_path, e))?;
    writeln!(curve, "{}", EpochStats::CSV_HEADER).map_err(|e| Error::io(&curve_path, e))?;
    let mut write_err = None;
    let outcome = train(config, tr, va, |s| {
        if let Err(e) = writeln!(curve, "{}", s.csv_row()).and_then(|_| curve.flush()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(Error::io(&curve_path, e));
    }

    let ck = Checkpoint::new(&outcome.best, outcome.best_epoch, Some(config.clone()), Some(outcome.optimizer));
    ck.save(out_dir.join("checkpoint.json"))?;
    write_json(
        &out_dir.join("manifest.json"),
        &Manifest {
            program: "deepmm",
            version: env!("CARGO_PKG_VERSION"),
            git_revision: git_revision(),
            dataset: data.display().to_string(),
            split_sizes: [tr.len(), va.len(), te.len()],
            parameter_count: outcome.best.parameter_count(),
            best_epoch: outcome.best_epoch,
            config,
        },
    )?;
    Ok((ck, splits))
}

pub fn cmd_train(a: &TrainArgs) -> Result<i32> {
    let (header, records) = load_dataset(&a.data)?;
    let config = resolve_train_config(&a.overrides, &header)?;
    let (ck, _) = train_run(&config, &a.data, &records, &a.out_dir)?;
    println!(
        "trained {} epochs; best epoch {}; artifacts in {}",
        config.schedule.total_epochs,
        ck.epoch,
        a.out_dir.display()
    );
    Ok(EXIT_OK)
}

fn report_text(r: &EvalReport) -> String {
    let mut s = String::new();
    for (name, m) in [("topic", &r.topic), ("sentiment", &r.sentiment)] {
        match m {
            Some(m) => s.push_str(&m.to_text(name)),
            None => s.push_str(&format!("{name}: no class with positives\n")),
        }
    }
    s
}

pub fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = ck.to_model()?;
    let (_, records) = load_dataset(&a.data)?;
    let subset = match (a.split, &ck.train_config) {
        (SplitArg::All, _) => records,
        (s, Some(tc)) => {
            let (tr, va, te) = split_records(&records, tc)?;
            match s {
                SplitArg::Train => tr,
                SplitArg::Val => va,
                _ => te,
            }
        }
        (_, None) => {
            return Err(Error::usage(
                "checkpoint carries no training config; only --split all is available",
            ))
        }
    };
    let report = evaluate(&model, &subset, a.threshold)?;
    let text = report_text(&report);
    print!("{text}");
    if let Some(dir) = &a.out_dir {
        create_dir(dir)?;
        write_json(&dir.join("report.json"), &report)?;
        write_text(&dir.join("report.txt"), &text)?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<i32> {
    let scope = match a.scope {
        ScopeArg::Layers => Scope::Layers,
        ScopeArg::Attention => Scope::Attention,
        ScopeArg::Full => Scope::Full,
    };
    let report = run_scope(scope, a.seed, a.corrupt)?;
    for u in &report.units {
        println!(
            "{:<16} {:>6} params  max rel error {:.3e}  worst {}[{}]",
            u.unit, u.report.checked, u.report.max_rel_error, u.report.worst_path, u.report.worst_index
        );
    }
    println!(
        "{}: max rel error {:.3e} (tolerance {:.0e})",
        if report.passed { "PASS" } else { "FAIL" },
        report.max_rel_error,
        report.tolerance
    );
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(if report.passed { EXIT_OK } else { EXIT_CHECK_FAILED })
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<i32> {
    if a.values.len() < 2 {
        return Err(Error::usage("a sweep needs at least two values"));
    }
    let (header, records) = load_dataset(&a.data)?;
    let base = resolve_train_config(&a.overrides, &header)?;
    let mut rows = vec![
        "param,value,best_epoch,test_topic_mAP,test_sentiment_mAP,test_topic_F1C,test_topic_F1O,test_sentiment_F1C,test_sentiment_F1O"
            .to_string(),
    ];
    let name = match a.param {
        SweepParam::Lr => "lr",
        SweepParam::Dropout => "dropout",
        SweepParam::DShared => "d_shared",
        SweepParam::Alpha => "alpha",
    };
    let scratch = tempdir_for(&a.out)?;
    for (i, &v) in a.values.iter().enumerate() {
        let mut c = base.clone();
        match a.param {
            SweepParam::Lr => c.optimizer.lr = v,
            SweepParam::Dropout => c.model.dropout_rate = v,
            SweepParam::DShared => {
                if v.fract() != 0.0 || v < 2.0 {
                    return Err(Error::config(format!("d_shared value {v} is not a positive even integer")));
                }
                set_d_shared(&mut c, v as usize)?;
            }
            SweepParam::Alpha => c.weights.alpha = v,
        }
        c.validate()?;
        log::info!("sweep {name} = {v}");
        let (ck, (_, _, test)) = train_run(&c, &a.data, &records, &scratch.join(format!("run{i}")))?;
        let r = evaluate(&ck.to_model()?, &test, 0.5)?;
        let f = |x: Option<f64>| x.map_or_else(|| "NaN".to_string(), |x| x.to_string());
        let active = |t: crate::model::Task| c.model.task_active(t);
        let topic = r.topic.as_ref().filter(|_| active(crate::model::Task::Topic));
        let senti = r.sentiment.as_ref().filter(|_| active(crate::model::Task::Sentiment));
        rows.push(format!(
            "{name},{v},{},{},{},{},{},{},{}",
            ck.epoch,
            f(topic.map(|m| m.map)),
            f(senti.map(|m| m.map)),
            f(topic.map(|m| m.f1_c)),
            f(topic.map(|m| m.f1_o)),
            f(senti.map(|m| m.f1_c)),
            f(senti.map(|m| m.f1_o)),
        ));
    }
    rows.push(String::new());
    write_text(&a.out, &rows.join("\n"))?;
    println!("wrote {} rows to {}", a.values.len(), a.out.display());
    Ok(EXIT_OK)
}

/// Per-run artifacts go next to the sweep CSV, in `<stem>_runs/`.
fn tempdir_for(out: &Path) -> Result<PathBuf> {
    let stem = out.file_stem().map_or_else(|| "sweep".into(), |s| s.to_string_lossy().into_owned());
    let dir = out.with_file_name(format!("{stem}_runs"));
    create_dir(&dir)?;
    Ok(dir)
}
