//! Command-line front end: `gen-data`, `embed`, `train`, `eval`, `gradcheck`.
//!
//! Exit codes are 0 on success, 1 on a runtime failure and 2 on a usage
//! error. Every subcommand accepts `--config FILE`, a flat file of
//! `key = value` lines (`#` starts a comment, `_` in keys reads as `-`).
//! File entries are spliced in ahead of the command line, so flags win.
//! Keys that are not flags of the chosen subcommand are rejected.

use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::attention::PosMode;
use crate::data::{
    generate, load_shot_bank, load_tokens, write_tokens, ClassLabel, DatasetManifest, SyntheticConfig, TokensMeta,
};
use crate::embedding::{
    EmbeddingProvider, FeatureToken, HttpProvider, MockProvider, PromptSpec, RetryPolicy, Shots, TokenCache,
    DEFAULT_HTTP_MODEL, DEFAULT_MAX_IN_FLIGHT,
};
use crate::error::Error;
use crate::model::{full_model_gradcheck, load_model, load_model_with_meta, save_model_with_meta, Model, ModelConfig};
use crate::pipeline::{embed_dataset, task_splits, EmbedRequest};
use crate::report::{Report, ReportEntry};
use crate::task::Task;
use crate::tensor::GradcheckOptions;
use crate::train::{evaluate, train_with, Hyperparams};

/// Largest relative error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;

/// Cache file used by `embed` when `--cache` is omitted, relative to the dataset.
pub const DEFAULT_CACHE_FILE: &str = "token_cache.tsv";

#[derive(Debug, Parser)]
#[command(name = "mmfusion", version, about = "Multi-modal fusion classifier toolkit")]
#[command(args_override_self = true)]
struct Cli {
    /// File of `key = value` defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic four-class cohort.
    GenData(GenDataArgs),
    /// Turn every subject's record into a feature token.
    Embed(EmbedArgs),
    /// Train a classifier on the train split.
    Train(TrainArgs),
    /// Score a trained model on one split.
    Eval(EvalArgs),
    /// Finite-difference check of the full model's gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    per_class: usize,
    #[arg(long, default_value_t = 32)]
    image_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Class separation in [0, 1].
    #[arg(long, default_value_t = 0.8)]
    signal: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProviderKind {
    Mock,
    Http,
}

fn parse_shots(s: &str) -> Result<Shots, String> {
    let n: u8 = s.parse().map_err(|_| format!("{s:?} is not a shot count"))?;
    Shots::try_from(n).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = ProviderKind::Mock)]
    provider: ProviderKind,
    /// Worked examples per prompt: 0, 1 or 5.
    #[arg(long, value_parser = parse_shots, default_value = "5")]
    shots: Shots,
    /// Token cache; defaults to token_cache.tsv inside the dataset.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Chat-completions endpoint for the http provider.
    #[arg(long)]
    url: Option<String>,
    #[arg(long, default_value = DEFAULT_HTTP_MODEL)]
    http_model: String,
    /// Checkpoint whose pooled image features are quoted in prompts.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_IN_FLIGHT)]
    max_in_flight: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    task: Task,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long, default_value = "sum")]
    pos_mode: PosMode,
    #[arg(long, default_value_t = 32)]
    d_model: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    /// Stem patch size; must divide the image size.
    #[arg(long, default_value_t = 4)]
    patch: usize,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    task: Task,
    /// Where to write the JSON report.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
    split: String,
    /// Overrides the split seed stored with the model.
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, hide = true, value_name = "OP")]
    corrupt_backward: Option<String>,
}

/// Why a command stopped.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args` (program name first), runs the subcommand and returns the exit code.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString>,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match splice_config(args) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Embed(a) => embed(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Parses a config file body into `(flag, value)` pairs in file order.
pub fn parse_config(text: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key = value", n + 1))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(format!("config line {}: empty key", n + 1));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Finds `--config`, reads it and inserts its pairs right after the subcommand name.
fn splice_config(args: Vec<OsString>) -> std::result::Result<Vec<OsString>, String> {
    let mut config: Option<PathBuf> = None;
    let mut sub_at: Option<usize> = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if a == "--config" {
            config = args.get(i + 1).map(PathBuf::from);
            i += 2;
            continue;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        } else if sub_at.is_none() && !a.starts_with('-') {
            sub_at = Some(i);
        }
        i += 1;
    }
    let (Some(path), Some(at)) = (config, sub_at) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let pairs = parse_config(&text)?;
    let sub_name = args[at].to_string_lossy().into_owned();
    let cmd = Cli::command();
    let Some(sub) = cmd.find_subcommand(&sub_name) else {
        return Ok(args);
    };
    let known: Vec<String> = sub
        .get_arguments()
        .filter(|a| !a.is_hide_set() || a.get_id() == "corrupt_backward")
        .filter_map(|a| a.get_long().map(str::to_owned))
        .filter(|l| l != "config")
        .collect();
    let mut injected = Vec::with_capacity(2 * pairs.len());
    for (k, v) in pairs {
        if !known.contains(&k) {
            return Err(format!("unknown key {k:?} in {} for {sub_name}", path.display()));
        }
        injected.push(OsString::from(format!("--{k}")));
        injected.push(OsString::from(v));
    }
    let mut out = args;
    out.splice(at + 1..at + 1, injected);
    Ok(out)
}

fn gen_data(a: GenDataArgs) -> CmdResult {
    let cfg = SyntheticConfig {
        per_class: a.per_class,
        image_size: a.image_size,
        seed: a.seed,
        signal_strength: a.signal,
        noise_sigma: a.noise,
    };
    cfg.validate().map_err(usage)?;
    let manifest = generate(&cfg, &a.out)?;
    println!("wrote {} subjects to {}", manifest.len(), a.out.display());
    for (label, n) in ClassLabel::ALL.iter().zip(manifest.class_counts()) {
        println!("  {label:<5} {n}");
    }
    Ok(())
}

fn embed(a: EmbedArgs) -> CmdResult {
    if a.max_in_flight == 0 {
        return Err(Failure::Usage("--max-in-flight must be at least 1".into()));
    }
    let provider: Box<dyn EmbeddingProvider> = match a.provider {
        ProviderKind::Mock => Box::new(MockProvider),
        ProviderKind::Http => {
            let url = a
                .url
                .clone()
                .ok_or_else(|| Failure::Usage("--provider http requires --url".into()))?;
            Box::new(HttpProvider::from_env(url, a.http_model.clone()).map_err(usage)?)
        }
    };
    let manifest = DatasetManifest::load(&a.data)?;
    let summary_model = a.model.as_deref().map(load_model).transpose()?;
    let cache_path = a.cache.clone().unwrap_or_else(|| a.data.join(DEFAULT_CACHE_FILE));
    let cache = TokenCache::open(&cache_path)?;
    let spec = PromptSpec {
        include_image_summary: summary_model.is_some(),
        ..PromptSpec::with_shots(a.shots)
    };
    let outcome = embed_dataset(
        &manifest,
        EmbedRequest {
            spec,
            shot_bank: load_shot_bank(&a.data)?,
            provider: provider.as_ref(),
            cache: &cache,
            summary_model: summary_model.as_ref(),
            retry: RetryPolicy::default(),
            max_in_flight: a.max_in_flight,
        },
    )?;
    println!(
        "provider calls: {}, cache hits: {}",
        outcome.provider_calls, outcome.cache_hits
    );
    if !outcome.failed.is_empty() {
        for (id, err) in &outcome.failed {
            eprintln!("failed {id}: {err}");
        }
        let ids: Vec<&str> = outcome.failed.iter().map(|(id, _)| id.as_str()).collect();
        return Err(Failure::Runtime(Error::Provider {
            attempts: RetryPolicy::default().attempts,
            cause: format!("{} subjects failed: {}", ids.len(), ids.join(", ")),
        }));
    }
    let meta = TokensMeta {
        provider: provider.name().to_string(),
        shots: a.shots.into(),
        image_summary: summary_model.is_some(),
    };
    write_tokens(&a.data, &outcome.tokens, &meta)?;
    println!("wrote {} tokens to {}", outcome.tokens.len(), a.data.display());
    Ok(())
}

fn first_missing(manifest: &DatasetManifest, tokens: &HashMap<String, FeatureToken>) -> Option<String> {
    manifest
        .entries
        .iter()
        .find(|e| !tokens.contains_key(&e.id))
        .map(|e| e.id.clone())
}

fn image_size(manifest: &DatasetManifest) -> crate::Result<usize> {
    let first = manifest
        .entries
        .first()
        .ok_or_else(|| Error::Validation("dataset has no subjects".into()))?;
    let (mri, _) = manifest.load_images(first)?;
    Ok(*mri.shape().last().unwrap_or(&0))
}

fn load_embedded(
    data: &Path,
) -> std::result::Result<(DatasetManifest, HashMap<String, FeatureToken>, TokensMeta), Failure> {
    let manifest = DatasetManifest::load(data)?;
    let (tokens, meta) = load_tokens(data)?;
    if let Some(id) = first_missing(&manifest, &tokens) {
        return Err(Failure::Runtime(Error::Validation(format!(
            "missing embedding for subject {id}"
        ))));
    }
    Ok((manifest, tokens, meta))
}

fn train(a: TrainArgs) -> CmdResult {
    let hyper = Hyperparams {
        epochs: a.epochs,
        lr: a.lr,
        batch: a.batch,
        seed: a.seed,
    };
    hyper.validate().map_err(usage)?;
    let (manifest, tokens, meta) = load_embedded(&a.data)?;
    let mut config = ModelConfig::new(a.task.num_classes());
    config.d_model = a.d_model;
    config.heads = a.heads;
    config.encoder.stem_patch = a.patch;
    config.encoder.image_size = image_size(&manifest)?;
    let config = config.with_pos_mode(a.pos_mode);
    config.validate().map_err(usage)?;

    let splits = task_splits(&manifest, &tokens, a.task, a.split_seed)?;
    println!(
        "{}: {} train / {} val / {} test subjects",
        a.task,
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    let mut model = Model::init(config, a.seed)?;
    train_with(&mut model, &splits.train, a.task, &hyper, &mut |log| {
        println!(
            "epoch {:>3}  loss {:.4}  train acc {:.2}%",
            log.epoch,
            log.loss,
            100.0 * log.train_acc
        );
    })?;
    if !splits.val.is_empty() {
        let m = evaluate(&model, &splits.val, a.task)?;
        println!("val acc {:.2}%", 100.0 * m.acc);
    }
    let file_meta = json!({
        "task": a.task,
        "split_seed": a.split_seed,
        "provider": meta.provider,
        "shots": meta.shots,
        "image_summary": meta.image_summary,
        "hyper": hyper,
    });
    save_model_with_meta(&model, &file_meta, &a.out)?;
    println!("saved {}", a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> CmdResult {
    let (model, meta) = load_model_with_meta(&a.model)?;
    if model.config.num_classes != a.task.num_classes() {
        return Err(Failure::Runtime(Error::Task(format!(
            "model has {} classes but task {} needs {}",
            model.config.num_classes,
            a.task,
            a.task.num_classes()
        ))));
    }
    let (manifest, tokens, tmeta) = load_embedded(&a.data)?;
    let split_seed = a
        .split_seed
        .or_else(|| meta.get("split_seed").and_then(|v| v.as_u64()))
        .unwrap_or(0);
    let splits = task_splits(&manifest, &tokens, a.task, split_seed)?;
    let samples = splits.get(&a.split).expect("split name checked by the parser");
    let metrics = evaluate(&model, samples, a.task)?;
    let report = Report::new(vec![ReportEntry {
        task: a.task,
        provider: tmeta.provider,
        shots: tmeta.shots,
        metrics,
    }]);
    println!("{} split, {} subjects", a.split, samples.len());
    print!("{}", report.render_text());
    if let Some(path) = &a.json {
        let text = serde_json::to_string_pretty(&report.to_json()).map_err(Error::from)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let opts = GradcheckOptions {
        seed: a.seed,
        corrupt_op: a.corrupt_backward,
        ..Default::default()
    };
    let started = std::time::Instant::now();
    let report = full_model_gradcheck(a.seed, &opts).map_err(|e| match e {
        Error::Config(_) => usage(e),
        other => Failure::Runtime(other),
    })?;
    let worst = report
        .worst
        .as_ref()
        .map_or_else(|| "-".to_string(), |(name, i)| format!("{name}[{i}]"));
    println!(
        "checked {} coordinates in {:.1}s",
        report.coordinates_checked,
        started.elapsed().as_secs_f64()
    );
    println!(
        "max relative error {:.3e} at {worst} (analytic {:.6e}, numeric {:.6e})",
        report.max_rel_error, report.analytic_at_worst, report.numeric_at_worst
    );
    if report.max_rel_error < GRADCHECK_TOLERANCE {
        println!("ok");
        Ok(())
    } else {
        Err(Failure::Runtime(Error::Evaluation(format!(
            "gradient mismatch {:.3e} exceeds {GRADCHECK_TOLERANCE:e} at {worst}",
            report.max_rel_error
        ))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_lines() {
        let pairs = parse_config("# defaults\nper_class = 10\n\nseed=3 # trailing\n").unwrap();
        assert_eq!(
            pairs,
            vec![
                ("per-class".to_string(), "10".to_string()),
                ("seed".to_string(), "3".to_string())
            ]
        );
        assert!(parse_config("just words").is_err());
    }

    #[test]
    fn config_is_spliced_before_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.conf");
        std::fs::write(&cfg, "seed = 3\n").unwrap();
        let args: Vec<OsString> = [
            "mmfusion",
            "--config",
            cfg.to_str().unwrap(),
            "gradcheck",
            "--seed",
            "5",
        ]
        .iter()
        .map(OsString::from)
        .collect();
        let spliced = splice_config(args).unwrap();
        let cli = Cli::try_parse_from(spliced).unwrap();
        match cli.command {
            Command::Gradcheck(g) => assert_eq!(g.seed, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_config_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.conf");
        std::fs::write(&cfg, "sede = 3\n").unwrap();
        let code = run(["mmfusion", "gradcheck", "--config", cfg.to_str().unwrap()]);
        assert_eq!(code, 2);
    }

    #[test]
    fn shots_domain() {
        assert!(parse_shots("5").is_ok());
        assert!(parse_shots("7").is_err());
        assert!(parse_shots("x").is_err());
    }
}
