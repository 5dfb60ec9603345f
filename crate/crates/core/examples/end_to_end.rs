//! Synthetic cohort -> mock 5-shot tokens -> training -> validation metrics.
//!
//! cargo run --release --example end_to_end -- [task] [epochs] [lr] [batch]

use std::collections::HashMap;
use std::time::Instant;

use mmfusion::data::{generate, load_shot_bank, SyntheticConfig};
use mmfusion::embedding::{MockProvider, PromptSpec, RetryPolicy, Shots, TokenCache, DEFAULT_MAX_IN_FLIGHT};
use mmfusion::model::{Model, ModelConfig};
use mmfusion::pipeline::{embed_dataset, task_splits, EmbedRequest};
use mmfusion::report::{Report, ReportEntry};
use mmfusion::task::Task;
use mmfusion::train::{evaluate, train, Hyperparams};

fn main() -> mmfusion::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let task: Task = args.first().map(String::as_str).unwrap_or("ad-nc").parse()?;
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let lr = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let batch = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(8);

    let dir = tempfile::tempdir().map_err(|e| mmfusion::Error::Storage(e.to_string()))?;
    let cfg = SyntheticConfig {
        per_class: 50,
        signal_strength: 0.8,
        seed: 7,
        ..Default::default()
    };
    let manifest = generate(&cfg, dir.path())?;
    let cache = TokenCache::in_memory();
    let outcome = embed_dataset(
        &manifest,
        EmbedRequest {
            spec: PromptSpec::with_shots(Shots::FIVE),
            shot_bank: load_shot_bank(dir.path())?,
            provider: &MockProvider,
            cache: &cache,
            summary_model: None,
            retry: RetryPolicy::default(),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        },
    )?;
    let tokens: HashMap<_, _> = outcome.tokens.into_iter().collect();
    let splits = task_splits(&manifest, &tokens, task, cfg.seed)?;
    println!(
        "{task}: {} train / {} val / {} test subjects",
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );

    let mut model = Model::init(ModelConfig::new(task.num_classes()), cfg.seed)?;
    let hyper = Hyperparams {
        epochs,
        lr,
        batch,
        seed: cfg.seed,
    };
    let started = Instant::now();
    train(&mut model, &splits.train, task, &hyper)?;
    println!("trained in {:.1}s", started.elapsed().as_secs_f64());

    let metrics = evaluate(&model, &splits.val, task)?;
    let report = Report::new(vec![ReportEntry {
        task,
        provider: "mock".into(),
        shots: 5,
        metrics,
    }]);
    print!("{}", report.render_text());
    Ok(())
}
