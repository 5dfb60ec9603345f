//! Glue between the dataset on disk, the embedder and the trainer.

use std::collections::HashMap;

use crate::data::{split, DatasetManifest, DEFAULT_FRACTIONS};
use crate::embedding::{Embedder, EmbeddingProvider, FeatureToken, PromptSpec, RetryPolicy, ShotExample, TokenCache};
use crate::error::Result;
use crate::fusion::IMAGE_SUMMARY_LEN;
use crate::model::Model;
use crate::task::Task;
use crate::train::{prepare_samples, Sample};

#[derive(Debug, Default)]
pub struct EmbedOutcome {
    /// Successful tokens in manifest order.
    pub tokens: Vec<(String, FeatureToken)>,
    /// Subject id and error text for every failure.
    pub failed: Vec<(String, String)>,
    pub provider_calls: usize,
    pub cache_hits: usize,
}

pub struct EmbedRequest<'a> {
    pub spec: PromptSpec,
    pub shot_bank: Vec<ShotExample>,
    pub provider: &'a dyn EmbeddingProvider,
    pub cache: &'a TokenCache,
    /// Source of pooled image features for prompts; `None` gives record-only prompts.
    pub summary_model: Option<&'a Model>,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
}

/// Embeds every subject of `manifest`. Failures are collected, not fatal;
/// successful tokens are already in the cache when this returns.
pub fn embed_dataset(manifest: &DatasetManifest, req: EmbedRequest<'_>) -> Result<EmbedOutcome> {
    let mut items = Vec::with_capacity(manifest.len());
    for e in &manifest.entries {
        let summary = match req.summary_model {
            Some(model) => {
                let (mri, pet) = manifest.load_images(e)?;
                Some(model.image_summary(&mri, &pet, IMAGE_SUMMARY_LEN)?)
            }
            None => None,
        };
        items.push((e.record.clone(), summary));
    }
    let embedder = Embedder::new(req.provider, req.cache, req.spec, req.shot_bank).with_retry(req.retry);
    let results = embedder.embed_all(&items, req.max_in_flight);
    let mut out = EmbedOutcome::default();
    for (e, r) in manifest.entries.iter().zip(results) {
        match r {
            Ok(t) => out.tokens.push((e.id.clone(), t)),
            Err(err) => out.failed.push((e.id.clone(), err.to_string())),
        }
    }
    out.provider_calls = embedder.provider_calls();
    out.cache_hits = embedder.cache_hits();
    Ok(out)
}

/// Task-filtered samples for the stratified train/val/test split of the full cohort.
#[derive(Debug, Clone)]
pub struct TaskSplits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl TaskSplits {
    pub fn get(&self, name: &str) -> Option<&[Sample]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Splits the whole cohort (stratified over all four labels) and keeps the subjects `task` uses,
/// so every task sees the same partition.
pub fn task_splits(
    manifest: &DatasetManifest,
    tokens: &HashMap<String, FeatureToken>,
    task: Task,
    split_seed: u64,
) -> Result<TaskSplits> {
    let s = split(manifest, DEFAULT_FRACTIONS, split_seed)?;
    Ok(TaskSplits {
        train: prepare_samples(&s.train, tokens, task)?,
        val: prepare_samples(&s.val, tokens, task)?,
        test: prepare_samples(&s.test, tokens, task)?,
    })
}
