//! Plain SGD training and evaluation for one task.

use std::collections::HashMap;
use std::thread;

use log::info;
use serde::{Deserialize, Serialize};

use crate::data::DatasetManifest;
use crate::embedding::FeatureToken;
use crate::error::{Error, Result};
use crate::metrics::{confusion_matrix, roc_auc, Metrics};
use crate::model::{forward, predict, Model};
use crate::params::{bind, bind_frozen, named, ParamTree};
use crate::task::Task;
use crate::tensor::{softmax_rows_eager, Graph, Rng, Tensor};

/// One subject ready for the model; `label` is the task class.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub mri: Tensor,
    pub pet: Tensor,
    pub token: FeatureToken,
    pub label: usize,
}

/// Loads the subjects of `manifest` that `task` uses. Every one of them needs a token.
pub fn prepare_samples(
    manifest: &DatasetManifest,
    tokens: &HashMap<String, FeatureToken>,
    task: Task,
) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for e in &manifest.entries {
        let Some(label) = task.class_of(e.label) else { continue };
        let token = tokens
            .get(&e.id)
            .ok_or_else(|| Error::Validation(format!("missing embedding for subject {}", e.id)))?
            .clone();
        let (mri, pet) = manifest.load_images(e)?;
        out.push(Sample {
            id: e.id.clone(),
            mri,
            pet,
            token,
            label,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub epochs: usize,
    /// Fixed step size; zero is allowed and leaves parameters untouched.
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            epochs: 30,
            lr: 0.05,
            batch: 8,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} is invalid", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's forward passes.
    pub loss: f64,
    /// Accuracy of the same forward passes, taken before each batch update.
    pub train_acc: f64,
}

fn check_task(model: &Model, task: Task) -> Result<()> {
    if model.config.num_classes != task.num_classes() {
        return Err(Error::Task(format!(
            "model has {} classes but task {task} needs {}",
            model.config.num_classes,
            task.num_classes()
        )));
    }
    Ok(())
}

struct SampleGrad {
    loss: f64,
    correct: bool,
    grads: Vec<Tensor>,
}

fn sample_gradient(model: &Model, s: &Sample) -> Result<SampleGrad> {
    let mut g = Graph::<f32>::new();
    let p = bind(&mut g, &model.params);
    let out = forward(
        &mut g,
        &s.mri,
        &s.pet,
        &s.token.to_tensor(),
        &p,
        &model.config,
        &model.pos_table,
    )?;
    let correct = predict(g.value(out.logits).data()) == s.label;
    let loss = g.cross_entropy(out.logits, s.label)?;
    let lv = g.value(loss).item() as f64;
    let grads = g.backward(loss)?;
    let like = named(&model.params);
    let grads = named(&p)
        .into_iter()
        .zip(like)
        .map(|((_, v), (_, t))| grads.get_or_zeros(*v, t))
        .collect();
    Ok(SampleGrad {
        loss: lv,
        correct,
        grads,
    })
}

fn workers() -> usize {
    thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Applies `f` to every item on a few scoped threads; results keep input order.
fn par_map<I: Sync, O: Send>(items: &[I], f: impl Fn(&I) -> O + Sync) -> Vec<O> {
    let n = workers().min(items.len()).max(1);
    let chunk = items.len().div_ceil(n).max(1);
    thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// Minimizes mean cross-entropy with fixed-step SGD.
///
/// Each epoch visits the samples in an order shuffled by
/// `Rng::derive(seed, epoch)`; each batch applies the mean gradient of its
/// samples. Per-sample gradients are computed against the same frozen
/// parameters and summed in sample order, so results do not depend on the
/// number of threads.
pub fn train(model: &mut Model, samples: &[Sample], task: Task, hyper: &Hyperparams) -> Result<Vec<EpochLog>> {
    train_with(model, samples, task, hyper, &mut |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    model: &mut Model,
    samples: &[Sample],
    task: Task,
    hyper: &Hyperparams,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    hyper.validate()?;
    check_task(model, task)?;
    let mut counts = vec![0usize; task.num_classes()];
    for s in samples {
        *counts
            .get_mut(s.label)
            .ok_or_else(|| Error::Task(format!("sample {} has class {} outside task {task}", s.id, s.label)))? += 1;
    }
    if let Some(k) = counts.iter().position(|&c| c < 2) {
        return Err(Error::Task(format!(
            "task {task} class {} has {} training subject(s); at least 2 are needed",
            task.class_names()[k],
            counts[k]
        )));
    }

    let mut log = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        Rng::derive(hyper.seed, epoch as u64).shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(hyper.batch) {
            let items: Vec<&Sample> = batch.iter().map(|&i| &samples[i]).collect();
            let results = par_map(&items, |s| sample_gradient(model, s));
            let mut total: Option<Vec<Tensor>> = None;
            for r in results {
                let r = r?;
                if !r.loss.is_finite() {
                    return Err(Error::Divergence(format!("non-finite loss in epoch {}", epoch + 1)));
                }
                loss_sum += r.loss;
                correct += r.correct as usize;
                match total.as_mut() {
                    None => total = Some(r.grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&r.grads) {
                            a.axpy(1.0, g);
                        }
                    }
                }
            }
            let total = total.expect("non-empty batch");
            let step = -(hyper.lr / batch.len() as f64) as f32;
            let mut i = 0;
            model.params = model.params.map_params(&mut |t| {
                let mut t = t.clone();
                t.axpy(step, &total[i]);
                i += 1;
                t
            });
        }
        let entry = EpochLog {
            epoch: epoch + 1,
            loss: loss_sum / samples.len() as f64,
            train_acc: correct as f64 / samples.len() as f64,
        };
        info!(
            "epoch {:>3}  loss {:.4}  train acc {:.3}",
            entry.epoch, entry.loss, entry.train_acc
        );
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(log)
}

/// Softmax probabilities for every sample, in input order.
pub fn predict_proba(model: &Model, samples: &[Sample]) -> Result<Vec<Vec<f64>>> {
    par_map(samples, |s| {
        let mut g = Graph::<f32>::new();
        let p = bind_frozen(&mut g, &model.params);
        let out = forward(
            &mut g,
            &s.mri,
            &s.pet,
            &s.token.to_tensor(),
            &p,
            &model.config,
            &model.pos_table,
        )?;
        let probs = softmax_rows_eager(&g.value(out.logits).cast::<f64>());
        Ok(probs.into_data())
    })
    .into_iter()
    .collect()
}

/// Mean cross-entropy of the model over `samples`.
pub fn mean_loss(model: &Model, samples: &[Sample]) -> Result<f64> {
    let probs = predict_proba(model, samples)?;
    Ok(probs.iter().zip(samples).map(|(p, s)| -p[s.label].ln()).sum::<f64>() / samples.len().max(1) as f64)
}

pub fn evaluate(model: &Model, samples: &[Sample], task: Task) -> Result<Metrics> {
    check_task(model, task)?;
    if samples.is_empty() {
        return Err(Error::Evaluation(format!("no subjects to evaluate for task {task}")));
    }
    let probs = predict_proba(model, samples)?;
    let preds: Vec<usize> = probs.iter().map(|p| predict(p)).collect();
    let confusion = confusion_matrix(
        samples.iter().zip(&preds).map(|(s, &p)| (s.label, p)),
        task.num_classes(),
    );
    let auc = if task.is_binary() {
        let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
        let labels: Vec<u8> = samples.iter().map(|s| s.label as u8).collect();
        Some(roc_auc(&scores, &labels)?)
    } else {
        None
    };
    Metrics::from_confusion(confusion, auc)
}
