use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use log::{debug, warn};

use crate::embedding::cache::{cache_key, TokenCache};
use crate::embedding::prompt::{build_prompt, PromptSpec, ShotExample};
use crate::embedding::provider::EmbeddingProvider;
use crate::embedding::record::SubjectRecord;
use crate::embedding::token::{parse_token, FeatureToken};
use crate::error::{Error, Result};

/// Attempts per request and the backoff schedule between them.
///
/// The wait before retry `i` (1-based) is `base_delay * 2^(i-1)`, so the
/// default policy sleeps 0.5 s then 1 s; a fourth attempt would wait 2 s.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: usize,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(attempts: usize) -> Self {
        RetryPolicy {
            attempts,
            base_delay: Duration::ZERO,
        }
    }

    pub fn delay_before_retry(&self, retry: usize) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry.saturating_sub(1) as u32)
    }
}

/// Default bound on concurrent provider requests.
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

/// Embeds records through a provider, backed by a cache.
pub struct Embedder<'a> {
    provider: &'a dyn EmbeddingProvider,
    cache: &'a TokenCache,
    spec: PromptSpec,
    shot_bank: Vec<ShotExample>,
    retry: RetryPolicy,
    provider_calls: AtomicUsize,
    cache_hits: AtomicUsize,
}

impl<'a> Embedder<'a> {
    pub fn new(
        provider: &'a dyn EmbeddingProvider,
        cache: &'a TokenCache,
        spec: PromptSpec,
        shot_bank: Vec<ShotExample>,
    ) -> Self {
        Embedder {
            provider,
            cache,
            spec,
            shot_bank,
            retry: RetryPolicy::default(),
            provider_calls: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn spec(&self) -> &PromptSpec {
        &self.spec
    }

    pub fn provider_calls(&self) -> usize {
        self.provider_calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> usize {
        self.cache_hits.load(Ordering::SeqCst)
    }

    pub fn prompt_for(&self, record: &SubjectRecord, image_summary: Option<&[f64]>) -> Result<String> {
        build_prompt(record, image_summary, &self.spec, &self.shot_bank)
    }

    pub fn embed(&self, record: &SubjectRecord, image_summary: Option<&[f64]>) -> Result<FeatureToken> {
        let prompt = self.prompt_for(record, image_summary)?;
        let key = cache_key(&prompt, self.provider.name());
        if let Some(hit) = self.cache.get(&key) {
            self.cache_hits.fetch_add(1, Ordering::SeqCst);
            return Ok(hit);
        }
        let attempts = self.retry.attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                thread::sleep(self.retry.delay_before_retry(attempt - 1));
            }
            self.provider_calls.fetch_add(1, Ordering::SeqCst);
            let outcome = self.provider.complete(&prompt).and_then(|text| parse_token(&text));
            match outcome {
                Ok(token) => {
                    self.cache.put(&key, &token)?;
                    debug!("subject {}: embedded on attempt {attempt}", record.id);
                    return Ok(token);
                }
                Err(e) => {
                    warn!("subject {}: attempt {attempt}/{attempts} failed: {e}", record.id);
                    last = e.to_string();
                }
            }
        }
        Err(Error::Provider { attempts, cause: last })
    }

    /// Embeds every item with at most `max_in_flight` concurrent requests.
    /// Results are returned in input order.
    pub fn embed_all(
        &self,
        items: &[(SubjectRecord, Option<Vec<f64>>)],
        max_in_flight: usize,
    ) -> Vec<Result<FeatureToken>> {
        let workers = max_in_flight.clamp(1, items.len().max(1));
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<FeatureToken>>>> = items.iter().map(|_| Mutex::new(None)).collect();
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some((record, summary)) = items.get(i) else { break };
                    let r = self.embed(record, summary.as_deref());
                    *slots[i].lock().expect("slot lock") = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("slot lock").expect("every slot filled"))
            .collect()
    }
}

/// One-shot form of [`Embedder::embed`].
pub fn embed(
    record: &SubjectRecord,
    image_summary: Option<&[f64]>,
    spec: &PromptSpec,
    shot_bank: &[ShotExample],
    provider: &dyn EmbeddingProvider,
    cache: &TokenCache,
    retry: RetryPolicy,
) -> Result<FeatureToken> {
    Embedder::new(provider, cache, spec.clone(), shot_bank.to_vec())
        .with_retry(retry)
        .embed(record, image_summary)
}
