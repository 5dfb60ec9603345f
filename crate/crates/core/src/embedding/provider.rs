use std::time::Duration;

use serde_json::{json, Value};

use crate::embedding::token::TOKEN_LEN;
use crate::error::{Error, Result};
use crate::tensor::rng::{fnv1a64, Rng};

/// Environment variable holding the bearer token for [`HttpProvider`].
pub const API_KEY_ENV: &str = "MM_LLM_API_KEY";

/// Something that answers a prompt with free text.
pub trait EmbeddingProvider: Send + Sync {
    /// Stable name, part of the cache key.
    fn name(&self) -> &str;

    fn complete(&self, prompt: &str) -> Result<String>;
}

/// Offline stand-in for a chat model.
///
/// Seeds [`Rng`] with the FNV-1a 64-bit hash of the prompt bytes, draws 64
/// values uniform in `[-1, 1]`, scales them to unit L2 norm and answers with
/// the bracketed list.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockProvider;

impl MockProvider {
    pub fn token_values(prompt: &str) -> Vec<f32> {
        let mut rng = Rng::new(fnv1a64(prompt.as_bytes()));
        let raw: Vec<f64> = (0..TOKEN_LEN).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        raw.iter().map(|v| (v / norm) as f32).collect()
    }
}

impl EmbeddingProvider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        let parts: Vec<String> = Self::token_values(prompt).iter().map(|v| v.to_string()).collect();
        Ok(format!("[{}]", parts.join(", ")))
    }
}

/// Chat-completions style HTTP provider.
///
/// Sends `{"model": ..., "messages": [{"role": "user", "content": prompt}]}`
/// with `Authorization: Bearer <key>` and reads `choices[0].message.content`.
pub struct HttpProvider {
    url: String,
    model: String,
    api_key: String,
    name: String,
    agent: ureq::Agent,
}

pub const HTTP_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_HTTP_MODEL: &str = "gpt-4";

impl HttpProvider {
    pub fn new(url: impl Into<String>, model: impl Into<String>, api_key: impl Into<String>) -> Self {
        let model = model.into();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(HTTP_TIMEOUT))
            .build()
            .into();
        HttpProvider {
            url: url.into(),
            name: format!("http:{model}"),
            model,
            api_key: api_key.into(),
            agent,
        }
    }

    /// Reads the key from [`API_KEY_ENV`]; fails before any network traffic if unset.
    pub fn from_env(url: impl Into<String>, model: impl Into<String>) -> Result<Self> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| Error::Config(format!("{API_KEY_ENV} is not set")))?;
        Ok(Self::new(url, model, key))
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
        })
    }
}

/// Pulls `choices[0].message.content` out of a response document.
pub fn extract_content(doc: &Value) -> Result<String> {
    doc.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| Error::Parse("response lacks choices[0].message.content".into()))
}

impl EmbeddingProvider for HttpProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        let transport = |e: ureq::Error| Error::Provider {
            attempts: 1,
            cause: e.to_string(),
        };
        let doc: Value = self
            .agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(self.request_body(prompt))
            .map_err(transport)?
            .into_body()
            .read_json()
            .map_err(transport)?;
        extract_content(&doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::token::parse_token;

    #[test]
    fn mock_is_deterministic_unit_norm() {
        let a = MockProvider.complete("hello").unwrap();
        let b = MockProvider.complete("hello").unwrap();
        assert_eq!(a, b);
        let t = parse_token(&a).unwrap();
        assert!((t.l2_norm() - 1.0).abs() < 1e-6);
        assert_eq!(t.values(), MockProvider::token_values("hello").as_slice());
    }

    #[test]
    fn one_character_changes_decorrelate() {
        let mut total = 0.0;
        for i in 0..100 {
            let base = format!("prompt number {i}");
            let other = format!("prompt number {i}!");
            let a = MockProvider::token_values(&base);
            let b = MockProvider::token_values(&other);
            let cos: f64 = a.iter().zip(&b).map(|(&x, &y)| x as f64 * y as f64).sum();
            total += cos;
        }
        assert!((total / 100.0).abs() < 0.5);
    }

    #[test]
    fn content_extraction() {
        let doc = json!({"choices": [{"message": {"role": "assistant", "content": "[1]"}}]});
        assert_eq!(extract_content(&doc).unwrap(), "[1]");
        assert!(extract_content(&json!({"choices": []})).is_err());
    }

    #[test]
    fn request_body_shape() {
        let p = HttpProvider::new("http://localhost:1/v1", "gpt-4", "k");
        let body = p.request_body("hi");
        assert_eq!(body["model"], "gpt-4");
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "hi");
        assert_eq!(p.name(), "http:gpt-4");
    }
}
