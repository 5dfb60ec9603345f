//! Non-image embedding: subject records are rendered into grouped prompts,
//! answered by a provider, and parsed into 64-value feature tokens.

mod cache;
mod embed;
mod prompt;
mod provider;
mod record;
mod token;

pub use cache::{cache_key, TokenCache};
pub use embed::{embed, Embedder, RetryPolicy, DEFAULT_MAX_IN_FLIGHT};
pub use prompt::{
    build_prompt, FieldGroup, PromptSpec, ShotExample, Shots, EXAMPLE_HEADING, PROMPT_HEADER, SUBJECT_HEADING,
};
pub use provider::{
    extract_content, EmbeddingProvider, HttpProvider, MockProvider, API_KEY_ENV, DEFAULT_HTTP_MODEL, HTTP_TIMEOUT,
};
pub use record::{Sex, SubjectRecord, ADAS_COG_RANGE, AGE_RANGE, EDUCATION_RANGE, MMSE_RANGE};
pub use token::{baseline_embed_sn, parse_token, FeatureToken, SN_CSF_RANGE, TOKEN_LEN};
