//! Synthetic cohorts, the tensor file format and stratified splits.

pub mod split;
pub mod synth;
pub mod tensor_io;
pub mod tokens;

pub use split::{apportion, split, Splits, DEFAULT_FRACTIONS};
pub use synth::{
    generate, load_shot_bank, shot_bank, synth_subject, ClassLabel, DatasetManifest, ManifestEntry, SyntheticConfig,
};
pub use tensor_io::{decode_tensor, encode_tensor, read_tensor, write_tensor};
pub use tokens::{load_tokens, write_tokens, TokensMeta, TOKENS_FILE, TOKENS_META_FILE};
