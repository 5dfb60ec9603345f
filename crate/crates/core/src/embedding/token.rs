use std::fmt;

use crate::embedding::record::{SubjectRecord, ADAS_COG_RANGE, AGE_RANGE, EDUCATION_RANGE, MMSE_RANGE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TOKEN_LEN: usize = 64;
pub const MAX_TOKEN_NORM: f64 = 1000.0;

/// 64-value embedding of a subject's non-image data.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureToken {
    values: Vec<f32>,
}

impl FeatureToken {
    /// Checks length, finiteness and `0 < ||v|| <= 1000`.
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() != TOKEN_LEN {
            return Err(Error::dim(format!(
                "feature token needs {TOKEN_LEN} values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("feature token value {i} is not finite")));
        }
        let norm = values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm <= MAX_TOKEN_NORM) {
            return Err(Error::Validation(format!(
                "feature token norm {norm} outside (0, {MAX_TOKEN_NORM}]"
            )));
        }
        Ok(FeatureToken { values })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    /// `[1, 64]` row for the model.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([1, TOKEN_LEN], self.values.clone()).expect("token length")
    }
}

/// Bracketed, comma-separated list using shortest round-trip formatting.
impl fmt::Display for FeatureToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{v}")?;
        }
        f.write_str("]")
    }
}

/// Byte range of the first balanced `[ ... ]` span, brackets included.
fn first_bracket_span(text: &str) -> Option<(usize, usize)> {
    let start = text.find('[')?;
    let mut depth = 0usize;
    for (i, ch) in text[start..].char_indices() {
        match ch {
            '[' => depth += 1,
            ']' => {
                depth -= 1;
                if depth == 0 {
                    return Some((start, start + i + 1));
                }
            }
            _ => {}
        }
    }
    None
}

/// Extracts a feature token from free-form model output.
pub fn parse_token(response: &str) -> Result<FeatureToken> {
    let Some((start, end)) = first_bracket_span(response) else {
        let snippet: String = response.chars().take(40).collect();
        return Err(Error::Parse(format!(
            "no bracketed list in response starting {snippet:?}"
        )));
    };
    let inner = &response[start + 1..end - 1];
    let parts: Vec<&str> = if inner.trim().is_empty() {
        Vec::new()
    } else {
        inner.split(',').map(str::trim).collect()
    };
    if parts.len() != TOKEN_LEN {
        return Err(Error::dim(format!(
            "expected {TOKEN_LEN} values, found {} in {:?}",
            parts.len(),
            truncate(&response[start..end], 60)
        )));
    }
    let mut values = Vec::with_capacity(TOKEN_LEN);
    for p in parts {
        let v: f32 = p
            .parse()
            .map_err(|_| Error::Parse(format!("non-numeric entry {p:?}")))?;
        if !v.is_finite() {
            return Err(Error::Parse(format!("non-finite entry {p:?}")));
        }
        values.push(v);
    }
    FeatureToken::new(values)
}

fn truncate(s: &str, n: usize) -> String {
    if s.chars().count() <= n {
        s.to_string()
    } else {
        let head: String = s.chars().take(n).collect();
        format!("{head}...")
    }
}

/// CSF amyloid-beta bounds used by the simple-normalization baseline.
pub const SN_CSF_RANGE: (f64, f64) = (0.0, 2500.0);

/// Simple-normalization baseline embedding.
///
/// Slots: `[age, education, mmse, adas_cog, csf_abeta]` min-max scaled to
/// `[0, 1]`, then one-hot `sex (M, F)`, `apoe4_count (0, 1, 2)`,
/// `family_history (no, yes)`; 12 values, zero-padded to 64.
pub fn baseline_embed_sn(record: &SubjectRecord) -> Result<FeatureToken> {
    record.validate()?;
    if !(SN_CSF_RANGE.0..=SN_CSF_RANGE.1).contains(&record.csf_abeta) {
        return Err(Error::Validation(format!(
            "subject {}: csf_abeta {} outside normalization range {SN_CSF_RANGE:?}",
            record.id, record.csf_abeta
        )));
    }
    let scale = |v: f64, (lo, hi): (f64, f64)| ((v - lo) / (hi - lo)) as f32;
    let mut v = vec![0.0f32; TOKEN_LEN];
    v[0] = scale(record.age, AGE_RANGE);
    v[1] = scale(
        record.education_years as f64,
        (EDUCATION_RANGE.0 as f64, EDUCATION_RANGE.1 as f64),
    );
    v[2] = scale(record.mmse as f64, (MMSE_RANGE.0 as f64, MMSE_RANGE.1 as f64));
    v[3] = scale(record.adas_cog, ADAS_COG_RANGE);
    v[4] = scale(record.csf_abeta, SN_CSF_RANGE);
    v[5 + matches!(record.sex, crate::embedding::Sex::F) as usize] = 1.0;
    v[7 + record.apoe4_count as usize] = 1.0;
    v[10 + record.family_history as usize] = 1.0;
    FeatureToken::new(v)
}
