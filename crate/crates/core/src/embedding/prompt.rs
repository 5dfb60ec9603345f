//! Prompt construction for the feature-token request.
//!
//! Layout (every line ends with `\n`):
//!
//! ```text
//! <instruction header>
//!
//! ### Example 1
//! Demographics: age 72.500 years; sex F; education 16 years; family history yes
//! Genetics: APOE e4 allele count 1
//! Cognition: MMSE 27; ADAS-Cog 12.250
//! CSF: amyloid-beta 950.000 pg/mL
//! Feature token: [0.123, ...]
//!
//! ### Subject
//! <groups as above>
//! Image features: [0.123, -0.040, ...]      (only when a summary is supplied and enabled)
//! Feature token:
//! ```
//!
//! Reals are printed with 3 decimals. The wording is this crate's own; no
//! reference template exists for it.

use serde::{Deserialize, Serialize};

use crate::embedding::record::SubjectRecord;
use crate::embedding::token::FeatureToken;
use crate::error::{Error, Result};
use crate::fusion::format_summary;

pub const PROMPT_HEADER: &str = "You extract feature tokens for Alzheimer's disease assessment. \
Each subject's non-image data is listed in groups. Reply with exactly 64 comma-separated \
numbers inside one pair of square brackets, for example [0.012, -0.340, ...]. \
The numbers must encode the subject's clinical picture.";

pub const EXAMPLE_HEADING: &str = "### Example";
pub const SUBJECT_HEADING: &str = "### Subject";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldGroup {
    Demographics,
    Genetics,
    Cognition,
    Csf,
}

impl FieldGroup {
    pub const ALL: [FieldGroup; 4] = [
        FieldGroup::Demographics,
        FieldGroup::Genetics,
        FieldGroup::Cognition,
        FieldGroup::Csf,
    ];

    fn render(self, r: &SubjectRecord) -> String {
        match self {
            FieldGroup::Demographics => format!(
                "Demographics: age {:.3} years; sex {}; education {} years; family history {}",
                r.age,
                r.sex.as_str(),
                r.education_years,
                if r.family_history { "yes" } else { "no" }
            ),
            FieldGroup::Genetics => format!("Genetics: APOE e4 allele count {}", r.apoe4_count),
            FieldGroup::Cognition => {
                format!("Cognition: MMSE {}; ADAS-Cog {:.3}", r.mmse, r.adas_cog)
            }
            FieldGroup::Csf => format!("CSF: amyloid-beta {:.3} pg/mL", r.csf_abeta),
        }
    }
}

/// Few-shot regime: 0, 1 or 5 worked examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Shots(u8);

impl Shots {
    pub const ZERO: Shots = Shots(0);
    pub const ONE: Shots = Shots(1);
    pub const FIVE: Shots = Shots(5);

    pub fn count(self) -> usize {
        self.0 as usize
    }
}

impl TryFrom<u8> for Shots {
    type Error = Error;
    fn try_from(n: u8) -> Result<Self> {
        match n {
            0 | 1 | 5 => Ok(Shots(n)),
            other => Err(Error::Config(format!("shots must be 0, 1 or 5, got {other}"))),
        }
    }
}

impl From<Shots> for u8 {
    fn from(s: Shots) -> u8 {
        s.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub shots: Shots,
    pub groups: Vec<FieldGroup>,
    pub include_image_summary: bool,
}

impl Default for PromptSpec {
    fn default() -> Self {
        PromptSpec {
            shots: Shots::FIVE,
            groups: FieldGroup::ALL.to_vec(),
            include_image_summary: true,
        }
    }
}

impl PromptSpec {
    pub fn with_shots(shots: Shots) -> Self {
        PromptSpec {
            shots,
            ..Default::default()
        }
    }
}

/// A worked example shown to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotExample {
    pub record: SubjectRecord,
    pub token: Vec<f32>,
}

impl ShotExample {
    pub fn new(record: SubjectRecord, token: &FeatureToken) -> Self {
        ShotExample {
            record,
            token: token.values().to_vec(),
        }
    }
}

fn render_record(out: &mut String, record: &SubjectRecord, groups: &[FieldGroup]) {
    for g in groups {
        out.push_str(&g.render(record));
        out.push('\n');
    }
}

pub fn build_prompt(
    record: &SubjectRecord,
    image_summary: Option<&[f64]>,
    spec: &PromptSpec,
    shot_bank: &[ShotExample],
) -> Result<String> {
    let shots = spec.shots.count();
    if shot_bank.len() < shots {
        return Err(Error::Config(format!(
            "prompt needs {shots} examples but the shot bank holds {}",
            shot_bank.len()
        )));
    }
    let mut out = String::with_capacity(1024);
    out.push_str(PROMPT_HEADER);
    out.push('\n');
    for (i, ex) in shot_bank[..shots].iter().enumerate() {
        out.push_str(&format!("\n{EXAMPLE_HEADING} {}\n", i + 1));
        render_record(&mut out, &ex.record, &spec.groups);
        let vals: Vec<String> = ex.token.iter().map(|v| format!("{v:.3}")).collect();
        out.push_str(&format!("Feature token: [{}]\n", vals.join(", ")));
    }
    out.push_str(&format!("\n{SUBJECT_HEADING}\n"));
    render_record(&mut out, record, &spec.groups);
    if spec.include_image_summary {
        if let Some(summary) = image_summary {
            out.push_str(&format!("Image features: {}\n", format_summary(summary)));
        }
    }
    out.push_str("Feature token:\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::record::sample_record;
    use crate::embedding::token::baseline_embed_sn;

    fn bank(n: usize) -> Vec<ShotExample> {
        (0..n)
            .map(|i| {
                let mut r = sample_record();
                r.id = format!("shot{i}");
                r.mmse = 20 + i as u32;
                let t = baseline_embed_sn(&r).unwrap();
                ShotExample::new(r, &t)
            })
            .collect()
    }

    #[test]
    fn shot_counts() {
        let r = sample_record();
        let p0 = build_prompt(&r, None, &PromptSpec::with_shots(Shots::ZERO), &bank(5)).unwrap();
        assert_eq!(p0.matches(EXAMPLE_HEADING).count(), 0);
        let p5 = build_prompt(&r, None, &PromptSpec::with_shots(Shots::FIVE), &bank(5)).unwrap();
        assert_eq!(p5.matches(EXAMPLE_HEADING).count(), 5);
        let positions: Vec<usize> = (20..25).map(|m| p5.find(&format!("MMSE {m};")).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "bank order kept");
    }

    #[test]
    fn insufficient_bank_is_config_error() {
        let r = sample_record();
        let err = build_prompt(&r, None, &PromptSpec::with_shots(Shots::FIVE), &bank(2));
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn deterministic_and_includes_summary() {
        let r = sample_record();
        let spec = PromptSpec::default();
        let s = [0.123, -0.5];
        let a = build_prompt(&r, Some(&s), &spec, &bank(5)).unwrap();
        let b = build_prompt(&r, Some(&s), &spec, &bank(5)).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("Image features: [0.123, -0.500]"));
        assert!(a.contains("exactly 64 comma-separated"));

        let no_summary = PromptSpec {
            include_image_summary: false,
            ..spec
        };
        let c = build_prompt(&r, Some(&s), &no_summary, &bank(5)).unwrap();
        assert!(!c.contains("Image features"));
    }

    #[test]
    fn shots_domain() {
        assert!(Shots::try_from(7).is_err());
        assert_eq!(Shots::try_from(5).unwrap(), Shots::FIVE);
        let parsed: std::result::Result<Shots, _> = serde_json::from_str("3");
        assert!(parsed.is_err());
    }
}
