use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    M,
    F,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::M => "M",
            Sex::F => "F",
        }
    }
}

/// Tabular non-image data for one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    /// Years, 50 to 95.
    pub age: f64,
    pub sex: Sex,
    /// 0 to 25.
    pub education_years: u32,
    /// APOE e4 allele count, 0 to 2.
    pub apoe4_count: u8,
    /// Mini-Mental State Examination, 0 to 30.
    pub mmse: u32,
    /// ADAS-Cog, 0 to 70.
    pub adas_cog: f64,
    /// CSF amyloid-beta in pg/mL, positive.
    pub csf_abeta: f64,
    pub family_history: bool,
}

pub const AGE_RANGE: (f64, f64) = (50.0, 95.0);
pub const EDUCATION_RANGE: (u32, u32) = (0, 25);
pub const MMSE_RANGE: (u32, u32) = (0, 30);
pub const ADAS_COG_RANGE: (f64, f64) = (0.0, 70.0);

impl SubjectRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, v: String| {
            Err(Error::Validation(format!(
                "subject {}: {field} = {v} out of range",
                self.id
            )))
        };
        if !(AGE_RANGE.0..=AGE_RANGE.1).contains(&self.age) {
            return bad("age", self.age.to_string());
        }
        if self.education_years > EDUCATION_RANGE.1 {
            return bad("education_years", self.education_years.to_string());
        }
        if self.apoe4_count > 2 {
            return bad("apoe4_count", self.apoe4_count.to_string());
        }
        if self.mmse > MMSE_RANGE.1 {
            return bad("mmse", self.mmse.to_string());
        }
        if !(ADAS_COG_RANGE.0..=ADAS_COG_RANGE.1).contains(&self.adas_cog) {
            return bad("adas_cog", self.adas_cog.to_string());
        }
        if !(self.csf_abeta > 0.0 && self.csf_abeta.is_finite()) {
            return bad("csf_abeta", self.csf_abeta.to_string());
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) fn sample_record() -> SubjectRecord {
    SubjectRecord {
        id: "s0001".into(),
        age: 72.5,
        sex: Sex::F,
        education_years: 16,
        apoe4_count: 1,
        mmse: 27,
        adas_cog: 12.25,
        csf_abeta: 950.0,
        family_history: true,
    }
}
