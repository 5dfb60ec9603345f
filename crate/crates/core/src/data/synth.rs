//! Synthetic four-class cohorts with planted signal.
//!
//! Every distribution parameter here is invented for testing the pipeline
//! and carries no clinical meaning.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::tensor_io::{read_tensor, write_tensor};
use crate::embedding::{baseline_embed_sn, Sex, ShotExample, SubjectRecord};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SHOTS_FILE: &str = "shots.jsonl";
pub const CONFIG_FILE: &str = "dataset.json";
pub const SUBJECT_DIR: &str = "sub";

/// Diagnostic class, ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    NC = 0,
    EMCI = 1,
    LMCI = 2,
    AD = 3,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 4] = [ClassLabel::NC, ClassLabel::EMCI, ClassLabel::LMCI, ClassLabel::AD];

    pub fn severity(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::NC => "NC",
            ClassLabel::EMCI => "EMCI",
            ClassLabel::LMCI => "LMCI",
            ClassLabel::AD => "AD",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Parse(format!("unknown class label {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub per_class: usize,
    pub image_size: usize,
    pub seed: u64,
    pub signal_strength: f64,
    pub noise_sigma: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            per_class: 50,
            image_size: 32,
            seed: 0,
            signal_strength: 0.8,
            noise_sigma: 0.1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.per_class == 0 {
            return Err(Error::Config("per_class must be at least 1".into()));
        }
        if self.image_size < 4 {
            return Err(Error::Config(format!("image_size {} is below 4", self.image_size)));
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return Err(Error::Config(format!(
                "signal_strength {} is outside [0, 1]",
                self.signal_strength
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise_sigma {} is invalid", self.noise_sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub label: ClassLabel,
    /// Relative to the dataset root.
    pub mri_path: String,
    pub pet_path: String,
    pub record: SubjectRecord,
}

/// A dataset on disk: its root directory plus the manifest entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn with_entries(&self, entries: Vec<ManifestEntry>) -> Self {
        DatasetManifest {
            root: self.root.clone(),
            entries,
        }
    }

    pub fn class_counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for e in &self.entries {
            c[e.label.severity()] += 1;
        }
        c
    }

    /// Reads the (MRI, PET) pair for one entry.
    pub fn load_images(&self, entry: &ManifestEntry) -> Result<(Tensor, Tensor)> {
        Ok((
            read_tensor(self.root.join(&entry.mri_path))?,
            read_tensor(self.root.join(&entry.pet_path))?,
        ))
    }

    /// Loads `manifest.jsonl` from `root`, checking ids are unique and files exist.
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(MANIFEST_FILE);
        let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut entries: Vec<ManifestEntry> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry =
                serde_json::from_str(&line).map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), n + 1)))?;
            if !seen.insert(entry.id.clone()) {
                return Err(Error::Validation(format!("duplicate subject id {}", entry.id)));
            }
            for rel in [&entry.mri_path, &entry.pet_path] {
                if !root.join(rel).is_file() {
                    return Err(Error::Validation(format!(
                        "subject {}: missing image file {rel}",
                        entry.id
                    )));
                }
            }
            entry.record.validate()?;
            entries.push(entry);
        }
        Ok(DatasetManifest { root, entries })
    }
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let p = 10f64.powi(decimals);
    (x * p).round() / p
}

const MMSE_MEANS: [f64; 4] = [29.0, 27.0, 24.0, 20.0];
const ADAS_MEANS: [f64; 4] = [6.0, 12.0, 18.0, 26.0];
const CSF_MEANS: [f64; 4] = [1100.0, 950.0, 800.0, 600.0];
const MMSE_SD: f64 = 1.5;
const ADAS_SD: f64 = 3.0;
const CSF_SD: f64 = 80.0;

/// Interpolates between the NC value and the class value.
fn planted(means: &[f64; 4], label: ClassLabel, signal: f64) -> f64 {
    means[0] + signal * (means[label.severity()] - means[0])
}

/// Draws a record for `label`; `rng` must be the subject's own stream.
pub fn synth_record(id: &str, label: ClassLabel, signal: f64, rng: &mut Rng) -> SubjectRecord {
    let sev = label.severity() as f64;
    let age = round_to((73.0 + 6.0 * rng.normal()).clamp(55.0, 92.0), 1);
    let sex = if rng.bernoulli(0.5) { Sex::F } else { Sex::M };
    let education_years = (16.0 + 3.0 * rng.normal()).round().clamp(6.0, 25.0) as u32;
    let p_allele = 0.15 + 0.15 * signal * sev;
    let apoe4_count = rng.bernoulli(p_allele) as u8 + rng.bernoulli(p_allele) as u8;
    let mmse = (planted(&MMSE_MEANS, label, signal) + MMSE_SD * rng.normal())
        .round()
        .clamp(0.0, 30.0) as u32;
    let adas_cog = round_to(
        (planted(&ADAS_MEANS, label, signal) + ADAS_SD * rng.normal()).clamp(0.0, 70.0),
        1,
    );
    let csf_abeta = round_to(
        (planted(&CSF_MEANS, label, signal) + CSF_SD * rng.normal()).max(150.0),
        1,
    );
    let family_history = rng.bernoulli(0.2 + 0.05 * signal * sev);
    SubjectRecord {
        id: id.to_string(),
        age,
        sex,
        education_years,
        apoe4_count,
        mmse,
        adas_cog,
        csf_abeta,
        family_history,
    }
}

/// MRI stand-in: a centred Gaussian blob whose width shrinks with severity.
pub fn synth_mri(size: usize, label: ClassLabel, signal: f64, noise: f64, rng: &mut Rng) -> Tensor {
    let s = size as f64;
    let sev = label.severity() as f64;
    let sigma = s * (0.30 - 0.05 * signal * sev) * (1.0 + 0.04 * rng.normal());
    let cy = (s - 1.0) / 2.0 + rng.uniform(-1.0, 1.0) * s / 32.0;
    let cx = (s - 1.0) / 2.0 + rng.uniform(-1.0, 1.0) * s / 32.0;
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            let v = (-d2 / (2.0 * sigma * sigma)).exp() + noise * rng.normal();
            data.push(v as f32);
        }
    }
    Tensor::new([1, size, size], data).expect("shape matches data")
}

/// PET stand-in: a left-to-right ramp whose mean rises with severity.
pub fn synth_pet(size: usize, label: ClassLabel, signal: f64, noise: f64, rng: &mut Rng) -> Tensor {
    let sev = label.severity() as f64;
    let mean = 0.3 + 0.15 * signal * sev + 0.04 * rng.normal();
    let slope = 0.4 + 0.1 * rng.normal();
    let mut data = Vec::with_capacity(size * size);
    for _y in 0..size {
        for x in 0..size {
            let t = x as f64 / (size - 1) as f64 - 0.5;
            data.push((mean + slope * t + noise * rng.normal()) as f32);
        }
    }
    Tensor::new([1, size, size], data).expect("shape matches data")
}

pub struct Subject {
    pub label: ClassLabel,
    pub record: SubjectRecord,
    pub mri: Tensor,
    pub pet: Tensor,
}

/// Subject `index` of the cohort; labels are assigned class-major.
pub fn synth_subject(cfg: &SyntheticConfig, index: usize) -> Subject {
    let label = ClassLabel::from_index(index / cfg.per_class).expect("index within cohort");
    let mut rng = Rng::derive(cfg.seed, index as u64);
    let id = subject_id(index);
    let record = synth_record(&id, label, cfg.signal_strength, &mut rng);
    let mri = synth_mri(cfg.image_size, label, cfg.signal_strength, cfg.noise_sigma, &mut rng);
    let pet = synth_pet(cfg.image_size, label, cfg.signal_strength, cfg.noise_sigma, &mut rng);
    Subject {
        label,
        record,
        mri,
        pet,
    }
}

pub fn subject_id(index: usize) -> String {
    format!("s{index:04}")
}

const SHOT_STREAM: u64 = 0x5107_5107_5107_5107;
const SHOT_LABELS: [ClassLabel; 5] = [
    ClassLabel::NC,
    ClassLabel::AD,
    ClassLabel::EMCI,
    ClassLabel::LMCI,
    ClassLabel::NC,
];

/// Five worked examples drawn from a stream disjoint from the cohort, each
/// paired with its normalized tabular baseline vector.
pub fn shot_bank(cfg: &SyntheticConfig) -> Vec<ShotExample> {
    SHOT_LABELS
        .iter()
        .enumerate()
        .map(|(k, &label)| {
            let mut rng = Rng::derive(cfg.seed ^ SHOT_STREAM, k as u64);
            let record = synth_record(&format!("shot{k}"), label, cfg.signal_strength, &mut rng);
            let base = baseline_embed_sn(&record).expect("synthetic records are valid");
            let norm = base.l2_norm() as f32;
            let unit: Vec<f32> = base.values().iter().map(|v| v / norm).collect();
            let token = crate::embedding::FeatureToken::new(unit).expect("unit vector");
            ShotExample::new(record, &token)
        })
        .collect()
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), n + 1)))?);
    }
    Ok(out)
}

pub fn load_shot_bank(root: impl AsRef<Path>) -> Result<Vec<ShotExample>> {
    read_jsonl(&root.as_ref().join(SHOTS_FILE))
}

/// Writes a cohort under `out`: manifest, images, shot bank and the config used.
pub fn generate(cfg: &SyntheticConfig, out: impl AsRef<Path>) -> Result<DatasetManifest> {
    cfg.validate()?;
    let root = out.as_ref().to_path_buf();
    let sub = root.join(SUBJECT_DIR);
    fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;

    let total = 4 * cfg.per_class;
    let mut entries = Vec::with_capacity(total);
    for index in 0..total {
        let s = synth_subject(cfg, index);
        let id = s.record.id.clone();
        let mri_path = format!("{SUBJECT_DIR}/{id}_mri.mmt");
        let pet_path = format!("{SUBJECT_DIR}/{id}_pet.mmt");
        write_tensor(root.join(&mri_path), &s.mri)?;
        write_tensor(root.join(&pet_path), &s.pet)?;
        entries.push(ManifestEntry {
            id,
            label: s.label,
            mri_path,
            pet_path,
            record: s.record,
        });
    }
    write_jsonl(&root.join(MANIFEST_FILE), &entries)?;
    write_jsonl(&root.join(SHOTS_FILE), &shot_bank(cfg))?;
    let cfg_path = root.join(CONFIG_FILE);
    fs::write(&cfg_path, serde_json::to_string_pretty(cfg)? + "\n").map_err(|e| Error::io(&cfg_path, e))?;
    Ok(DatasetManifest { root, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            per_class: 10,
            image_size: 16,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn counts_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate(&small(), dir.path()).unwrap();
        assert_eq!(m.len(), 40);
        assert_eq!(m.class_counts(), [10; 4]);
        let loaded = DatasetManifest::load(dir.path()).unwrap();
        assert_eq!(loaded.entries, m.entries);
        let (mri, pet) = loaded.load_images(&loaded.entries[0]).unwrap();
        assert_eq!(mri.shape(), &[1, 16, 16]);
        assert_eq!(pet.shape(), &[1, 16, 16]);
        assert_eq!(load_shot_bank(dir.path()).unwrap().len(), 5);
    }

    #[test]
    fn byte_identical_under_seed() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate(&small(), a.path()).unwrap();
        generate(&small(), b.path()).unwrap();
        for f in [MANIFEST_FILE, SHOTS_FILE, "sub/s0007_mri.mmt", "sub/s0031_pet.mmt"] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn records_valid_and_mmse_monotone() {
        let cfg = SyntheticConfig {
            per_class: 40,
            ..small()
        };
        let mut sums = [0.0; 4];
        for i in 0..160 {
            let s = synth_subject(&cfg, i);
            s.record.validate().unwrap();
            sums[s.label.severity()] += s.record.mmse as f64;
        }
        assert!(sums.windows(2).all(|w| w[0] > w[1]), "{sums:?}");
    }

    #[test]
    fn missing_image_fails_load() {
        let dir = tempfile::tempdir().unwrap();
        generate(&small(), dir.path()).unwrap();
        fs::remove_file(dir.path().join("sub/s0002_pet.mmt")).unwrap();
        assert!(matches!(DatasetManifest::load(dir.path()), Err(Error::Validation(_))));
    }

    #[test]
    fn label_parsing() {
        assert_eq!("lmci".parse::<ClassLabel>().unwrap(), ClassLabel::LMCI);
        assert!("MCI".parse::<ClassLabel>().is_err());
        assert!(ClassLabel::NC < ClassLabel::AD);
    }
}
