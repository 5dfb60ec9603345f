//! Stratified train/validation/test splitting.
//!
//! Within each class the quotas `n * fraction` are floored and the leftover
//! subjects go to the parts with the largest fractional remainders. Equal
//! remainders are broken by giving the subject to the part that has received
//! the fewest subjects so far across earlier classes, then by part order
//! (train, val, test). Classes are processed NC to AD, and members are
//! shuffled under the seed before being dealt out.

use crate::data::synth::{ClassLabel, DatasetManifest};
use crate::error::{Error, Result};
use crate::tensor::Rng;

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.7, 0.15, 0.15];
pub const MIN_PER_CLASS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    pub test: DatasetManifest,
}

impl Splits {
    pub fn get(&self, name: &str) -> Result<&DatasetManifest> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!(
                "unknown split {other:?}; expected train, val or test"
            ))),
        }
    }
}

/// Largest-remainder apportionment of `n` items over `fractions`.
/// `assigned` holds the running totals used to break remainder ties.
pub fn apportion(n: usize, fractions: &[f64; 3], assigned: &[usize; 3]) -> [usize; 3] {
    let quotas = fractions.map(|f| n as f64 * f);
    let mut counts = quotas.map(|q| (q + 1e-9).floor() as usize);
    let mut left = n - counts.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    let rem = |i: usize| quotas[i] - counts[i] as f64;
    let rems = [rem(0), rem(1), rem(2)];
    order.sort_by(|&a, &b| {
        let ra = (rems[a] * 1e9).round();
        let rb = (rems[b] * 1e9).round();
        rb.partial_cmp(&ra)
            .expect("finite remainders")
            .then(assigned[a].cmp(&assigned[b]))
            .then(a.cmp(&b))
    });
    for &i in order.iter() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

pub fn split(manifest: &DatasetManifest, fractions: [f64; 3], seed: u64) -> Result<Splits> {
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 || fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let mut rng = Rng::new(seed);
    let mut parts: [Vec<_>; 3] = Default::default();
    let mut assigned = [0usize; 3];
    for label in ClassLabel::ALL {
        let mut members: Vec<_> = manifest.entries.iter().filter(|e| e.label == label).cloned().collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < MIN_PER_CLASS {
            return Err(Error::Stratification(format!(
                "class {label} has {} subject(s); at least {MIN_PER_CLASS} are needed",
                members.len()
            )));
        }
        rng.shuffle(&mut members);
        let counts = apportion(members.len(), &fractions, &assigned);
        let mut it = members.into_iter();
        for (p, &c) in counts.iter().enumerate() {
            parts[p].extend(it.by_ref().take(c));
            assigned[p] += c;
        }
    }
    let [train, val, test] = parts;
    Ok(Splits {
        train: manifest.with_entries(train),
        val: manifest.with_entries(val),
        test: manifest.with_entries(test),
    })
}
