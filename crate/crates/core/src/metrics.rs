//! Confusion-matrix metrics and rank-based ROC-AUC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mann-Whitney AUC: the fraction of (positive, negative) pairs where the
/// positive scores higher, ties counting one half. Labels are 0 or 1.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Metric(format!("label {bad} is not 0 or 1")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Metric("scores must be finite".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("AUC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Mid-ranks (1-based) over tie groups; every rank is a multiple of 0.5,
    // so the rank sum is exact.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum_pos += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<usize>>,
    pub acc: f64,
    pub sen: f64,
    pub spe: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    pub error_rate: f64,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Metrics {
    /// Derives ACC/SEN/SPE from a square confusion matrix.
    ///
    /// Two classes: class 1 is positive. More classes: one-vs-rest SEN and
    /// SPE averaged over the classes whose denominators are non-zero.
    pub fn from_confusion(confusion: Vec<Vec<usize>>, auc: Option<f64>) -> Result<Self> {
        let c = confusion.len();
        if c < 2 || confusion.iter().any(|r| r.len() != c) {
            return Err(Error::Metric(format!(
                "confusion matrix must be square with at least 2 classes, got {c} rows"
            )));
        }
        let total: usize = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::Evaluation("no subjects evaluated".into()));
        }
        let trace: usize = (0..c).map(|i| confusion[i][i]).sum();
        let acc = trace as f64 / total as f64;
        let one_vs_rest = |k: usize| {
            let tp = confusion[k][k];
            let fn_ = confusion[k].iter().sum::<usize>() - tp;
            let fp = (0..c).map(|r| confusion[r][k]).sum::<usize>() - tp;
            let tn = total - tp - fn_ - fp;
            (ratio(tp, tp + fn_), ratio(tn, tn + fp))
        };
        let (sen, spe) = if c == 2 {
            let (sen, spe) = one_vs_rest(1);
            (
                sen.ok_or_else(|| Error::Metric("sensitivity undefined: no positive subjects".into()))?,
                spe.ok_or_else(|| Error::Metric("specificity undefined: no negative subjects".into()))?,
            )
        } else {
            let parts: Vec<_> = (0..c).map(one_vs_rest).collect();
            let mean = |vals: Vec<f64>, what: &str| {
                if vals.is_empty() {
                    Err(Error::Metric(format!("{what} undefined for every class")))
                } else {
                    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
                }
            };
            (
                mean(parts.iter().filter_map(|p| p.0).collect(), "sensitivity")?,
                mean(parts.iter().filter_map(|p| p.1).collect(), "specificity")?,
            )
        };
        Ok(Metrics {
            confusion,
            acc,
            sen,
            spe,
            auc,
            error_rate: error_rate(acc),
        })
    }

    pub fn count(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

/// Percentage error, `100 * (1 - acc)`.
pub fn error_rate(acc: f64) -> f64 {
    100.0 * (1.0 - acc)
}

/// Builds a confusion matrix from (true, predicted) class pairs.
pub fn confusion_matrix(pairs: impl IntoIterator<Item = (usize, usize)>, classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; classes]; classes];
    for (t, p) in pairs {
        m[t][p] += 1;
    }
    m
}
