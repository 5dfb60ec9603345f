//! Independent reference implementations shared by the integration tests.
//!
//! Everything here works on plain `Vec<Vec<f64>>` matrices with explicit
//! loops, so it shares no code with the graph engine it is checked against.
#![allow(dead_code)]

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use mmfusion::attention::{AttentionParams, HeadParams};
use mmfusion::embedding::{EmbeddingProvider, MockProvider};
use mmfusion::fusion::{FusionBlockParams, TransformerBlockParams};
use mmfusion::params::{LayerNormParams, Linear};
use mmfusion::tensor::{Rng, Tensor};
use mmfusion::Error;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat<T: mmfusion::tensor::Scalar>(t: &Tensor<T>) -> Mat {
    let (r, c) = t.rows_cols();
    (0..r).map(|i| (0..c).map(|j| t.at(i, j).as_f64()).collect()).collect()
}

pub fn to_vec<T: mmfusion::tensor::Scalar>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.as_f64()).collect()
}

pub fn random_tensor(rng: &mut Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

pub fn mm(a: &Mat, b: &Mat) -> Mat {
    let k = b.len();
    let n = b[0].len();
    a.iter()
        .map(|row| {
            assert_eq!(row.len(), k);
            (0..n).map(|j| (0..k).map(|t| row[t] * b[t][j]).sum()).collect()
        })
        .collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

pub fn hcat(parts: &[Mat]) -> Mat {
    (0..parts[0].len())
        .map(|r| parts.iter().flat_map(|p| p[r].clone()).collect())
        .collect()
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len(), "row count");
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len(), "column count");
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

/// Softmax of one row via exp / sum of exps, no max shift.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = row.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn layer_norm(x: &Mat, gain: &[f64], bias: &[f64]) -> Mat {
    x.iter()
        .map(|row| {
            let d = row.len() as f64;
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / (var + 1e-5).sqrt() * gain[j] + bias[j])
                .collect()
        })
        .collect()
}

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn linear(x: &Mat, p: &Linear) -> Mat {
    let w = to_mat(&p.weight);
    let b = to_vec(&p.bias);
    mm(x, &w)
        .into_iter()
        .map(|r| r.iter().zip(&b).map(|(v, c)| v + c).collect())
        .collect()
}

pub fn head(q_src: &Mat, kv_src: &Mat, h: &HeadParams) -> Mat {
    let q = mm(q_src, &to_mat(&h.w_q.0));
    let k = mm(kv_src, &to_mat(&h.w_k.0));
    let v = mm(kv_src, &to_mat(&h.w_v.0));
    let scale = 1.0 / (q[0].len() as f64).sqrt();
    q.iter()
        .map(|qi| {
            let scores: Vec<f64> = k
                .iter()
                .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale)
                .collect();
            let w = softmax(&scores);
            (0..v[0].len())
                .map(|c| w.iter().zip(&v).map(|(wj, vj)| wj * vj[c]).sum())
                .collect()
        })
        .collect()
}

pub fn mhsa(q_src: &Mat, kv_src: &Mat, p: &AttentionParams) -> Mat {
    let heads: Vec<Mat> = p.heads.iter().map(|h| head(q_src, kv_src, h)).collect();
    mm(&hcat(&heads), &to_mat(&p.w_out.0))
}

fn ln(x: &Mat, p: &LayerNormParams) -> Mat {
    layer_norm(x, &to_vec(&p.gain), &to_vec(&p.bias))
}

pub fn transformer(x: &Mat, p: &TransformerBlockParams) -> Mat {
    let n1 = ln(x, &p.ln1);
    let h = add(x, &mhsa(&n1, &n1, &p.attn));
    let n2 = ln(&h, &p.ln2);
    let f: Mat = linear(&n2, &p.ff1)
        .into_iter()
        .map(|r| r.into_iter().map(gelu).collect())
        .collect();
    add(&h, &linear(&f, &p.ff2))
}

/// Cross-attention-to-concatenation written out step by step: queries of
/// each stream attend over the other, rows are stacked, passed through the
/// block and averaged. Returns `(sequence, pooled)`.
pub fn fusion(a: &Mat, b: &Mat, p: &FusionBlockParams) -> (Mat, Vec<f64>) {
    let z_a = mhsa(b, a, &p.attn_ab);
    let z_b = mhsa(a, b, &p.attn_ba);
    let cat: Mat = z_a.into_iter().chain(z_b).collect();
    let seq = transformer(&cat, &p.tf);
    let n = seq.len() as f64;
    let pooled = (0..seq[0].len())
        .map(|c| seq.iter().map(|r| r[c]).sum::<f64>() / n)
        .collect();
    (seq, pooled)
}

/// AUC as the fraction of concordant (positive, negative) pairs, ties half.
pub fn auc_pairwise(scores: &[f64], labels: &[u8]) -> f64 {
    let mut twice = 0u64;
    let (mut pos, mut neg) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li == 1 {
            pos += 1;
        } else {
            neg += 1;
        }
        if li != 1 {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj == 0 {
                twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    twice as f64 / 2.0 / (pos * neg) as f64
}

/// Mock provider that counts calls.
#[derive(Default)]
pub struct Counting {
    pub calls: AtomicUsize,
}

impl EmbeddingProvider for Counting {
    fn name(&self) -> &str {
        "counting"
    }

    fn complete(&self, prompt: &str) -> mmfusion::Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        MockProvider.complete(prompt)
    }
}

/// Fails the first `failures` calls, then answers like the mock.
pub struct Flaky {
    pub failures: usize,
    pub calls: AtomicUsize,
}

impl Flaky {
    pub fn new(failures: usize) -> Self {
        Flaky {
            failures,
            calls: AtomicUsize::new(0),
        }
    }
}

impl EmbeddingProvider for Flaky {
    fn name(&self) -> &str {
        "flaky"
    }

    fn complete(&self, prompt: &str) -> mmfusion::Result<String> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if n < self.failures {
            Err(Error::Provider {
                attempts: 1,
                cause: format!("scripted failure {}", n + 1),
            })
        } else {
            MockProvider.complete(prompt)
        }
    }
}

/// Relative path and bytes of every file under `root`, sorted by path.
pub fn dir_snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
