//! Scaled dot-product attention, multi-head attention with separate query and
//! key/value sources, and positional encodings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{param_tree, xavier_uniform, Leaf};
use crate::tensor::{Graph, Rng, Scalar, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub d_q: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub heads: usize,
}

impl AttentionConfig {
    /// Heads of width `d_model / heads` so the concatenation is `d_model` wide.
    pub fn new(d_model: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "d_model {d_model} is not divisible into {heads} heads"
            )));
        }
        let d = d_model / heads;
        let cfg = AttentionConfig {
            d_model,
            d_q: d,
            d_k: d,
            d_v: d,
            heads,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_q != self.d_k {
            return Err(Error::Config(format!(
                "query width {} must equal key width {}",
                self.d_q, self.d_k
            )));
        }
        if self.heads == 0 || self.d_model == 0 || self.d_q == 0 || self.d_v == 0 {
            return Err(Error::Config(format!("degenerate attention config {self:?}")));
        }
        Ok(())
    }

    /// Width of the concatenated head outputs, fed to the output projection.
    pub fn concat_width(&self) -> usize {
        self.heads * self.d_v
    }
}

/// One head's projections: `w_q: [d_model, d_q]`, `w_k: [d_model, d_k]`, `w_v: [d_model, d_v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<P = Tensor> {
    pub w_q: Leaf<P>,
    pub w_k: Leaf<P>,
    pub w_v: Leaf<P>,
}
param_tree!(HeadParams { w_q, w_k, w_v });

/// Independent per-head projections plus the output projection `w_out: [H * d_v, d_model]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<P = Tensor> {
    pub heads: Vec<HeadParams<P>>,
    pub w_out: Leaf<P>,
}
param_tree!(AttentionParams { heads, w_out });

impl AttentionParams {
    pub fn init(cfg: &AttentionConfig, rng: &mut Rng) -> Self {
        let d = cfg.d_model;
        let heads = (0..cfg.heads)
            .map(|_| HeadParams {
                w_q: Leaf(xavier_uniform(rng, &[d, cfg.d_q], d, cfg.d_q)),
                w_k: Leaf(xavier_uniform(rng, &[d, cfg.d_k], d, cfg.d_k)),
                w_v: Leaf(xavier_uniform(rng, &[d, cfg.d_v], d, cfg.d_v)),
            })
            .collect();
        let cw = cfg.concat_width();
        AttentionParams {
            heads,
            w_out: Leaf(xavier_uniform(rng, &[cw, d], cw, d)),
        }
    }

    /// Builds params from explicit matrices, checking them against `cfg`.
    pub fn from_parts(cfg: &AttentionConfig, heads: Vec<HeadParams>, w_out: Tensor) -> Result<Self> {
        cfg.validate()?;
        if heads.len() != cfg.heads {
            return Err(Error::dim(format!("expected {} heads, got {}", cfg.heads, heads.len())));
        }
        for h in &heads {
            let want = [
                (&h.w_q.0, [cfg.d_model, cfg.d_q]),
                (&h.w_k.0, [cfg.d_model, cfg.d_k]),
                (&h.w_v.0, [cfg.d_model, cfg.d_v]),
            ];
            for (t, shape) in want {
                if t.shape() != shape {
                    return Err(Error::dim(format!(
                        "head projection shape {:?}, expected {shape:?}",
                        t.shape()
                    )));
                }
            }
        }
        if w_out.shape() != [cfg.concat_width(), cfg.d_model] {
            return Err(Error::dim(format!(
                "output projection shape {:?}, expected [{}, {}]",
                w_out.shape(),
                cfg.concat_width(),
                cfg.d_model
            )));
        }
        Ok(AttentionParams {
            heads,
            w_out: Leaf(w_out),
        })
    }
}

/// Output of one attention head, with its weight matrix kept for inspection.
#[derive(Debug, Clone, Copy)]
pub struct HeadOutput {
    pub output: Var,
    pub weights: Var,
}

/// `Softmax(Q K^T / sqrt(d_q)) V` with `Q` projected from `query_src` and
/// `K`, `V` from `kv_src`.
pub fn attention_head<T: Scalar>(
    g: &mut Graph<T>,
    query_src: Var,
    kv_src: Var,
    head: &HeadParams<Var>,
) -> Result<HeadOutput> {
    let q = g.matmul(query_src, head.w_q.0)?;
    let k = g.matmul(kv_src, head.w_k.0)?;
    let v = g.matmul(kv_src, head.w_v.0)?;
    let d_q = g.shape(q)[1];
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scaled = g.scale(scores, 1.0 / (d_q as f64).sqrt());
    let weights = g.softmax_rows(scaled);
    let output = g.matmul(weights, v)?;
    Ok(HeadOutput { output, weights })
}

/// Single-head self-attention: `SA(Z W^Q, Z W^K, Z W^V)`.
pub fn self_attention<T: Scalar>(g: &mut Graph<T>, z: Var, head: &HeadParams<Var>) -> Result<Var> {
    Ok(attention_head(g, z, z, head)?.output)
}

fn check_width<T: Scalar>(g: &Graph<T>, v: Var, d_model: usize, what: &str) -> Result<()> {
    let s = g.shape(v);
    if s.len() != 2 || s[1] != d_model {
        return Err(Error::dim(format!("{what} has shape {s:?}, expected width {d_model}")));
    }
    Ok(())
}

/// Multi-head attention with distinct sources, also returning each head's
/// attention weights.
pub fn mhsa_with_weights<T: Scalar>(
    g: &mut Graph<T>,
    query_src: Var,
    kv_src: Var,
    params: &AttentionParams<Var>,
) -> Result<(Var, Vec<Var>)> {
    let d_model = g.shape(params.w_out.0)[1];
    check_width(g, query_src, d_model, "query source")?;
    check_width(g, kv_src, d_model, "key/value source")?;
    let mut outs = Vec::with_capacity(params.heads.len());
    let mut weights = Vec::with_capacity(params.heads.len());
    for head in &params.heads {
        let h = attention_head(g, query_src, kv_src, head)?;
        outs.push(h.output);
        weights.push(h.weights);
    }
    let cat = if outs.len() == 1 {
        outs[0]
    } else {
        g.concat_cols(&outs)?
    };
    let out = g.matmul(cat, params.w_out.0)?;
    Ok((out, weights))
}

/// `concat(Z_1, ..., Z_H) W` with `Z_h = SA(Q_h, K_h, V_h)`, queries from
/// `query_src` and keys/values from `kv_src`. Output has one row per query.
pub fn mhsa<T: Scalar>(g: &mut Graph<T>, query_src: Var, kv_src: Var, params: &AttentionParams<Var>) -> Result<Var> {
    Ok(mhsa_with_weights(g, query_src, kv_src, params)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosMode {
    /// Point-wise sum; table width must equal the token width.
    Sum,
    /// Feature-axis concatenation; output width is `d + d_p`.
    Concat,
}

impl std::str::FromStr for PosMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(PosMode::Sum),
            "concat" => Ok(PosMode::Concat),
            other => Err(Error::Config(format!("unknown positional mode {other:?}"))),
        }
    }
}

/// Fixed positional table `[n_max, d_p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionTable {
    pub table: Tensor,
    pub mode: PosMode,
}

impl PositionTable {
    /// Sinusoidal table:
    /// `PE[pos, 2i] = sin(pos / 10000^(2i / d_p))`,
    /// `PE[pos, 2i + 1] = cos(pos / 10000^(2i / d_p))`.
    pub fn sinusoidal(n_max: usize, d_p: usize, mode: PosMode) -> Self {
        let mut data = Vec::with_capacity(n_max * d_p);
        for pos in 0..n_max {
            for j in 0..d_p {
                let pair = (j / 2 * 2) as f64;
                let angle = pos as f64 / 10000f64.powf(pair / d_p as f64);
                data.push(if j % 2 == 0 { angle.sin() } else { angle.cos() } as f32);
            }
        }
        PositionTable {
            table: Tensor::new([n_max, d_p], data).expect("table shape"),
            mode,
        }
    }

    pub fn zeros(n_max: usize, d_p: usize, mode: PosMode) -> Self {
        PositionTable {
            table: Tensor::zeros([n_max, d_p]),
            mode,
        }
    }

    pub fn capacity(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.table.shape()[1]
    }
}

/// Adds or concatenates the first `N` table rows to the token sequence `x`.
pub fn positional_encode<T: Scalar>(g: &mut Graph<T>, x: Var, table: &PositionTable) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() != 2 {
        return Err(Error::dim(format!("token sequence must be a matrix, got {s:?}")));
    }
    let (n, d) = (s[0], s[1]);
    if n > table.capacity() {
        return Err(Error::Capacity {
            len: n,
            capacity: table.capacity(),
        });
    }
    let d_p = table.width();
    if table.mode == PosMode::Sum && d_p != d {
        return Err(Error::dim(format!(
            "sum-mode positional table width {d_p} differs from token width {d}"
        )));
    }
    let rows = Tensor::<T>::new(
        [n, d_p],
        table.table.data()[..n * d_p].iter().map(|&v| T::of(v as f64)).collect(),
    )?;
    let pe = g.constant(rows);
    match table.mode {
        PosMode::Sum => g.add(x, pe),
        PosMode::Concat => g.concat_cols(&[x, pe]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::bind;

    #[test]
    fn config_enforces_equal_query_key_width() {
        let bad = AttentionConfig {
            d_model: 4,
            d_q: 2,
            d_k: 3,
            d_v: 2,
            heads: 2,
        };
        assert!(bad.validate().is_err());
        assert!(AttentionConfig::new(6, 4).is_err());
        let ok = AttentionConfig::new(8, 2).unwrap();
        assert_eq!(ok.concat_width(), 8);
    }

    #[test]
    fn zero_table_sum_is_identity() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let pt = PositionTable::zeros(4, 2, PosMode::Sum);
        let y = positional_encode(&mut g, x, &pt).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn concat_mode_widens() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros([3, 4]));
        let pt = PositionTable::sinusoidal(8, 4, PosMode::Concat);
        let y = positional_encode(&mut g, x, &pt).unwrap();
        assert_eq!(g.shape(y), &[3, 8]);
    }

    #[test]
    fn sinusoid_rows_match_formula() {
        let pt = PositionTable::sinusoidal(4, 6, PosMode::Sum);
        // row 0: sin(0)=0 and cos(0)=1 alternating
        assert_eq!(pt.table.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        // row 1, pair index 2: angle 1 / 10000^(2/6)
        let angle = 1.0f64 / 10000f64.powf(2.0 / 6.0);
        assert!((pt.table.at(1, 2) as f64 - angle.sin()).abs() < 1e-7);
        assert!((pt.table.at(1, 3) as f64 - angle.cos()).abs() < 1e-7);
    }

    #[test]
    fn positional_errors() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros([5, 4]));
        let small = PositionTable::zeros(4, 4, PosMode::Sum);
        assert!(matches!(
            positional_encode(&mut g, x, &small),
            Err(Error::Capacity { len: 5, capacity: 4 })
        ));
        let narrow = PositionTable::zeros(8, 3, PosMode::Sum);
        assert!(matches!(
            positional_encode(&mut g, x, &narrow),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn mhsa_output_rows_follow_queries() {
        let cfg = AttentionConfig::new(4, 2).unwrap();
        let params = AttentionParams::init(&cfg, &mut Rng::new(3));
        let mut g = Graph::<f32>::new();
        let p = bind(&mut g, &params);
        let q = g.constant(Tensor::ones([3, 4]));
        let kv = g.constant(Tensor::ones([5, 4]));
        let out = mhsa(&mut g, q, kv, &p).unwrap();
        assert_eq!(g.shape(out), &[3, 4]);

        let wrong = g.constant(Tensor::ones([5, 3]));
        assert!(matches!(mhsa(&mut g, q, wrong, &p), Err(Error::Dimension(_))));
    }

    #[test]
    fn from_parts_checks_shapes() {
        let cfg = AttentionConfig::new(2, 1).unwrap();
        let head = HeadParams {
            w_q: Leaf(Tensor::eye(2)),
            w_k: Leaf(Tensor::eye(2)),
            w_v: Leaf(Tensor::eye(2)),
        };
        assert!(AttentionParams::from_parts(&cfg, vec![head.clone()], Tensor::eye(2)).is_ok());
        assert!(AttentionParams::from_parts(&cfg, vec![head], Tensor::eye(3)).is_err());
    }
}
