//! Cross-attention-to-concatenation fusion and the multi-stage pipeline that
//! joins the two image streams and the non-image token.
//!
//! For streams `a` and `b`:
//!
//! ```text
//! Z_a = MHSA(Q from b, K/V from a)      rows: N_b
//! Z_b = MHSA(Q from a, K/V from b)      rows: N_a
//! Z   = Tf(concat_rows(Z_a, Z_b))       rows: N_b + N_a
//! ```
//!
//! `Tf` is one pre-norm transformer block.

use crate::attention::{mhsa, AttentionConfig, AttentionParams};
use crate::error::{Error, Result};
use crate::params::{param_tree, LayerNormParams, Linear};
use crate::tensor::{Graph, Rng, Scalar, Tensor, Var};

/// Feed-forward hidden width as a multiple of `d_model`.
pub const FF_MULT: usize = 2;

/// Pre-norm transformer block:
/// `h = x + MHSA(LN1(x))`, `out = h + W2 gelu(W1 LN2(h))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlockParams<P = Tensor> {
    pub ln1: LayerNormParams<P>,
    pub attn: AttentionParams<P>,
    pub ln2: LayerNormParams<P>,
    pub ff1: Linear<P>,
    pub ff2: Linear<P>,
}
param_tree!(TransformerBlockParams {
    ln1,
    attn,
    ln2,
    ff1,
    ff2
});

impl TransformerBlockParams {
    pub fn init(cfg: &AttentionConfig, rng: &mut Rng) -> Self {
        let d = cfg.d_model;
        TransformerBlockParams {
            ln1: LayerNormParams::init(d),
            attn: AttentionParams::init(cfg, rng),
            ln2: LayerNormParams::init(d),
            ff1: Linear::init(rng, d, FF_MULT * d),
            ff2: Linear::init(rng, FF_MULT * d, d),
        }
    }
}

impl TransformerBlockParams<Var> {
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let n1 = self.ln1.apply(g, x)?;
        let a = mhsa(g, n1, n1, &self.attn)?;
        let h = g.add(x, a)?;
        let n2 = self.ln2.apply(g, h)?;
        let f = self.ff1.apply(g, n2)?;
        let f = g.gelu(f);
        let f = self.ff2.apply(g, f)?;
        g.add(h, f)
    }
}

/// `attn_ab` takes queries from `b` and keys/values from `a`; `attn_ba` the reverse.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionBlockParams<P = Tensor> {
    pub attn_ab: AttentionParams<P>,
    pub attn_ba: AttentionParams<P>,
    pub tf: TransformerBlockParams<P>,
}
param_tree!(FusionBlockParams { attn_ab, attn_ba, tf });

impl FusionBlockParams {
    pub fn init(cfg: &AttentionConfig, rng: &mut Rng) -> Self {
        FusionBlockParams {
            attn_ab: AttentionParams::init(cfg, rng),
            attn_ba: AttentionParams::init(cfg, rng),
            tf: TransformerBlockParams::init(cfg, rng),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FusedFeatures {
    /// `[N_a + N_b, d_model]`
    pub token_seq: Var,
    /// `[1, d_model]`, the row mean of `token_seq`.
    pub pooled: Var,
}

/// The two cross-attention streams `(Z_a, Z_b)` before concatenation.
pub fn cross_streams<T: Scalar>(
    g: &mut Graph<T>,
    a: Var,
    b: Var,
    params: &FusionBlockParams<Var>,
) -> Result<(Var, Var)> {
    let (sa, sb) = (g.shape(a).to_vec(), g.shape(b).to_vec());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
        return Err(Error::dim(format!(
            "fusion streams must share a width, got {sa:?} and {sb:?}"
        )));
    }
    let z_a = mhsa(g, b, a, &params.attn_ab)?;
    let z_b = mhsa(g, a, b, &params.attn_ba)?;
    Ok((z_a, z_b))
}

/// Sequence-axis concatenation `C(Z_a, Z_b)` fed to the transformer block.
pub fn fused_sequence<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var, params: &FusionBlockParams<Var>) -> Result<Var> {
    let (z_a, z_b) = cross_streams(g, a, b, params)?;
    g.concat_rows(&[z_a, z_b])
}

pub fn cross_attend_concat<T: Scalar>(
    g: &mut Graph<T>,
    a: Var,
    b: Var,
    params: &FusionBlockParams<Var>,
) -> Result<FusedFeatures> {
    let cat = fused_sequence(g, a, b, params)?;
    let token_seq = params.tf.apply(g, cat)?;
    let pooled = g.mean_rows(token_seq)?;
    Ok(FusedFeatures { token_seq, pooled })
}

#[derive(Debug, Clone, Copy)]
pub struct MultistageOutput {
    /// MRI/PET fusion; its pooled row is the image summary source.
    pub image: FusedFeatures,
    /// Fusion of the pooled image features with the projected non-image token.
    pub joint: FusedFeatures,
}

/// Stage 1 of the pipeline: MRI and PET token streams fused.
pub fn fuse_images<T: Scalar>(
    g: &mut Graph<T>,
    mri_tokens: Var,
    pet_tokens: Var,
    p1: &FusionBlockParams<Var>,
) -> Result<FusedFeatures> {
    cross_attend_concat(g, mri_tokens, pet_tokens, p1)
}

/// Full pipeline: image fusion, then a second fusion whose two streams are
/// the pooled image features and the non-image token projected into
/// `d_model`, each a length-1 sequence. `nonimage_token` is `[1, 64]`.
///
/// Feeding the whole image token sequence into the second stage would make
/// all but one of its rows copies of the non-image token (every image query
/// sees a single key), leaving images a 2/(N+1) share of the pooled output.
pub fn multistage_fuse<T: Scalar>(
    g: &mut Graph<T>,
    mri_tokens: Var,
    pet_tokens: Var,
    nonimage_token: Var,
    nonimage_proj: &Linear<Var>,
    p1: &FusionBlockParams<Var>,
    p2: &FusionBlockParams<Var>,
) -> Result<MultistageOutput> {
    let image = fuse_images(g, mri_tokens, pet_tokens, p1)?;
    let projected = nonimage_proj.apply(g, nonimage_token)?;
    let joint = cross_attend_concat(g, image.pooled, projected, p2)?;
    Ok(MultistageOutput { image, joint })
}

/// Default number of pooled coordinates quoted in prompts.
pub const IMAGE_SUMMARY_LEN: usize = 8;

/// First `k` pooled coordinates, rounded to 3 decimals.
pub fn image_summary<T: Scalar>(pooled: &Tensor<T>, k: usize) -> Result<Vec<f64>> {
    if k > pooled.len() {
        return Err(Error::dim(format!(
            "image summary length {k} exceeds feature width {}",
            pooled.len()
        )));
    }
    Ok(pooled.data()[..k].iter().map(|v| round3(v.as_f64())).collect())
}

pub fn round3(x: f64) -> f64 {
    let r = (x * 1000.0).round() / 1000.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// `[0.123, -0.400]`
pub fn format_summary(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

pub fn parse_summary(text: &str) -> Result<Vec<f64>> {
    let inner = text
        .trim()
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| Error::Parse(format!("summary {text:?} is not bracketed")))?;
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad summary entry {:?}", p.trim())))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::bind;

    fn setup(d: usize, heads: usize, seed: u64) -> FusionBlockParams {
        let cfg = AttentionConfig::new(d, heads).unwrap();
        FusionBlockParams::init(&cfg, &mut Rng::new(seed))
    }

    fn random_tokens(rng: &mut Rng, n: usize, d: usize) -> Tensor<f64> {
        let data: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();
        Tensor::new([n, d], data).unwrap()
    }

    #[test]
    fn row_count_is_sum_of_inputs() {
        let params = setup(8, 2, 1);
        let mut g = Graph::<f64>::new();
        let p = bind(&mut g, &params);
        let mut rng = Rng::new(5);
        let a = g.constant(random_tokens(&mut rng, 4, 8));
        let b = g.constant(random_tokens(&mut rng, 6, 8));
        let fused = cross_attend_concat(&mut g, a, b, &p).unwrap();
        assert_eq!(g.shape(fused.token_seq), &[10, 8]);
        assert_eq!(g.shape(fused.pooled), &[1, 8]);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let params = setup(8, 2, 1);
        let mut g = Graph::<f64>::new();
        let p = bind(&mut g, &params);
        let a = g.constant(Tensor::zeros([4, 8]));
        let b = g.constant(Tensor::zeros([4, 6]));
        assert!(matches!(
            cross_attend_concat(&mut g, a, b, &p),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn symmetric_inputs_give_equal_streams() {
        let mut params = setup(8, 2, 2);
        params.attn_ba = params.attn_ab.clone();
        let mut g = Graph::<f64>::new();
        let p = bind(&mut g, &params);
        let t = random_tokens(&mut Rng::new(8), 5, 8);
        let a = g.constant(t.clone());
        let b = g.constant(t);
        let (za, zb) = cross_streams(&mut g, a, b, &p).unwrap();
        assert!(g.value(za).max_abs_diff(g.value(zb)) < 1e-6);
    }

    #[test]
    fn summary_rounding_and_bounds() {
        let pooled = Tensor::<f32>::from_f64([1, 3], &[0.12345, -0.9876, 2.0]).unwrap();
        assert_eq!(image_summary(&pooled, 1).unwrap(), vec![0.123]);
        assert_eq!(image_summary(&pooled, 3).unwrap(), vec![0.123, -0.988, 2.0]);
        assert!(image_summary(&pooled, 4).is_err());
        assert_eq!(format_summary(&[0.123, -0.4]), "[0.123, -0.400]");
    }

    #[test]
    fn summary_text_roundtrip() {
        let mut rng = Rng::new(4);
        for _ in 0..200 {
            let vals: Vec<f64> = (0..8).map(|_| round3(rng.uniform(-5.0, 5.0))).collect();
            assert_eq!(parse_summary(&format_summary(&vals)).unwrap(), vals);
        }
        assert!(parse_summary("0.1, 0.2").is_err());
        assert!(parse_summary("[0.1, x]").is_err());
    }
}
