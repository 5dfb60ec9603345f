//! Small ConvNeXt-style image encoder.
//!
//! A patchify stem maps non-overlapping `p x p` patches to `channels`
//! features, then each block applies
//! `x + reduce(gelu(expand(norm(depthwise3x3(x)))))` on the patch grid.
//! Feature maps are kept channels-last as `[grid * grid, channels]`, which is
//! also the output token sequence (row-major over the grid).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{param_tree, xavier_uniform, LayerNormParams, Leaf, Linear};
use crate::tensor::{Graph, Rng, Scalar, Tensor, Var};

/// Expansion ratio of the pointwise bottleneck.
pub const EXPANSION: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub stem_patch: usize,
    pub channels: usize,
    pub blocks: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            image_size: 32,
            stem_patch: 4,
            channels: 32,
            blocks: 2,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stem_patch == 0 || self.image_size == 0 || !self.image_size.is_multiple_of(self.stem_patch) {
            return Err(Error::Config(format!(
                "image size {} is not divisible by stem patch {}",
                self.image_size, self.stem_patch
            )));
        }
        if self.channels == 0 {
            return Err(Error::Config("encoder needs at least one channel".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.stem_patch
    }

    pub fn num_tokens(&self) -> usize {
        self.grid() * self.grid()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlockParams<P = Tensor> {
    /// `[channels, 9]`
    pub dw_kernel: Leaf<P>,
    pub dw_bias: Leaf<P>,
    pub norm: LayerNormParams<P>,
    pub expand: Linear<P>,
    pub reduce: Linear<P>,
}
param_tree!(EncoderBlockParams {
    dw_kernel,
    dw_bias,
    norm,
    expand,
    reduce
});

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<P = Tensor> {
    pub stem: Linear<P>,
    pub blocks: Vec<EncoderBlockParams<P>>,
}
param_tree!(EncoderParams { stem, blocks });

/// Xavier-uniform weights, zero biases, unit norm gains.
pub fn init_encoder(cfg: &EncoderConfig, rng: &mut Rng) -> Result<EncoderParams> {
    cfg.validate()?;
    let c = cfg.channels;
    let patch = cfg.stem_patch * cfg.stem_patch;
    let stem = Linear::init(rng, patch, c);
    let blocks = (0..cfg.blocks)
        .map(|_| EncoderBlockParams {
            dw_kernel: Leaf(xavier_uniform(rng, &[c, 9], 9, 9)),
            dw_bias: Leaf(Tensor::zeros([c])),
            norm: LayerNormParams::init(c),
            expand: Linear::init(rng, c, EXPANSION * c),
            reduce: Linear::init(rng, EXPANSION * c, c),
        })
        .collect();
    Ok(EncoderParams { stem, blocks })
}

/// Rearranges `[1, S, S]` (or `[S, S]`) into `[(S/p)^2, p^2]` patch rows.
pub fn patchify<T: Scalar>(img: &Tensor<T>, cfg: &EncoderConfig) -> Result<Tensor<T>> {
    let s = cfg.image_size;
    let ok = matches!(img.shape(), [1, h, w] | [h, w] if *h == s && *w == s);
    if !ok {
        return Err(Error::dim(format!(
            "image shape {:?}, expected [1, {s}, {s}]",
            img.shape()
        )));
    }
    let p = cfg.stem_patch;
    let grid = cfg.grid();
    let src = img.data();
    let mut out = Vec::with_capacity(s * s);
    for gy in 0..grid {
        for gx in 0..grid {
            for py in 0..p {
                let row = (gy * p + py) * s + gx * p;
                out.extend_from_slice(&src[row..row + p]);
            }
        }
    }
    Tensor::new([grid * grid, p * p], out)
}

impl EncoderParams<Var> {
    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, img: &Tensor<T>, cfg: &EncoderConfig) -> Result<Var> {
        let patches = g.constant(patchify(img, cfg)?);
        let mut x = self.stem.apply(g, patches)?;
        let grid = cfg.grid();
        for block in &self.blocks {
            let h = g.depthwise_conv3x3(x, block.dw_kernel.0, block.dw_bias.0, grid, grid)?;
            let h = block.norm.apply(g, h)?;
            let h = block.expand.apply(g, h)?;
            let h = g.gelu(h);
            let h = block.reduce.apply(g, h)?;
            x = g.add(x, h)?;
        }
        Ok(x)
    }
}

/// Encodes one image into `[(S/p)^2, channels]` tokens.
pub fn encode_image<T: Scalar>(
    g: &mut Graph<T>,
    img: &Tensor<T>,
    params: &EncoderParams<Var>,
    cfg: &EncoderConfig,
) -> Result<Var> {
    params.encode(g, img, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{bind, bind_frozen, named};

    #[test]
    fn token_count_follows_patch_grid() {
        let cfg = EncoderConfig::default();
        let params = init_encoder(&cfg, &mut Rng::new(1)).unwrap();
        let mut g = Graph::<f32>::new();
        let p = bind_frozen(&mut g, &params);
        let img = Tensor::<f32>::full([1, 32, 32], 0.3);
        let tokens = encode_image(&mut g, &img, &p, &cfg).unwrap();
        assert_eq!(g.shape(tokens), &[64, 32]);
    }

    #[test]
    fn wrong_image_size_rejected() {
        let cfg = EncoderConfig::default();
        let params = init_encoder(&cfg, &mut Rng::new(1)).unwrap();
        let mut g = Graph::<f32>::new();
        let p = bind_frozen(&mut g, &params);
        let img = Tensor::<f32>::zeros([1, 16, 16]);
        assert!(matches!(encode_image(&mut g, &img, &p, &cfg), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_image_gives_zero_tokens() {
        let cfg = EncoderConfig {
            image_size: 8,
            ..Default::default()
        };
        let params = init_encoder(&cfg, &mut Rng::new(2)).unwrap();
        let mut g = Graph::<f32>::new();
        let p = bind_frozen(&mut g, &params);
        let tokens = encode_image(&mut g, &Tensor::zeros([1, 8, 8]), &p, &cfg).unwrap();
        assert!(g.value(tokens).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn patchify_layout() {
        let cfg = EncoderConfig {
            image_size: 4,
            stem_patch: 2,
            channels: 1,
            blocks: 0,
        };
        let img = Tensor::<f32>::new([1, 4, 4], (0..16).map(|v| v as f32).collect()).unwrap();
        let p = patchify(&img, &cfg).unwrap();
        assert_eq!(p.shape(), &[4, 4]);
        assert_eq!(p.row(0), &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(p.row(1), &[2.0, 3.0, 6.0, 7.0]);
        assert_eq!(p.row(3), &[10.0, 11.0, 14.0, 15.0]);
    }

    #[test]
    fn init_determinism_and_bounds() {
        let cfg = EncoderConfig::default();
        let a = init_encoder(&cfg, &mut Rng::new(5)).unwrap();
        let b = init_encoder(&cfg, &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
        for (name, t) in named(&a) {
            let bound = match t.shape() {
                [fi, fo] if name.ends_with("weight") => (6.0 / (fi + fo) as f64).sqrt(),
                [_, 9] => (6.0f64 / 18.0).sqrt(),
                _ => continue,
            };
            assert!(t.data().iter().all(|v| (v.abs() as f64) <= bound), "{name}");
        }
    }

    #[test]
    fn different_seeds_differ_in_random_weights() {
        let cfg = EncoderConfig::default();
        let a = init_encoder(&cfg, &mut Rng::new(5)).unwrap();
        let b = init_encoder(&cfg, &mut Rng::new(6)).unwrap();
        let (mut total, mut differ) = (0usize, 0usize);
        for ((name, ta), (_, tb)) in named(&a).into_iter().zip(named(&b)) {
            // biases and norm affine start from constants
            if !(name.ends_with("weight") || name.ends_with("dw_kernel")) {
                continue;
            }
            for (x, y) in ta.data().iter().zip(tb.data()) {
                total += 1;
                differ += (x != y) as usize;
            }
        }
        assert!(differ as f64 >= 0.99 * total as f64, "{differ}/{total}");
    }

    #[test]
    fn bound_params_are_trainable() {
        let cfg = EncoderConfig {
            image_size: 8,
            ..Default::default()
        };
        let params = init_encoder(&cfg, &mut Rng::new(2)).unwrap();
        let mut g = Graph::<f64>::new();
        let p = bind(&mut g, &params);
        let img = Tensor::<f64>::full([1, 8, 8], 0.5);
        let tokens = encode_image(&mut g, &img, &p, &cfg).unwrap();
        let s = g.sum(tokens);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(p.stem.weight).is_some());
    }
}
