//! The end-to-end classifier: two image encoders, positional encoding,
//! two-stage fusion with the projected non-image token, and a three-layer
//! MLP head producing raw logits.

mod io;

pub use io::{
    decode_model, encode_model, load_model, load_model_with_meta, save_model, save_model_with_meta, MODEL_MAGIC,
    MODEL_VERSION,
};

use serde::{Deserialize, Serialize};

use crate::attention::{positional_encode, AttentionConfig, PosMode, PositionTable};
use crate::embedding::{FeatureToken, TOKEN_LEN};
use crate::encoder::{init_encoder, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::fusion::{fuse_images, image_summary, multistage_fuse, FusionBlockParams, MultistageOutput};
use crate::params::{bind_frozen, named, param_tree, rebind, Linear};
use crate::tensor::{gradcheck, GradcheckOptions, GradcheckReport, Graph, Rng, Scalar, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub d_model: usize,
    pub heads: usize,
    pub encoder: EncoderConfig,
    pub pos_mode: PosMode,
    pub mlp_hidden: (usize, usize),
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_classes: 4,
            d_model: 32,
            heads: 2,
            encoder: EncoderConfig::default(),
            pos_mode: PosMode::Sum,
            mlp_hidden: (128, 64),
        }
    }
}

impl ModelConfig {
    pub fn new(num_classes: usize) -> Self {
        ModelConfig {
            num_classes,
            ..Default::default()
        }
    }

    /// Small configuration for numerical checks: 8x8 images, `d_model` 8.
    pub fn tiny(num_classes: usize) -> Self {
        ModelConfig {
            num_classes,
            d_model: 8,
            heads: 2,
            encoder: EncoderConfig {
                image_size: 8,
                stem_patch: 2,
                channels: 8,
                blocks: 1,
            },
            pos_mode: PosMode::Sum,
            mlp_hidden: (16, 8),
        }
    }

    /// Switches positional mode, resizing encoder channels so tokens stay `d_model` wide.
    /// Concat mode splits the width evenly between features and positions.
    pub fn with_pos_mode(mut self, mode: PosMode) -> Self {
        self.pos_mode = mode;
        self.encoder.channels = match mode {
            PosMode::Sum => self.d_model,
            PosMode::Concat => self.d_model / 2,
        };
        self
    }

    pub fn attention(&self) -> Result<AttentionConfig> {
        AttentionConfig::new(self.d_model, self.heads)
    }

    /// Width of the positional table.
    pub fn pos_width(&self) -> usize {
        match self.pos_mode {
            PosMode::Sum => self.d_model,
            PosMode::Concat => self.d_model - self.encoder.channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.num_classes) {
            return Err(Error::Config(format!(
                "num_classes must be 2, 3 or 4, got {}",
                self.num_classes
            )));
        }
        self.encoder.validate()?;
        self.attention()?;
        match self.pos_mode {
            PosMode::Sum if self.encoder.channels != self.d_model => {
                return Err(Error::Config(format!(
                    "sum positional mode needs encoder channels ({}) equal to d_model ({})",
                    self.encoder.channels, self.d_model
                )))
            }
            PosMode::Concat if self.encoder.channels >= self.d_model => {
                return Err(Error::Config(format!(
                    "concat positional mode needs encoder channels ({}) below d_model ({})",
                    self.encoder.channels, self.d_model
                )))
            }
            _ => {}
        }
        if self.mlp_hidden.0 == 0 || self.mlp_hidden.1 == 0 {
            return Err(Error::Config("MLP hidden widths must be positive".into()));
        }
        Ok(())
    }

    pub fn position_table(&self) -> PositionTable {
        PositionTable::sinusoidal(self.encoder.num_tokens(), self.pos_width(), self.pos_mode)
    }
}

/// Trainable parameters. The positional table is fixed and rebuilt from the config.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<P = Tensor> {
    pub mri_encoder: EncoderParams<P>,
    pub pet_encoder: EncoderParams<P>,
    pub fuse1: FusionBlockParams<P>,
    pub fuse2: FusionBlockParams<P>,
    pub nonimage_proj: Linear<P>,
    pub head1: Linear<P>,
    pub head2: Linear<P>,
    pub head3: Linear<P>,
}
param_tree!(ModelParams {
    mri_encoder,
    pet_encoder,
    fuse1,
    fuse2,
    nonimage_proj,
    head1,
    head2,
    head3
});

impl ModelParams {
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let attn = cfg.attention()?;
        let (h1, h2) = cfg.mlp_hidden;
        Ok(ModelParams {
            mri_encoder: init_encoder(&cfg.encoder, rng)?,
            pet_encoder: init_encoder(&cfg.encoder, rng)?,
            fuse1: FusionBlockParams::init(&attn, rng),
            fuse2: FusionBlockParams::init(&attn, rng),
            nonimage_proj: Linear::init(rng, TOKEN_LEN, cfg.d_model),
            head1: Linear::init(rng, cfg.d_model, h1),
            head2: Linear::init(rng, h1, h2),
            head3: Linear::init(rng, h2, cfg.num_classes),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// `[1, num_classes]`
    pub logits: Var,
    pub fusion: MultistageOutput,
}

fn check_token<T: Scalar>(token: &Tensor<T>) -> Result<()> {
    if token.len() != TOKEN_LEN {
        return Err(Error::dim(format!(
            "non-image token must hold {TOKEN_LEN} values, got shape {:?}",
            token.shape()
        )));
    }
    Ok(())
}

fn encode_pair<T: Scalar>(
    g: &mut Graph<T>,
    mri: &Tensor<T>,
    pet: &Tensor<T>,
    params: &ModelParams<Var>,
    cfg: &ModelConfig,
    table: &PositionTable,
) -> Result<(Var, Var)> {
    let m = params.mri_encoder.encode(g, mri, &cfg.encoder)?;
    let m = positional_encode(g, m, table)?;
    let p = params.pet_encoder.encode(g, pet, &cfg.encoder)?;
    let p = positional_encode(g, p, table)?;
    Ok((m, p))
}

/// Builds the full forward pass; `token` is the 64-value non-image token.
pub fn forward<T: Scalar>(
    g: &mut Graph<T>,
    mri: &Tensor<T>,
    pet: &Tensor<T>,
    token: &Tensor<T>,
    params: &ModelParams<Var>,
    cfg: &ModelConfig,
    table: &PositionTable,
) -> Result<ForwardOutput> {
    check_token(token)?;
    let (m, p) = encode_pair(g, mri, pet, params, cfg, table)?;
    let tok = g.constant(token.reshape([1, TOKEN_LEN])?);
    let fusion = multistage_fuse(g, m, p, tok, &params.nonimage_proj, &params.fuse1, &params.fuse2)?;
    let h = params.head1.apply(g, fusion.joint.pooled)?;
    let h = g.relu(h);
    let h = params.head2.apply(g, h)?;
    let h = g.relu(h);
    let logits = params.head3.apply(g, h)?;
    Ok(ForwardOutput { logits, fusion })
}

/// Argmax; the lowest index wins ties.
pub fn predict<T: PartialOrd + Copy>(logits: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate().skip(1) {
        if *v > logits[best] {
            best = i;
        }
    }
    best
}

/// Configuration, parameters and the derived positional table.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub pos_table: PositionTable,
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, &mut Rng::new(seed))?;
        Ok(Self::from_parts(config, params))
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Self {
        let pos_table = config.position_table();
        Model {
            config,
            params,
            pos_table,
        }
    }

    /// Inference-only logits.
    pub fn logits(&self, mri: &Tensor, pet: &Tensor, token: &FeatureToken) -> Result<Vec<f32>> {
        let mut g = Graph::<f32>::new();
        let p = bind_frozen(&mut g, &self.params);
        let out = forward(&mut g, mri, pet, &token.to_tensor(), &p, &self.config, &self.pos_table)?;
        Ok(g.value(out.logits).data().to_vec())
    }

    pub fn predict(&self, mri: &Tensor, pet: &Tensor, token: &FeatureToken) -> Result<usize> {
        Ok(predict(&self.logits(mri, pet, token)?))
    }

    /// First `k` coordinates of the pooled image-fusion features, rounded for prompts.
    pub fn image_summary(&self, mri: &Tensor, pet: &Tensor, k: usize) -> Result<Vec<f64>> {
        let mut g = Graph::<f32>::new();
        let p = bind_frozen(&mut g, &self.params);
        let (m, t) = encode_pair(&mut g, mri, pet, &p, &self.config, &self.pos_table)?;
        let fused = fuse_images(&mut g, m, t, &p.fuse1)?;
        image_summary(g.value(fused.pooled), k)
    }
}

/// Finite-difference check of the whole model on random inputs.
///
/// Uses [`ModelConfig::tiny`] with three classes; parameters, images and
/// token are drawn from `seed`. `opts.corrupt_op` injects a faulty backward
/// rule.
pub fn full_model_gradcheck(seed: u64, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let cfg = ModelConfig::tiny(3);
    let model = Model::init(cfg.clone(), seed)?;
    let mut rng = Rng::derive(seed, 1);
    let s = cfg.encoder.image_size;
    let mut draw = |shape: Vec<usize>| {
        let n = shape.iter().product();
        Tensor::<f64>::new(shape, (0..n).map(|_| rng.normal()).collect())
    };
    let mri = draw(vec![1, s, s])?;
    let pet = draw(vec![1, s, s])?;
    let token = draw(vec![1, TOKEN_LEN])?;
    let label = (seed % 3) as usize;
    let flat: Vec<(String, Tensor<f64>)> = named(&model.params).into_iter().map(|(n, t)| (n, t.cast())).collect();
    gradcheck(
        |g, vars| {
            let p = rebind(&model.params, vars);
            let out = forward(g, &mri, &pet, &token, &p, &cfg, &model.pos_table)?;
            g.cross_entropy(out.logits, label)
        },
        &flat,
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::bind;
    use crate::tensor::softmax_rows_eager;

    fn inputs(cfg: &ModelConfig, seed: u64) -> (Tensor, Tensor, FeatureToken) {
        let mut rng = Rng::new(seed);
        let s = cfg.encoder.image_size;
        let mut img = || Tensor::new([1, s, s], (0..s * s).map(|_| rng.normal() as f32).collect()).unwrap();
        let (a, b) = (img(), img());
        let tok: Vec<f32> = (0..64).map(|i| ((i * 7 % 13) as f32 - 6.0) / 10.0).collect();
        (a, b, FeatureToken::new(tok).unwrap())
    }

    #[test]
    fn logits_width_follows_class_count() {
        for k in 2..=4 {
            let cfg = ModelConfig::tiny(k);
            let m = Model::init(cfg.clone(), 1).unwrap();
            let (a, b, t) = inputs(&cfg, 2);
            let l = m.logits(&a, &b, &t).unwrap();
            assert_eq!(l.len(), k);
            let p = softmax_rows_eager(&Tensor::new([1, k], l.clone()).unwrap());
            assert!((p.data().iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-6);
            assert_eq!(l, m.logits(&a, &b, &t).unwrap());
        }
    }

    #[test]
    fn only_last_head_layer_depends_on_task() {
        let shapes = |k| {
            let m = Model::init(ModelConfig::tiny(k), 0).unwrap();
            named(&m.params)
                .into_iter()
                .map(|(n, t)| (n, t.shape().to_vec()))
                .collect::<Vec<_>>()
        };
        let (two, four) = (shapes(2), shapes(4));
        assert_eq!(two.len(), four.len());
        for ((n2, s2), (n4, s4)) in two.iter().zip(&four) {
            assert_eq!(n2, n4);
            if n2.starts_with("head3") {
                assert_ne!(s2, s4);
            } else {
                assert_eq!(s2, s4, "{n2}");
            }
        }
    }

    #[test]
    fn predict_ties_and_order() {
        assert_eq!(predict(&[0.1, 2.0]), 1);
        assert_eq!(predict(&[1.0, 1.0, 1.0]), 0);
        assert_eq!(predict(&[-3.0f32, 5.0, 5.0, 1.0]), 1);
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::new(5).validate().is_err());
        assert!(ModelConfig::new(1).validate().is_err());
        let c = ModelConfig {
            pos_mode: PosMode::Concat,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig::default().with_pos_mode(PosMode::Concat);
        c.validate().unwrap();
        assert_eq!(c.pos_width(), 16);
    }

    #[test]
    fn concat_mode_runs() {
        let cfg = ModelConfig::tiny(3).with_pos_mode(PosMode::Concat);
        let m = Model::init(cfg.clone(), 4).unwrap();
        let (a, b, t) = inputs(&cfg, 5);
        assert_eq!(m.logits(&a, &b, &t).unwrap().len(), 3);
        assert_eq!(m.image_summary(&a, &b, 8).unwrap().len(), 8);
    }

    #[test]
    fn every_parameter_gets_gradient() {
        let cfg = ModelConfig::tiny(4);
        let m = Model::init(cfg.clone(), 6).unwrap();
        let (a, b, t) = inputs(&cfg, 7);
        let mut g = Graph::<f64>::new();
        let p = bind(&mut g, &m.params);
        let out = forward(
            &mut g,
            &a.cast(),
            &b.cast(),
            &t.to_tensor().cast(),
            &p,
            &cfg,
            &m.pos_table,
        )
        .unwrap();
        let loss = g.cross_entropy(out.logits, 2).unwrap();
        let grads = g.backward(loss).unwrap();
        // Both second-stage cross attentions see a single key, so their
        // softmax is identically 1 and the query/key maps cannot matter.
        let inert = |n: &str| {
            (n.starts_with("fuse2.attn_ab.heads.") || n.starts_with("fuse2.attn_ba.heads."))
                && (n.ends_with(".w_q") || n.ends_with(".w_k"))
        };
        for ((name, _), (_, v)) in named(&m.params).into_iter().zip(named(&p)) {
            let gr = grads.get(*v).unwrap_or_else(|| panic!("{name} has no gradient"));
            let nonzero = gr.data().iter().any(|x| *x != 0.0);
            assert_eq!(nonzero, !inert(&name), "{name}");
        }
    }

    #[test]
    fn full_model_gradcheck_passes_and_catches_faults() {
        let started = std::time::Instant::now();
        let report = full_model_gradcheck(8, &GradcheckOptions::default()).unwrap();
        assert!(report.max_rel_error < 1e-3, "{report:?}");
        assert!(started.elapsed().as_secs() < 60);
        let bad = GradcheckOptions {
            corrupt_op: Some("layer_norm".into()),
            ..Default::default()
        };
        assert!(full_model_gradcheck(8, &bad).unwrap().max_rel_error > 1e-3);
    }
}
