//! Cross-attention-to-concatenation on two token streams of different
//! lengths, then the two-stage fusion with a non-image token.

use mmfusion::attention::AttentionConfig;
use mmfusion::fusion::{cross_attend_concat, multistage_fuse, FusionBlockParams};
use mmfusion::params::{bind, Linear};
use mmfusion::tensor::{Graph, Rng, Tensor};

fn random(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols).map(|_| rng.normal() as f32).collect(),
    )
    .unwrap()
}

fn main() -> mmfusion::Result<()> {
    let mut rng = Rng::new(5);
    let d = 16;
    let cfg = AttentionConfig::new(d, 2)?;
    let p1 = FusionBlockParams::init(&cfg, &mut rng);
    let p2 = FusionBlockParams::init(&cfg, &mut rng);
    let proj = Linear::init(&mut rng, 64, d);

    let mut g = Graph::<f32>::new();
    let (b1, b2, bp) = (bind(&mut g, &p1), bind(&mut g, &p2), bind(&mut g, &proj));
    let mri = g.constant(random(&mut rng, 6, d));
    let pet = g.constant(random(&mut rng, 4, d));

    let fused = cross_attend_concat(&mut g, mri, pet, &b1)?;
    println!(
        "6 + 4 tokens -> fused sequence {:?}, pooled {:?}",
        g.shape(fused.token_seq),
        g.shape(fused.pooled)
    );

    let token = g.constant(random(&mut rng, 1, 64));
    let out = multistage_fuse(&mut g, mri, pet, token, &bp, &b1, &b2)?;
    println!("joint sequence {:?}", g.shape(out.joint.token_seq));
    let pooled = g.value(out.joint.pooled);
    println!("joint pooled (first 4): {:?}", &pooled.data()[..4]);
    Ok(())
}
