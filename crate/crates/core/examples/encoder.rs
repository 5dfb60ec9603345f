//! Encodes a synthetic MRI slice into patch tokens and adds sinusoidal positions.

use mmfusion::attention::{positional_encode, PosMode, PositionTable};
use mmfusion::data::{synth_subject, SyntheticConfig};
use mmfusion::encoder::{init_encoder, patchify, EncoderConfig};
use mmfusion::params::{bind, count};
use mmfusion::tensor::{Graph, Rng};

fn main() -> mmfusion::Result<()> {
    let data = SyntheticConfig {
        per_class: 1,
        image_size: 32,
        ..Default::default()
    };
    let subject = synth_subject(&data, 3);
    println!(
        "subject {} ({}), image {:?}",
        subject.record.id,
        subject.label,
        subject.mri.shape()
    );

    let cfg = EncoderConfig::default();
    let patches = patchify(&subject.mri, &cfg)?;
    println!(
        "{}x{} grid of {}-pixel patches -> {:?}",
        cfg.grid(),
        cfg.grid(),
        cfg.stem_patch,
        patches.shape()
    );

    let params = init_encoder(&cfg, &mut Rng::new(0))?;
    println!("encoder parameters: {}", count(&params));
    let mut g = Graph::<f32>::new();
    let p = bind(&mut g, &params);
    let tokens = p.encode(&mut g, &subject.mri, &cfg)?;
    println!("tokens {:?}", g.shape(tokens));

    for mode in [PosMode::Sum, PosMode::Concat] {
        let width = if mode == PosMode::Sum { cfg.channels } else { 8 };
        let table = PositionTable::sinusoidal(cfg.num_tokens(), width, mode);
        let with_pos = positional_encode(&mut g, tokens, &table)?;
        println!("{mode:?}: {:?}", g.shape(with_pos));
    }
    Ok(())
}
