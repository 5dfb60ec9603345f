//! Saves a model, reloads it and checks the logits match bit for bit. Also
//! shows the tensor file header.

use mmfusion::data::{encode_tensor, synth_subject, SyntheticConfig};
use mmfusion::embedding::{baseline_embed_sn, TOKEN_LEN};
use mmfusion::model::{load_model_with_meta, save_model_with_meta, Model, ModelConfig};
use mmfusion::params::count;

fn main() -> mmfusion::Result<()> {
    let data = SyntheticConfig {
        per_class: 2,
        image_size: 32,
        ..Default::default()
    };
    let s = synth_subject(&data, 5);
    let token = baseline_embed_sn(&s.record)?;
    assert_eq!(token.values().len(), TOKEN_LEN);

    let model = Model::init(ModelConfig::new(3), 42)?;
    println!("model with {} parameters", count(&model.params));
    let dir = tempfile::tempdir().map_err(|e| mmfusion::Error::Storage(e.to_string()))?;
    let path = dir.path().join("model.bin");
    save_model_with_meta(&model, &serde_json::json!({"note": "example"}), &path)?;
    let size = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    let (loaded, meta) = load_model_with_meta(&path)?;
    println!("saved {size} bytes, meta {meta}");

    let a = model.logits(&s.mri, &s.pet, &token)?;
    let b = loaded.logits(&s.mri, &s.pet, &token)?;
    let same = a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
    println!("logits {a:?}\nbit-identical after reload: {same}");

    let bytes = encode_tensor(&s.mri)?;
    let header: Vec<String> = bytes[..24.min(bytes.len())]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    println!(
        "tensor file for a {:?} image, {} bytes: {} ...",
        s.mri.shape(),
        bytes.len(),
        header.join(" ")
    );
    Ok(())
}
