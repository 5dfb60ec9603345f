//! Generates a small cohort on disk, reloads it and prints per-class record
//! means and the stratified split sizes.
//!
//! cargo run --example synthetic_data -- [out_dir]

use mmfusion::data::{generate, split, ClassLabel, DatasetManifest, SyntheticConfig, DEFAULT_FRACTIONS};

fn main() -> mmfusion::Result<()> {
    let tmp = tempfile::tempdir().map_err(|e| mmfusion::Error::Storage(e.to_string()))?;
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| tmp.path().to_path_buf(), Into::into);
    let cfg = SyntheticConfig {
        per_class: 20,
        image_size: 16,
        seed: 4,
        ..Default::default()
    };
    generate(&cfg, &out)?;
    let manifest = DatasetManifest::load(&out)?;
    println!("{} subjects in {}", manifest.len(), out.display());

    println!("{:<5} {:>6} {:>8} {:>8} {:>6}", "class", "MMSE", "ADAS", "CSF", "APOE4");
    for label in ClassLabel::ALL {
        let rows: Vec<_> = manifest
            .entries
            .iter()
            .filter(|e| e.label == label)
            .map(|e| &e.record)
            .collect();
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&mmfusion::embedding::SubjectRecord) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
        println!(
            "{:<5} {:>6.1} {:>8.1} {:>8.0} {:>6.2}",
            label.as_str(),
            mean(&|r| r.mmse as f64),
            mean(&|r| r.adas_cog),
            mean(&|r| r.csf_abeta),
            mean(&|r| r.apoe4_count as f64)
        );
    }

    let s = split(&manifest, DEFAULT_FRACTIONS, 0)?;
    println!(
        "split: {} train / {} val / {} test",
        s.train.len(),
        s.val.len(),
        s.test.len()
    );
    println!("val class counts {:?}", s.val.class_counts());
    Ok(())
}
