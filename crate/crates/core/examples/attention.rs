//! Multi-head attention on random tokens: weight rows, the single-token
//! case and the uniform case.

use mmfusion::attention::{mhsa_with_weights, AttentionConfig, AttentionParams};
use mmfusion::params::bind;
use mmfusion::tensor::{Graph, Rng, Tensor};

fn random(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols).map(|_| rng.normal() as f32).collect(),
    )
    .unwrap()
}

fn main() -> mmfusion::Result<()> {
    let mut rng = Rng::new(11);
    let cfg = AttentionConfig::new(16, 4)?;
    let params = AttentionParams::init(&cfg, &mut rng);

    let mut g = Graph::<f32>::new();
    let p = bind(&mut g, &params);
    let queries = g.constant(random(&mut rng, 3, 16));
    let keys = g.constant(random(&mut rng, 5, 16));
    let (out, weights) = mhsa_with_weights(&mut g, queries, keys, &p)?;
    println!("3 queries over 5 keys -> output {:?}", g.shape(out));
    for (h, w) in weights.iter().enumerate() {
        let t = g.value(*w);
        let sums: Vec<String> = (0..t.rows_cols().0)
            .map(|r| format!("{:.6}", t.row(r).iter().sum::<f32>()))
            .collect();
        println!("head {h}: weight row sums {}", sums.join(" "));
    }

    // One key: every weight is 1, so each query gets that key's value row.
    let single = g.constant(random(&mut rng, 1, 16));
    let (_, w1) = mhsa_with_weights(&mut g, queries, single, &p)?;
    println!("single key weights: {:?}", g.value(w1[0]).data());

    // Identical keys give uniform weights.
    let row = random(&mut rng, 1, 16);
    let repeated = Tensor::new(vec![4, 16], row.data().repeat(4))?;
    let same = g.constant(repeated);
    let (_, wu) = mhsa_with_weights(&mut g, queries, same, &p)?;
    println!("identical keys, first row: {:?}", g.value(wu[0]).row(0));
    Ok(())
}
