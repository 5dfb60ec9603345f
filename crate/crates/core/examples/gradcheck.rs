//! Reverse-mode gradients checked against central differences, first on a
//! two-layer network, then on the full model (`gradcheck [seed]`).

use mmfusion::model::full_model_gradcheck;
use mmfusion::tensor::{gradcheck, GradcheckOptions, Graph, Rng, Tensor};

fn main() -> mmfusion::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut rng = Rng::new(seed);
    let mut draw = |r: usize, c: usize| Tensor::<f64>::new(vec![r, c], (0..r * c).map(|_| rng.normal()).collect());
    let x = draw(4, 6)?;
    let params = vec![("w1".to_string(), draw(6, 5)?), ("w2".to_string(), draw(5, 3)?)];

    let net = |g: &mut Graph<f64>, v: &[mmfusion::tensor::Var]| {
        let input = g.constant(x.clone());
        let h = g.matmul(input, v[0])?;
        let h = g.gelu(h);
        let logits = g.matmul(h, v[1])?;
        let pooled = g.mean_rows(logits)?;
        g.cross_entropy(pooled, 2)
    };
    let small = gradcheck(net, &params, &GradcheckOptions::default())?;
    println!("two-layer net: max relative error {:.2e}", small.max_rel_error);

    let corrupted = GradcheckOptions {
        corrupt_op: Some("gelu".into()),
        ..Default::default()
    };
    let bad = gradcheck(net, &params, &corrupted)?;
    println!(
        "with a broken gelu backward: {:.2e} at {:?}",
        bad.max_rel_error, bad.worst
    );

    let full = full_model_gradcheck(seed, &GradcheckOptions::default())?;
    let (name, i) = full.worst.clone().unwrap_or_default();
    println!(
        "full model: {} coordinates, max relative error {:.2e} at {name}[{i}]",
        full.coordinates_checked, full.max_rel_error
    );
    Ok(())
}
