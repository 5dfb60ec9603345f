//! A least-squares linear probe on three tabular fields must separate the
//! four synthetic classes well above chance.

use mmfusion::data::{synth_subject, SyntheticConfig};

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn features(cfg: &SyntheticConfig, i: usize) -> (Vec<f64>, usize) {
    let s = synth_subject(cfg, i);
    let r = s.record;
    (
        vec![1.0, r.mmse as f64 / 30.0, r.adas_cog / 70.0, r.csf_abeta / 1000.0],
        s.label as usize,
    )
}

#[test]
fn tabular_probe_beats_seventy_percent() {
    // Least-squares regression onto the ordinal severity, rounded to the
    // nearest class. One-hot targets would mask the middle classes.
    let train_cfg = SyntheticConfig {
        per_class: 200,
        image_size: 8,
        seed: 1,
        ..Default::default()
    };
    let test_cfg = SyntheticConfig {
        seed: 2,
        ..train_cfg.clone()
    };
    let n = 4 * train_cfg.per_class;
    let d = 4;
    let mut xtx = vec![vec![0.0; d]; d];
    let mut xty = vec![0.0; d];
    for i in 0..n {
        let (x, y) = features(&train_cfg, i);
        for a in 0..d {
            for b in 0..d {
                xtx[a][b] += x[a] * x[b];
            }
            xty[a] += x[a] * y as f64;
        }
    }
    let w = solve(xtx, xty);
    let mut correct = 0;
    for i in 0..n {
        let (x, y) = features(&test_cfg, i);
        let score: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
        let pred = score.round().clamp(0.0, 3.0) as usize;
        correct += (pred == y) as usize;
    }
    let acc = correct as f64 / n as f64;
    println!("probe accuracy {acc:.3}");
    assert!(acc > 0.70, "probe accuracy {acc}");
}
