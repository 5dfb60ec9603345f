mod common;

use std::collections::HashSet;
use std::path::PathBuf;

use proptest::prelude::*;

use mmfusion::attention::{mhsa, AttentionConfig, AttentionParams};
use mmfusion::data::{
    decode_tensor, encode_tensor, split, synth_subject, DatasetManifest, ManifestEntry, SyntheticConfig,
};
use mmfusion::embedding::{build_prompt, cache_key, PromptSpec, Shots};
use mmfusion::metrics::{confusion_matrix, roc_auc, Metrics};
use mmfusion::params::bind;
use mmfusion::report::{error_cell, pct};
use mmfusion::tensor::{softmax_rows_eager, Graph, Rng, Tensor};

use common::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4.0f64..4.0, rows * cols)
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

fn permute_rows(t: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let (_, c) = t.rows_cols();
    let data = perm.iter().flat_map(|&r| t.row(r).to_vec()).collect();
    Tensor::new(vec![perm.len(), c], data).unwrap()
}

fn attention_out(params: &AttentionParams, q: &Tensor<f64>, kv: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::<f64>::new();
    let p = bind(&mut g, params);
    let (qv, kvv) = (g.constant(q.clone()), g.constant(kv.clone()));
    let out = mhsa(&mut g, qv, kvv, &p).unwrap();
    g.value(out).clone()
}

fn labelled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..50).prop_flat_map(|n| {
        (
            prop::collection::vec((0u8..8).prop_map(|k| k as f64 / 2.0), n),
            prop::collection::vec(0u8..2, n),
        )
            .prop_map(|(s, mut l)| {
                l[0] = 0;
                l[1] = 1;
                (s, l)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..6, cols in 1usize..9, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let t = Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| 30.0 * rng.normal()).collect()).unwrap();
        let s = softmax_rows_eager(&t);
        for r in 0..rows {
            let row = s.row(r);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn self_attention_is_permutation_equivariant((x, perm) in (2usize..7).prop_flat_map(|n| (matrix(n, 8), permutation(n)))) {
        let n = perm.len();
        let params = AttentionParams::init(&AttentionConfig::new(8, 2).unwrap(), &mut Rng::new(n as u64));
        let z = Tensor::new(vec![n, 8], x).unwrap();
        let zp = permute_rows(&z, &perm);
        let out = attention_out(&params, &z, &z);
        let out_p = attention_out(&params, &zp, &zp);
        prop_assert!(permute_rows(&out, &perm).max_abs_diff(&out_p) < 1e-9);
    }

    #[test]
    fn attention_ignores_key_order((q, kv, perm) in (1usize..4, 2usize..7).prop_flat_map(|(nq, nk)| (matrix(nq, 8), matrix(nk, 8), permutation(nk)))) {
        let params = AttentionParams::init(&AttentionConfig::new(8, 4).unwrap(), &mut Rng::new(3));
        let nk = perm.len();
        let q = Tensor::new(vec![q.len() / 8, 8], q).unwrap();
        let kv = Tensor::new(vec![nk, 8], kv).unwrap();
        let a = attention_out(&params, &q, &kv);
        let b = attention_out(&params, &q, &permute_rows(&kv, &perm));
        prop_assert!(a.max_abs_diff(&b) < 1e-9);
    }

    #[test]
    fn auc_matches_pairwise_count((scores, labels) in labelled_scores()) {
        prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), auc_pairwise(&scores, &labels));
    }

    #[test]
    fn auc_monotone_and_flip((scores, labels) in labelled_scores()) {
        let a = roc_auc(&scores, &labels).unwrap();
        let cubed: Vec<f64> = scores.iter().map(|s| s.powi(3) + 1.0).collect();
        prop_assert_eq!(roc_auc(&cubed, &labels).unwrap(), a);
        let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        prop_assert!((roc_auc(&scores, &flipped).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn accuracy_and_error_cells_add_to_100(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..80)) {
        let mut pairs = pairs;
        pairs.extend([(0, 0), (1, 1), (2, 2)]);
        let m = Metrics::from_confusion(confusion_matrix(pairs, 3), None).unwrap();
        let acc: f64 = pct(m.acc).parse().unwrap();
        let err: f64 = error_cell(&m).parse().unwrap();
        prop_assert!((acc + err - 100.0).abs() < 0.0101);
    }

    #[test]
    fn split_partitions_every_subject(per_class in 3usize..15, seed in any::<u64>()) {
        let cfg = SyntheticConfig { per_class, image_size: 4, seed: 1, ..Default::default() };
        let entries: Vec<ManifestEntry> = (0..4 * per_class)
            .map(|i| {
                let s = synth_subject(&cfg, i);
                ManifestEntry {
                    id: s.record.id.clone(),
                    label: s.label,
                    mri_path: String::new(),
                    pet_path: String::new(),
                    record: s.record,
                }
            })
            .collect();
        let manifest = DatasetManifest { root: PathBuf::new(), entries };
        let s = split(&manifest, [0.7, 0.15, 0.15], seed).unwrap();
        let mut seen = HashSet::new();
        for part in [&s.train, &s.val, &s.test] {
            for e in &part.entries {
                prop_assert!(seen.insert(e.id.clone()), "{} assigned twice", e.id);
            }
        }
        prop_assert_eq!(seen.len(), manifest.len());
        for (part, f) in [(&s.train, 0.7), (&s.val, 0.15), (&s.test, 0.15)] {
            let quota = per_class as f64 * f;
            for c in part.class_counts() {
                prop_assert!((c as f64 - quota).abs() < 1.0 + 1e-9, "{} vs quota {}", c, quota);
            }
        }
    }

    #[test]
    fn distinct_records_give_distinct_prompts(i in 0usize..200, j in 0usize..200) {
        let cfg = SyntheticConfig::default();
        let bank = mmfusion::data::shot_bank(&cfg);
        let a = synth_subject(&cfg, i).record;
        let mut b = synth_subject(&cfg, j).record;
        b.id = a.id.clone();
        let spec = PromptSpec::with_shots(Shots::ONE);
        let pa = build_prompt(&a, None, &spec, &bank).unwrap();
        let pb = build_prompt(&b, None, &spec, &bank).unwrap();
        prop_assert_eq!(a == b, pa == pb);
        prop_assert_ne!(cache_key(&pa, "mock"), cache_key(&pa, "http:gpt-4"));
    }

    #[test]
    fn tensor_bytes_round_trip(shape in prop::collection::vec(1usize..6, 1..=4), seed in any::<u64>()) {
        let n: usize = shape.iter().product();
        let mut rng = Rng::new(seed);
        let data: Vec<f32> = (0..n).map(|_| f32::from_bits(rng.next_u64() as u32)).collect();
        let t = Tensor::new(shape.clone(), data).unwrap();
        let bytes = encode_tensor(&t).unwrap();
        prop_assert_eq!(bytes.len(), 6 + 4 * shape.len() + 4 * n);
        let (back, used) = decode_tensor(&bytes, 0).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        for cut in [0, 3, 5, bytes.len() - 1] {
            prop_assert!(decode_tensor(&bytes[..cut], 0).is_err());
        }
    }
}
