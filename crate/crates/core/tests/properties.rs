use phi_core::attention::{tesa_attention, vanilla_attention, AttentionMode, AttentionParams};
use phi_core::diffcore::{layer_norm, softmax_rows, Matrix};
use phi_core::gmf::{interpolate_target, rollout, GapNetParams};
use phi_core::lcr::{distance_matrix, lcr_loss, lcr_loss_with, score_distance_matrix, Alignment, LcrOptions, RowNormalization};
use phi_core::metrics::{fisher_z_average, relative_l2, spearman};
use phi_core::pipeline::{Checkpoint, TrainConfig};
use phi_core::scoring::{predict_score, HeadParams};
use phi_core::synthdata::{decode_phif, encode_phif, DatasetManifest, ScoredSample};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-scale..scale, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn sized_matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| matrix(r, c, 3.0))
}

fn distinct(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::btree_set(-1000i32..1000, n).prop_flat_map(|set| {
        let v: Vec<f64> = set.into_iter().map(|k| k as f64 / 100.0).collect();
        Just(v).prop_shuffle()
    })
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

fn assert_close(a: f64, b: f64, tol: f64) -> Result<(), TestCaseError> {
    prop_assert!((a - b).abs() <= tol * (1.0 + a.abs().max(b.abs())), "{a} vs {b}");
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn spearman_ignores_strictly_increasing_maps(
        x in prop::collection::vec(-4.0f64..4.0, 3..30),
        y in prop::collection::vec(-4.0f64..4.0, 30),
        a in 0.1f64..10.0,
        b in -5.0f64..5.0,
    ) {
        let y = &y[..x.len()];
        let base = spearman(&x, y);
        let maps: [&dyn Fn(f64) -> f64; 3] = [&|v| a * v + b, &|v| v * v * v + v, &|v| v.exp()];
        for f in maps {
            let fx: Vec<f64> = x.iter().map(|&v| f(v)).collect();
            let fy: Vec<f64> = y.iter().map(|&v| f(v)).collect();
            match &base {
                Ok(r) => {
                    assert_close(spearman(&fx, y).unwrap(), *r, 1e-12)?;
                    assert_close(spearman(&x, &fy).unwrap(), *r, 1e-12)?;
                }
                Err(_) => prop_assert!(spearman(&fx, y).is_err()),
            }
        }
    }

    #[test]
    fn spearman_of_self_and_reversal(x in distinct(2..=40)) {
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_close(spearman(&x, &x).unwrap(), 1.0, 1e-12)?;
        assert_close(spearman(&x, &neg).unwrap(), -1.0, 1e-12)?;
    }

    #[test]
    fn fisher_average_lies_between_extremes(rhos in prop::collection::vec(-0.999f64..0.999, 1..12)) {
        let z = fisher_z_average(&rhos).unwrap();
        let lo = rhos.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = rhos.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(z >= lo - 1e-12 && z <= hi + 1e-12, "{z} outside [{lo}, {hi}]");
    }

    #[test]
    fn relative_l2_ignores_common_affine_rescaling(
        pairs in prop::collection::vec((10.0f64..30.0, 10.0f64..30.0), 1..20),
        a in 0.01f64..100.0,
        b in -100.0f64..100.0,
    ) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let base = relative_l2(&p, &t, 30.0, 10.0).unwrap();
        let f = |v: f64| a * v + b;
        let p2: Vec<f64> = p.iter().map(|&v| f(v)).collect();
        let t2: Vec<f64> = t.iter().map(|&v| f(v)).collect();
        assert_close(relative_l2(&p2, &t2, f(30.0), f(10.0)).unwrap(), base, 1e-9)?;
        prop_assert_eq!(relative_l2(&t, &t, 30.0, 10.0).unwrap(), 0.0);
    }

    #[test]
    fn lcr_is_nonnegative_symmetric_and_zero_on_equal_rows(
        b in 2usize..7,
        seed_d in prop::collection::vec(0.0f64..20.0, 49),
        seed_s in prop::collection::vec(0.0f64..20.0, 49),
        sum_rows in any::<bool>(),
        mse in any::<bool>(),
    ) {
        let d = Matrix::from_fn(b, b, |i, j| if i == j { 0.0 } else { seed_d[i * 7 + j] });
        let s = Matrix::from_fn(b, b, |i, j| if i == j { 0.0 } else { seed_s[i * 7 + j] });
        let opts = LcrOptions {
            normalization: if sum_rows { RowNormalization::Sum } else { RowNormalization::Softmax },
            alignment: if mse { Alignment::MeanSquared } else { Alignment::SymmetricKl },
        };
        let ds = lcr_loss_with(&d, &s, opts).unwrap();
        prop_assert!(ds >= 0.0);
        assert_close(lcr_loss_with(&s, &d, opts).unwrap(), ds, 1e-12)?;
        prop_assert!(lcr_loss_with(&d, &d, opts).unwrap().abs() <= 1e-12);
        let shifted = Matrix::from_fn(b, b, |i, j| if i == j { 0.0 } else { d.get(i, j) + 3.0 });
        prop_assert!(lcr_loss(&d, &shifted).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn distance_matrices_have_zero_diagonal_and_nonnegative_entries(
        (m, d) in (1usize..5, 1usize..6),
        b in 2usize..6,
        seed in any::<u64>(),
        scores in prop::collection::vec(10.0f64..30.0, 6),
    ) {
        let batch: Vec<Matrix> = (0..b).map(|i| seeded(m, d, seed.wrapping_add(i as u64))).collect();
        let dm = distance_matrix(&batch).unwrap();
        let sm = score_distance_matrix(&scores[..b]).unwrap();
        for i in 0..b {
            prop_assert_eq!(dm.get(i, i), 0.0);
            prop_assert_eq!(sm.get(i, i), 0.0);
            for j in 0..b {
                prop_assert!(dm.get(i, j) >= 0.0);
                prop_assert_eq!(sm.get(i, j), sm.get(j, i));
            }
        }
    }

    #[test]
    fn softmax_rows_are_positive_and_sum_to_one(x in sized_matrix(6, 8), shift in -50.0f64..50.0) {
        let p = softmax_rows(&x.map(|v| 10.0 * v + shift));
        for r in 0..p.rows() {
            prop_assert!(p.row(r).iter().all(|&v| v > 0.0));
            prop_assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn layer_norm_standardizes_rows(x in (1usize..6, 2usize..10).prop_flat_map(|(r, c)| matrix(r, c, 5.0))) {
        let c = x.cols();
        let y = layer_norm(&x, &vec![1.0; c], &vec![0.0; c], 1e-12).unwrap();
        for r in 0..x.rows() {
            let xs = x.row(r);
            let mu = xs.iter().sum::<f64>() / c as f64;
            let var = xs.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / c as f64;
            prop_assume!(var > 1e-2);
            let ys = y.row(r);
            let mean = ys.iter().sum::<f64>() / c as f64;
            let v = ys.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            prop_assert!(mean.abs() <= 1e-9);
            prop_assert!((v - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn attention_is_row_permutation_equivariant(
        m in 1usize..8,
        seed in any::<u64>(),
        tesa in any::<bool>(),
        perm_seed in any::<u64>(),
    ) {
        let (d, d_k, d_t) = (6, 4, 2);
        let p = attention_params(d, d_k, d_t, tesa, seed);
        let h = seeded(m, d, seed ^ 0x5555);
        let perm = shuffled(m, perm_seed);
        let run = |x: &Matrix| if tesa { tesa_attention(x, &p) } else { vanilla_attention(x, &p) }.unwrap();
        let out = run(&h);
        let out_p = run(&h.permute_rows(&perm));
        prop_assert!(out_p.max_abs_diff(&out.permute_rows(&perm)) <= 1e-12);
    }

    #[test]
    fn attention_rows_stay_in_the_value_hull(m in 1usize..8, seed in any::<u64>(), tesa in any::<bool>()) {
        let p = attention_params(5, 3, 2, tesa, seed);
        let h = seeded(m, 5, seed.rotate_left(7));
        let v = h.matmul(&p.w_v);
        let out = if tesa { tesa_attention(&h, &p) } else { vanilla_attention(&h, &p) }.unwrap();
        for c in 0..v.cols() {
            let col: Vec<f64> = (0..m).map(|r| v.get(r, c)).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for r in 0..m {
                prop_assert!(out.get(r, c) >= lo - 1e-12 && out.get(r, c) <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn predicted_score_ignores_clip_order(
        (m, perm) in (1usize..10).prop_flat_map(|m| (Just(m), permutation(m))),
        seed in any::<u64>(),
    ) {
        let head = HeadParams::init(6, seed);
        let h = seeded(m, 6, seed ^ 1);
        let a = predict_score(&h, &head).unwrap();
        let b = predict_score(&h.permute_rows(&perm), &head).unwrap();
        assert_close(a, b, 1e-12)?;
    }

    #[test]
    fn interpolation_hits_both_endpoints_exactly(h0 in matrix(3, 4, 5.0), h1 in matrix(3, 4, 5.0), steps in 1usize..17) {
        prop_assert_eq!(interpolate_target(&h0, &h1, 0, steps).unwrap(), h0.clone());
        prop_assert_eq!(interpolate_target(&h0, &h1, steps, steps).unwrap(), h1);
    }

    #[test]
    fn rollout_gaps_telescope(seed in any::<u64>(), steps in 1usize..9, m in 1usize..5) {
        let phi = GapNetParams::init(4, 6, seed);
        let h0 = seeded(m, 4, seed ^ 0xabc);
        let traj = rollout(&phi, &h0, steps).unwrap();
        let folded = traj.gaps.iter().fold(h0.clone(), |acc, g| acc.add(g));
        prop_assert_eq!(&folded, traj.final_state());
        let sum = traj.gaps.iter().skip(1).fold(traj.gaps[0].clone(), |acc, g| acc.add(g));
        prop_assert!(h0.add(&sum).max_abs_diff(traj.final_state()) <= 1e-12);
    }

    #[test]
    fn decoders_never_panic_on_arbitrary_bytes(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = decode_phif(&bytes);
        let _ = Checkpoint::decode(&bytes);
        let text = String::from_utf8_lossy(&bytes);
        let _ = DatasetManifest::parse(&text);
        let _ = TrainConfig::from_text(&text);
    }

    #[test]
    fn corrupted_phif_never_panics(flips in prop::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..6), cut in any::<prop::sample::Index>()) {
        let samples = vec![
            ScoredSample { features: seeded(2, 3, 1), score: 12.5 },
            ScoredSample { features: seeded(2, 3, 2), score: 27.0 },
        ];
        let mut bytes = encode_phif(&samples, 2, 3).unwrap();
        for (at, v) in flips {
            let i = at.index(bytes.len());
            bytes[i] ^= v;
        }
        let _ = decode_phif(&bytes);
        bytes.truncate(cut.index(bytes.len() + 1));
        let _ = decode_phif(&bytes);
    }
}

fn seeded(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut s = seed | 1;
    Matrix::from_fn(rows, cols, |_, _| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
    })
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let keys = seeded(1, n.max(1), seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| keys.get(0, a).total_cmp(&keys.get(0, b)));
    idx
}

fn attention_params(d: usize, d_k: usize, d_t: usize, tesa: bool, seed: u64) -> AttentionParams {
    AttentionParams {
        w_q: seeded(d, d_k, seed ^ 11),
        w_k: seeded(d, d_k, seed ^ 12),
        w_v: seeded(d, d, seed ^ 13),
        t: tesa.then(|| seeded(d_t, d_k, seed ^ 14)),
        mode: if tesa { AttentionMode::Tesa } else { AttentionMode::Vanilla },
    }
}
