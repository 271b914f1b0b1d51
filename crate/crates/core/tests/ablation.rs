mod common;

use common::{max_abs_diff, random_matrix, random_signal, removed_part, rng};
use faedkv::ablation::{prune_columns, retained_count, zero_chunk};
use faedkv::linalg::Matrix;
use faedkv::model::{CacheMode, ModelConfig, PrunedLayers, ToyModel};
use faedkv::spectral::{dft_forward, idft_full};
use faedkv::{greedy_select, partition, run_ablation, CacheGeometry, ImportanceTable, KeptBins};
use proptest::prelude::*;

fn small_model(layers: usize) -> ToyModel {
    ToyModel::random(
        ModelConfig {
            layers,
            heads: 2,
            d_model: 8,
            vocab: 16,
            max_context: 512,
            ffn_hidden: 0,
        },
        11,
    )
    .unwrap()
}

fn corpus(len: usize, count: usize, seed: u64) -> Vec<Vec<u32>> {
    faedkv::corpus::synthetic_corpus(16, count, len, seed)
}

#[test]
fn pruning_a_chunk_removes_exactly_its_inverse() {
    let mut r = rng(1);
    let x = random_signal(&mut r, 44);
    let p = partition(44, 22).unwrap();
    let s = dft_forward(&x).unwrap();
    let pruned = idft_full(&zero_chunk(&s, &p, 3).unwrap());
    let kept: Vec<usize> = (0..44).filter(|k| !p.chunk(3).contains(k)).collect();
    let removed = removed_part(&x, &kept);
    let diff: Vec<f64> = x.iter().zip(&pruned).map(|(a, b)| a - b).collect();
    assert!(max_abs_diff(&diff, &removed) < 1e-12);
}

#[test]
fn constant_segment_survives_any_chunk_without_dc() {
    let seg = Matrix::from_vec(40, 2, [3.0, -1.0].repeat(40)).unwrap();
    let p = partition(40, 8).unwrap();
    for c in 1..8 {
        let kept = p
            .bins_of(&(0..8).filter(|&x| x != c).collect::<Vec<_>>())
            .unwrap();
        assert!(prune_columns(&seg, &kept).unwrap().max_abs_diff(&seg) < 1e-12);
    }
}

#[test]
fn constant_layer_gives_zero_delta_outside_dc() {
    let mut model = small_model(2);
    // zero projections make layer 0's K and V constant along the token axis
    model.weights_mut().layers[0].wk = Matrix::zeros(8, 8);
    model.weights_mut().layers[0].wv = Matrix::zeros(8, 8);
    let table = run_ablation(&model, &corpus(96, 2, 4), 4, CacheGeometry::new(4, 8)).unwrap();
    for c in 0..4 {
        assert!(table.delta(0, c).abs() < 1e-6);
    }
}

#[test]
fn single_chunk_full_retention_keeps_perplexity() {
    let model = small_model(2);
    let data = corpus(64, 2, 5);
    let g = CacheGeometry::new(4, 8);
    let table = run_ablation(&model, &data, 1, g).unwrap();
    assert_eq!((table.layers(), table.chunks()), (2, 1));
    let mask = greedy_select(&table, 1.0).unwrap();
    assert_eq!(mask.layers(), &[vec![0], vec![0]]);
    let full = faedkv::ablation::mean_perplexity(&model, &data, &CacheMode::Full).unwrap();
    let pruned = faedkv::ablation::mean_perplexity(
        &model,
        &data,
        &CacheMode::Pruned(PrunedLayers::from_mask(&mask, g)),
    )
    .unwrap();
    assert!((full - pruned).abs() < 1e-6 * full);
}

#[test]
fn ablation_is_reproducible_cell_by_cell() {
    let model = small_model(2);
    let data = corpus(64, 1, 6);
    let g = CacheGeometry::new(4, 8);
    let table = run_ablation(&model, &data, 4, g).unwrap();
    let base = model.perplexity(&CacheMode::Full, &data[0]).unwrap();
    for l in 0..2 {
        for c in 0..4 {
            let mut layers = vec![None; 2];
            layers[l] = Some((0..4).filter(|&x| x != c).collect());
            let ppl = model
                .perplexity(
                    &CacheMode::Pruned(PrunedLayers::new(4, g, layers)),
                    &data[0],
                )
                .unwrap();
            assert_eq!(table.delta(l, c), (ppl - base) / base);
        }
    }
    assert_eq!(run_ablation(&model, &data, 4, g).unwrap(), table);
}

#[test]
fn too_short_corpus_rejected() {
    let model = small_model(1);
    let g = CacheGeometry::new(4, 8);
    assert!(run_ablation(&model, &[vec![1]], 2, g).is_err());
    assert!(run_ablation(&model, &[], 2, g).is_err());
    assert!(run_ablation(&model, &[vec![1; 12]], 2, g).is_err());
}

#[test]
fn negligible_chunk_barely_moves_the_segment() {
    let mut r = rng(2);
    let m = 48;
    // energy only in bins 0..8 and their mirror
    let mut seg = Matrix::zeros(m, 3);
    for c in 0..3 {
        let x = random_signal(&mut r, m);
        let mut s = dft_forward(&x).unwrap();
        for k in 8..=m - 8 {
            s.bins_mut()[k] = num_complex::Complex64::new(0.0, 0.0);
        }
        for (i, v) in idft_full(&s).into_iter().enumerate() {
            seg.set(i, c, v);
        }
    }
    let p = partition(m, 6).unwrap();
    let kept = p.bins_of(&[0, 1, 3, 4, 5]).unwrap();
    assert!(prune_columns(&seg, &kept).unwrap().max_abs_diff(&seg) < 1e-5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_covers_contiguously(m in 1usize..500, c in 1usize..50) {
        prop_assume!(c <= m);
        let p = partition(m, c).unwrap();
        prop_assert_eq!(p.boundaries()[0], 0);
        prop_assert_eq!(*p.boundaries().last().unwrap(), m);
        for i in 0..c - 1 {
            prop_assert_eq!(p.chunk_len(i), m / c);
        }
        prop_assert_eq!(p.chunk_len(c - 1), m / c + m % c);
    }

    #[test]
    fn zero_chunk_idempotent_and_commutative(
        x in prop::collection::vec(-3.0f64..3.0, 12..80),
        a in 0usize..6,
        b in 0usize..6,
    ) {
        let s = dft_forward(&x).unwrap();
        let p = partition(x.len(), 6).unwrap();
        let once = zero_chunk(&s, &p, a).unwrap();
        prop_assert_eq!(&zero_chunk(&once, &p, a).unwrap(), &once);
        let ab = zero_chunk(&once, &p, b).unwrap();
        let ba = zero_chunk(&zero_chunk(&s, &p, b).unwrap(), &p, a).unwrap();
        prop_assert_eq!(ab, ba);
    }

    #[test]
    fn greedy_count_and_scale_invariance(
        rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 22), 1..4),
        r in 0.01f64..=1.0,
        scale in 0.001f64..1000.0,
    ) {
        let t = ImportanceTable::from_rows(&rows, 1.0).unwrap();
        let scaled: Vec<Vec<f64>> = rows.iter().map(|row| row.iter().map(|v| v * scale).collect()).collect();
        let ts = ImportanceTable::from_rows(&scaled, 1.0).unwrap();
        let want = retained_count(r, 22);
        prop_assume!(want >= 1);
        let mask = greedy_select(&t, r).unwrap();
        for l in 0..rows.len() {
            prop_assert_eq!(mask.retained(l).len(), want);
        }
        let scaled_mask = greedy_select(&ts, r).unwrap();
        prop_assert_eq!(scaled_mask.layers(), mask.layers());
    }

    #[test]
    fn kept_bins_are_union_of_chunks(m in 22usize..300, seed in any::<u64>()) {
        let mut r = rng(seed);
        let rows = vec![random_signal(&mut r, 22)];
        let mask = greedy_select(&ImportanceTable::from_rows(&rows, 1.0).unwrap(), 0.25).unwrap();
        let p = partition(m, 22).unwrap();
        let kept = mask.kept_bins(0, m).unwrap();
        let expected: Vec<usize> = mask.retained(0).iter().flat_map(|&c| p.chunk(c)).collect();
        prop_assert_eq!(kept.indices(), expected.as_slice());
    }

    #[test]
    fn pruned_columns_differ_by_removed_component(
        m in 8usize..64,
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let seg = random_matrix(&mut r, m, 2);
        let kept: Vec<usize> = (0..m).filter(|k| k % 3 != 1).collect();
        let pruned = prune_columns(&seg, &KeptBins::new(m, kept.clone()).unwrap()).unwrap();
        for c in 0..2 {
            let col = seg.column(c);
            let diff: Vec<f64> = col.iter().zip(pruned.column(c)).map(|(a, b)| a - b).collect();
            prop_assert!(max_abs_diff(&diff, &removed_part(&col, &kept)) < 1e-10);
        }
    }
}
