mod common;

use std::collections::HashSet;

use common::*;
use nalgebra::DMatrix;
use rand::Rng;
use sparse_htucker::cur::{leverage_scores, nested_sampling, Side, DEFAULT_RANK};
use sparse_htucker::eval::frobenius_error;
use sparse_htucker::model::DEFAULT_CELL_CAP;
use sparse_htucker::{
    factorize, DimensionTree, FactorizeOptions, Linkage, ModeSubset, Sampling, SparseTensor,
};

fn all_subsets(d: usize) -> Vec<Vec<usize>> {
    (1..(1u32 << d) - 1)
        .map(|mask| (0..d).filter(|m| mask & (1 << m) != 0).collect())
        .collect()
}

#[test]
fn matricization_matches_dense_reshape() {
    let mut r = rng(1);
    for _ in 0..3 {
        let t = random_sparse(&[4, 4, 4], 0.3, &mut r);
        let dense = Dense::from_sparse(&t);
        for modes in all_subsets(3) {
            let a = dense.matricize(&modes);
            let sub = ModeSubset::new(modes.clone());
            for c in 0..a.ncols() {
                let col = t.matricize_column(&sub, c as u128 + 1).unwrap();
                for row in 0..a.nrows() {
                    let got = col.get(&(row as u128 + 1)).copied().unwrap_or(0.0);
                    assert_eq!(got, a[(row, c)], "modes {modes:?} row {row} col {c}");
                }
            }
        }
        // root column is vec(T)
        let root = t.matricize_column(&ModeSubset::full(3), 1).unwrap();
        for (lin, v) in dense.data.iter().enumerate() {
            assert_eq!(root.get(&(lin as u128 + 1)).copied().unwrap_or(0.0), *v);
        }
    }
}

#[test]
fn restrict_matches_scan() {
    let mut r = rng(2);
    let t = random_sparse(&[3, 4, 2, 3], 0.4, &mut r);
    for modes in all_subsets(4) {
        let sub = ModeSubset::new(modes.clone());
        let rest = sub.complement(4);
        let keep: HashSet<Vec<u32>> = t
            .iter()
            .map(|(i, _)| rest.project(i))
            .filter(|_| r.gen::<f64>() < 0.5)
            .collect();
        let got = t.restrict(&sub, &keep);
        let expected: Vec<(Vec<u32>, f64)> = t
            .iter()
            .filter(|(i, _)| keep.contains(&rest.modes().iter().map(|&m| i[m]).collect::<Vec<_>>()))
            .map(|(i, v)| (i.to_vec(), v))
            .collect();
        assert_eq!(got.nnz(), expected.len());
        for (i, v) in expected {
            assert_eq!(got.get(&i), v);
        }
    }
}

#[test]
fn leverage_scores_match_dense_svd_on_random_matrices() {
    let mut r = rng(3);
    for _ in 0..5 {
        let t = random_sparse(&[50, 50], 0.08, &mut r);
        let a = Dense::from_sparse(&t).matricize(&[0]);
        let (cols, expected) = dense_scores(&a, DEFAULT_RANK);
        let got =
            leverage_scores(&t, &ModeSubset::new(vec![0]), Side::Columns, DEFAULT_RANK).unwrap();
        let sum: f64 = got.scores.iter().sum();
        assert!((sum - 1.0).abs() < 1e-10);
        for c in 0..50 {
            let e = cols
                .iter()
                .position(|&x| x == c)
                .map_or(0.0, |p| expected[p]);
            assert!((got.get(&[c as u32 + 1]) - e).abs() <= 1e-8, "column {c}");
        }
    }
}

#[test]
fn rank_one_two_by_two_scores() {
    let t = SparseTensor::from_coords(
        vec![2, 2],
        [
            (vec![1, 1], 2.0),
            (vec![1, 2], 4.0),
            (vec![2, 1], 1.0),
            (vec![2, 2], 2.0),
        ],
    )
    .unwrap();
    let s = leverage_scores(&t, &ModeSubset::new(vec![0]), Side::Columns, DEFAULT_RANK).unwrap();
    assert!((s.get(&[1]) - 0.2).abs() < 1e-12);
    assert!((s.get(&[2]) - 0.8).abs() < 1e-12);
}

#[test]
fn transfer_tensors_match_dense_triple_loop() {
    let mut r = rng(4);
    for (trial, sampling) in [
        Sampling::Exhaustive,
        Sampling::leverage(0.6).unwrap(),
        Sampling::leverage(1.0).unwrap(),
    ]
    .into_iter()
    .enumerate()
    {
        let t = random_sparse(&[4, 4, 4], 0.35, &mut r);
        let dense = Dense::from_sparse(&t);
        let tree = DimensionTree::balanced(3).unwrap();
        let (plan, model) =
            factorize(&t, &tree, &FactorizeOptions::new(sampling, trial as u64)).unwrap();
        for node in tree.interior() {
            let expected = dense_transfer(&dense, &plan, node);
            let b = model.transfer_tensor(node).unwrap();
            assert_eq!(
                b.shape(),
                [expected.len(), expected[0].len(), expected[0][0].len()]
            );
            for (i, slice) in expected.iter().enumerate() {
                for (j, row) in slice.iter().enumerate() {
                    for (l, &e) in row.iter().enumerate() {
                        assert!(
                            (b.get(i, j, l) - e).abs() <= 1e-12,
                            "node {node} ({i},{j},{l})"
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn planted_models_reconstruct_exactly() {
    let mut r = rng(5);
    for d in [2, 3, 4] {
        for _ in 0..3 {
            let dims: Vec<usize> = (0..d).map(|_| r.gen_range(2..=5)).collect();
            let planted = Planted::random(&dims, 3, &mut r);
            let dense = planted.dense();
            let t = dense.to_sparse();
            let (_, model) = factorize(
                &t,
                &planted.tree,
                &FactorizeOptions::new(Sampling::Exhaustive, 0),
            )
            .unwrap();
            let rec = model.reconstruct_full(DEFAULT_CELL_CAP).unwrap();
            assert!(rel_frobenius(&rec.data, &dense.data) <= 1e-8, "d = {d}");
        }
    }
}

#[test]
fn query_element_and_blocks_agree_with_full_reconstruction() {
    let mut r = rng(6);
    let t = random_sparse(&[3, 3, 3], 0.5, &mut r);
    let tree = DimensionTree::balanced(3).unwrap();
    let (_, model) = factorize(
        &t,
        &tree,
        &FactorizeOptions::new(Sampling::leverage(0.8).unwrap(), 1),
    )
    .unwrap();
    let full = model.reconstruct_full(DEFAULT_CELL_CAP).unwrap();
    for (idx, v) in full.iter() {
        assert!((model.query_element(&idx).unwrap() - v).abs() <= 1e-10 * (1.0 + v.abs()));
    }
    for _ in 0..10 {
        let ranges: Vec<(u32, u32)> = (0..3)
            .map(|_| {
                let lo = r.gen_range(1..=2);
                (lo, lo + 1)
            })
            .collect();
        let block = model.query_block(&ranges, DEFAULT_CELL_CAP).unwrap();
        for (idx, v) in block.iter() {
            assert!((full.get(&idx) - v).abs() <= 1e-12 * (1.0 + v.abs()));
        }
    }
    let all: Vec<(u32, u32)> = vec![(1, 3); 3];
    assert_eq!(model.query_block(&all, DEFAULT_CELL_CAP).unwrap(), full);
}

#[test]
fn frobenius_error_matches_dense_oracle() {
    let mut r = rng(7);
    let t = random_sparse(&[4, 4, 4], 0.3, &mut r);
    let tree = DimensionTree::balanced(3).unwrap();
    let (_, model) = factorize(
        &t,
        &tree,
        &FactorizeOptions::new(Sampling::leverage(1.0).unwrap(), 3),
    )
    .unwrap();
    let dense = Dense::from_sparse(&t);
    let mut acc = 0.0;
    for idx in dense.indices() {
        let d = dense.get(&idx) - model.query_element(&idx).unwrap();
        acc += d * d;
    }
    let got = frobenius_error(&t, &model, DEFAULT_CELL_CAP).unwrap();
    assert!((got - acc.sqrt()).abs() <= 1e-12 * (1.0 + got));
}

#[test]
fn exhaustive_cur_is_exact_for_low_rank_matrix() {
    // rank-2 6×6 matrix a bᵀ + c dᵀ
    let a = [1.0, 2.0, 0.0, 1.0, 3.0, 1.0];
    let b = [2.0, 0.0, 1.0, 1.0, 1.0, 4.0];
    let c = [0.0, 1.0, 1.0, 2.0, 0.0, 1.0];
    let e = [1.0, 3.0, 0.0, 2.0, 1.0, 0.0];
    let mut coords = Vec::new();
    for i in 0..6 {
        for j in 0..6 {
            coords.push((vec![i as u32 + 1, j as u32 + 1], a[i] * b[j] + c[i] * e[j]));
        }
    }
    let t = SparseTensor::from_coords(vec![6, 6], coords).unwrap();
    for sampling in [Sampling::Exhaustive, Sampling::leverage(0.6).unwrap()] {
        let (s, _) = nested_sampling(&t, 1, &ModeSubset::new(vec![0]), None, sampling, 11).unwrap();
        let dense = Dense::from_sparse(&t).matricize(&[0]);
        let p: Vec<usize> = s.rows.iter().map(|k| k[0] as usize - 1).collect();
        let q: Vec<usize> = s.cols.iter().map(|k| k[0] as usize - 1).collect();
        let cmat = DMatrix::from_fn(6, q.len(), |i, j| dense[(i, q[j])]);
        let rmat = DMatrix::from_fn(p.len(), 6, |i, j| dense[(p[i], j)]);
        let approx = cmat * &s.link * rmat;
        assert!((approx - &dense).amax() <= 1e-10);
    }
}

#[test]
fn data_driven_tree_merges_co_occurring_modes_first() {
    // modes 1 and 2 are non-null together, mode 3 independently
    let coords = vec![
        (vec![2, 2, 1], 1.0),
        (vec![3, 2, 1], 1.0),
        (vec![2, 3, 2], 1.0),
        (vec![1, 1, 2], 1.0),
        (vec![1, 1, 3], 1.0),
    ];
    let t = SparseTensor::from_coords(vec![3, 3, 3], coords)
        .unwrap()
        .with_null_element(Some(1));
    for linkage in [Linkage::Complete, Linkage::Average] {
        let tree = DimensionTree::data_driven(&t, linkage).unwrap();
        assert!(tree.check(3).is_empty());
        let (a, b) = tree.children(tree.root()).unwrap();
        assert_eq!(tree.modes(a).modes(), &[0, 1]);
        assert_eq!(tree.modes(b).modes(), &[2]);
    }
}

#[test]
fn balanced_five_mode_tree() {
    let tree = DimensionTree::balanced(5).unwrap();
    assert_eq!(tree.len(), 9);
    let (a, b) = tree.children(tree.root()).unwrap();
    assert_eq!(tree.modes(a).modes(), &[0, 1, 2]);
    assert_eq!(tree.modes(b).modes(), &[3, 4]);
}
