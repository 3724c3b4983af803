mod common;

use std::collections::BTreeMap;

use common::*;
use proptest::prelude::*;
use sparse_htucker::eval::{frobenius_error, sampled_nnz_error};
use sparse_htucker::ingest::{build_cooccurrence_tensor, synth_events, SynthProfile};
use sparse_htucker::model::DEFAULT_CELL_CAP;
use sparse_htucker::{factorize, DimensionTree, FactorizeOptions, Linkage, Sampling, SparseTensor};

fn small_tensor() -> impl Strategy<Value = SparseTensor> {
    (2usize..=4)
        .prop_flat_map(|d| {
            (
                prop::collection::vec(2u32..=4, d),
                any::<u64>(),
                0.15f64..0.6,
            )
        })
        .prop_map(|(dims, seed, density)| random_sparse(&dims, density, &mut rng(seed)))
}

fn sampling() -> impl Strategy<Value = Sampling> {
    prop_oneof![
        Just(Sampling::Exhaustive),
        (0.3f64..1.5).prop_map(|e| Sampling::leverage(e).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn data_driven_trees_validate(t in small_tensor(), average in any::<bool>()) {
        let linkage = if average { Linkage::Average } else { Linkage::Complete };
        let tree = DimensionTree::data_driven(&t.clone().with_null_element(Some(1)), linkage).unwrap();
        prop_assert!(tree.check(t.order()).is_empty());
        prop_assert_eq!(tree.leaves().count(), t.order());
        prop_assert_eq!(tree.interior().count(), t.order() - 1);
    }

    #[test]
    fn balanced_tree_shape(d in 2usize..=32) {
        let tree = DimensionTree::balanced(d).unwrap();
        prop_assert!(tree.check(d).is_empty());
        prop_assert_eq!(tree.len(), 2 * d - 1);
        prop_assert_eq!(tree.depth(), (d as f64).log2().ceil() as usize);
        prop_assert_eq!(DimensionTree::balanced(d).unwrap(), tree);
    }

    #[test]
    fn factorization_invariants(t in small_tensor(), s in sampling(), seed in any::<u64>()) {
        let tree = DimensionTree::balanced(t.order()).unwrap();
        let opts = FactorizeOptions::new(s, seed);
        let (plan, model) = factorize(&t, &tree, &opts).unwrap();

        // every non-root node sampled exactly once, root mirror identity
        prop_assert_eq!(plan.samplings.len(), tree.len() - 1);
        prop_assert!(!plan.samplings.contains_key(&tree.root()));
        let (a, b) = tree.children(tree.root()).unwrap();
        prop_assert_eq!(&plan.get(a).rows, &plan.get(b).cols);
        prop_assert_eq!(&plan.get(a).cols, &plan.get(b).rows);
        prop_assert_eq!(plan.get(b).link.clone(), plan.get(a).link.transpose());
        prop_assert_eq!(count_nesting_violations(&plan), 0);

        // shapes chain through the tree
        for node in tree.interior() {
            let (c1, c2) = tree.children(node).unwrap();
            let k = if node == tree.root() { 1 } else { plan.get(node).cols.len() };
            let shape = model.transfer_tensor(node).unwrap().shape();
            prop_assert_eq!(shape, [k, plan.get(c1).cols.len(), plan.get(c2).cols.len()]);
        }

        // leaves hold copied fibers only
        for leaf in tree.leaves() {
            let u = model.leaf_factor(leaf).unwrap();
            let mode = tree.modes(leaf).modes()[0];
            let rest = tree.modes(leaf).complement(t.order());
            let mut fiber_nnz = 0;
            for (c, q) in plan.get(leaf).cols.iter().enumerate() {
                let fiber = t.column_fiber(tree.modes(leaf), q);
                fiber_nnz += fiber.len();
                for (row, v) in u.column(c) {
                    let mut idx = vec![0u32; t.order()];
                    idx[mode] = row;
                    rest.scatter(q, &mut idx);
                    prop_assert_eq!(v.to_bits(), t.get(&idx).to_bits());
                }
            }
            prop_assert!(u.nnz() <= fiber_nnz);
        }

        // storage formula
        let expected: usize = tree.leaves().map(|l| model.leaf_factor(l).unwrap().nnz()).sum::<usize>()
            + tree.interior().map(|n| model.transfer_tensor(n).unwrap().shape().iter().product::<usize>()).sum::<usize>();
        prop_assert_eq!(model.storage_size(), expected);

        // determinism
        let (_, again) = factorize(&t, &tree, &opts).unwrap();
        prop_assert_eq!(&again, &model);
    }

    #[test]
    fn parallel_phases_match_sequential(t in small_tensor(), seed in any::<u64>(), workers in 2usize..=8) {
        let tree = DimensionTree::balanced(t.order()).unwrap();
        let base = FactorizeOptions::new(Sampling::leverage(0.7).unwrap(), seed);
        let (_, seq) = factorize(&t, &tree, &base).unwrap();
        let (_, par) = factorize(&t, &tree, &FactorizeOptions { workers, ..base }).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        seq.write_to(&mut x).unwrap();
        par.write_to(&mut y).unwrap();
        prop_assert_eq!(x, y);
    }

    #[test]
    fn queries_agree_with_reconstruction(t in small_tensor(), seed in any::<u64>()) {
        let tree = DimensionTree::balanced(t.order()).unwrap();
        let (_, model) = factorize(&t, &tree, &FactorizeOptions::new(Sampling::leverage(0.8).unwrap(), seed)).unwrap();
        let full = model.reconstruct_full(DEFAULT_CELL_CAP).unwrap();
        for (idx, v) in full.iter() {
            let q = model.query_element(&idx).unwrap();
            prop_assert!((q - v).abs() <= 1e-10 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn full_error_dominates_support_error(t in small_tensor(), seed in any::<u64>()) {
        let tree = DimensionTree::balanced(t.order()).unwrap();
        let (_, model) = factorize(&t, &tree, &FactorizeOptions::new(Sampling::leverage(1.0).unwrap(), seed)).unwrap();
        let full = frobenius_error(&t, &model, DEFAULT_CELL_CAP).unwrap();
        let support = sampled_nnz_error(&t, &model, t.nnz(), seed).unwrap();
        prop_assert!(full * full >= support * support - 1e-9 * (1.0 + full * full));
        prop_assert_eq!(sampled_nnz_error(&t, &model, 3, seed).unwrap(), sampled_nnz_error(&t, &model, 3, seed).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cooccurrence_mass_and_integrality(modes in 1usize..=5, records in 1usize..=120, max_events in 1usize..=3, seed in any::<u64>()) {
        let p = SynthProfile { modes, records, max_events, ..Default::default() };
        let ev = synth_events(&p, seed).unwrap();
        let names = p.mode_names();
        let t = build_cooccurrence_tensor(&ev, &names, &Default::default()).unwrap();
        let mass: usize = ev
            .records()
            .values()
            .map(|per| names.iter().map(|m| per.get(m).map_or(1, |s| s.len())).product::<usize>())
            .sum();
        prop_assert_eq!(t.sum(), mass as f64);
        prop_assert!(t.values().iter().all(|v| *v >= 1.0 && v.fract() == 0.0));
    }

    #[test]
    fn mode_selection_commutes_with_marginalization(modes in 2usize..=5, records in 1usize..=120, seed in any::<u64>()) {
        // one event per present mode, so summing out extra modes loses no multiplicity
        let p = SynthProfile { modes, records, max_events: 1, ..Default::default() };
        let ev = synth_events(&p, seed).unwrap();
        let all = p.mode_names();
        let keep: Vec<String> = all[..modes / 2 + 1].to_vec();
        let full = build_cooccurrence_tensor(&ev, &all, &Default::default()).unwrap();
        let direct = build_cooccurrence_tensor(&ev, &keep, &Default::default()).unwrap();
        let mut summed: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for (idx, v) in full.iter() {
            *summed.entry(idx[..keep.len()].to_vec()).or_default() += v;
        }
        prop_assert_eq!(summed.len(), direct.nnz());
        for (idx, v) in direct.iter() {
            prop_assert_eq!(summed[idx], v);
        }
    }
}
