//! Test-side oracles: dense tensors, brute-force matricization and an
//! independent evaluator for planted hierarchical models.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparse_htucker::factorize::FactorizationPlan;
use sparse_htucker::tree::NodeId;
use sparse_htucker::{DimensionTree, SparseTensor};

/// Dense tensor, colexicographic layout (first mode fastest).
#[derive(Debug, Clone)]
pub struct Dense {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn zeros(dims: &[usize]) -> Self {
        Dense {
            dims: dims.to_vec(),
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_sparse(t: &SparseTensor) -> Self {
        let dims: Vec<usize> = t.dims().iter().map(|&n| n as usize).collect();
        let mut d = Dense::zeros(&dims);
        for (idx, v) in t.iter() {
            let lin = d.offset(idx);
            d.data[lin] = v;
        }
        d
    }

    /// Offset of a 1-based multi-index.
    pub fn offset(&self, idx: &[u32]) -> usize {
        let mut lin = 0;
        let mut stride = 1;
        for (&i, &n) in idx.iter().zip(&self.dims) {
            lin += (i as usize - 1) * stride;
            stride *= n;
        }
        lin
    }

    pub fn get(&self, idx: &[u32]) -> f64 {
        self.data[self.offset(idx)]
    }

    /// All 1-based multi-indices in layout order.
    pub fn indices(&self) -> Vec<Vec<u32>> {
        (0..self.data.len())
            .map(|mut lin| {
                self.dims
                    .iter()
                    .map(|&n| {
                        let i = lin % n;
                        lin /= n;
                        i as u32 + 1
                    })
                    .collect()
            })
            .collect()
    }

    pub fn to_sparse(&self) -> SparseTensor {
        let dims = self.dims.iter().map(|&n| n as u32).collect();
        let coords: Vec<(Vec<u32>, f64)> = self
            .indices()
            .into_iter()
            .zip(&self.data)
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, &v)| (i, v))
            .collect();
        SparseTensor::from_coords(dims, coords).unwrap()
    }

    /// Dense `A^(t)` by explicit reshape: rows colexicographic over the
    /// sorted modes of `t` (0-based), columns over the rest.
    pub fn matricize(&self, t: &[usize]) -> DMatrix<f64> {
        let d = self.dims.len();
        let rest: Vec<usize> = (0..d).filter(|m| !t.contains(m)).collect();
        let nr: usize = t.iter().map(|&m| self.dims[m]).product();
        let nc: usize = rest.iter().map(|&m| self.dims[m]).product();
        let mut a = DMatrix::zeros(nr, nc);
        for idx in self.indices() {
            let r = colex(
                &t.iter().map(|&m| idx[m]).collect::<Vec<_>>(),
                &t.iter().map(|&m| self.dims[m]).collect::<Vec<_>>(),
            );
            let c = colex(
                &rest.iter().map(|&m| idx[m]).collect::<Vec<_>>(),
                &rest.iter().map(|&m| self.dims[m]).collect::<Vec<_>>(),
            );
            a[(r, c)] = self.get(&idx);
        }
        a
    }
}

/// 0-based colexicographic position of a 1-based key.
pub fn colex(key: &[u32], dims: &[usize]) -> usize {
    let mut lin = 0;
    let mut stride = 1;
    for (&i, &n) in key.iter().zip(dims) {
        lin += (i as usize - 1) * stride;
        stride *= n;
    }
    lin
}

/// Random sparse tensor with roughly `density` of cells set to values in
/// `[1, 10)`; at least one entry is always present.
pub fn random_sparse(dims: &[u32], density: f64, rng: &mut ChaCha8Rng) -> SparseTensor {
    let dense = Dense::zeros(&dims.iter().map(|&n| n as usize).collect::<Vec<_>>());
    let mut coords: Vec<(Vec<u32>, f64)> = dense
        .indices()
        .into_iter()
        .filter_map(|i| {
            let keep = rng.gen::<f64>() < density;
            let v = rng.gen_range(1.0..10.0);
            keep.then_some((i, v))
        })
        .collect();
    if coords.is_empty() {
        coords.push((dims.iter().map(|_| 1).collect(), 1.0));
    }
    SparseTensor::from_coords(dims.to_vec(), coords).unwrap()
}

/// Planted hierarchical model: random leaf bases and transfer tensors
/// evaluated element by element with an explicit recursion.
pub struct Planted {
    pub tree: DimensionTree,
    pub dims: Vec<usize>,
    leaves: BTreeMap<NodeId, DMatrix<f64>>,
    /// `B_t[i][(j, l)]`.
    transfers: BTreeMap<NodeId, Vec<DMatrix<f64>>>,
}

impl Planted {
    /// Random planted model on a balanced tree with ranks in `1..=max_rank`.
    pub fn random(dims: &[usize], max_rank: usize, rng: &mut ChaCha8Rng) -> Self {
        let tree = DimensionTree::balanced(dims.len()).unwrap();
        let mut rank = BTreeMap::new();
        for n in tree.nodes() {
            let r = if n.id == tree.root() {
                1
            } else {
                rng.gen_range(1..=max_rank)
            };
            rank.insert(n.id, r);
        }
        let mut leaves = BTreeMap::new();
        let mut transfers = BTreeMap::new();
        for n in tree.nodes() {
            match n.children {
                None => {
                    let rows = dims[n.modes.modes()[0]];
                    let mut u = DMatrix::from_fn(rows, rank[&n.id], |_, _| {
                        if rng.gen::<f64>() < 0.25 {
                            0.0
                        } else {
                            rng.gen_range(0.1..1.0)
                        }
                    });
                    for c in 0..u.ncols() {
                        if u.column(c).iter().all(|&x| x == 0.0) {
                            u[(c % rows, c)] = 0.5;
                        }
                    }
                    leaves.insert(n.id, u);
                }
                Some((a, b)) => {
                    let slices = (0..rank[&n.id])
                        .map(|_| {
                            DMatrix::from_fn(rank[&a], rank[&b], |_, _| rng.gen_range(-1.0..1.0))
                        })
                        .collect();
                    transfers.insert(n.id, slices);
                }
            }
        }
        Planted {
            tree,
            dims: dims.to_vec(),
            leaves,
            transfers,
        }
    }

    fn vector(&self, node: NodeId, idx: &[u32]) -> Vec<f64> {
        match self.tree.children(node) {
            None => {
                let m = self.tree.modes(node).modes()[0];
                self.leaves[&node]
                    .row(idx[m] as usize - 1)
                    .iter()
                    .copied()
                    .collect()
            }
            Some((a, b)) => {
                let ua = self.vector(a, idx);
                let ub = self.vector(b, idx);
                self.transfers[&node]
                    .iter()
                    .map(|s| {
                        let mut acc = 0.0;
                        for (j, x) in ua.iter().enumerate() {
                            for (l, y) in ub.iter().enumerate() {
                                acc += s[(j, l)] * x * y;
                            }
                        }
                        acc
                    })
                    .collect()
            }
        }
    }

    pub fn dense(&self) -> Dense {
        let mut d = Dense::zeros(&self.dims);
        for idx in d.indices() {
            let v = self.vector(self.tree.root(), &idx)[0];
            let o = d.offset(&idx);
            d.data[o] = v;
        }
        d
    }
}

/// Relation check done from scratch: every sampled column of a non-root
/// node, read as a full complement index, must split into a sibling part
/// and a column sampled at the parent. Returns the number of violations.
pub fn count_nesting_violations(plan: &FactorizationPlan) -> usize {
    let tree = &plan.tree;
    let d = tree.order();
    let mut bad = 0;
    for (&node, s) in &plan.samplings {
        let parent = tree.parent(node).unwrap();
        let node_modes = tree.modes(node).modes().to_vec();
        let complement: Vec<usize> = (0..d).filter(|m| !node_modes.contains(m)).collect();
        assert_eq!(node_modes, s.modes.modes());
        for q in &s.cols {
            assert_eq!(q.len(), complement.len());
            if parent == tree.root() {
                // the parent column is the empty key of vec(A): nothing to check
                continue;
            }
            let parent_modes = tree.modes(parent).modes();
            let parent_complement: Vec<usize> =
                (0..d).filter(|m| !parent_modes.contains(m)).collect();
            let projected: Vec<u32> = parent_complement
                .iter()
                .map(|m| q[complement.iter().position(|c| c == m).unwrap()])
                .collect();
            let allowed: HashSet<&Vec<u32>> = plan.samplings[&parent].cols.iter().collect();
            if !allowed.contains(&projected) {
                bad += 1;
            }
        }
    }
    bad
}

/// `(B_t)_{i,j,l} = Σ_p Σ_q (M_t1)_{j,p} A^(t)_{(p,q),q_i} (M_t2)_{l,q}` by
/// explicit loops over a dense copy of the tensor.
pub fn dense_transfer(
    dense: &Dense,
    plan: &sparse_htucker::FactorizationPlan,
    node: usize,
) -> Vec<Vec<Vec<f64>>> {
    let tree = &plan.tree;
    let d = tree.order();
    let (t1, t2) = tree.children(node).unwrap();
    let s1 = plan.get(t1);
    let s2 = plan.get(t2);
    let modes1 = tree.modes(t1).modes();
    let modes2 = tree.modes(t2).modes();
    let rest: Vec<usize> = (0..d).filter(|m| !tree.modes(node).contains(*m)).collect();
    let cols: Vec<Vec<u32>> = if node == tree.root() {
        vec![vec![]]
    } else {
        plan.get(node).cols.clone()
    };
    let mut out = vec![vec![vec![0.0; s2.cols.len()]; s1.cols.len()]; cols.len()];
    for (i, qi) in cols.iter().enumerate() {
        for j in 0..s1.cols.len() {
            for l in 0..s2.cols.len() {
                let mut acc = 0.0;
                for (pi, p) in s1.rows.iter().enumerate() {
                    for (qj, q) in s2.rows.iter().enumerate() {
                        let mut idx = vec![0u32; d];
                        for (k, &m) in modes1.iter().enumerate() {
                            idx[m] = p[k];
                        }
                        for (k, &m) in modes2.iter().enumerate() {
                            idx[m] = q[k];
                        }
                        for (k, &m) in rest.iter().enumerate() {
                            idx[m] = qi[k];
                        }
                        acc += s1.link[(j, pi)] * dense.get(&idx) * s2.link[(l, qj)];
                    }
                }
                out[i][j][l] = acc;
            }
        }
    }
    out
}

/// Scores from a dense SVD of the compacted matricization.
pub fn dense_scores(a: &DMatrix<f64>, k: usize) -> (Vec<usize>, Vec<f64>) {
    let cols: Vec<usize> = (0..a.ncols())
        .filter(|&c| a.column(c).iter().any(|&x| x != 0.0))
        .collect();
    let rows: Vec<usize> = (0..a.nrows())
        .filter(|&r| a.row(r).iter().any(|&x| x != 0.0))
        .collect();
    let compact = DMatrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])]);
    let svd = compact.svd(false, true);
    let v_t = svd.v_t.unwrap();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let smax = svd.singular_values[order[0]];
    let r = order
        .iter()
        .filter(|&&i| svd.singular_values[i] * svd.singular_values[i] > 1e-12 * smax * smax)
        .count()
        .min(k);
    let scores = (0..cols.len())
        .map(|j| {
            order[..r]
                .iter()
                .map(|&i| v_t[(i, j)] * v_t[(i, j)])
                .sum::<f64>()
                / r as f64
        })
        .collect();
    (cols, scores)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_frobenius(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}
