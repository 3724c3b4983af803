//! Two-phase factorization: recursive nested sampling over the dimension
//! tree, then independent per-node assembly of leaf factors and transfer
//! tensors.

use std::collections::{BTreeMap, HashMap};

use log::debug;
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::cur::{nested_sampling, root_mirror, NodeSampling, Sampling};
use crate::error::{Error, Result};
use crate::model::{HTuckerModel, SparseFactor, TransferTensor};
use crate::tensor::{IndexKey, SparseTensor};
use crate::tree::{DimensionTree, NodeId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorizeOptions {
    pub sampling: Sampling,
    pub seed: u64,
    /// Worker threads for both phases; 0 uses the rayon default.
    pub workers: usize,
}

impl FactorizeOptions {
    pub fn new(sampling: Sampling, seed: u64) -> Self {
        Self {
            sampling,
            seed,
            workers: 1,
        }
    }
}

/// Per-node samplings for every node except the root.
#[derive(Debug, Clone)]
pub struct FactorizationPlan {
    pub tree: DimensionTree,
    pub samplings: BTreeMap<NodeId, NodeSampling>,
    pub sampling: Sampling,
    pub seed: u64,
}

impl FactorizationPlan {
    pub fn get(&self, node: NodeId) -> &NodeSampling {
        &self.samplings[&node]
    }

    /// Total number of sampled column fibers over all nodes.
    pub fn sampled_fibers(&self) -> usize {
        self.samplings.values().map(|s| s.cols.len()).sum()
    }

    /// Non-root nodes whose sampled columns do not extend a column of the
    /// parent, i.e. `q ∉ I_sibling × Q_parent`. Empty for a valid plan.
    pub fn nesting_violations(&self) -> Vec<(NodeId, IndexKey)> {
        let order = self.tree.order();
        let root = self.tree.root();
        let mut out = Vec::new();
        for (&node, s) in &self.samplings {
            let parent = self.tree.parent(node).expect("root has no sampling");
            if parent == root {
                continue; // the parent's column set is the single column of vec(A)
            }
            let parent_cols: std::collections::HashSet<&IndexKey> =
                self.samplings[&parent].cols.iter().collect();
            let own_complement = self.tree.modes(node).complement(order);
            let parent_complement = self.tree.modes(parent).complement(order);
            for q in &s.cols {
                let mut full = vec![0u32; order];
                own_complement.scatter(q, &mut full);
                if !parent_cols.contains(&parent_complement.project(&full)) {
                    out.push((node, q.clone()));
                }
            }
        }
        out
    }
}

fn node_seed(seed: u64, node: NodeId) -> u64 {
    // splitmix64 finalizer over (seed, node)
    let mut z = seed ^ (node as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_inputs(tensor: &SparseTensor, tree: &DimensionTree) -> Result<()> {
    if tree.order() != tensor.order() {
        return Err(Error::InvalidTree(format!(
            "tree has {} modes, tensor has {}",
            tree.order(),
            tensor.order()
        )));
    }
    let violations = tree.check(tensor.order());
    if !violations.is_empty() {
        let msgs: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(Error::InvalidTree(msgs.join("; ")));
    }
    if tensor.nnz() == 0 {
        return Err(Error::EmptyMatricization);
    }
    Ok(())
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Phase 1: samples `(P_t, Q_t, M_t)` for every non-root node, top down,
/// handing each subtree the tensor restricted to its parent's columns.
pub fn parameterize(
    tensor: &SparseTensor,
    tree: &DimensionTree,
    sampling: Sampling,
    seed: u64,
    workers: usize,
) -> Result<FactorizationPlan> {
    check_inputs(tensor, tree)?;
    let samplings = with_pool(workers, || visit(tensor, tree, tree.root(), sampling, seed))??;
    let samplings: BTreeMap<NodeId, NodeSampling> =
        samplings.into_iter().map(|s| (s.node, s)).collect();
    Ok(FactorizationPlan {
        tree: tree.clone(),
        samplings,
        sampling,
        seed,
    })
}

fn visit(
    tensor: &SparseTensor,
    tree: &DimensionTree,
    node: NodeId,
    sampling: Sampling,
    seed: u64,
) -> Result<Vec<NodeSampling>> {
    let (left, right) = tree
        .children(node)
        .expect("visit is only called on interior nodes");
    let sample = |child: NodeId| {
        nested_sampling(
            tensor,
            child,
            tree.modes(child),
            None,
            sampling,
            node_seed(seed, child),
        )
    };
    let ((s1, a1), (s2, a2)) = if node == tree.root() {
        let (s1, a1) = sample(left)?;
        let s2 = root_mirror(tree, &s1)?;
        let a2 = tensor.restrict(tree.modes(right), &s2.col_set());
        ((s1, a1), (s2, a2))
    } else {
        let (r1, r2) = rayon::join(|| sample(left), || sample(right));
        (r1?, r2?)
    };
    debug!(
        "node {node}: children {left} ({}x{}), {right} ({}x{}); restricted nnz {} / {}",
        s1.rows.len(),
        s1.cols.len(),
        s2.rows.len(),
        s2.cols.len(),
        a1.nnz(),
        a2.nnz()
    );
    let recurse = |child: NodeId, restricted: &SparseTensor| -> Result<Vec<NodeSampling>> {
        if tree.is_leaf(child) {
            Ok(Vec::new())
        } else {
            visit(restricted, tree, child, sampling, seed)
        }
    };
    let (below1, below2) = rayon::join(|| recurse(left, &a1), || recurse(right, &a2));
    let mut out = vec![s1, s2];
    out.extend(below1?);
    out.extend(below2?);
    Ok(out)
}

/// Phase 2: assembles every node independently from the input tensor and
/// the plan.
///
/// Only entries in sampled columns `q_i ∈ Q_t` are ever read. Those columns
/// survive every ancestor restriction unchanged, so the unrestricted input
/// tensor serves all nodes.
pub fn assemble(
    tensor: &SparseTensor,
    plan: &FactorizationPlan,
    workers: usize,
) -> Result<HTuckerModel> {
    check_inputs(tensor, &plan.tree)?;
    let tree = &plan.tree;
    let parts: Vec<(NodeId, Part)> = with_pool(workers, || {
        tree.nodes()
            .par_iter()
            .map(|n| {
                let part = match n.children {
                    None => Part::Leaf(assemble_leaf(tensor, tree, plan.get(n.id))),
                    Some((a, b)) => Part::Transfer(assemble_transfer(tensor, plan, n.id, a, b)),
                };
                (n.id, part)
            })
            .collect()
    })?;
    let mut leaves = BTreeMap::new();
    let mut transfers = BTreeMap::new();
    for (id, part) in parts {
        match part {
            Part::Leaf(u) => {
                leaves.insert(id, u);
            }
            Part::Transfer(b) => {
                transfers.insert(id, b);
            }
        }
    }
    HTuckerModel::new(tensor.dims().to_vec(), tree.clone(), leaves, transfers)
}

enum Part {
    Leaf(SparseFactor),
    Transfer(TransferTensor),
}

/// `U_t(:, i) = A^(t)(:, q_i)`: sampled column fibers copied verbatim.
fn assemble_leaf(tensor: &SparseTensor, tree: &DimensionTree, s: &NodeSampling) -> SparseFactor {
    let mode = s.modes.modes()[0];
    let complement = s.modes.complement(tensor.order());
    let col_of: HashMap<&IndexKey, u32> = s
        .cols
        .iter()
        .enumerate()
        .map(|(i, k)| (k, i as u32))
        .collect();
    let mut scratch = Vec::with_capacity(complement.len());
    let mut triplets = Vec::new();
    for (idx, v) in tensor.iter() {
        scratch.clear();
        scratch.extend(complement.modes().iter().map(|&m| idx[m]));
        if let Some(&c) = col_of.get(&scratch) {
            triplets.push((idx[mode], c, v));
        }
    }
    debug_assert!(tree.is_leaf(s.node));
    SparseFactor::from_triplets(tensor.dims()[mode], s.cols.len(), triplets)
}

/// `(B_t)_{i,j,l} = Σ_{p∈P_t1} Σ_{q∈P_t2} (M_t1)_{q_j,p} A^(t)_{(p,q),q_i} (M_t2)_{q_l,q}`,
/// i.e. slice `i` is `M_t1 · A^(t)(P_t1 × P_t2, q_i) · M_t2ᵀ`. The root has
/// the single column `q_i = vec(A)`.
fn assemble_transfer(
    tensor: &SparseTensor,
    plan: &FactorizationPlan,
    node: NodeId,
    left: NodeId,
    right: NodeId,
) -> TransferTensor {
    let tree = &plan.tree;
    let (s1, s2) = (plan.get(left), plan.get(right));
    let columns: Vec<IndexKey> = if node == tree.root() {
        vec![Vec::new()]
    } else {
        plan.get(node).cols.clone()
    };
    let complement = tree.modes(node).complement(tree.order());
    let mut b = TransferTensor::zeros([columns.len(), s1.cols.len(), s2.cols.len()]);
    let mut index = vec![0u32; tensor.order()];
    for (i, q_i) in columns.iter().enumerate() {
        complement.scatter(q_i, &mut index);
        let mut w = DMatrix::zeros(s1.rows.len(), s2.rows.len());
        let mut any = false;
        for (p_pos, p) in s1.rows.iter().enumerate() {
            s1.modes.scatter(p, &mut index);
            for (q_pos, q) in s2.rows.iter().enumerate() {
                s2.modes.scatter(q, &mut index);
                let v = tensor.get(&index);
                if v != 0.0 {
                    w[(p_pos, q_pos)] = v;
                    any = true;
                }
            }
        }
        if any {
            let slice = &s1.link * w * s2.link.transpose();
            b.set_slice(i, &slice);
        }
    }
    b
}

/// Runs both phases.
pub fn factorize(
    tensor: &SparseTensor,
    tree: &DimensionTree,
    opts: &FactorizeOptions,
) -> Result<(FactorizationPlan, HTuckerModel)> {
    let plan = parameterize(tensor, tree, opts.sampling, opts.seed, opts.workers)?;
    let model = assemble(tensor, &plan, opts.workers)?;
    Ok((plan, model))
}
