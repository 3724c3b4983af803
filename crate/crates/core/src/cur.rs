//! Leverage-score CUR sampling of tensor matricizations.
//!
//! For a node over modes `t`, the matricization `A^(t)` is compacted to its
//! nonzero rows and columns before any linear algebra happens. Removing
//! zero rows or columns changes neither Gram matrix, so the truncated SVD of
//! the compacted matrix yields the same leverage scores as the (possibly
//! astronomically large) logical one.

use std::borrow::Cow;
use std::collections::{HashMap, HashSet};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{
    pseudo_inverse, truncated_pseudo_inverse, truncated_svd, CsrMatrix, SvdOptions,
};
use crate::tensor::{IndexKey, ModeSubset, SparseTensor};
use crate::tree::{DimensionTree, NodeId};

/// SVD truncation rank used for leverage scores.
pub const DEFAULT_RANK: usize = 5;

/// How rows and columns are chosen at each node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    /// `⌈k ln k / ε²⌉` leverage-score draws per side; `rank` is also the
    /// rank of the link matrix.
    Leverage { rank: usize, epsilon: f64 },
    /// Every nonzero row and column. Exact but only viable on small inputs.
    Exhaustive,
}

impl Sampling {
    pub fn leverage(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be a positive number, got {epsilon}"
            )));
        }
        Ok(Sampling::Leverage {
            rank: DEFAULT_RANK,
            epsilon,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Rows,
    Columns,
}

/// `A^(t)` restricted to its nonzero rows and columns. Keys are sorted and
/// compact ids follow key order.
#[derive(Debug, Clone)]
pub struct CompactMatricization {
    pub row_keys: Vec<IndexKey>,
    pub col_keys: Vec<IndexKey>,
    pub matrix: CsrMatrix,
}

impl CompactMatricization {
    pub fn new(tensor: &SparseTensor, rows: &ModeSubset) -> Self {
        let cols = rows.complement(tensor.order());
        let mut entries: Vec<(IndexKey, IndexKey, f64)> = tensor
            .iter()
            .map(|(idx, v)| (rows.project(idx), cols.project(idx), v))
            .collect();
        let row_keys = sorted_unique(entries.iter().map(|e| &e.0));
        let col_keys = sorted_unique(entries.iter().map(|e| &e.1));
        let row_id: HashMap<&IndexKey, usize> =
            row_keys.iter().enumerate().map(|(i, k)| (k, i)).collect();
        let col_id: HashMap<&IndexKey, usize> =
            col_keys.iter().enumerate().map(|(i, k)| (k, i)).collect();
        let triplets = entries
            .drain(..)
            .map(|(r, c, v)| (row_id[&r], col_id[&c], v))
            .collect();
        let matrix = CsrMatrix::from_triplets(row_keys.len(), col_keys.len(), triplets);
        Self {
            row_keys,
            col_keys,
            matrix,
        }
    }

    /// Dense `A^(t)(P, Q)` for compact row ids `p` and column ids `q`.
    pub fn submatrix(&self, p: &[usize], q: &[usize]) -> DMatrix<f64> {
        let col_pos: HashMap<usize, usize> = q.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let mut w = DMatrix::zeros(p.len(), q.len());
        for (i, &r) in p.iter().enumerate() {
            for (c, v) in self.matrix.row(r) {
                if let Some(&j) = col_pos.get(&c) {
                    w[(i, j)] = v;
                }
            }
        }
        w
    }
}

fn sorted_unique<'a>(keys: impl Iterator<Item = &'a IndexKey>) -> Vec<IndexKey> {
    let mut v: Vec<IndexKey> = keys.cloned().collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Leverage scores of the nonzero rows (or columns) of a matricization.
/// Fibers outside `keys` are all-zero and score 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LeverageScores {
    pub keys: Vec<IndexKey>,
    pub scores: Vec<f64>,
    /// Requested truncation rank.
    pub k: usize,
    /// Rank actually used, `min(k, rank A^(t))`.
    pub rank: usize,
}

impl LeverageScores {
    pub fn get(&self, key: &[u32]) -> f64 {
        match self.keys.binary_search_by(|k| k.as_slice().cmp(key)) {
            Ok(i) => self.scores[i],
            Err(_) => 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// Row and column scores `π_j = 1/r Σ_ξ v_j(ξ)²` from one truncated SVD.
fn compact_scores(
    compact: &CompactMatricization,
    k: usize,
) -> Result<(LeverageScores, LeverageScores)> {
    if compact.matrix.nnz() == 0 {
        return Err(Error::EmptyMatricization);
    }
    let svd = truncated_svd(&compact.matrix, k, &SvdOptions::default());
    let r = svd.rank();
    if r == 0 {
        return Err(Error::EmptyMatricization);
    }
    let scores = |m: &DMatrix<f64>| -> Vec<f64> {
        m.row_iter()
            .map(|row| row.iter().map(|x| x * x).sum::<f64>() / r as f64)
            .collect()
    };
    Ok((
        LeverageScores {
            keys: compact.row_keys.clone(),
            scores: scores(&svd.left),
            k,
            rank: r,
        },
        LeverageScores {
            keys: compact.col_keys.clone(),
            scores: scores(&svd.right),
            k,
            rank: r,
        },
    ))
}

/// Leverage scores for one side of `A^(t)`.
pub fn leverage_scores(
    tensor: &SparseTensor,
    rows: &ModeSubset,
    side: Side,
    k: usize,
) -> Result<LeverageScores> {
    let compact = CompactMatricization::new(tensor, rows);
    let (r, c) = compact_scores(&compact, k)?;
    Ok(match side {
        Side::Rows => r,
        Side::Columns => c,
    })
}

/// `⌈k ln k / ε²⌉`, at least 1.
pub fn target_count(k: usize, epsilon: f64) -> usize {
    let c = (k as f64 * (k as f64).ln() / (epsilon * epsilon)).ceil();
    (c as usize).max(1)
}

/// Draws `count` distinct positions without replacement, with probability
/// proportional to `weights` (Efraimidis–Spirakis keys). Zero-weight
/// positions are only taken, uniformly, once the positive ones run out.
/// The result is sorted.
pub fn weighted_sample<R: Rng>(weights: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    let count = count.min(weights.len());
    let mut keyed: Vec<(bool, f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
            if w > 0.0 {
                (true, u.ln() / w, i)
            } else {
                (false, u, i)
            }
        })
        .collect();
    keyed.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
    let mut picked: Vec<usize> = keyed.into_iter().take(count).map(|e| e.2).collect();
    picked.sort_unstable();
    picked
}

/// Samples `⌈k ln k / ε²⌉` (clamped to `[1, cap]`) indices of `scores`.
pub fn sample_indices<R: Rng>(
    scores: &LeverageScores,
    epsilon: f64,
    cap: usize,
    rng: &mut R,
) -> Vec<IndexKey> {
    let c = target_count(scores.k, epsilon).clamp(1, cap.max(1));
    weighted_sample(&scores.scores, c, rng)
        .into_iter()
        .map(|i| scores.keys[i].clone())
        .collect()
}

/// Sampled skeleton of `A^(t)` at one tree node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSampling {
    pub node: NodeId,
    pub modes: ModeSubset,
    /// `P_t`: sampled row keys over the modes of `t`.
    pub rows: Vec<IndexKey>,
    /// `Q_t`: sampled column keys over the complement of `t`.
    pub cols: Vec<IndexKey>,
    /// `M_t = A^(t)(P_t, Q_t)⁺`, shape `|Q_t| × |P_t|`.
    pub link: DMatrix<f64>,
}

impl NodeSampling {
    pub fn rank(&self) -> usize {
        self.cols.len()
    }

    pub fn col_set(&self) -> HashSet<IndexKey> {
        self.cols.iter().cloned().collect()
    }
}

/// Samples `(P_t, Q_t, M_t)` for node `t` and returns the tensor restricted
/// to the sampled columns, for recursion into `t`'s subtree.
///
/// `tensor` must already honor all ancestor restrictions. When `parent`
/// is given, the columns of `A^(t)` are first limited to those extending a
/// parent column, i.e. `Q_t ⊆ I_sibling × Q_parent`.
pub fn nested_sampling(
    tensor: &SparseTensor,
    node: NodeId,
    modes: &ModeSubset,
    parent: Option<(&ModeSubset, &HashSet<IndexKey>)>,
    sampling: Sampling,
    seed: u64,
) -> Result<(NodeSampling, SparseTensor)> {
    let admissible = match parent {
        Some((parent_modes, cols)) => Cow::Owned(tensor.restrict(parent_modes, cols)),
        None => Cow::Borrowed(tensor),
    };
    if admissible.nnz() == 0 {
        return Err(Error::NoAdmissibleFibers { node });
    }
    let compact = CompactMatricization::new(&admissible, modes);
    let (p, q): (Vec<usize>, Vec<usize>) = match sampling {
        Sampling::Exhaustive => (
            (0..compact.row_keys.len()).collect(),
            (0..compact.col_keys.len()).collect(),
        ),
        Sampling::Leverage { rank, epsilon } => {
            let (row_scores, col_scores) = compact_scores(&compact, rank)?;
            let c = target_count(rank, epsilon);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = weighted_sample(&row_scores.scores, c, &mut rng);
            let q = weighted_sample(&col_scores.scores, c, &mut rng);
            (p, q)
        }
    };
    // Leverage sampling links through the rank-k pseudo-inverse; inverting
    // the full intersection amplifies its noise directions.
    let intersection = compact.submatrix(&p, &q);
    let link = match sampling {
        Sampling::Leverage { rank, .. } => truncated_pseudo_inverse(&intersection, rank),
        Sampling::Exhaustive => pseudo_inverse(&intersection),
    };
    let rows: Vec<IndexKey> = p.iter().map(|&i| compact.row_keys[i].clone()).collect();
    let cols: Vec<IndexKey> = q.iter().map(|&i| compact.col_keys[i].clone()).collect();
    let sampled = NodeSampling {
        node,
        modes: modes.clone(),
        rows,
        cols,
        link,
    };
    let restricted = admissible.restrict(modes, &sampled.col_set());
    Ok((sampled, restricted))
}

/// Right-child sampling of the root derived from the left child's:
/// `A^(t1)ᵀ = A^(t2)` gives `P_t2 = Q_t1`, `Q_t2 = P_t1`, `M_t2 = M_t1ᵀ`.
pub fn root_mirror(tree: &DimensionTree, left: &NodeSampling) -> Result<NodeSampling> {
    let root = tree.root();
    let (l, r) = tree
        .children(root)
        .ok_or_else(|| Error::InvalidTree("root has no children".into()))?;
    if left.node != l {
        return Err(Error::InvalidArgument(format!(
            "root mirroring applies to the root's left child {l}, got node {}",
            left.node
        )));
    }
    Ok(NodeSampling {
        node: r,
        modes: tree.modes(r).clone(),
        rows: left.cols.clone(),
        cols: left.rows.clone(),
        link: left.link.transpose(),
    })
}
