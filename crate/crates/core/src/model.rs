//! The Sparse H-Tucker model: sparse leaf factors, dense transfer tensors,
//! reconstruction, queries, concept extraction and the on-disk container.
//!
//! Rows of an interior basis `U_t` are indexed colexicographically over the
//! modes of `t` (smallest mode fastest), the same convention used for
//! matricizations. The nestedness product `(U_t1)_j ⊗ (U_t2)_l` is therefore
//! evaluated by splitting each row of `t` into its `t1` and `t2` parts, which
//! is valid for any interleaving of the children's modes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{check_bounds, ModeSubset};
use crate::tree::{DimensionTree, NodeId};

/// Default cap on the number of cells a dense reconstruction may produce.
pub const DEFAULT_CELL_CAP: u64 = 100_000_000;

/// Sparse leaf factor `U_t ∈ R^{n_μ × k_t}` stored row-wise. Row `r`
/// corresponds to element index `r + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFactor {
    nrows: u32,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseFactor {
    /// Builds from `(element index (1-based), column, value)` triplets.
    /// Duplicate positions are not allowed.
    pub fn from_triplets(nrows: u32, ncols: usize, mut triplets: Vec<(u32, u32, f64)>) -> Self {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; nrows as usize + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut vals = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            debug_assert!(r >= 1 && r <= nrows && (c as usize) < ncols);
            row_ptr[r as usize] += 1;
            col_idx.push(c);
            vals.push(v);
        }
        for r in 0..nrows as usize {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn nrows(&self) -> u32 {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Nonzeros of the row for element `index` (1-based).
    pub fn row(&self, index: u32) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = index as usize - 1;
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .map(|&c| c as usize)
            .zip(self.vals[span].iter().copied())
    }

    /// All `(element index, column, value)` triplets in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (u32, usize, f64)> + '_ {
        (1..=self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn column(&self, col: usize) -> Vec<(u32, f64)> {
        self.triplets()
            .filter(|&(_, c, _)| c == col)
            .map(|(r, _, v)| (r, v))
            .collect()
    }
}

/// Dense 3-way transfer tensor `B_t ∈ R^{k_t × k_t1 × k_t2}`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferTensor {
    shape: [usize; 3],
    data: Vec<f64>,
}

impl TransferTensor {
    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape[0] * shape[1] * shape[2]],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn get(&self, i: usize, j: usize, l: usize) -> f64 {
        self.data[(i * self.shape[1] + j) * self.shape[2] + l]
    }

    /// Writes slice `i` from a `k_t1 × k_t2` matrix.
    pub fn set_slice(&mut self, i: usize, slice: &DMatrix<f64>) {
        let [_, k1, k2] = self.shape;
        assert_eq!(slice.shape(), (k1, k2));
        for j in 0..k1 {
            for l in 0..k2 {
                self.data[(i * k1 + j) * k2 + l] = slice[(j, l)];
            }
        }
    }

    pub fn slice(&self, i: usize) -> DMatrix<f64> {
        let [_, k1, k2] = self.shape;
        DMatrix::from_fn(k1, k2, |j, l| self.get(i, j, l))
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Dense sub-array returned by block queries, colexicographic layout
/// (first mode fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBlock {
    /// Inclusive 1-based index range per mode.
    pub ranges: Vec<(u32, u32)>,
    pub data: Vec<f64>,
}

impl DenseBlock {
    pub fn shape(&self) -> Vec<usize> {
        self.ranges
            .iter()
            .map(|&(a, b)| (b - a + 1) as usize)
            .collect()
    }

    /// Value at an absolute multi-index inside the block.
    pub fn get(&self, index: &[u32]) -> f64 {
        let mut lin = 0usize;
        let mut stride = 1usize;
        for (&(lo, hi), &i) in self.ranges.iter().zip(index) {
            assert!(
                i >= lo && i <= hi,
                "index {i} outside block range {lo}..={hi}"
            );
            lin += (i - lo) as usize * stride;
            stride *= (hi - lo + 1) as usize;
        }
        self.data[lin]
    }

    /// Iterates `(multi-index, value)` in layout order.
    pub fn iter(&self) -> impl Iterator<Item = (Vec<u32>, f64)> + '_ {
        let shape = self.shape();
        self.data.iter().enumerate().map(move |(mut lin, &v)| {
            let idx = self
                .ranges
                .iter()
                .zip(&shape)
                .map(|(&(lo, _), &n)| {
                    let off = lin % n;
                    lin /= n;
                    lo + off as u32
                })
                .collect();
            (idx, v)
        })
    }
}

/// Sparse Hierarchical Tucker model.
#[derive(Debug, Clone, PartialEq)]
pub struct HTuckerModel {
    dims: Vec<u32>,
    tree: DimensionTree,
    leaves: BTreeMap<NodeId, SparseFactor>,
    /// Every interior node, the root included (with `k_tr = 1`).
    transfers: BTreeMap<NodeId, TransferTensor>,
}

impl HTuckerModel {
    pub fn new(
        dims: Vec<u32>,
        tree: DimensionTree,
        leaves: BTreeMap<NodeId, SparseFactor>,
        transfers: BTreeMap<NodeId, TransferTensor>,
    ) -> Result<Self> {
        let model = Self {
            dims,
            tree,
            leaves,
            transfers,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::CorruptModel(msg));
        if self.tree.order() != self.dims.len() {
            return bad("tree order does not match dims".into());
        }
        for node in self.tree.nodes() {
            let id = node.id;
            match node.children {
                None => {
                    let Some(u) = self.leaves.get(&id) else {
                        return bad(format!("missing leaf factor for node {id}"));
                    };
                    let mode = node.modes.modes()[0];
                    if u.nrows() != self.dims[mode] {
                        return bad(format!(
                            "leaf {id} has {} rows, mode size {}",
                            u.nrows(),
                            self.dims[mode]
                        ));
                    }
                }
                Some((a, b)) => {
                    let Some(bt) = self.transfers.get(&id) else {
                        return bad(format!("missing transfer tensor for node {id}"));
                    };
                    let [k, k1, k2] = bt.shape();
                    if k1 != self.rank(a) || k2 != self.rank(b) {
                        return bad(format!("transfer tensor {id} does not match its children"));
                    }
                    if id == self.tree.root() && k != 1 {
                        return bad("root transfer tensor must have leading size 1".into());
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> &[u32] {
        &self.dims
    }

    pub fn tree(&self) -> &DimensionTree {
        &self.tree
    }

    pub fn leaf_factor(&self, node: NodeId) -> Option<&SparseFactor> {
        self.leaves.get(&node)
    }

    pub fn leaf_factors(&self) -> &BTreeMap<NodeId, SparseFactor> {
        &self.leaves
    }

    /// Transfer tensor of an interior node; for the root the leading
    /// dimension is 1.
    pub fn transfer_tensor(&self, node: NodeId) -> Option<&TransferTensor> {
        self.transfers.get(&node)
    }

    pub fn transfer_tensors(&self) -> &BTreeMap<NodeId, TransferTensor> {
        &self.transfers
    }

    /// The root's `k_t1 × k_t2` matrix.
    pub fn root_matrix(&self) -> DMatrix<f64> {
        self.transfers[&self.tree.root()].slice(0)
    }

    /// `k_t`: column count of the node's basis.
    pub fn rank(&self, node: NodeId) -> usize {
        match self.leaves.get(&node) {
            Some(u) => u.ncols(),
            None => self.transfers[&node].shape()[0],
        }
    }

    /// Stored scalars: leaf nonzeros plus transfer tensor entries.
    pub fn storage_size(&self) -> usize {
        self.leaves.values().map(SparseFactor::nnz).sum::<usize>()
            + self
                .transfers
                .values()
                .map(|b| b.data().len())
                .sum::<usize>()
    }

    /// Approximation of a single element, using one row per leaf factor.
    pub fn query_element(&self, index: &[u32]) -> Result<f64> {
        if index.len() != self.dims.len() {
            return Err(Error::OrderMismatch {
                expected: self.dims.len(),
                got: index.len(),
            });
        }
        check_bounds(&self.dims, index)?;
        Ok(self.element_vector(self.tree.root(), index)[0])
    }

    fn element_vector(&self, node: NodeId, index: &[u32]) -> Vec<f64> {
        match self.tree.children(node) {
            None => {
                let u = &self.leaves[&node];
                let mode = self.tree.modes(node).modes()[0];
                let mut row = vec![0.0; u.ncols()];
                for (c, v) in u.row(index[mode]) {
                    row[c] = v;
                }
                row
            }
            Some((a, b)) => {
                let ua = self.element_vector(a, index);
                let ub = self.element_vector(b, index);
                let bt = &self.transfers[&node];
                let [k, k1, k2] = bt.shape();
                let mut out = vec![0.0; k];
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (j, &x) in ua.iter().enumerate().take(k1) {
                        if x == 0.0 {
                            continue;
                        }
                        let base = (i * k1 + j) * k2;
                        let dotp: f64 = bt.data[base..base + k2]
                            .iter()
                            .zip(&ub)
                            .map(|(b, y)| b * y)
                            .sum();
                        acc += x * dotp;
                    }
                    *o = acc;
                }
                out
            }
        }
    }

    fn validate_ranges(&self, ranges: &[(u32, u32)], cap: u64) -> Result<()> {
        if ranges.len() != self.dims.len() {
            return Err(Error::OrderMismatch {
                expected: self.dims.len(),
                got: ranges.len(),
            });
        }
        for (m, (&(lo, hi), &n)) in ranges.iter().zip(&self.dims).enumerate() {
            for i in [lo, hi] {
                if i == 0 || i > n {
                    return Err(Error::IndexOutOfBounds {
                        mode: m,
                        index: i as u64,
                        size: n,
                    });
                }
            }
            if lo > hi {
                return Err(Error::InvalidArgument(format!(
                    "empty range {lo}..{hi} for mode {}",
                    m + 1
                )));
            }
        }
        let cells: f64 = ranges.iter().map(|&(a, b)| (b - a + 1) as f64).product();
        if cells > cap as f64 {
            return Err(Error::SizeCap { cells, cap });
        }
        Ok(())
    }

    /// Reconstructs the block spanned by inclusive 1-based per-mode ranges
    /// after pruning every leaf factor to its range.
    pub fn query_block(&self, ranges: &[(u32, u32)], cap: u64) -> Result<DenseBlock> {
        self.validate_ranges(ranges, cap)?;
        let (_, data) = self.block_basis(self.tree.root(), ranges);
        Ok(DenseBlock {
            ranges: ranges.to_vec(),
            data,
        })
    }

    /// Full dense reconstruction, refused above `cap` cells.
    pub fn reconstruct_full(&self, cap: u64) -> Result<DenseBlock> {
        let ranges: Vec<(u32, u32)> = self.dims.iter().map(|&n| (1, n)).collect();
        self.query_block(&ranges, cap)
    }

    /// Dense `U_t` of any node over the full index set `I_t`, rows
    /// colexicographic over the modes of `t`. For the root this is `vec(A)`.
    pub fn node_basis(&self, node: NodeId, cap: u64) -> Result<DMatrix<f64>> {
        let modes = self.tree.modes(node);
        let rows = modes.size(&self.dims).unwrap_or(u128::MAX);
        if rows > cap as u128 {
            return Err(Error::SizeCap {
                cells: rows as f64,
                cap,
            });
        }
        let ranges: Vec<(u32, u32)> = self.dims.iter().map(|&n| (1, n)).collect();
        let (k, data) = self.block_basis(node, &ranges);
        Ok(DMatrix::from_row_slice(rows as usize, k, &data))
    }

    /// Row-major `rows × k_t` basis of `node` restricted to `ranges`.
    fn block_basis(&self, node: NodeId, ranges: &[(u32, u32)]) -> (usize, Vec<f64>) {
        match self.tree.children(node) {
            None => {
                let u = &self.leaves[&node];
                let mode = self.tree.modes(node).modes()[0];
                let (lo, hi) = ranges[mode];
                let k = u.ncols();
                let mut out = vec![0.0; (hi - lo + 1) as usize * k];
                for (r, i) in (lo..=hi).enumerate() {
                    for (c, v) in u.row(i) {
                        out[r * k + c] = v;
                    }
                }
                (k, out)
            }
            Some((a, b)) => {
                let (k1, ua) = self.block_basis(a, ranges);
                let (k2, ub) = self.block_basis(b, ranges);
                let bt = &self.transfers[&node];
                let k = bt.shape()[0];
                let extent = |m: usize| (ranges[m].1 - ranges[m].0 + 1) as usize;
                let rows_a = ua.len() / k1.max(1);
                if k1 == 0 || k2 == 0 {
                    let rows: usize = self
                        .tree
                        .modes(node)
                        .modes()
                        .iter()
                        .map(|&m| extent(m))
                        .product();
                    return (k, vec![0.0; rows * k]);
                }
                // half[ra][i][l] = Σ_j B[i,j,l] ua[ra][j]
                let mut half = vec![0.0; rows_a * k * k2];
                for ra in 0..rows_a {
                    let urow = &ua[ra * k1..(ra + 1) * k1];
                    for i in 0..k {
                        let dst = &mut half[(ra * k + i) * k2..(ra * k + i + 1) * k2];
                        for (j, &x) in urow.iter().enumerate() {
                            if x == 0.0 {
                                continue;
                            }
                            let base = (i * k1 + j) * k2;
                            for (d, &bv) in dst.iter_mut().zip(&bt.data[base..base + k2]) {
                                *d += x * bv;
                            }
                        }
                    }
                }
                let modes = self.tree.modes(node).modes();
                let modes_a = self.tree.modes(a);
                let strides = |sub: &ModeSubset| -> Vec<usize> {
                    // stride of each mode of `node` inside the child's layout
                    let mut s = 1;
                    let mut per_mode = BTreeMap::new();
                    for &m in sub.modes() {
                        per_mode.insert(m, s);
                        s *= extent(m);
                    }
                    modes
                        .iter()
                        .map(|m| per_mode.get(m).copied().unwrap_or(0))
                        .collect()
                };
                let sa = strides(modes_a);
                let sb = strides(self.tree.modes(b));
                let extents: Vec<usize> = modes.iter().map(|&m| extent(m)).collect();
                let rows: usize = extents.iter().product();
                let mut out = vec![0.0; rows * k];
                let mut offs = vec![0usize; modes.len()];
                let (mut ra, mut rb) = (0usize, 0usize);
                for r in 0..rows {
                    let urow = &ub[rb * k2..(rb + 1) * k2];
                    for i in 0..k {
                        let h = &half[(ra * k + i) * k2..(ra * k + i + 1) * k2];
                        out[r * k + i] = h.iter().zip(urow).map(|(x, y)| x * y).sum();
                    }
                    // colex increment
                    for p in 0..modes.len() {
                        offs[p] += 1;
                        ra += sa[p];
                        rb += sb[p];
                        if offs[p] < extents[p] {
                            break;
                        }
                        ra -= sa[p] * extents[p];
                        rb -= sb[p] * extents[p];
                        offs[p] = 0;
                    }
                }
                (k, out)
            }
        }
    }

    /// Leaf concepts (top `top_n` elements per factor column) and the
    /// dominant `(j, l)` interactions of every transfer tensor slice.
    /// Leaf rows equal to `exclude` (typically the null element) are skipped.
    pub fn concept_report(&self, top_n: usize, exclude: Option<u32>) -> ConceptReport {
        let mut leaves = Vec::new();
        for (&node, u) in &self.leaves {
            let mode = self.tree.modes(node).modes()[0];
            let mut columns: Vec<Vec<(u32, f64)>> = vec![Vec::new(); u.ncols()];
            for (r, c, v) in u.triplets() {
                if Some(r) != exclude {
                    columns[c].push((r, v));
                }
            }
            let concepts = columns
                .into_iter()
                .map(|mut col| {
                    col.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                    col.truncate(top_n);
                    col
                })
                .collect();
            leaves.push(LeafConcepts {
                node,
                mode,
                concepts,
            });
        }
        let mut interior = Vec::new();
        for (&node, bt) in &self.transfers {
            let [k, k1, k2] = bt.shape();
            let slices = (0..k)
                .map(|i| {
                    let max = (0..k1)
                        .flat_map(|j| (0..k2).map(move |l| (j, l)))
                        .map(|(j, l)| bt.get(i, j, l).abs())
                        .fold(0.0, f64::max);
                    if max == 0.0 {
                        return Vec::new();
                    }
                    let mut pairs = Vec::new();
                    for j in 0..k1 {
                        for l in 0..k2 {
                            let v = bt.get(i, j, l);
                            if v.abs() >= max * (1.0 - 1e-12) {
                                pairs.push((j, l, v));
                            }
                        }
                    }
                    pairs
                })
                .collect();
            interior.push(InteriorConcepts { node, slices });
        }
        ConceptReport { leaves, interior }
    }

    /// Writes the binary container: a magic line, a one-line JSON header
    /// (version, dims, tree, shapes) and a little-endian payload. Leaf
    /// factors are `(row: u32, col: u32, value: f64)` triplets with 1-based
    /// rows, followed by the transfer tensors as row-major `f64`s.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            version: FORMAT_VERSION,
            dims: self.dims.clone(),
            tree: self
                .tree
                .nodes()
                .iter()
                .map(|n| HeaderNode {
                    id: n.id,
                    modes: n.modes.modes().iter().map(|m| m + 1).collect(),
                    children: n.children.map(|(a, b)| [a, b]),
                })
                .collect(),
            leaves: self
                .leaves
                .iter()
                .map(|(&node, u)| LeafHeader {
                    node,
                    rows: u.nrows(),
                    cols: u.ncols(),
                    nnz: u.nnz(),
                })
                .collect(),
            transfers: self
                .transfers
                .iter()
                .map(|(&node, b)| TransferHeader {
                    node,
                    shape: b.shape(),
                })
                .collect(),
        };
        w.write_all(MAGIC)?;
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for u in self.leaves.values() {
            for (r, c, v) in u.triplets() {
                w.write_all(&r.to_le_bytes())?;
                w.write_all(&(c as u32).to_le_bytes())?;
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for b in self.transfers.values() {
            for v in b.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let corrupt = |m: &str| Error::CorruptModel(m.to_string());
        let rest = bytes
            .strip_prefix(MAGIC)
            .ok_or_else(|| corrupt("missing magic line"))?;
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(&rest[..nl])
            .map_err(|e| Error::CorruptModel(format!("bad header: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(Error::Version(header.version));
        }
        let mut payload = Payload {
            bytes: &rest[nl + 1..],
        };
        let order = header.dims.len();
        let nodes: Vec<(usize, Vec<usize>, Option<(usize, usize)>)> = header
            .tree
            .iter()
            .map(|n| {
                (
                    n.id,
                    n.modes.iter().map(|m| m.saturating_sub(1)).collect(),
                    n.children.map(|[a, b]| (a, b)),
                )
            })
            .collect();
        let tree = DimensionTree::from_nodes(order, &nodes)
            .map_err(|e| Error::CorruptModel(format!("bad tree: {e}")))?;
        let mut leaves = BTreeMap::new();
        for lh in &header.leaves {
            let mut trip = Vec::with_capacity(lh.nnz);
            for _ in 0..lh.nnz {
                let r = payload.u32()?;
                let c = payload.u32()?;
                let v = payload.f64()?;
                if r == 0 || r > lh.rows || c as usize >= lh.cols {
                    return Err(corrupt("leaf triplet out of range"));
                }
                trip.push((r, c, v));
            }
            leaves.insert(lh.node, SparseFactor::from_triplets(lh.rows, lh.cols, trip));
        }
        let mut transfers = BTreeMap::new();
        for th in &header.transfers {
            let len = th.shape.iter().product::<usize>();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(payload.f64()?);
            }
            transfers.insert(
                th.node,
                TransferTensor {
                    shape: th.shape,
                    data,
                },
            );
        }
        if !payload.bytes.is_empty() {
            return Err(corrupt("trailing bytes after payload"));
        }
        Self::new(header.dims, tree, leaves, transfers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

const MAGIC: &[u8] = b"SHTUCKER-MODEL\n";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    dims: Vec<u32>,
    tree: Vec<HeaderNode>,
    leaves: Vec<LeafHeader>,
    transfers: Vec<TransferHeader>,
}

#[derive(Serialize, Deserialize)]
struct HeaderNode {
    id: usize,
    modes: Vec<usize>,
    children: Option<[usize; 2]>,
}

#[derive(Serialize, Deserialize)]
struct LeafHeader {
    node: usize,
    rows: u32,
    cols: usize,
    nnz: usize,
}

#[derive(Serialize, Deserialize)]
struct TransferHeader {
    node: usize,
    shape: [usize; 3],
}

struct Payload<'a> {
    bytes: &'a [u8],
}

impl Payload<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        if self.bytes.len() < N {
            return Err(Error::CorruptModel("truncated payload".into()));
        }
        let (head, tail) = self.bytes.split_at(N);
        self.bytes = tail;
        Ok(head.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeafConcepts {
    pub node: NodeId,
    pub mode: usize,
    /// Per factor column: `(element index, weight)`, heaviest first.
    pub concepts: Vec<Vec<(u32, f64)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteriorConcepts {
    pub node: NodeId,
    /// Per slice `i`: the `(j, l, value)` entries of largest magnitude.
    pub slices: Vec<Vec<(usize, usize, f64)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptReport {
    pub leaves: Vec<LeafConcepts>,
    pub interior: Vec<InteriorConcepts>,
}

impl ConceptReport {
    /// Human-readable listing; concept and slot ids are 1-based.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for leaf in &self.leaves {
            writeln!(s, "leaf node {} (mode {})", leaf.node, leaf.mode + 1).unwrap();
            for (c, concept) in leaf.concepts.iter().enumerate() {
                let items: Vec<String> = concept.iter().map(|(e, w)| format!("{e}:{w}")).collect();
                writeln!(s, "  concept {}: {}", c + 1, items.join(" ")).unwrap();
            }
        }
        for node in &self.interior {
            writeln!(s, "interior node {}", node.node).unwrap();
            for (i, pairs) in node.slices.iter().enumerate() {
                let items: Vec<String> = pairs
                    .iter()
                    .map(|(j, l, v)| format!("({},{})={v}", j + 1, l + 1))
                    .collect();
                writeln!(s, "  slice {}: {}", i + 1, items.join(" ")).unwrap();
            }
        }
        s
    }

    /// CSV with columns `node_id,concept_id,element_id,weight`. Interior
    /// rows use `j:l` (1-based) as the element id.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["node_id", "concept_id", "element_id", "weight"])?;
        for leaf in &self.leaves {
            for (c, concept) in leaf.concepts.iter().enumerate() {
                for (e, v) in concept {
                    out.write_record([
                        leaf.node.to_string(),
                        (c + 1).to_string(),
                        e.to_string(),
                        v.to_string(),
                    ])?;
                }
            }
        }
        for node in &self.interior {
            for (i, pairs) in node.slices.iter().enumerate() {
                for (j, l, v) in pairs {
                    out.write_record([
                        node.node.to_string(),
                        (i + 1).to_string(),
                        format!("{}:{}", j + 1, l + 1),
                        v.to_string(),
                    ])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}
