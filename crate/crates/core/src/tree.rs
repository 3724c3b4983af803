//! Binary dimension trees over mode subsets.
//!
//! Node ids are assigned in preorder, so the root is always node 0 and a
//! node's left subtree is numbered before its right subtree. Child order is
//! significant: it fixes which child fills the `j` slot and which the `l`
//! slot of the transfer tensors.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::tensor::{ModeSubset, SparseTensor};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub id: NodeId,
    pub modes: ModeSubset,
    pub children: Option<(NodeId, NodeId)>,
    pub parent: Option<NodeId>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimensionTree {
    order: usize,
    nodes: Vec<TreeNode>,
}

/// Nested shape used while building trees; converted to preorder ids.
#[derive(Debug, Clone)]
enum Shape {
    Leaf(usize),
    Split(Box<Shape>, Box<Shape>),
}

impl Shape {
    fn modes(&self) -> Vec<usize> {
        match self {
            Shape::Leaf(m) => vec![*m],
            Shape::Split(a, b) => {
                let mut v = a.modes();
                v.extend(b.modes());
                v
            }
        }
    }

    fn min_mode(&self) -> usize {
        self.modes().into_iter().min().unwrap_or(usize::MAX)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Linkage {
    #[default]
    Complete,
    Average,
}

impl std::str::FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complete" => Ok(Linkage::Complete),
            "average" => Ok(Linkage::Average),
            _ => Err(Error::InvalidArgument(format!(
                "unknown linkage `{s}` (expected complete|average)"
            ))),
        }
    }
}

/// A broken tree invariant reported by [`DimensionTree::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeViolation {
    RootModes { found: Vec<usize> },
    ChildrenNotDisjoint { node: NodeId },
    ChildrenUnionMismatch { node: NodeId },
    LeafNotSingleton { node: NodeId },
    LeafCount { expected: usize, found: usize },
    InteriorCount { expected: usize, found: usize },
    DanglingChild { node: NodeId, child: NodeId },
    Unreachable { node: NodeId },
    ModeOutOfRange { node: NodeId, mode: usize },
}

impl fmt::Display for TreeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreeViolation::RootModes { found } => {
                write!(f, "root ≠ {{1..d}}: root holds {:?}", one_based(found))
            }
            TreeViolation::ChildrenNotDisjoint { node } => {
                write!(f, "children not disjoint at node {node}")
            }
            TreeViolation::ChildrenUnionMismatch { node } => {
                write!(f, "children do not cover the modes of node {node}")
            }
            TreeViolation::LeafNotSingleton { node } => {
                write!(f, "leaf {node} is not a singleton mode set")
            }
            TreeViolation::LeafCount { expected, found } => {
                write!(f, "expected {expected} leaves, found {found}")
            }
            TreeViolation::InteriorCount { expected, found } => {
                write!(f, "expected {expected} interior nodes, found {found}")
            }
            TreeViolation::DanglingChild { node, child } => {
                write!(f, "node {node} references missing child {child}")
            }
            TreeViolation::Unreachable { node } => {
                write!(f, "node {node} is not reachable from the root")
            }
            TreeViolation::ModeOutOfRange { node, mode } => {
                write!(f, "node {node} holds mode {} outside 1..d", mode + 1)
            }
        }
    }
}

fn one_based(modes: &[usize]) -> Vec<usize> {
    modes.iter().map(|m| m + 1).collect()
}

impl DimensionTree {
    /// Recursive halving: a node over `m_1..m_k` gives the first `⌈k/2⌉`
    /// modes to its left child.
    pub fn balanced(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::InvalidTree(format!(
                "a dimension tree needs at least 2 modes, got {order}"
            )));
        }
        Ok(Self::from_shape(
            order,
            &balanced_shape(&(0..order).collect::<Vec<_>>()),
        ))
    }

    /// Builds a tree by agglomerative clustering of the modes' nonzero
    /// incidence patterns under the Jaccard distance.
    ///
    /// Entry `(e, μ)` of the incidence matrix is set when nonzero `e` has a
    /// non-null index in mode `μ`. Without a null element every index
    /// counts as non-null, all columns coincide, and the balanced tree is
    /// returned.
    pub fn data_driven(tensor: &SparseTensor, linkage: Linkage) -> Result<Self> {
        let order = tensor.order();
        if order < 2 {
            return Err(Error::InvalidTree(format!(
                "a dimension tree needs at least 2 modes, got {order}"
            )));
        }
        if tensor.nnz() == 0 {
            return Err(Error::InvalidArgument(
                "data-driven tree requires at least one nonzero".into(),
            ));
        }
        let columns = incidence_columns(tensor);
        if columns.windows(2).all(|w| w[0] == w[1]) {
            warn!("all modes share the same incidence pattern; using a balanced tree");
            return Self::balanced(order);
        }
        let dist = pairwise_jaccard(&columns);
        Ok(Self::from_shape(order, &cluster(&dist, linkage)))
    }

    fn from_shape(order: usize, shape: &Shape) -> Self {
        fn visit(shape: &Shape, parent: Option<NodeId>, nodes: &mut Vec<TreeNode>) -> NodeId {
            let id = nodes.len();
            nodes.push(TreeNode {
                id,
                modes: ModeSubset::new(shape.modes()),
                children: None,
                parent,
            });
            if let Shape::Split(a, b) = shape {
                let left = visit(a, Some(id), nodes);
                let right = visit(b, Some(id), nodes);
                nodes[id].children = Some((left, right));
            }
            id
        }
        let mut nodes = Vec::with_capacity(2 * order - 1);
        visit(shape, None, &mut nodes);
        Self { order, nodes }
    }

    /// Builds a tree from explicit nodes `(id, modes, children)` with
    /// arbitrary ids. The result is renumbered in preorder.
    pub fn from_nodes(
        order: usize,
        nodes: &[(usize, Vec<usize>, Option<(usize, usize)>)],
    ) -> Result<Self> {
        let raw = RawTree::new(order, nodes)?;
        let violations = raw.violations();
        if !violations.is_empty() {
            let msgs: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(Error::InvalidTree(msgs.join("; ")));
        }
        Ok(Self::from_shape(order, &raw.shape(raw.root.unwrap())))
    }

    /// Checks all structural invariants of explicit nodes against `order`,
    /// returning every violation found.
    pub fn validate(
        order: usize,
        nodes: &[(usize, Vec<usize>, Option<(usize, usize)>)],
    ) -> Vec<TreeViolation> {
        match RawTree::new(order, nodes) {
            Ok(raw) => raw.violations(),
            Err(_) => vec![TreeViolation::RootModes { found: vec![] }],
        }
    }

    /// Re-checks this tree against a tensor order.
    pub fn check(&self, order: usize) -> Vec<TreeViolation> {
        Self::validate(order, &self.to_raw())
    }

    fn to_raw(&self) -> Vec<(usize, Vec<usize>, Option<(usize, usize)>)> {
        self.nodes
            .iter()
            .map(|n| (n.id, n.modes.modes().to_vec(), n.children))
            .collect()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn modes(&self, id: NodeId) -> &ModeSubset {
        &self.nodes[id].modes
    }

    pub fn children(&self, id: NodeId) -> Option<(NodeId, NodeId)> {
        self.nodes[id].children
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id].parent
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id].is_leaf()
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().filter(|n| n.is_leaf()).map(|n| n.id)
    }

    pub fn interior(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().filter(|n| !n.is_leaf()).map(|n| n.id)
    }

    /// Sibling of a non-root node.
    pub fn sibling(&self, id: NodeId) -> Option<NodeId> {
        let (a, b) = self.children(self.parent(id)?)?;
        Some(if a == id { b } else { a })
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn go(t: &DimensionTree, id: NodeId) -> usize {
            match t.children(id) {
                None => 0,
                Some((a, b)) => 1 + go(t, a).max(go(t, b)),
            }
        }
        go(self, self.root())
    }

    /// Text format: one line per node,
    /// `id : [m1 m2 ..] : left right` or `id : [m] : leaf`, modes 1-based.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        for n in &self.nodes {
            let modes: Vec<String> = n
                .modes
                .modes()
                .iter()
                .map(|m| (m + 1).to_string())
                .collect();
            let tail = match n.children {
                Some((a, b)) => format!("{a} {b}"),
                None => "leaf".to_string(),
            };
            writeln!(w, "{} : [{}] : {}", n.id, modes.join(" "), tail)?;
        }
        Ok(())
    }

    pub fn read_text<R: Read>(reader: R, path: &Path) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut raw = Vec::new();
        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let lineno = lineno + 1;
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split(':').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(perr(
                    lineno,
                    "expected `id : [modes] : children|leaf`".into(),
                ));
            }
            let id: usize = parts[0]
                .parse()
                .map_err(|e| perr(lineno, format!("bad node id: {e}")))?;
            let list = parts[1]
                .strip_prefix('[')
                .and_then(|s| s.strip_suffix(']'))
                .ok_or_else(|| perr(lineno, "mode list must be bracketed".into()))?;
            let modes = list
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| match s.parse::<usize>() {
                    Ok(m) if m >= 1 => Ok(m - 1),
                    _ => Err(perr(lineno, format!("bad mode `{s}` (modes are 1-based)"))),
                })
                .collect::<Result<Vec<_>>>()?;
            let children = if parts[2] == "leaf" {
                None
            } else {
                let ids: Vec<usize> = parts[2]
                    .split_whitespace()
                    .map(|s| s.parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| perr(lineno, format!("bad child id: {e}")))?;
                match ids[..] {
                    [a, b] => Some((a, b)),
                    _ => {
                        return Err(perr(
                            lineno,
                            "interior nodes need exactly two children".into(),
                        ))
                    }
                }
            };
            raw.push((id, modes, children));
        }
        let order = raw
            .iter()
            .flat_map(|(_, m, _)| m.iter().copied())
            .max()
            .map_or(0, |m| m + 1);
        Self::from_nodes(order, &raw)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        Self::read_text(file, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_text(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}

fn balanced_shape(modes: &[usize]) -> Shape {
    if modes.len() == 1 {
        return Shape::Leaf(modes[0]);
    }
    let split = modes.len().div_ceil(2);
    Shape::Split(
        Box::new(balanced_shape(&modes[..split])),
        Box::new(balanced_shape(&modes[split..])),
    )
}

/// Unvalidated node list, indexed by original id.
struct RawTree {
    order: usize,
    nodes: std::collections::BTreeMap<usize, (ModeSubset, Option<(usize, usize)>)>,
    root: Option<usize>,
}

impl RawTree {
    fn new(order: usize, nodes: &[(usize, Vec<usize>, Option<(usize, usize)>)]) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        for (id, modes, children) in nodes {
            if map
                .insert(*id, (ModeSubset::new(modes.clone()), *children))
                .is_some()
            {
                return Err(Error::InvalidTree(format!("duplicate node id {id}")));
            }
        }
        let referenced: std::collections::BTreeSet<usize> = map
            .values()
            .filter_map(|(_, c)| *c)
            .flat_map(|(a, b)| [a, b])
            .collect();
        let root = map.keys().copied().find(|id| !referenced.contains(id));
        Ok(Self {
            order,
            nodes: map,
            root,
        })
    }

    fn violations(&self) -> Vec<TreeViolation> {
        let mut out = Vec::new();
        let Some(root) = self.root else {
            out.push(TreeViolation::RootModes { found: vec![] });
            return out;
        };
        let full = ModeSubset::full(self.order);
        let root_modes = &self.nodes[&root].0;
        if *root_modes != full {
            out.push(TreeViolation::RootModes {
                found: root_modes.modes().to_vec(),
            });
        }
        let (mut leaves, mut interior) = (0, 0);
        let mut seen = std::collections::BTreeSet::new();
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                continue;
            }
            let (modes, children) = &self.nodes[&id];
            for &m in modes.modes() {
                if m >= self.order {
                    out.push(TreeViolation::ModeOutOfRange { node: id, mode: m });
                }
            }
            match children {
                None => {
                    leaves += 1;
                    if modes.len() != 1 {
                        out.push(TreeViolation::LeafNotSingleton { node: id });
                    }
                }
                Some((a, b)) => {
                    interior += 1;
                    let (Some(ca), Some(cb)) = (self.nodes.get(a), self.nodes.get(b)) else {
                        for c in [a, b] {
                            if !self.nodes.contains_key(c) {
                                out.push(TreeViolation::DanglingChild {
                                    node: id,
                                    child: *c,
                                });
                            }
                        }
                        continue;
                    };
                    if !ca.0.is_disjoint(&cb.0) {
                        out.push(TreeViolation::ChildrenNotDisjoint { node: id });
                    }
                    if ca.0.union(&cb.0) != *modes {
                        out.push(TreeViolation::ChildrenUnionMismatch { node: id });
                    }
                    stack.push(*b);
                    stack.push(*a);
                }
            }
        }
        for id in self.nodes.keys() {
            if !seen.contains(id) {
                out.push(TreeViolation::Unreachable { node: *id });
            }
        }
        if leaves != self.order {
            out.push(TreeViolation::LeafCount {
                expected: self.order,
                found: leaves,
            });
        }
        if interior + 1 != self.order {
            out.push(TreeViolation::InteriorCount {
                expected: self.order.saturating_sub(1),
                found: interior,
            });
        }
        out
    }

    fn shape(&self, id: usize) -> Shape {
        let (modes, children) = &self.nodes[&id];
        match children {
            None => Shape::Leaf(modes.modes()[0]),
            Some((a, b)) => Shape::Split(Box::new(self.shape(*a)), Box::new(self.shape(*b))),
        }
    }
}

/// Per-mode bit columns: bit `e` set when nonzero `e` is non-null in mode μ.
fn incidence_columns(tensor: &SparseTensor) -> Vec<Vec<u64>> {
    let words = tensor.nnz().div_ceil(64);
    let mut cols = vec![vec![0u64; words]; tensor.order()];
    let null = tensor.null_element();
    for (e, (idx, _)) in tensor.iter().enumerate() {
        for (m, &i) in idx.iter().enumerate() {
            if Some(i) != null {
                cols[m][e / 64] |= 1 << (e % 64);
            }
        }
    }
    cols
}

fn pairwise_jaccard(cols: &[Vec<u64>]) -> Vec<Vec<f64>> {
    let d = cols.len();
    let mut dist = vec![vec![0.0; d]; d];
    for a in 0..d {
        for b in a + 1..d {
            let (mut inter, mut union) = (0u64, 0u64);
            for (x, y) in cols[a].iter().zip(&cols[b]) {
                inter += (x & y).count_ones() as u64;
                union += (x | y).count_ones() as u64;
            }
            let dd = if union == 0 {
                0.0
            } else {
                1.0 - inter as f64 / union as f64
            };
            dist[a][b] = dd;
            dist[b][a] = dd;
        }
    }
    dist
}

/// Agglomerative clustering over modes. Equal-distance merges go to the
/// lexicographically smallest pair of mode sets; the left child is the
/// cluster holding the smallest mode id.
fn cluster(dist: &[Vec<f64>], linkage: Linkage) -> Shape {
    let mut clusters: Vec<(Vec<usize>, Shape)> =
        (0..dist.len()).map(|m| (vec![m], Shape::Leaf(m))).collect();
    let linkage_dist = |a: &[usize], b: &[usize]| -> f64 {
        let pairs = a.iter().flat_map(|&x| b.iter().map(move |&y| dist[x][y]));
        match linkage {
            Linkage::Complete => pairs.fold(0.0, f64::max),
            Linkage::Average => pairs.sum::<f64>() / (a.len() * b.len()) as f64,
        }
    };
    while clusters.len() > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let dd = linkage_dist(&clusters[i].0, &clusters[j].0);
                let better = match best {
                    None => true,
                    Some((bd, bi, bj)) => {
                        // exact ties fall through to the mode-set comparison
                        dd < bd
                            || (dd == bd
                                && pair_key(&clusters[i].0, &clusters[j].0)
                                    < pair_key(&clusters[bi].0, &clusters[bj].0))
                    }
                };
                if better {
                    best = Some((dd, i, j));
                }
            }
        }
        let (_, i, j) = best.unwrap();
        let (mb, sb) = clusters.remove(j);
        let (ma, sa) = clusters.remove(i);
        let (left, right) = if sa.min_mode() < sb.min_mode() {
            (sa, sb)
        } else {
            (sb, sa)
        };
        let mut modes = ma;
        modes.extend(mb);
        modes.sort_unstable();
        clusters.push((modes, Shape::Split(Box::new(left), Box::new(right))));
        clusters.sort_by(|a, b| a.0.cmp(&b.0));
    }
    clusters.pop().unwrap().1
}

fn pair_key<'a>(a: &'a [usize], b: &'a [usize]) -> (&'a [usize], &'a [usize]) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}
