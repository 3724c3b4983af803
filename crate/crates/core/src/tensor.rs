//! Coordinate-format sparse tensors.
//!
//! Element indices are 1-based, mode ids are 0-based positions into `dims`.
//! Entries are kept sorted lexicographically by multi-index so every scan is
//! a single pass over the nonzeros; the logical index space is never touched.
//!
//! Matricizations are never materialized. A row or column of `A^(t)` is
//! identified by its [`IndexKey`]: the sub-tuple of the multi-index over the
//! relevant modes, listed in ascending mode order. Linear indices (1-based,
//! colexicographic, first listed mode fastest) are available through
//! [`ModeSubset::encode`] / [`ModeSubset::decode`] wherever they fit in a
//! `u128`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Sub-tuple of a multi-index over a mode subset, in ascending mode order.
pub type IndexKey = Vec<u32>;

/// A sorted set of modes `t ⊂ {0..d-1}` together with the index
/// linearization convention over `I_t`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModeSubset {
    modes: Vec<usize>,
}

impl ModeSubset {
    pub fn new(mut modes: Vec<usize>) -> Self {
        modes.sort_unstable();
        modes.dedup();
        Self { modes }
    }

    pub fn full(order: usize) -> Self {
        Self {
            modes: (0..order).collect(),
        }
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn contains(&self, mode: usize) -> bool {
        self.modes.binary_search(&mode).is_ok()
    }

    /// Modes of `{0..order-1}` not in this subset.
    pub fn complement(&self, order: usize) -> ModeSubset {
        ModeSubset {
            modes: (0..order).filter(|m| !self.contains(*m)).collect(),
        }
    }

    pub fn is_disjoint(&self, other: &ModeSubset) -> bool {
        self.modes.iter().all(|m| !other.contains(*m))
    }

    pub fn union(&self, other: &ModeSubset) -> ModeSubset {
        let mut modes = self.modes.clone();
        modes.extend_from_slice(&other.modes);
        ModeSubset::new(modes)
    }

    /// Extracts the sub-tuple of `index` over this subset.
    pub fn project(&self, index: &[u32]) -> IndexKey {
        self.modes.iter().map(|&m| index[m]).collect()
    }

    /// Writes `key` (a sub-tuple over this subset) into the matching
    /// positions of a full multi-index.
    pub fn scatter(&self, key: &[u32], index: &mut [u32]) {
        for (&m, &v) in self.modes.iter().zip(key) {
            index[m] = v;
        }
    }

    /// `|I_t| = Π_{μ∈t} n_μ`, or `None` on `u128` overflow.
    pub fn size(&self, dims: &[u32]) -> Option<u128> {
        self.modes
            .iter()
            .try_fold(1u128, |acc, &m| acc.checked_mul(dims[m] as u128))
    }

    /// 1-based colexicographic linear index of `key`.
    pub fn encode(&self, dims: &[u32], key: &[u32]) -> Result<u128> {
        if key.len() != self.modes.len() {
            return Err(Error::OrderMismatch {
                expected: self.modes.len(),
                got: key.len(),
            });
        }
        let overflow = || Error::IndexOverflow {
            modes: self.modes.clone(),
        };
        let mut lin = 0u128;
        let mut stride = 1u128;
        for (&m, &i) in self.modes.iter().zip(key) {
            if i == 0 || i > dims[m] {
                return Err(Error::IndexOutOfBounds {
                    mode: m,
                    index: i as u64,
                    size: dims[m],
                });
            }
            let term = ((i - 1) as u128).checked_mul(stride).ok_or_else(overflow)?;
            lin = lin.checked_add(term).ok_or_else(overflow)?;
            stride = stride.saturating_mul(dims[m] as u128);
        }
        lin.checked_add(1).ok_or_else(overflow)
    }

    /// Inverse of [`encode`](Self::encode).
    pub fn decode(&self, dims: &[u32], lin: u128) -> Result<IndexKey> {
        let size = self.size(dims).ok_or_else(|| Error::IndexOverflow {
            modes: self.modes.clone(),
        })?;
        if lin == 0 || lin > size {
            return Err(Error::InvalidArgument(format!(
                "linear index {lin} outside 1..={size} for modes {:?}",
                self.modes
            )));
        }
        let mut rest = lin - 1;
        let mut key = Vec::with_capacity(self.modes.len());
        for &m in &self.modes {
            let n = dims[m] as u128;
            key.push((rest % n) as u32 + 1);
            rest /= n;
        }
        Ok(key)
    }
}

/// A d-order sparse tensor in coordinate format.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    dims: Vec<u32>,
    /// Flattened `nnz × order` multi-indices, lexicographically sorted.
    indices: Vec<u32>,
    values: Vec<f64>,
    /// Per-mode "null" element (the ingestion pipeline reserves index 1).
    null_element: Option<u32>,
}

impl SparseTensor {
    /// Builds a tensor from coordinates. Duplicates are summed and entries
    /// that end up exactly zero are dropped.
    pub fn from_coords<I, K>(dims: Vec<u32>, coords: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, f64)>,
        K: AsRef<[u32]>,
    {
        let order = dims.len();
        if order == 0 {
            return Err(Error::InvalidArgument("tensor order must be ≥ 1".into()));
        }
        if let Some(m) = dims.iter().position(|&n| n == 0) {
            return Err(Error::InvalidArgument(format!("mode {m} has size 0")));
        }
        let mut raw_idx = Vec::new();
        let mut raw_val = Vec::new();
        for (key, value) in coords {
            let key = key.as_ref();
            if key.len() != order {
                return Err(Error::OrderMismatch {
                    expected: order,
                    got: key.len(),
                });
            }
            for (m, (&i, &n)) in key.iter().zip(&dims).enumerate() {
                if i == 0 || i > n {
                    return Err(Error::IndexOutOfBounds {
                        mode: m,
                        index: i as u64,
                        size: n,
                    });
                }
            }
            raw_idx.extend_from_slice(key);
            raw_val.push(value);
        }
        Ok(Self::from_raw(dims, raw_idx, raw_val))
    }

    /// Sorts, merges duplicates and drops zeros. Indices must already be
    /// in bounds.
    fn from_raw(dims: Vec<u32>, raw_idx: Vec<u32>, raw_val: Vec<f64>) -> Self {
        let order = dims.len();
        let key = |e: usize| &raw_idx[e * order..(e + 1) * order];
        let mut perm: Vec<usize> = (0..raw_val.len()).collect();
        perm.sort_by(|&a, &b| key(a).cmp(key(b)).then(a.cmp(&b)));

        let mut indices = Vec::with_capacity(raw_idx.len());
        let mut values: Vec<f64> = Vec::with_capacity(raw_val.len());
        let mut pos = 0;
        while pos < perm.len() {
            let head = perm[pos];
            let mut sum = raw_val[head];
            pos += 1;
            while pos < perm.len() && key(perm[pos]) == key(head) {
                sum += raw_val[perm[pos]];
                pos += 1;
            }
            if sum != 0.0 {
                indices.extend_from_slice(key(head));
                values.push(sum);
            }
        }
        Self {
            dims,
            indices,
            values,
            null_element: None,
        }
    }

    /// Keeps the entries for which `keep` holds; sortedness is preserved.
    fn filter(&self, mut keep: impl FnMut(&[u32]) -> bool) -> Self {
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (idx, v) in self.iter() {
            if keep(idx) {
                indices.extend_from_slice(idx);
                values.push(v);
            }
        }
        Self {
            dims: self.dims.clone(),
            indices,
            values,
            null_element: self.null_element,
        }
    }

    pub fn with_null_element(mut self, null: Option<u32>) -> Self {
        self.null_element = null;
        self
    }

    pub fn null_element(&self) -> Option<u32> {
        self.null_element
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[u32] {
        &self.dims
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `Π n_μ` as a float; the logical size routinely overflows integers.
    pub fn logical_size(&self) -> f64 {
        self.dims.iter().map(|&n| n as f64).product()
    }

    pub fn index(&self, entry: usize) -> &[u32] {
        let d = self.order();
        &self.indices[entry * d..(entry + 1) * d]
    }

    pub fn value(&self, entry: usize) -> f64 {
        self.values[entry]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (&[u32], f64)> + '_ {
        self.indices
            .chunks_exact(self.order())
            .zip(self.values.iter().copied())
    }

    /// Value at a multi-index; absent entries are zero.
    pub fn get(&self, index: &[u32]) -> f64 {
        let d = self.order();
        debug_assert_eq!(index.len(), d);
        let (mut lo, mut hi) = (0usize, self.nnz());
        while lo < hi {
            let mid = (lo + hi) / 2;
            match self.indices[mid * d..(mid + 1) * d].cmp(index) {
                Ordering::Less => lo = mid + 1,
                Ordering::Greater => hi = mid,
                Ordering::Equal => return self.values[mid],
            }
        }
        0.0
    }

    pub fn check_index(&self, index: &[u32]) -> Result<()> {
        if index.len() != self.order() {
            return Err(Error::OrderMismatch {
                expected: self.order(),
                got: index.len(),
            });
        }
        check_bounds(&self.dims, index)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Column `A^(t)(:, col)` as a map from row key (over `t`) to value.
    pub fn column_fiber(&self, rows: &ModeSubset, col: &[u32]) -> BTreeMap<IndexKey, f64> {
        let cols = rows.complement(self.order());
        self.iter()
            .filter(|(idx, _)| cols.modes().iter().zip(col).all(|(&m, &c)| idx[m] == c))
            .map(|(idx, v)| (rows.project(idx), v))
            .collect()
    }

    /// Column `A^(t)(:, col)` addressed by 1-based linear indices on both
    /// sides. The root matricization (`t` = all modes) has the single
    /// column 1, which is `vec(A)`.
    pub fn matricize_column(&self, rows: &ModeSubset, col: u128) -> Result<BTreeMap<u128, f64>> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("row mode set is empty".into()));
        }
        let cols = rows.complement(self.order());
        let col_key = if cols.is_empty() {
            if col != 1 {
                return Err(Error::InvalidArgument(format!(
                    "root matricization has one column, got {col}"
                )));
            }
            Vec::new()
        } else {
            cols.decode(&self.dims, col)?
        };
        self.column_fiber(rows, &col_key)
            .into_iter()
            .map(|(k, v)| Ok((rows.encode(&self.dims, &k)?, v)))
            .collect()
    }

    /// Sub-tensor of the entries whose column key under `t` (the projection
    /// onto the complement of `t`) is a member of `cols`. Coordinates are
    /// unchanged.
    pub fn restrict(&self, rows: &ModeSubset, cols: &HashSet<IndexKey>) -> SparseTensor {
        let complement = rows.complement(self.order());
        let mut scratch = Vec::with_capacity(complement.len());
        self.filter(|idx| {
            scratch.clear();
            scratch.extend(complement.modes().iter().map(|&m| idx[m]));
            cols.contains(&scratch)
        })
    }

    /// [`restrict`](Self::restrict) with columns given as linear indices.
    pub fn restrict_linear(&self, rows: &ModeSubset, cols: &[u128]) -> Result<SparseTensor> {
        let complement = rows.complement(self.order());
        let keys = cols
            .iter()
            .map(|&c| complement.decode(&self.dims, c))
            .collect::<Result<HashSet<_>>>()?;
        Ok(self.restrict(rows, &keys))
    }

    /// Parses the text format: a `dims: n1 .. nd` header, an optional
    /// `null: k` line, then one `i1 .. id value` line per nonzero.
    /// Blank lines and `#` comments are ignored.
    pub fn read_text<R: Read>(reader: R, path: &Path) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut dims: Option<Vec<u32>> = None;
        let mut null = None;
        let mut raw_idx = Vec::new();
        let mut raw_val = Vec::new();
        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let lineno = lineno + 1;
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some(dims) = dims.as_ref() else {
                let rest = line
                    .strip_prefix("dims:")
                    .ok_or_else(|| perr(lineno, "expected `dims:` header".into()))?;
                let parsed = rest
                    .split_whitespace()
                    .map(|t| t.parse::<u32>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| perr(lineno, format!("bad dimension: {e}")))?;
                if parsed.is_empty() || parsed.contains(&0) {
                    return Err(perr(lineno, "dimensions must be positive".into()));
                }
                dims = Some(parsed);
                continue;
            };
            if let Some(rest) = line.strip_prefix("null:") {
                let v = rest
                    .trim()
                    .parse::<u32>()
                    .map_err(|e| perr(lineno, format!("bad null element: {e}")))?;
                null = Some(v);
                continue;
            }
            let mut fields = line.split_whitespace();
            for (m, &n) in dims.iter().enumerate() {
                let tok = fields
                    .next()
                    .ok_or_else(|| perr(lineno, format!("expected {} indices", dims.len())))?;
                let i: u32 = tok
                    .parse()
                    .map_err(|e| perr(lineno, format!("bad index `{tok}`: {e}")))?;
                if i == 0 || i > n {
                    return Err(perr(
                        lineno,
                        format!("index {i} out of bounds for mode {} (size {n})", m + 1),
                    ));
                }
                raw_idx.push(i);
            }
            let tok = fields
                .next()
                .ok_or_else(|| perr(lineno, "missing value".into()))?;
            let v: f64 = tok
                .parse()
                .map_err(|e| perr(lineno, format!("bad value `{tok}`: {e}")))?;
            if fields.next().is_some() {
                return Err(perr(lineno, "trailing fields".into()));
            }
            raw_val.push(v);
        }
        let dims = dims.ok_or_else(|| perr(0, "missing `dims:` header".into()))?;
        Ok(Self::from_raw(dims, raw_idx, raw_val).with_null_element(null))
    }

    pub fn write_text<W: Write>(&self, mut writer: W) -> Result<()> {
        let mut line = String::from("dims:");
        for n in &self.dims {
            write!(line, " {n}").unwrap();
        }
        writeln!(writer, "{line}")?;
        if let Some(null) = self.null_element {
            writeln!(writer, "null: {null}")?;
        }
        for (idx, v) in self.iter() {
            line.clear();
            for i in idx {
                write!(line, "{i} ").unwrap();
            }
            // `{}` on f64 prints the shortest representation that parses
            // back to the identical bits.
            write!(line, "{v}").unwrap();
            writeln!(writer, "{line}")?;
        }
        Ok(())
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
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_text(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn check_bounds(dims: &[u32], index: &[u32]) -> Result<()> {
    for (m, (&i, &n)) in index.iter().zip(dims).enumerate() {
        if i == 0 || i > n {
            return Err(Error::IndexOutOfBounds {
                mode: m,
                index: i as u64,
                size: n,
            });
        }
    }
    Ok(())
}
