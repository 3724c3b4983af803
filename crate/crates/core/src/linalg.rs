//! Sparse matrix kernels, truncated SVD and pseudo-inverse.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Singular values below this fraction of the largest are treated as zero
/// when inverting.
pub const PINV_CUTOFF: f64 = 1e-12;

/// Gram eigenvalues below this fraction of the largest are treated as
/// zero when determining the numerical rank (σ ratio 1e-6).
pub const GRAM_RANK_CUTOFF: f64 = 1e-12;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Self {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(
                r < nrows && c < ncols,
                "triplet ({r},{c}) outside {nrows}x{ncols}"
            );
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            vals.push(v);
        }
        for r in 0..nrows {
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

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                triplets.push((c, r, v));
            }
        }
        CsrMatrix::from_triplets(self.ncols, self.nrows, triplets)
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            *out = self.row(r).map(|(c, v)| v * x[c]).sum();
        }
    }

    /// `y = A x` for a dense column block `x` (ncols × r).
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(self.nrows, x.ncols());
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                for j in 0..x.ncols() {
                    y[(r, j)] += v * x[(c, j)];
                }
            }
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }

    /// Dense `AᵀA` accumulated from outer products of the rows.
    fn gram_of_columns(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.ncols, self.ncols);
        for r in 0..self.nrows {
            let span = self.row_ptr[r]..self.row_ptr[r + 1];
            let cols = &self.col_idx[span.clone()];
            let vals = &self.vals[span];
            for (a, &ca) in cols.iter().enumerate() {
                for (b, &cb) in cols.iter().enumerate() {
                    g[(ca, cb)] += vals[a] * vals[b];
                }
            }
        }
        g
    }
}

/// Rank-`r` truncated SVD `A ≈ U diag(σ) Vᵀ` with `r ≤ k`; zero singular
/// values are never included.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub singular_values: Vec<f64>,
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
}

impl TruncatedSvd {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SvdOptions {
    /// Gram matrices up to this size are eigendecomposed densely.
    pub dense_limit: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SvdOptions {
    fn default() -> Self {
        Self {
            dense_limit: 256,
            tolerance: 1e-10,
            max_iterations: 300,
        }
    }
}

/// Top-`k` singular triplets through the eigendecomposition of the smaller
/// Gram matrix (`AᵀA` or `AAᵀ`).
pub fn truncated_svd(a: &CsrMatrix, k: usize, opts: &SvdOptions) -> TruncatedSvd {
    let at = a.transpose();
    // `small` is whichever orientation has the fewer columns: its Gram
    // matrix is the one we decompose.
    let transposed = a.ncols() > a.nrows();
    let (small, small_t) = if transposed { (&at, a) } else { (a, &at) };
    let n = small.ncols();
    let (eigvals, eigvecs) = if n <= opts.dense_limit {
        dense_top_eigen(&small.gram_of_columns(), k)
    } else {
        lanczos_top_eigen(small, small_t, k, opts)
    };

    let lambda_max = eigvals.first().copied().unwrap_or(0.0);
    let keep = eigvals
        .iter()
        .take_while(|&&l| lambda_max > 0.0 && l > GRAM_RANK_CUTOFF * lambda_max)
        .count();
    let sigma: Vec<f64> = eigvals[..keep].iter().map(|l| l.sqrt()).collect();
    let v = eigvecs.columns(0, keep).into_owned();
    // U = A V / σ
    let mut u = small.mul_dense(&v);
    for (j, s) in sigma.iter().enumerate() {
        u.column_mut(j).scale_mut(1.0 / s);
    }
    let (left, right) = if transposed { (v, u) } else { (u, v) };
    TruncatedSvd {
        singular_values: sigma,
        left,
        right,
    }
}

/// Largest `k` eigenpairs of a dense symmetric matrix, descending.
fn dense_top_eigen(g: &DMatrix<f64>, k: usize) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(g.clone());
    let mut order: Vec<usize> = (0..g.nrows()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    order.truncate(k.min(g.nrows()));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(g.nrows(), order.len());
    for (j, &i) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        canonical_sign(&mut col);
        vecs.set_column(j, &col);
    }
    (vals, vecs)
}

/// Lanczos with full reorthogonalization on the implicit Gram `BᵀB`
/// (`b_t` is `Bᵀ` in CSR form).
fn lanczos_top_eigen(
    b: &CsrMatrix,
    b_t: &CsrMatrix,
    k: usize,
    opts: &SvdOptions,
) -> (Vec<f64>, DMatrix<f64>) {
    let n = b.ncols();
    let m_max = opts.max_iterations.min(n).max(1);
    let k = k.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(0x01a2_c205);
    let mut q: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    normalize(&mut q);

    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut tmp = vec![0.0; b.nrows()];
    let mut w = vec![0.0; n];

    let mut result = None;
    for j in 0..m_max {
        b.mul_vec(&basis[j], &mut tmp);
        b_t.mul_vec(&tmp, &mut w);
        let a_j = dot(&w, &basis[j]);
        alpha.push(a_j);
        // two passes of classical Gram-Schmidt against the whole basis
        for _ in 0..2 {
            for v in &basis {
                let c = dot(&w, v);
                axpy(-c, v, &mut w);
            }
        }
        let b_j = dot(&w, &w).sqrt();
        let steps = j + 1;
        let check =
            steps == m_max || steps == n || steps % 5 == 0 || (steps >= k && steps <= 2 * k);
        // a vanishing residual means the Krylov space is invariant
        let exhausted = b_j <= 1e-13 * alpha.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if check || exhausted {
            let (theta, s) = tridiagonal_eigen(&alpha, &beta);
            let scale = theta
                .first()
                .copied()
                .unwrap_or(0.0)
                .abs()
                .max(f64::MIN_POSITIVE);
            let want = k.min(steps);
            let converged = (0..want).all(|i| {
                let resid = (b_j * s[(steps - 1, i)]).abs();
                theta[i] <= GRAM_RANK_CUTOFF * scale || resid <= opts.tolerance * scale
            });
            if (converged && steps >= k) || exhausted || steps == m_max {
                result = Some((theta, s, want));
                break;
            }
        }
        beta.push(b_j);
        for x in w.iter_mut() {
            *x /= b_j;
        }
        basis.push(std::mem::replace(&mut w, vec![0.0; n]));
    }
    let (theta, s, want) = result.expect("lanczos loop always yields");
    let steps = alpha.len();
    let mut vecs = DMatrix::zeros(n, want);
    for i in 0..want {
        let mut col = DVector::zeros(n);
        for (jj, v) in basis.iter().take(steps).enumerate() {
            let c = s[(jj, i)];
            for (x, y) in col.iter_mut().zip(v) {
                *x += c * y;
            }
        }
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
        canonical_sign(&mut col);
        vecs.set_column(i, &col);
    }
    (theta[..want].to_vec(), vecs)
}

/// Eigenpairs of the symmetric tridiagonal matrix, descending.
fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let m = alpha.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let (vals, vecs) = dense_top_eigen(&t, m);
    (vals, vecs)
}

/// Flips `v` so its largest-magnitude component is positive.
fn canonical_sign(v: &mut DVector<f64>) {
    if let Some((_, &x)) = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
    {
        if x < 0.0 {
            v.neg_mut();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    for x in v.iter_mut() {
        *x /= n;
    }
}

/// Moore–Penrose pseudo-inverse; singular values below
/// [`PINV_CUTOFF`]`·σ_max` are dropped.
pub fn pseudo_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    truncated_pseudo_inverse(a, usize::MAX)
}

/// Pseudo-inverse of the best rank-`max_rank` approximation of `a`.
pub fn truncated_pseudo_inverse(a: &DMatrix<f64>, max_rank: usize) -> DMatrix<f64> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return DMatrix::zeros(n, m);
    }
    let svd = SVD::new(a.clone(), true, true);
    let u = svd.u.as_ref().unwrap();
    let v_t = svd.v_t.as_ref().unwrap();
    let s_max = svd.singular_values.max();
    let mut out = DMatrix::zeros(n, m);
    if s_max <= 0.0 {
        return out;
    }
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    for &i in order.iter().take(max_rank) {
        let s = svd.singular_values[i];
        if s <= PINV_CUTOFF * s_max {
            break;
        }
        let vi = v_t.row(i).transpose();
        let ui = u.column(i);
        out += (vi * ui.transpose()) / s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_sparse(rng: &mut ChaCha8Rng, m: usize, n: usize, density: f64) -> CsrMatrix {
        let mut trip = Vec::new();
        for r in 0..m {
            for c in 0..n {
                if rng.gen::<f64>() < density {
                    trip.push((r, c, rng.gen_range(1..10) as f64));
                }
            }
        }
        CsrMatrix::from_triplets(m, n, trip)
    }

    fn projector(v: &DMatrix<f64>) -> DMatrix<f64> {
        v * v.transpose()
    }

    fn oracle(a: &DMatrix<f64>, k: usize) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
        let svd = SVD::new(a.clone(), true, true);
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
        order.truncate(k);
        let s: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
        let u = DMatrix::from_columns(
            &order
                .iter()
                .map(|&i| svd.u.as_ref().unwrap().column(i).into_owned())
                .collect::<Vec<_>>(),
        );
        let v = DMatrix::from_columns(
            &order
                .iter()
                .map(|&i| svd.v_t.as_ref().unwrap().row(i).transpose())
                .collect::<Vec<_>>(),
        );
        (s, u, v)
    }

    #[test]
    fn csr_duplicates_and_transpose() {
        let a = CsrMatrix::from_triplets(2, 3, vec![(0, 1, 1.0), (1, 2, 2.0), (0, 1, 3.0)]);
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.to_dense()[(0, 1)], 4.0);
        assert_eq!(a.transpose().to_dense(), a.to_dense().transpose());
    }

    #[test]
    fn dense_and_lanczos_paths_agree_with_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (m, n) in [(60, 40), (30, 70), (80, 80)] {
            let a = random_sparse(&mut rng, m, n, 0.15);
            let (s, u, v) = oracle(&a.to_dense(), 5);
            for dense_limit in [0, 1000] {
                let opts = SvdOptions {
                    dense_limit,
                    ..Default::default()
                };
                let t = truncated_svd(&a, 5, &opts);
                assert_eq!(t.rank(), 5);
                for (x, y) in t.singular_values.iter().zip(&s) {
                    assert!((x - y).abs() < 1e-8 * s[0], "{x} vs {y}");
                }
                assert!((projector(&t.right) - projector(&v)).amax() < 1e-8);
                assert!((projector(&t.left) - projector(&u)).amax() < 1e-8);
            }
        }
    }

    #[test]
    fn rank_deficient_is_truncated() {
        // rank-1: [[2,4],[1,2]]
        let a = CsrMatrix::from_triplets(
            2,
            2,
            vec![(0, 0, 2.0), (0, 1, 4.0), (1, 0, 1.0), (1, 1, 2.0)],
        );
        for dense_limit in [0, 10] {
            let t = truncated_svd(
                &a,
                5,
                &SvdOptions {
                    dense_limit,
                    ..Default::default()
                },
            );
            assert_eq!(t.rank(), 1);
            let v = t.right.column(0);
            assert!((v[0].powi(2) - 0.2).abs() < 1e-12);
            assert!((v[1].powi(2) - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn pinv_of_rank_deficient() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 0.0, 0.0]);
        let p = pseudo_inverse(&a);
        assert_eq!(p.shape(), (2, 3));
        assert!((&a * &p * &a - &a).amax() < 1e-12);
        assert!((&p * &a * &p - &p).amax() < 1e-12);
        assert_eq!(pseudo_inverse(&DMatrix::zeros(2, 2)), DMatrix::zeros(2, 2));
    }

    #[test]
    fn truncated_pinv_inverts_best_low_rank_part() {
        let a =
            DMatrix::<f64>::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 1e-9]);
        let eig = a.clone().symmetric_eigen();
        let mut idx: Vec<usize> = (0..3).collect();
        idx.sort_by(|&x, &y| {
            eig.eigenvalues[y]
                .abs()
                .total_cmp(&eig.eigenvalues[x].abs())
        });
        let mut oracle = DMatrix::<f64>::zeros(3, 3);
        for &i in &idx[..2] {
            let v = eig.eigenvectors.column(i);
            let lam: f64 = eig.eigenvalues[i];
            oracle += &v * v.transpose() / lam;
        }
        assert!((truncated_pseudo_inverse(&a, 2) - oracle).amax() < 1e-10);
        assert!((truncated_pseudo_inverse(&a, 9) - pseudo_inverse(&a)).amax() == 0.0);
        assert!((truncated_pseudo_inverse(&a, 3) - a.clone().try_inverse().unwrap()).amax() < 1e-8);
    }
}
