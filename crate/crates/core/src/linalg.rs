//! Dense linear algebra, seeded randomness and a matrix-free CG solver.
//!
//! Matrices are `nalgebra::DMatrix<f64>`. Iterates of the solvers are `d × r`
//! matrices and every operator in this crate acts on such matrices, with the
//! Frobenius inner product as the ambient geometry.
//!
//! # Randomness
//!
//! [`RandomStream`] wraps ChaCha20 (`rand_chacha::ChaCha20Rng`). A stream is
//! keyed by a `u64` seed through `SeedableRng::seed_from_u64` and by a 64-bit
//! stream id; the root stream uses id 0 and [`RandomStream::substream`]
//! derives the id from a text label with 64-bit FNV-1a. Normal draws use the
//! ziggurat sampler of `rand_distr::StandardNormal`, uniforms use
//! `rand`'s `[0, 1)` `f64` conversion. Results are reproducible bit-for-bit
//! for a given build of these crates.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;

/// Deterministic pseudorandom stream. See the module docs for the algorithm.
#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    rng: ChaCha20Rng,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream_id(seed, 0)
    }

    fn with_stream_id(seed: u64, id: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(id);
        Self { seed, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream determined only by `(seed, label)`; the parent's
    /// position does not matter.
    pub fn substream(&self, label: &str) -> Self {
        Self::with_stream_id(self.seed, fnv1a(label.as_bytes()))
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// `rows × cols` matrix of iid standard normals, filled row by row.
pub fn gaussian_matrix(stream: &mut RandomStream, rows: usize, cols: usize) -> DenseMatrix {
    let mut out = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            out[(i, j)] = stream.normal();
        }
    }
    out
}

/// Random `rows × cols` matrix with orthonormal columns: the Q factor of a
/// Gaussian matrix with column signs fixed so that `diag(R) > 0`.
pub fn random_orthonormal(stream: &mut RandomStream, rows: usize, cols: usize) -> DenseMatrix {
    assert!(cols <= rows, "need cols <= rows for orthonormal columns");
    let g = gaussian_matrix(stream, rows, cols);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Planted factor `U·diag(σ)·Vᵀ` with singular values log-spaced from 1 up
/// to `kappa`.
///
/// With `r = 1` there is a single singular value, so only `kappa = 1` is
/// meaningful and anything else is rejected.
pub fn conditioned_factor(
    stream: &mut RandomStream,
    d: usize,
    r: usize,
    kappa: f64,
) -> Result<DenseMatrix> {
    if r == 0 || r > d {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= r <= d, got r = {r}, d = {d}"
        )));
    }
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "condition number must be a finite value >= 1, got {kappa}"
        )));
    }
    if r == 1 && kappa != 1.0 {
        return Err(Error::InvalidParameter(
            "a rank-one factor has condition number 1".into(),
        ));
    }
    let u = random_orthonormal(stream, d, r);
    let v = random_orthonormal(stream, r, r);
    let sigma = log_spaced_spectrum(r, kappa);
    Ok(u * DMatrix::from_diagonal(&DVector::from_vec(sigma)) * v.transpose())
}

/// `kappa^(i/(r-1))` for `i = 0..r`.
pub fn log_spaced_spectrum(r: usize, kappa: f64) -> Vec<f64> {
    if r == 1 {
        return vec![1.0];
    }
    (0..r)
        .map(|i| kappa.powf(i as f64 / (r - 1) as f64))
        .collect()
}

/// Point drawn uniformly from the Frobenius ball of `radius` around `center`.
pub fn uniform_in_ball(stream: &mut RandomStream, center: &DenseMatrix, radius: f64) -> DenseMatrix {
    let (rows, cols) = center.shape();
    let dir = gaussian_matrix(stream, rows, cols);
    let norm = dir.norm();
    let dim = (rows * cols) as f64;
    let scale = radius * stream.uniform().powf(1.0 / dim);
    center + dir * (scale / norm)
}

/// Frobenius inner product.
pub fn inner(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.dot(b)
}

/// Entrywise power with the convention `A^{⊙0} = 1`.
pub fn hadamard_pow(a: &DenseMatrix, k: u32) -> DenseMatrix {
    match k {
        0 => DMatrix::from_element(a.nrows(), a.ncols(), 1.0),
        1 => a.clone(),
        _ => a.map(|v| v.powi(k as i32)),
    }
}

/// Nonincreasing singular values.
pub fn singular_values(a: &DenseMatrix) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Symmetric linear operator on `rows × cols` matrices.
pub trait SelfAdjointAction {
    fn shape(&self) -> (usize, usize);
    fn apply(&self, z: &DenseMatrix) -> DenseMatrix;
}

/// Operator given by an explicit `N × N` matrix acting on the column-major
/// vectorisation of `rows × cols` inputs (`N = rows·cols`).
#[derive(Clone, Debug)]
pub struct MatrixAction {
    pub matrix: DenseMatrix,
    rows: usize,
    cols: usize,
}

impl MatrixAction {
    pub fn new(matrix: DenseMatrix, rows: usize, cols: usize) -> Result<Self> {
        let n = rows * cols;
        if matrix.shape() != (n, n) {
            return Err(Error::ShapeMismatch {
                expected: (n, n),
                got: matrix.shape(),
            });
        }
        Ok(Self { matrix, rows, cols })
    }
}

impl SelfAdjointAction for MatrixAction {
    fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn apply(&self, z: &DenseMatrix) -> DenseMatrix {
        let v = DVector::from_column_slice(z.as_slice());
        let out = &self.matrix * v;
        DMatrix::from_column_slice(self.rows, self.cols, out.as_slice())
    }
}

/// Materialise an operator as its `N × N` matrix in column-major
/// vectorisation by applying it to every coordinate direction.
pub fn densify(op: &dyn SelfAdjointAction) -> DenseMatrix {
    let (rows, cols) = op.shape();
    let n = rows * cols;
    let mut out = DMatrix::zeros(n, n);
    let mut e = DMatrix::zeros(rows, cols);
    for k in 0..n {
        e.as_mut_slice()[k] = 1.0;
        let col = op.apply(&e);
        out.column_mut(k).copy_from_slice(col.as_slice());
        e.as_mut_slice()[k] = 0.0;
    }
    out
}

/// Worst symmetry and positivity defects of `op` over random probe pairs:
/// `max |⟨G Z, W⟩ − ⟨Z, G W⟩| / (‖G Z‖‖W‖ + ‖Z‖‖G W‖)` and
/// `min ⟨G Z, Z⟩ / ‖Z‖²`.
pub fn probe_self_adjoint(
    op: &dyn SelfAdjointAction,
    stream: &mut RandomStream,
    probes: usize,
) -> (f64, f64) {
    let (rows, cols) = op.shape();
    let mut worst_sym: f64 = 0.0;
    let mut min_quad = f64::INFINITY;
    for _ in 0..probes {
        let z = gaussian_matrix(stream, rows, cols);
        let w = gaussian_matrix(stream, rows, cols);
        let gz = op.apply(&z);
        let gw = op.apply(&w);
        let scale = gz.norm() * w.norm() + z.norm() * gw.norm();
        let sym = (inner(&gz, &w) - inner(&z, &gw)).abs() / scale.max(f64::MIN_POSITIVE);
        worst_sym = worst_sym.max(sym);
        min_quad = min_quad.min(inner(&gz, &z) / z.norm_squared());
    }
    (worst_sym, min_quad)
}

/// Result of [`cg_min_norm`].
#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub solution: DenseMatrix,
    pub iterations: usize,
    /// True residual `‖G Z − g‖ / ‖g‖`, recomputed after the last iterate.
    pub rel_residual: f64,
    pub converged: bool,
}

/// Conjugate gradients for `G Z = g` with `G` symmetric positive
/// semidefinite, started from `Z = 0`.
///
/// From a zero start every iterate lies in `range(G)`, so when `g ∈ range(G)`
/// the limit is the minimum-Frobenius-norm solution `G†g`. Non-convergence
/// is reported through `converged`, not as an error.
pub fn cg_min_norm(
    op: &dyn SelfAdjointAction,
    g: &DenseMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    crate::error::check_shape(op.shape(), g.shape())?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("CG tolerance must be positive, got {tol}")));
    }
    let g_norm = g.norm();
    let mut z = DMatrix::zeros(g.nrows(), g.ncols());
    if g_norm == 0.0 {
        return Ok(CgOutcome {
            solution: z,
            iterations: 0,
            rel_residual: 0.0,
            converged: true,
        });
    }

    let target = tol * g_norm;
    let mut res = g.clone();
    let mut dir = res.clone();
    let mut rs = res.norm_squared();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let g_dir = op.apply(&dir);
        let curvature = inner(&dir, &g_dir);
        if !(curvature > 0.0) {
            // dir has drifted into the kernel; nothing left to gain.
            break;
        }
        let alpha = rs / curvature;
        z += &dir * alpha;
        res -= &g_dir * alpha;
        iterations += 1;
        let rs_next = res.norm_squared();
        if rs_next.sqrt() <= target {
            converged = true;
            break;
        }
        let beta = rs_next / rs;
        rs = rs_next;
        dir *= beta;
        dir += &res;
    }

    let true_res = (op.apply(&z) - g).norm() / g_norm;
    // The recursive residual can drift from the true one; trust the latter.
    let converged = converged && true_res <= 10.0 * tol || true_res <= tol;
    Ok(CgOutcome {
        solution: z,
        iterations,
        rel_residual: true_res,
        converged,
    })
}

/// Default CG iteration cap: four times the number of unknowns.
pub fn default_cg_max_iter(shape: (usize, usize)) -> usize {
    4 * shape.0 * shape.1
}

/// Eigen-decomposition based pseudo-inverse of a symmetric matrix, with
/// eigenvalues below `rel_tol · λ_max` treated as zero.
pub fn symmetric_pinv(a: &DenseMatrix, rel_tol: f64) -> DenseMatrix {
    let eig = SymmetricEigen::new(a.clone());
    let lmax = eig.eigenvalues.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
    let inv = eig
        .eigenvalues
        .map(|v| if v.abs() > rel_tol * lmax { 1.0 / v } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn same_seed_same_matrix() {
        let a = gaussian_matrix(&mut RandomStream::new(7), 4, 3);
        let b = gaussian_matrix(&mut RandomStream::new(7), 4, 3);
        assert_eq!(a, b);
        let c = gaussian_matrix(&mut RandomStream::new(8), 4, 3);
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_moments() {
        let m = gaussian_matrix(&mut RandomStream::new(11), 100, 100);
        let n = m.len() as f64;
        let mean = m.sum() / n;
        let var = m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn single_draw_is_finite() {
        let m = gaussian_matrix(&mut RandomStream::new(0), 1, 1);
        assert!(m[(0, 0)].is_finite());
    }

    #[test]
    fn substreams_depend_on_label_only() {
        let mut root = RandomStream::new(3);
        let a = root.substream("p").normal();
        root.normal();
        root.normal();
        let b = root.substream("p").normal();
        let c = root.substream("q").normal();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn isometric_factor() {
        let x = conditioned_factor(&mut RandomStream::new(1), 10, 4, 1.0).unwrap();
        for s in singular_values(&x) {
            assert_relative_eq!(s, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn log_spaced_factor_spectrum() {
        let x = conditioned_factor(&mut RandomStream::new(2), 100, 5, 10.0).unwrap();
        let s = singular_values(&x);
        let expected = [10.0, 10f64.powf(0.75), 10f64.powf(0.5), 10f64.powf(0.25), 1.0];
        assert_eq!(s.len(), 5);
        for (got, want) in s.iter().zip(expected) {
            assert_relative_eq!(*got, want, max_relative = 1e-10);
        }
        assert_relative_eq!(s[0] / s[4], 10.0, max_relative = 1e-8);
    }

    #[test]
    fn factor_rejects_bad_kappa() {
        let mut s = RandomStream::new(0);
        assert!(conditioned_factor(&mut s, 5, 2, 0.5).is_err());
        assert!(conditioned_factor(&mut s, 5, 2, f64::NAN).is_err());
        assert!(conditioned_factor(&mut s, 3, 4, 1.0).is_err());
        assert!(conditioned_factor(&mut s, 3, 1, 2.0).is_err());
    }

    #[test]
    fn orthonormal_columns() {
        let q = random_orthonormal(&mut RandomStream::new(5), 8, 3);
        let gram = q.transpose() * &q;
        assert_relative_eq!(gram, DMatrix::identity(3, 3), epsilon = 1e-12);
    }

    #[test]
    fn ball_sample_stays_inside() {
        let mut s = RandomStream::new(9);
        let c = gaussian_matrix(&mut s, 6, 2);
        for _ in 0..50 {
            let x = uniform_in_ball(&mut s, &c, 0.3);
            assert!((x - &c).norm() <= 0.3 + 1e-12);
        }
    }

    #[test]
    fn cg_singular_diagonal() {
        let op = MatrixAction::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])), 2, 1)
            .unwrap();
        let g = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let out = cg_min_norm(&op, &g, 1e-10, 8).unwrap();
        assert!(out.converged);
        assert_relative_eq!(out.solution, g, epsilon = 1e-14);
    }

    #[test]
    fn cg_identity_one_step() {
        let op = MatrixAction::new(DMatrix::identity(6, 6), 3, 2).unwrap();
        let g = gaussian_matrix(&mut RandomStream::new(4), 3, 2);
        let out = cg_min_norm(&op, &g, 1e-10, 24).unwrap();
        assert_eq!(out.iterations, 1);
        assert_relative_eq!(out.solution, g, epsilon = 1e-14);
    }

    #[test]
    fn cg_zero_rhs() {
        let op = MatrixAction::new(DMatrix::identity(2, 2), 2, 1).unwrap();
        let out = cg_min_norm(&op, &DMatrix::zeros(2, 1), 1e-10, 8).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.converged);
    }

    #[test]
    fn cg_reports_nonconvergence() {
        let diag = DVector::from_fn(20, |i, _| 10f64.powi(i as i32 % 7));
        let op = MatrixAction::new(DMatrix::from_diagonal(&diag), 20, 1).unwrap();
        let g = DMatrix::from_element(20, 1, 1.0);
        let out = cg_min_norm(&op, &g, 1e-12, 2).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 2);
        assert!(out.rel_residual > 1e-12);
    }

    #[test]
    fn cg_rejects_shape_mismatch() {
        let op = MatrixAction::new(DMatrix::identity(4, 4), 2, 2).unwrap();
        assert!(cg_min_norm(&op, &DMatrix::zeros(4, 1), 1e-10, 8).is_err());
    }

    #[test]
    fn singular_values_basic() {
        assert_eq!(singular_values(&DMatrix::identity(3, 3)), vec![1.0, 1.0, 1.0]);
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -4.0]);
        let s = singular_values(&a);
        assert_relative_eq!(s[0], 4.0, epsilon = 1e-14);
        assert_relative_eq!(s[1], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn singular_values_match_gram_eigenvalues() {
        let a = gaussian_matrix(&mut RandomStream::new(12), 5, 3);
        let s = singular_values(&a);
        let mut eig: Vec<f64> = SymmetricEigen::new(a.transpose() * &a)
            .eigenvalues
            .iter()
            .map(|v| v.max(0.0).sqrt())
            .collect();
        eig.sort_by(|x, y| y.total_cmp(x));
        for (x, y) in s.iter().zip(eig) {
            assert_relative_eq!(*x, y, max_relative = 1e-10);
        }
    }

    #[test]
    fn hadamard_zero_power_is_ones() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, -1.0, 3.0]);
        assert_eq!(hadamard_pow(&a, 0), DMatrix::from_element(2, 2, 1.0));
        assert_eq!(hadamard_pow(&a, 2), DMatrix::from_row_slice(2, 2, &[0.0, 4.0, 1.0, 9.0]));
    }
}
