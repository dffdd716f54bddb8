//! Small dense-matrix helpers shared by the dense (oracle) computation paths.
//!
//! Everything here operates on materialized `nalgebra` matrices. The
//! production code paths work per-eigenvalue in the shared basis and do not
//! depend on this module beyond basis handling; the dense routines exist so
//! that spectral results can be cross-checked against straightforward matrix
//! arithmetic.

use nalgebra::{DMatrix, DVector};

/// Relative eigenvalue cutoff for pseudo-inverses: eigenvalues below
/// `PINV_RCUT * lambda_max` are treated as exact zeros.
pub const PINV_RCUT: f64 = 1e-12;

/// Eigendecomposition of a symmetric matrix. Returns `(eigenvalues, vectors)`
/// with eigenvectors as columns, in the order produced by the solver.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let se = m.clone().symmetric_eigen();
    (se.eigenvalues, se.eigenvectors)
}

/// Applies a scalar function to the spectrum of a symmetric PSD matrix.
/// Eigenvalues below the relative cutoff are passed to `f` as exact zeros,
/// so pseudo-inverse conventions carry over to materialized matrices whose
/// "zero" eigenvalues round to tiny values.
pub fn spectral_apply<F: Fn(f64) -> f64>(m: &DMatrix<f64>, f: F) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen(m);
    let cut = PINV_RCUT * vals.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let mapped = DVector::from_iterator(
        vals.len(),
        vals.iter().map(|&v| if v.abs() <= cut { f(0.0) } else { f(v) }),
    );
    &vecs * DMatrix::from_diagonal(&mapped) * vecs.transpose()
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix.
pub fn pinv_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_apply(m, |v| if v > 0.0 { 1.0 / v } else { 0.0 })
}

/// Rank of a symmetric PSD matrix under the relative eigenvalue cutoff.
pub fn rank_psd(m: &DMatrix<f64>) -> usize {
    let (vals, _) = sym_eigen(m);
    let cut = PINV_RCUT * vals.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    vals.iter().filter(|&&v| v.abs() > cut).count()
}

/// Frobenius deviation of `V` from orthogonality, `||V^T V - I||_F`.
pub fn orthogonality_deviation(v: &DMatrix<f64>) -> f64 {
    let d = v.ncols();
    (v.transpose() * v - DMatrix::identity(d, d)).norm()
}

/// Rotation by `angle` in the coordinate plane `(i, j)` of a `d`-dimensional
/// identity matrix.
pub fn givens(d: usize, i: usize, j: usize, angle: f64) -> DMatrix<f64> {
    assert!(i < d && j < d && i != j, "plane indices out of range");
    let (s, c) = angle.sin_cos();
    let mut m = DMatrix::identity(d, d);
    m[(i, i)] = c;
    m[(j, j)] = c;
    m[(i, j)] = -s;
    m[(j, i)] = s;
    m
}

/// Deterministic random orthogonal matrix: QR factor of a Gaussian matrix.
pub fn random_orthogonal<R: rand::Rng>(d: usize, rng: &mut R) -> DMatrix<f64> {
    use rand_distr::StandardNormal;
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}
