//! Small linear-algebra helpers shared across modules: symmetric-matrix
//! packing, PSD maintenance and multivariate normal sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Number of entries in the packed upper triangle of an `n x n` matrix.
pub fn triu_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Packs the upper triangle (including diagonal) of a square matrix,
/// row-major: (0,0), (0,1), ..., (0,n-1), (1,1), ...
pub fn pack_triu(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    let mut out = Vec::with_capacity(triu_len(n));
    for i in 0..n {
        for j in i..n {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Reconstructs a symmetric matrix from its packed upper triangle.
pub fn unpack_triu(packed: &[f64], n: usize) -> Result<DMatrix<f64>> {
    if packed.len() != triu_len(n) {
        return Err(Error::Dimension {
            context: "unpack_triu",
            expected: triu_len(n),
            actual: packed.len(),
        });
    }
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            m[(i, j)] = packed[k];
            m[(j, i)] = packed[k];
            k += 1;
        }
    }
    Ok(m)
}

/// Symmetrizes in place: `m <- (m + m^T) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Symmetrizes and, when numerical drift has pushed any eigenvalue
/// negative, floors the spectrum at `floor`.
///
/// PSD matrices (including legitimately singular ones) pass through with
/// only the symmetrization, so exact degenerate cases stay exact.
pub fn symmetrize_floor(m: &mut DMatrix<f64>, floor: f64) {
    symmetrize(m);
    let eig = m.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.min();
    if min_eig < 0.0 {
        let mut vals = eig.eigenvalues;
        for v in vals.iter_mut() {
            if *v < floor {
                *v = floor;
            }
        }
        let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
        *m = rebuilt;
        symmetrize(m);
    }
}

/// Checks that a matrix is symmetric PSD up to `tol` on both counts.
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let asym = (m - m.transpose()).abs().max();
    if asym > tol {
        return false;
    }
    let eig = m.clone().symmetric_eigen();
    eig.eigenvalues.min() >= -tol
}

/// Validates a covariance argument: square, finite, symmetric PSD.
pub fn check_covariance(m: &DMatrix<f64>, context: &'static str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension {
            context: "covariance square",
            expected: m.nrows(),
            actual: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(format!("{context}: non-finite covariance entry")));
    }
    if !is_psd(m, 1e-9 * (1.0 + m.abs().max())) {
        return Err(Error::numerical(format!("{context}: covariance not symmetric PSD")));
    }
    Ok(())
}

/// Draws one sample from N(mean, cov).
///
/// Works for singular covariances (eigendecomposition with clamped
/// negative eigenvalues); a zero covariance returns the mean exactly
/// while still consuming the same number of RNG draws, which keeps the
/// stream layout independent of noise settings.
pub fn sample_mvn<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let n = mean.len();
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    if cov.iter().all(|&v| v == 0.0) {
        return mean.clone();
    }
    let factor = mvn_factor(cov);
    mean + factor * z
}

/// Square-root factor L with L L^T = cov, tolerant of PSD-singular inputs.
pub fn mvn_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = cov.clone().cholesky() {
        return chol.l();
    }
    let eig = cov.clone().symmetric_eigen();
    let mut vals = eig.eigenvalues;
    for v in vals.iter_mut() {
        *v = v.max(0.0).sqrt();
    }
    &eig.eigenvectors * DMatrix::from_diagonal(&vals)
}

/// Solves `a x = b` for symmetric positive definite `a` via Cholesky,
/// falling back to LU; explicit inverses are never formed.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::numerical(format!("singular solve ({}x{}, max entry {:.3e})", a.nrows(), a.ncols(), a.abs().max())))
}

/// Matrix exponential by scaling-and-squaring of a Taylor series.
///
/// Adequate for the small, well-scaled continuous-time matrices seen in
/// plant discretization.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.abs().max() * n as f64;
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a / 2f64.powi(s);
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=20 {
        term = &term * &scaled / k as f64;
        result += &term;
        if term.abs().max() < 1e-18 {
            break;
        }
    }
    for _ in 0..s {
        result = &result * &result;
    }
    result
}

/// Uniform sample from the L2 ball of given radius centered at the origin.
pub fn sample_ball<R: Rng + ?Sized>(dim: usize, radius: f64, rng: &mut R) -> DVector<f64> {
    let dir = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let u: f64 = rng.gen();
    let norm = dir.norm();
    if norm == 0.0 || radius == 0.0 {
        return DVector::zeros(dim);
    }
    let r = radius * u.powf(1.0 / dim as f64);
    dir * (r / norm)
}
