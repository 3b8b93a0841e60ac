//! Dense symmetric helpers on top of nalgebra. Eigendecompositions go
//! through faer: nalgebra's symmetric QR can return a wrong decomposition
//! when eigenvalues are tightly clustered, which is what cone projections
//! produce.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance used when checking that an input is symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

pub fn ensure_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Contract(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub fn ensure_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    ensure_square(m, what)?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract(format!("{what} has non-finite entries")));
    }
    let scale = m.amax().max(1.0);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::Contract(format!(
                    "{what} is not symmetric at ({i}, {j}): {} vs {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
        }
    }
    Ok(())
}

/// Copies the upper triangle onto the lower one so the result is exactly symmetric.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues ascending.
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let n = m.nrows();
    let a = faer::Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)]);
    let evd = a.self_adjoint_eigen(faer::Side::Lower).map_err(|_| {
        Error::Numerical(format!(
            "symmetric eigendecomposition failed to converge ({n}x{n}, max |entry| {:.3e})",
            m.amax()
        ))
    })?;
    let (u, s) = (evd.U(), evd.S().column_vector());
    Ok(SymmetricEigen {
        eigenvectors: DMatrix::from_fn(n, n, |i, j| u[(i, j)]),
        eigenvalues: DVector::from_fn(n, |i, _| s[i]),
    })
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    Ok(sym_eigen(m)?.eigenvalues)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(m)?.min())
}

/// λ_max / λ_min, or +∞ when λ_min ≤ 0.
pub fn condition_number(m: &DMatrix<f64>) -> Result<f64> {
    ensure_symmetric(m, "matrix")?;
    if m.nrows() == 0 {
        return Err(Error::Contract("empty matrix has no condition number".into()));
    }
    let ev = eigenvalues(m)?;
    let (lo, hi) = (ev.min(), ev.max());
    if lo <= 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(hi / lo)
    }
}

/// Q diag(values) Q'.
pub fn reassemble(vectors: &DMatrix<f64>, values: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = vectors.clone();
    for (mut col, &v) in scaled.column_iter_mut().zip(values.iter()) {
        col *= v;
    }
    let mut out = scaled * vectors.transpose();
    symmetrize(&mut out);
    out
}

/// Principal submatrix on `idx`.
pub fn submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])])
}

/// Lower-triangular factor of a positive semidefinite matrix. Pivots below
/// `tol` (relative to the largest diagonal entry) zero their whole column, so
/// rank-deficient inputs factor exactly instead of failing.
pub fn semidefinite_cholesky(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    ensure_symmetric(m, "covariance")?;
    let n = m.nrows();
    let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut pivot = m[(j, j)];
        for p in 0..j {
            pivot -= l[(j, p)] * l[(j, p)];
        }
        if pivot < -tol * scale * 1e3 {
            return Err(Error::Incoherent {
                min_eigenvalue: pivot,
            });
        }
        if pivot <= tol * scale {
            continue;
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `m x = rhs` for each column of `rhs` through a Cholesky factor of
/// the principal submatrix; `idx` names the forecasters for error reporting.
pub fn spd_solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>, idx: &[usize]) -> Result<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(m.clone()).ok_or_else(|| Error::Singular {
        subset: idx.to_vec(),
    })?;
    let diag_min = chol.l_dirty().diagonal().min();
    let diag_max = chol.l_dirty().diagonal().max();
    // Pivots of L are square roots of those of m, so square the ratio.
    if !(diag_min > 0.0) || (diag_min / diag_max).powi(2) < 1e-13 {
        return Err(Error::Singular {
            subset: idx.to_vec(),
        });
    }
    Ok(chol.solve(rhs))
}

/// Moore-Penrose inverse of a symmetric matrix, discarding eigenvalues at or
/// below `rel_cutoff · λ_max`.
pub fn pseudo_inverse(m: &DMatrix<f64>, rel_cutoff: f64) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(m)?;
    let cutoff = rel_cutoff * eig.eigenvalues.amax();
    let inv = eig
        .eigenvalues
        .map(|v| if v.abs() > cutoff { 1.0 / v } else { 0.0 });
    Ok(reassemble(&eig.eigenvectors, &inv))
}
