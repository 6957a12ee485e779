//! Small dense kernels: symmetric square root, thin SVD of `N×2` matrices,
//! and the largest symmetric eigenvalue.
//!
//! Factorizations come from `nalgebra`; this module pins down the
//! conventions the optimizer relies on (ordering, signs, clamping).

use nalgebra::{DMatrix, Matrix2, SymmetricEigen, Vector2};

use crate::error::{Error, Result};

/// Eigenvalues above this are clamped to zero by [`psd_sqrt`].
pub const PSD_CLAMP_TOL: f64 = 1e-10;
/// Eigenvalues below this make [`psd_sqrt`] fail.
pub const PSD_REJECT_TOL: f64 = 1e-8;
/// Relative asymmetry accepted by the symmetric routines.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// `A = U·diag(σ)·Vᵀ` with `U` `N×2`, `σ` descending.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub sigma: Vector2<f64>,
    pub v: Matrix2<f64>,
}

impl ThinSvd {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.reconstruct_with(self.sigma)
    }

    /// `U·diag(values)·Vᵀ` reusing this factorization's singular vectors.
    pub fn reconstruct_with(&self, values: Vector2<f64>) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for j in 0..2 {
            us.column_mut(j).scale_mut(values[j]);
        }
        let a = us * self.v.transpose();
        DMatrix::from_iterator(a.nrows(), 2, a.iter().copied())
    }
}

/// Symmetric eigendecomposition with eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

pub fn sym_eig(m: &DMatrix<f64>) -> Result<SymEig> {
    check_symmetric(m)?;
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(SymEig { values, vectors })
}

/// Largest eigenvalue of a symmetric matrix.
pub fn sym_eig_max(m: &DMatrix<f64>) -> Result<f64> {
    Ok(sym_eig(m)?.values.first().copied().unwrap_or(0.0))
}

/// Symmetric square root `S = Q·diag(√λ)·Qᵀ`, so that `S·Sᵀ = Sᵀ·S = B`.
///
/// Eigenvalues in `[-PSD_REJECT_TOL, 0)` are treated as zero; anything more
/// negative is rejected.
pub fn psd_sqrt(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eig(b)?;
    let n = b.nrows();
    if let Some(&min) = eig.values.last() {
        if min < -PSD_REJECT_TOL {
            return Err(Error::NotPsd { min_eigenvalue: min });
        }
    }
    let mut scaled = eig.vectors.clone();
    for (j, &lambda) in eig.values.iter().enumerate() {
        let root = if lambda <= PSD_CLAMP_TOL { 0.0 } else { lambda.sqrt() };
        scaled.column_mut(j).scale_mut(root);
    }
    let s = &scaled * eig.vectors.transpose();
    Ok(DMatrix::from_fn(n, n, |r, c| 0.5 * (s[(r, c)] + s[(c, r)])))
}

/// Thin SVD of an `N×2` matrix, `N ≥ 2`.
///
/// Singular values are sorted descending. In each column of `U` the entry of
/// largest magnitude (lowest index on ties) is made non-negative, with the
/// matching column of `V` flipped alongside.
pub fn thin_svd(a: &DMatrix<f64>) -> Result<ThinSvd> {
    if a.ncols() != 2 {
        return Err(Error::DimensionMismatch(format!(
            "thin_svd expects 2 columns, got {}",
            a.ncols()
        )));
    }
    if a.nrows() < 2 {
        return Err(Error::invalid(format!(
            "thin_svd needs at least 2 rows, got {}",
            a.nrows()
        )));
    }
    let svd = a.clone().svd(true, true);
    let u_raw = svd.u.expect("requested U");
    let vt_raw = svd.v_t.expect("requested Vᵀ");
    let s = svd.singular_values;

    let order = if s[1] > s[0] { [1, 0] } else { [0, 1] };
    let mut u = DMatrix::zeros(a.nrows(), 2);
    let mut v = Matrix2::zeros();
    let mut sigma = Vector2::zeros();
    for (dst, &src) in order.iter().enumerate() {
        sigma[dst] = s[src].max(0.0);
        u.set_column(dst, &u_raw.column(src));
        for r in 0..2 {
            v[(r, dst)] = vt_raw[(src, r)];
        }
    }

    for j in 0..2 {
        let col = u.column(j);
        let mut pivot = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        if col[pivot] < 0.0 {
            u.column_mut(j).neg_mut();
            v.column_mut(j).neg_mut();
        }
    }
    Ok(ThinSvd { u, sigma, v })
}
