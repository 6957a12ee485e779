//! Fisher information for `(P₀, x, y)`, the reduced matrix `T`, and the
//! constraint geometry of the direction vectors.
//!
//! With `c = 10γ/ln 10`, `S = Σ σ_i⁻²` (effective variances) and
//! `T = GᵀD·B·DG`, the determinant factorizes as
//!
//! ```text
//! |F| = c⁴ · S³ · |T|
//! ```
//!
//! for both variants, so maximizing `|T|` over `G` maximizes `|F|`.

use std::f64::consts::{LN_10, PI, TAU};

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::model::{self, Placement, Scenario, SourceParams, Variant};
use crate::numerics;

/// Correlation-normalized eigenvalue floor below which `F` counts as singular.
pub const SINGULAR_TOL: f64 = 1e-12;
/// Accepted deviation of `uᵀu` from the identity in [`apply_orthogonal`].
pub const ORTHOGONAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseWeights {
    /// `w_i = σ_i⁻² / Σ_j σ_j⁻²`; sums to one.
    pub w: DVector<f64>,
    /// `σ̄⁻² = (1/N) Σ σ_i⁻²`.
    pub mean_inv_var: f64,
}

impl NoiseWeights {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// `N·σ̄⁻² = Σ σ_i⁻²`.
    pub fn total_inv_var(&self) -> f64 {
        self.mean_inv_var * self.w.len() as f64
    }
}

/// Weights from the scenario's effective variances `σ_i²/m`.
pub fn noise_weights(scenario: &Scenario) -> NoiseWeights {
    noise_weights_from_variance(&scenario.effective_variance())
        .expect("validated scenario has positive variances")
}

pub fn noise_weights_from_variance(variance: &[f64]) -> Result<NoiseWeights> {
    if variance.is_empty() {
        return Err(Error::invalid("no variances given"));
    }
    if let Some(v) = variance.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::invalid(format!("variance must be positive, got {v}")));
    }
    let inv: Vec<f64> = variance.iter().map(|v| 1.0 / v).collect();
    let total: f64 = inv.iter().sum();
    Ok(NoiseWeights {
        w: DVector::from_iterator(inv.len(), inv.iter().map(|x| x / total)),
        mean_inv_var: total / inv.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    pub b: DMatrix<f64>,
    pub variant: Variant,
}

/// `diag(w) − w·wᵀ` for RSSD, `diag(w)` for RSS.
pub fn coupling_matrix(weights: &NoiseWeights, variant: Variant) -> CouplingMatrix {
    let w = &weights.w;
    let mut b = DMatrix::from_diagonal(w);
    if variant == Variant::Rssd {
        b -= w * w.transpose();
    }
    CouplingMatrix { b, variant }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityDiag {
    /// `r_i / d_i²`.
    pub d: DVector<f64>,
}

pub fn sensitivity(scenario: &Scenario) -> SensitivityDiag {
    let d = scenario
        .horiz_dist
        .iter()
        .zip(scenario.slant_distances())
        .map(|(r, s)| r / (s * s));
    SensitivityDiag {
        d: DVector::from_iterator(scenario.n_sensors(), d),
    }
}

/// `T = GᵀD·B·DG`, symmetrized.
pub fn t_matrix(g: &DMatrix<f64>, d: &SensitivityDiag, b: &CouplingMatrix) -> Result<Matrix2<f64>> {
    let n = g.nrows();
    if g.ncols() != 2 || d.d.len() != n || b.b.nrows() != n || b.b.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "G is {}x{}, D has {}, B is {}x{}",
            n,
            g.ncols(),
            d.d.len(),
            b.b.nrows(),
            b.b.ncols()
        )));
    }
    let dg = DMatrix::from_fn(n, 2, |i, j| d.d[i] * g[(i, j)]);
    let t = dg.transpose() * &b.b * &dg;
    Ok(Matrix2::new(
        t[(0, 0)],
        0.5 * (t[(0, 1)] + t[(1, 0)]),
        0.5 * (t[(0, 1)] + t[(1, 0)]),
        t[(1, 1)],
    ))
}

/// `c⁴ · (N·σ̄⁻²)³ · |T|` with `c = 10γ/ln 10`.
pub fn det_from_t(t: &Matrix2<f64>, gamma: f64, weights: &NoiseWeights) -> f64 {
    let c = 10.0 * gamma / LN_10;
    c.powi(4) * weights.total_inv_var().powi(3) * t.determinant()
}

/// FIM for `(P₀, x, y)` from sensors at `positions` observing a source at
/// `source` with effective variances `eff_var`.
///
/// RSSD treats `P₀` as unknown, coupling it to the position block; RSS
/// knows it, leaving `F` block-diagonal.
pub fn fim_from_positions(
    positions: &[Vector3<f64>],
    eff_var: &[f64],
    gamma: f64,
    source: Vector2<f64>,
    variant: Variant,
) -> Result<Matrix3<f64>> {
    if positions.len() != eff_var.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} positions vs {} variances",
            positions.len(),
            eff_var.len()
        )));
    }
    let c = 10.0 * gamma / LN_10;
    let mut f = Matrix3::zeros();
    for (p, &var) in positions.iter().zip(eff_var) {
        let (dx, dy) = (p.x - source.x, p.y - source.y);
        let d2 = dx * dx + dy * dy + p.z * p.z;
        if !(d2 > 0.0) {
            return Err(Error::invalid("sensor coincides with the source"));
        }
        let row = Vector3::new(1.0, c * dx / d2, c * dy / d2);
        f += row * row.transpose() / var;
    }
    if variant == Variant::Rss {
        for k in 1..3 {
            f[(0, k)] = 0.0;
            f[(k, 0)] = 0.0;
        }
    }
    Ok(f)
}

/// `√(F⁻¹₂₂ + F⁻¹₃₃)`, or `+∞` when `F` is singular.
pub fn lb_rmse(f: &Matrix3<f64>) -> Result<f64> {
    Ok(match crlb(f)? {
        Some(c) => (c[(1, 1)] + c[(2, 2)]).sqrt(),
        None => f64::INFINITY,
    })
}

/// `F⁻¹`, or `None` when the correlation-normalized `F` has an eigenvalue
/// below [`SINGULAR_TOL`].
pub fn crlb(f: &Matrix3<f64>) -> Result<Option<Matrix3<f64>>> {
    let scale = f.amax().max(f64::MIN_POSITIVE);
    let asym = (f - f.transpose()).amax();
    if asym > numerics::SYMMETRY_TOL * scale {
        return Err(Error::invalid(format!("FIM is not symmetric (asymmetry {asym:e})")));
    }
    let diag = f.diagonal();
    if diag.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Ok(None);
    }
    let inv_sqrt = diag.map(|x| 1.0 / x.sqrt());
    let corr = Matrix3::from_fn(|i, j| f[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
    let corr = (corr + corr.transpose()) * 0.5;
    if corr.symmetric_eigenvalues().min() < SINGULAR_TOL {
        return Ok(None);
    }
    let inv = corr.try_inverse().map(|ci| Matrix3::from_fn(|i, j| ci[(i, j)] * inv_sqrt[i] * inv_sqrt[j]));
    Ok(inv)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FimSummary {
    pub f: Matrix3<f64>,
    pub crlb: Option<Matrix3<f64>>,
    pub t: Matrix2<f64>,
    pub det_f: f64,
    pub lb_rmse: f64,
    /// `F` is singular; `lb_rmse` is `+∞` and `crlb` is `None`.
    pub degenerate: bool,
}

/// Information summary for sensors placed by `placement` around the
/// scenario source, observing a source with parameters `source`.
///
/// `t` depends only on the placement geometry; it describes `F` exactly when
/// `source` sits at the scenario source.
pub fn fim_full(scenario: &Scenario, placement: &Placement, source: &SourceParams) -> Result<FimSummary> {
    let positions = model::sensor_positions(scenario, placement)?;
    let f = fim_from_positions(
        &positions,
        &scenario.effective_variance(),
        scenario.gamma,
        source.position,
        scenario.variant,
    )?;
    let weights = noise_weights(scenario);
    let b = coupling_matrix(&weights, scenario.variant);
    let t = t_matrix(placement.directions(), &sensitivity(scenario), &b)?;
    let crlb = crlb(&f)?;
    let lb_rmse = match &crlb {
        Some(c) => (c[(1, 1)] + c[(2, 2)]).sqrt(),
        None => f64::INFINITY,
    };
    Ok(FimSummary {
        f,
        degenerate: crlb.is_none(),
        crlb,
        t,
        det_f: f.determinant(),
        lb_rmse,
    })
}

/// Rotates or reflects every direction: `g_i ← u·g_i`.
pub fn apply_orthogonal(placement: &Placement, u: &Matrix2<f64>) -> Result<Placement> {
    let dev = (u.transpose() * u - Matrix2::identity()).amax();
    if dev > ORTHOGONAL_TOL {
        return Err(Error::invalid(format!("matrix is not orthogonal (|uᵀu − I| = {dev:e})")));
    }
    let g = placement.directions() * u.transpose();
    Placement::from_directions(&DMatrix::from_iterator(g.nrows(), 2, g.iter().copied()))
}

pub fn rotation(phi: f64) -> Matrix2<f64> {
    let (s, c) = phi.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Elementwise lower bound `g₀` equivalent to `0 ≤ β ≤ β_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintBound {
    pub g0: Vector2<f64>,
    pub beta_max: f64,
}

impl ConstraintBound {
    /// Arc endpoints used when the unconstrained row minimizer is infeasible,
    /// smaller angle first: `(g_b, g_a)` for `β_max ≤ π`, `(g_c, g_d)` above.
    pub fn endpoints(&self) -> [Vector2<f64>; 2] {
        let b = self.beta_max;
        if b <= PI {
            [Vector2::new(1.0, 0.0), model::angle_to_direction(b)]
        } else {
            [
                model::angle_to_direction((PI + b) / 2.0),
                model::angle_to_direction((5.0 * PI - b) / 2.0),
            ]
        }
    }

    /// Angle interval `[lo, hi]` (possibly with `lo < 0`) covered by the
    /// feasible directions.
    pub fn arc(&self) -> (f64, f64) {
        arc_for(self.beta_max)
    }

    pub fn contains(&self, g: &Vector2<f64>, tol: f64) -> bool {
        g.x >= self.g0.x - tol && g.y >= self.g0.y - tol
    }
}

pub(crate) fn arc_for(beta_max: f64) -> (f64, f64) {
    if beta_max <= PI {
        (0.0, beta_max)
    } else {
        (PI / 2.0 - beta_max / 2.0, PI / 2.0 + beta_max / 2.0)
    }
}

pub fn g0_bound(beta_max: f64) -> Result<ConstraintBound> {
    if !(beta_max > 0.0 && beta_max <= TAU + 1e-12) {
        return Err(Error::invalid(format!("beta_max {beta_max} is outside (0, 2π]")));
    }
    let g0 = if beta_max <= PI {
        Vector2::new(beta_max.cos(), 0.0)
    } else {
        Vector2::new(-1.0, (beta_max / 2.0).cos())
    };
    Ok(ConstraintBound { g0, beta_max })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    X,
    Y,
    Norm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub row: usize,
    pub kind: ViolationKind,
    /// Offending value: the coordinate, or the row norm for `Norm`.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub violations: Vec<Violation>,
}

/// Checks `g_i ≥ g₀ − tol` elementwise and `|‖g_i‖ − 1| ≤ tol` for every row.
pub fn is_feasible(g: &DMatrix<f64>, bound: &ConstraintBound, tol: f64) -> FeasibilityReport {
    let mut violations = Vec::new();
    for i in 0..g.nrows() {
        let row = Vector2::new(g[(i, 0)], g[(i, 1)]);
        if (row.norm() - 1.0).abs() > tol {
            violations.push(Violation {
                row: i,
                kind: ViolationKind::Norm,
                value: row.norm(),
            });
        }
        if row.x < bound.g0.x - tol {
            violations.push(Violation {
                row: i,
                kind: ViolationKind::X,
                value: row.x,
            });
        }
        if row.y < bound.g0.y - tol {
            violations.push(Violation {
                row: i,
                kind: ViolationKind::Y,
                value: row.y,
            });
        }
    }
    FeasibilityReport {
        feasible: violations.is_empty(),
        violations,
    }
}

pub fn placement_feasible(placement: &Placement, bound: &ConstraintBound, tol: f64) -> FeasibilityReport {
    is_feasible(placement.directions(), bound, tol)
}
