//! ADMM over the direction matrix `G`.
//!
//! With `K = B^½D / ‖B^½D‖₂` the problem is
//!
//! ```text
//! min  −ln|XᵀX|   s.t.  X = KG,  ‖g_i‖ = 1,  g_i ≥ g₀
//! ```
//!
//! The X-step is a closed-form singular-value map of `J = V + ρKG`; the
//! G-step runs majorize-minimize sweeps whose per-row subproblem is a linear
//! function on an arc. Normalizing `K` rescales `|T|` by a constant, so the
//! argmax is unchanged while `ρ` gets a scale-free meaning.
//!
//! For `β_max > π` the solver works on the arc symmetric about `+y`
//! (`[π/2 − β_max/2, π/2 + β_max/2]`) and rotates the result back onto
//! `[0, β_max]` on output.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, Vector2};

use crate::error::{Error, Result};
use crate::fim::{self, ConstraintBound};
use crate::model::{wrap_angle, Placement, Scenario, SourceParams};
use crate::numerics;

/// Slack on `−q/‖q‖ ≥ g₀` before falling back to an arc endpoint.
pub const INTERIOR_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmOptions {
    /// Penalty on `‖KG − X‖²`, in units where `‖K‖₂ = 1`.
    pub rho: f64,
    /// Outer stop: `max(‖KG − X‖_F, ‖ΔG‖_F) < admm_tol`.
    pub admm_tol: f64,
    /// Inner stop: `‖G_{t+1} − G_t‖_F < mm_tol`.
    pub mm_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        AdmmOptions {
            rho: 16.0,
            admm_tol: 1e-4,
            mm_tol: 1e-3,
            max_outer: 1000,
            max_inner: 50,
        }
    }
}

impl AdmmOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.rho) {
            return Err(Error::config("rho", "must be positive"));
        }
        if !positive(self.admm_tol) {
            return Err(Error::config("admm_tol", "must be positive"));
        }
        if !positive(self.mm_tol) {
            return Err(Error::config("mm_tol", "must be positive"));
        }
        if self.max_outer == 0 {
            return Err(Error::config("max_outer", "must be positive"));
        }
        if self.max_inner == 0 {
            return Err(Error::config("max_inner", "must be positive"));
        }
        Ok(())
    }
}

/// `β_i = i·β_max/N` for `i = 1..N`.
pub fn uniform_init(n: usize, beta_max: f64) -> Result<Placement> {
    if n < 2 {
        return Err(Error::invalid(format!("uniform placement needs n >= 2, got {n}")));
    }
    let angles: Vec<f64> = (1..=n).map(|i| beta_max * i as f64 / n as f64).collect();
    Ok(Placement::from_angles(&angles))
}

/// Positive root of `ρλ² − σλ − 2 = 0`.
pub fn singular_value_map(sigma: f64, rho: f64) -> f64 {
    (sigma + (sigma * sigma + 8.0 * rho).sqrt()) / (2.0 * rho)
}

/// Minimizer of `−ln|XᵀX| + ρ/2·‖X‖² − ⟨J, X⟩`.
pub fn x_update(j: &DMatrix<f64>, rho: f64) -> Result<DMatrix<f64>> {
    if !(rho > 0.0) {
        return Err(Error::invalid(format!("rho must be positive, got {rho}")));
    }
    let svd = numerics::thin_svd(j)?;
    let lambda = svd.sigma.map(|s| singular_value_map(s, rho));
    Ok(svd.reconstruct_with(lambda))
}

/// The X-step objective `−ln|XᵀX| + ρ/2·‖X‖² − ⟨J, X⟩`.
pub fn x_objective(x: &DMatrix<f64>, j: &DMatrix<f64>, rho: f64) -> f64 {
    let det = (x.transpose() * x).determinant();
    if !(det > 0.0) {
        return f64::INFINITY;
    }
    -det.ln() + 0.5 * rho * x.norm_squared() - j.dot(x)
}

/// Minimizer of `gᵀq` over the feasible arc. `q = 0` keeps `prev`; endpoint
/// ties go to the smaller angle.
pub fn mm_row_update(q: Vector2<f64>, bound: &ConstraintBound, prev: Vector2<f64>) -> Vector2<f64> {
    let norm = q.norm();
    if norm == 0.0 {
        return prev;
    }
    let candidate = -q / norm;
    if bound.contains(&candidate, INTERIOR_SLACK) {
        return candidate;
    }
    let [first, second] = bound.endpoints();
    if second.dot(&q) < first.dot(&q) {
        second
    } else {
        first
    }
}

/// G-dependent part of the augmented Lagrangian,
/// `⟨V, KG − X⟩ + ρ/2·‖KG − X‖²`.
pub fn g_objective(g: &DMatrix<f64>, x: &DMatrix<f64>, v: &DMatrix<f64>, k: &DMatrix<f64>, rho: f64) -> f64 {
    let r = k * g - x;
    v.dot(&r) + 0.5 * rho * r.norm_squared()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmOutcome {
    pub g: DMatrix<f64>,
    pub iterations: usize,
    /// [`g_objective`] at the start and after each sweep.
    pub objectives: Vec<f64>,
}

/// MM sweeps for the G-step: every row of `G` moves to the arc minimizer of
/// row `i` of `Q = KᵀC + ρM̃G_t`, `C = V − ρX`.
#[allow(clippy::too_many_arguments)]
pub fn g_update_mm(
    x_next: &DMatrix<f64>,
    v: &DMatrix<f64>,
    g_start: &DMatrix<f64>,
    k: &DMatrix<f64>,
    m_tilde: &DMatrix<f64>,
    rho: f64,
    bound: &ConstraintBound,
    mm_tol: f64,
    max_inner: usize,
) -> MmOutcome {
    let kc = k.transpose() * (v - x_next * rho);
    let mut g = g_start.clone();
    let mut objectives = vec![g_objective(&g, x_next, v, k, rho)];
    let mut iterations = 0;
    while iterations < max_inner {
        iterations += 1;
        let q = &kc + m_tilde * &g * rho;
        let mut next = g.clone();
        for i in 0..g.nrows() {
            let row = mm_row_update(
                Vector2::new(q[(i, 0)], q[(i, 1)]),
                bound,
                Vector2::new(g[(i, 0)], g[(i, 1)]),
            );
            next[(i, 0)] = row.x;
            next[(i, 1)] = row.y;
        }
        let change = (&next - &g).norm();
        g = next;
        objectives.push(g_objective(&g, x_next, v, k, rho));
        if change < mm_tol {
            break;
        }
    }
    MmOutcome {
        g,
        iterations,
        objectives,
    }
}

/// Per-scenario constants, computed once per run.
#[derive(Debug, Clone)]
pub struct ProblemMatrices {
    /// `B^½D / scale`.
    pub k: DMatrix<f64>,
    /// Spectral norm of `B^½D`.
    pub scale: f64,
    /// `KᵀK − λ_max(KᵀK)·I`.
    pub m_tilde: DMatrix<f64>,
    pub bound: ConstraintBound,
    /// Solver angle minus user angle.
    pub offset: f64,
}

impl ProblemMatrices {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        let weights = fim::noise_weights(scenario);
        let b = fim::coupling_matrix(&weights, scenario.variant);
        let half = numerics::psd_sqrt(&b.b)?;
        let d = fim::sensitivity(scenario);
        let mut k = half;
        for (j, &dj) in d.d.iter().enumerate() {
            k.column_mut(j).scale_mut(dj);
        }
        let m = k.transpose() * &k;
        let top = numerics::sym_eig_max(&m)?;
        if !(top > 0.0) {
            return Err(Error::invalid("information matrix is identically zero"));
        }
        let scale = top.sqrt();
        k /= scale;
        let m = k.transpose() * &k;
        let m = (&m + m.transpose()) * 0.5;
        let n = m.nrows();
        let lambda = numerics::sym_eig_max(&m)?;
        let m_tilde = m - DMatrix::identity(n, n) * lambda;
        let bound = fim::g0_bound(scenario.beta_max)?;
        let offset = fim::arc_for(scenario.beta_max).0;
        Ok(ProblemMatrices {
            k,
            scale,
            m_tilde,
            bound,
            offset,
        })
    }

    /// `|T|` of a solver-space direction matrix.
    pub fn det_t(&self, g: &DMatrix<f64>) -> f64 {
        let kg = &self.k * g;
        (kg.transpose() * kg).determinant() * self.scale.powi(4)
    }

    pub fn to_solver(&self, placement: &Placement) -> DMatrix<f64> {
        let shifted: Vec<f64> = placement.angles().iter().map(|a| a + self.offset).collect();
        Placement::from_angles(&shifted).directions().clone()
    }

    /// Rotates solver directions back so that angles lie in `[0, β_max]`.
    pub fn to_user(&self, g: &DMatrix<f64>) -> Placement {
        let beta_max = self.bound.beta_max;
        let angles: Vec<f64> = (0..g.nrows())
            .map(|i| {
                let a = wrap_angle(g[(i, 1)].atan2(g[(i, 0)]) - self.offset);
                if a <= beta_max {
                    a
                } else if a > beta_max + 0.5 * (TAU - beta_max) {
                    0.0
                } else {
                    beta_max
                }
            })
            .collect();
        Placement::from_angles(&angles)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// `ln|(XᵀX)⁻¹|` in normalized units.
    pub objective: f64,
    pub det_t: f64,
    pub lb_rmse: f64,
    pub inner_iters: usize,
    pub primal_residual: f64,
    pub g_change: f64,
    /// The iterate in user angles.
    pub placement: Placement,
}

#[derive(Debug, Clone)]
pub struct AdmmState {
    pub x: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub k: usize,
    pub primal_residual: f64,
    pub g_change: f64,
}

/// Step-by-step driver; [`optimize`] runs it to completion.
#[derive(Debug, Clone)]
pub struct AdmmSolver {
    problem: ProblemMatrices,
    options: AdmmOptions,
    evaluation: Scenario,
    guess: SourceParams,
    state: AdmmState,
    trace: Vec<IterationRecord>,
    best: (f64, usize, Placement),
}

impl AdmmSolver {
    pub fn new(scenario: &Scenario, source_guess: &SourceParams, options: AdmmOptions) -> Result<Self> {
        options.validate()?;
        scenario.validate()?;
        let problem = ProblemMatrices::new(scenario)?;
        let evaluation = scenario.with_source(source_guess.position);
        let uniform = uniform_init(scenario.n_sensors(), scenario.beta_max)?;
        let g = problem.to_solver(&uniform);
        let x = &problem.k * &g;
        let summary = fim::fim_full(&evaluation, &uniform, source_guess)?;
        let det_t = problem.det_t(&g);
        let record = IterationRecord {
            iter: 0,
            objective: log_det_inv(&x),
            det_t,
            lb_rmse: summary.lb_rmse,
            inner_iters: 0,
            primal_residual: 0.0,
            g_change: 0.0,
            placement: uniform.clone(),
        };
        let n = g.nrows();
        Ok(AdmmSolver {
            state: AdmmState {
                x,
                g,
                v: DMatrix::zeros(n, 2),
                k: 0,
                primal_residual: 0.0,
                g_change: 0.0,
            },
            problem,
            options,
            evaluation,
            guess: *source_guess,
            trace: vec![record],
            best: (det_t, 0, uniform),
        })
    }

    pub fn state(&self) -> &AdmmState {
        &self.state
    }

    pub fn problem(&self) -> &ProblemMatrices {
        &self.problem
    }

    pub fn trace(&self) -> &[IterationRecord] {
        &self.trace
    }

    pub fn converged(&self) -> bool {
        self.state.k > 0 && self.state.primal_residual.max(self.state.g_change) < self.options.admm_tol
    }

    /// One outer iteration: X-step, MM G-step, dual ascent.
    pub fn step(&mut self) -> Result<&IterationRecord> {
        let rho = self.options.rho;
        let p = &self.problem;
        let s = &mut self.state;
        let j = &s.v + &p.k * &s.g * rho;
        let x = x_update(&j, rho)?;
        let mm = g_update_mm(
            &x,
            &s.v,
            &s.g,
            &p.k,
            &p.m_tilde,
            rho,
            &p.bound,
            self.options.mm_tol,
            self.options.max_inner,
        );
        let residual = &p.k * &mm.g - &x;
        s.g_change = (&mm.g - &s.g).norm();
        s.primal_residual = residual.norm();
        s.v += residual * rho;
        s.g = mm.g;
        s.x = x;
        s.k += 1;

        let placement = p.to_user(&s.g);
        let det_t = p.det_t(&s.g);
        let lb_rmse = fim::fim_full(&self.evaluation, &placement, &self.guess)?.lb_rmse;
        if det_t > self.best.0 {
            self.best = (det_t, s.k, placement.clone());
        }
        self.trace.push(IterationRecord {
            iter: s.k,
            objective: log_det_inv(&s.x),
            det_t,
            lb_rmse,
            inner_iters: mm.iterations,
            primal_residual: s.primal_residual,
            g_change: s.g_change,
            placement,
        });
        Ok(self.trace.last().expect("just pushed"))
    }

    pub fn finish(self) -> AdmmOutcome {
        let converged = self.converged();
        let (best_det_t, best_iteration, placement) = self.best;
        AdmmOutcome {
            placement,
            best_iteration,
            best_det_t,
            converged,
            iterations: self.state.k,
            primal_residual: self.state.primal_residual,
            trace: self.trace,
        }
    }
}

fn log_det_inv(x: &DMatrix<f64>) -> f64 {
    let det = (x.transpose() * x).determinant();
    if det > 0.0 {
        -det.ln()
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone)]
pub struct AdmmOutcome {
    /// Iterate with the largest `|T|`, uniform start included; angles in
    /// `[0, β_max]`.
    pub placement: Placement,
    pub best_iteration: usize,
    pub best_det_t: f64,
    pub converged: bool,
    pub iterations: usize,
    pub primal_residual: f64,
    /// Record 0 is the uniform start.
    pub trace: Vec<IterationRecord>,
}

impl AdmmOutcome {
    pub fn uniform_lb_rmse(&self) -> f64 {
        self.trace[0].lb_rmse
    }

    pub fn mean_inner_iters(&self) -> f64 {
        let steps = &self.trace[1..];
        if steps.is_empty() {
            return 0.0;
        }
        steps.iter().map(|r| r.inner_iters as f64).sum::<f64>() / steps.len() as f64
    }

    /// LB-RMSE of the `k`-th iterate, or of the last one if the run stopped
    /// earlier.
    pub fn lb_rmse_at(&self, k: usize) -> f64 {
        self.trace[k.min(self.trace.len() - 1)].lb_rmse
    }
}

/// Runs the optimizer from the uniform start until convergence or
/// `max_outer` iterations. Sensors are placed around `source_guess`, which
/// is also where each iterate's LB-RMSE is evaluated.
pub fn optimize(scenario: &Scenario, source_guess: &SourceParams, options: AdmmOptions) -> Result<AdmmOutcome> {
    let mut solver = AdmmSolver::new(scenario, source_guess, options)?;
    while solver.state.k < options.max_outer {
        solver.step()?;
        if solver.converged() {
            break;
        }
    }
    Ok(solver.finish())
}

/// Maximizer of `r/(r² + h²)` over `[r_min, r_max] × [h_min, h_max]`.
pub fn optimal_distance(r_range: (f64, f64), h_range: (f64, f64)) -> Result<(f64, f64)> {
    let (r_min, r_max) = r_range;
    let (h_min, h_max) = h_range;
    if !(r_min > 0.0 && r_min <= r_max && r_max.is_finite()) {
        return Err(Error::invalid(format!("empty or non-positive r range [{r_min}, {r_max}]")));
    }
    if !(h_min >= 0.0 && h_min <= h_max && h_max.is_finite()) {
        return Err(Error::invalid(format!("empty or negative h range [{h_min}, {h_max}]")));
    }
    let r = if h_min > 0.0 { h_min.clamp(r_min, r_max) } else { r_min };
    Ok((r, h_min))
}

/// Arc angles `[lo, hi]` of the solver's feasible set for `beta_max`.
pub fn solver_arc(beta_max: f64) -> (f64, f64) {
    fim::arc_for(beta_max)
}
