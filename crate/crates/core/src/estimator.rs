//! Maximum-likelihood estimate of `(P₀, x, y)` from averaged RSS readings.
//!
//! Minimizes `Σ σ_i⁻² (P_i − P₀ + 10γ·log₁₀ d_i(x, y))²` by
//! Levenberg-Marquardt from a small grid of starting positions.

use std::f64::consts::LN_10;

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::model::SourceParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleOptions {
    /// Spread of the starting grid: offsets of `0, ±1, ±2` times this value
    /// on each horizontal axis. Zero starts from `init` only.
    pub prior_std: f64,
    pub max_iter: usize,
    /// Stop once an accepted step moves the position by less than this (m).
    pub step_tol: f64,
    pub initial_damping: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions {
            prior_std: 0.0,
            max_iter: 200,
            step_tol: 1e-8,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleResult {
    pub theta_hat: SourceParams,
    /// `√Σ r_i²` with `r_i` the noise-weighted residuals.
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Damping beyond which no descent step exists at working precision.
const DAMPING_CAP: f64 = 1e12;

struct Problem<'a> {
    z: &'a [f64],
    pos: &'a [Vector3<f64>],
    inv_std: Vec<f64>,
    c: f64,
}

impl Problem<'_> {
    fn residuals(&self, theta: &Vector3<f64>) -> Vec<f64> {
        (0..self.z.len())
            .map(|i| {
                let d2 = self.dist2(i, theta);
                (self.z[i] - theta[0] + 0.5 * self.c * d2.ln()) * self.inv_std[i]
            })
            .collect()
    }

    fn dist2(&self, i: usize, theta: &Vector3<f64>) -> f64 {
        let p = &self.pos[i];
        let (dx, dy) = (theta[1] - p.x, theta[2] - p.y);
        dx * dx + dy * dy + p.z * p.z
    }

    fn cost(&self, theta: &Vector3<f64>) -> f64 {
        self.residuals(theta).iter().map(|r| r * r).sum()
    }

    /// `P₀` minimizing the cost at the position of `theta`.
    fn best_power(&self, x: f64, y: f64) -> f64 {
        let theta = Vector3::new(0.0, x, y);
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..self.z.len() {
            let w = self.inv_std[i] * self.inv_std[i];
            num += w * (self.z[i] + 0.5 * self.c * self.dist2(i, &theta).ln());
            den += w;
        }
        num / den
    }

    /// Levenberg-Marquardt from `start`; returns (θ, cost, converged, iterations).
    fn solve(&self, start: Vector3<f64>, opts: &MleOptions) -> (Vector3<f64>, f64, bool, usize) {
        let mut theta = start;
        let mut cost = self.cost(&theta);
        let mut mu = opts.initial_damping;
        let mut iterations = 0;
        let mut converged = false;
        while iterations < opts.max_iter {
            iterations += 1;
            let r = self.residuals(&theta);
            let mut jtj = Matrix3::zeros();
            let mut jtr = Vector3::zeros();
            for i in 0..r.len() {
                let d2 = self.dist2(i, &theta);
                let p = &self.pos[i];
                let row = Vector3::new(
                    -1.0,
                    self.c * (theta[1] - p.x) / d2,
                    self.c * (theta[2] - p.y) / d2,
                ) * self.inv_std[i];
                jtj += row * row.transpose();
                jtr += row * r[i];
            }
            let mut accepted = false;
            while mu <= DAMPING_CAP {
                let mut a = jtj;
                for k in 0..3 {
                    a[(k, k)] += mu * jtj[(k, k)].max(f64::MIN_POSITIVE);
                }
                let Some(step) = a.cholesky().map(|ch| ch.solve(&(-jtr))) else {
                    mu *= 10.0;
                    continue;
                };
                let trial = theta + step;
                let trial_cost = self.cost(&trial);
                if trial_cost.is_finite() && trial_cost < cost {
                    theta = trial;
                    cost = trial_cost;
                    mu *= 0.1;
                    accepted = true;
                    if Vector2::new(step[1], step[2]).norm() < opts.step_tol {
                        converged = true;
                    }
                    break;
                }
                mu *= 10.0;
            }
            if !accepted {
                // no descent direction left at working precision
                converged = true;
            }
            if converged {
                break;
            }
        }
        (theta, cost, converged, iterations)
    }
}

/// Weighted nonlinear least-squares estimate of `(P₀, x, y)`.
///
/// `sigma_eff` are the standard deviations of the averaged readings. Every
/// start recomputes `P₀` in closed form, so only the position of `init`
/// matters.
pub fn mle_estimate(
    measurements: &[f64],
    sensor_positions: &[Vector3<f64>],
    sigma_eff: &[f64],
    gamma: f64,
    init: &SourceParams,
    options: &MleOptions,
) -> Result<MleResult> {
    let n = measurements.len();
    if sensor_positions.len() != n || sigma_eff.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} measurements, {} positions, {} deviations",
            n,
            sensor_positions.len(),
            sigma_eff.len()
        )));
    }
    if n < 3 {
        return Err(Error::invalid(format!("need at least 3 sensors, got {n}")));
    }
    if sigma_eff.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::invalid("standard deviations must be positive"));
    }
    let first = sensor_positions[0];
    if sensor_positions.iter().all(|p| (p - first).norm() == 0.0) {
        return Err(Error::invalid("all sensors coincide"));
    }
    let problem = Problem {
        z: measurements,
        pos: sensor_positions,
        inv_std: sigma_eff.iter().map(|s| 1.0 / s).collect(),
        c: 10.0 * gamma / LN_10,
    };

    let spread = options.prior_std.max(0.0);
    let mut offsets = vec![(0.0, 0.0)];
    if spread > 0.0 {
        for a in -2..=2 {
            for b in -2..=2 {
                if (a, b) != (0, 0) {
                    offsets.push((a as f64 * spread, b as f64 * spread));
                }
            }
        }
    }

    let mut best: Option<(Vector3<f64>, f64, bool, usize)> = None;
    for (ox, oy) in offsets {
        let (x, y) = (init.position.x + ox, init.position.y + oy);
        let start = Vector3::new(problem.best_power(x, y), x, y);
        let out = problem.solve(start, options);
        if !out.1.is_finite() || !out.0.iter().all(|v| v.is_finite()) {
            continue;
        }
        if best.as_ref().is_none_or(|b| out.1 < b.1) {
            best = Some(out);
        }
    }
    Ok(match best {
        Some((theta, cost, converged, iterations)) => MleResult {
            theta_hat: SourceParams::new(theta[0], theta[1], theta[2]),
            residual_norm: cost.sqrt(),
            converged,
            iterations,
        },
        None => MleResult {
            theta_hat: *init,
            residual_norm: f64::INFINITY,
            converged: false,
            iterations: 0,
        },
    })
}
