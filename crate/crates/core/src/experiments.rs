//! Experiment drivers and their CSV tables.
//!
//! Runs fan out over a rayon pool; results are collected in input order, and
//! every random draw comes from a `(seed, trial)` substream, so the output is
//! independent of scheduling.

use std::io::Write;

use nalgebra::{Vector2, Vector3};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::admm::{self, AdmmOptions, AdmmOutcome};
use crate::error::Result;
use crate::estimator::{self, MleOptions};
use crate::fim;
use crate::model::{self, Placement, Scenario, SourceParams};
use crate::numerics;
use crate::rng;

/// First 16 hex digits of the SHA-256 of the scenario's canonical JSON.
pub fn scenario_hash(scenario: &Scenario) -> String {
    let digest = Sha256::digest(scenario.to_json_string().as_bytes());
    hex::encode(&digest[..8])
}

/// Angles in degrees, six decimals, `;`-separated.
pub fn placement_column(placement: &Placement) -> String {
    placement
        .angles_deg()
        .iter()
        .map(|a| format!("{a:.6}"))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn parse_placement_column(text: &str) -> Result<Placement> {
    let degrees = text
        .split(';')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| crate::Error::invalid(format!("bad angle {t:?}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Placement::from_degrees(&degrees))
}

/// Stamps shared by every row of a run.
#[derive(Debug, Clone)]
pub struct RunTag {
    pub scenario_hash: String,
    pub seed: u64,
}

impl RunTag {
    pub fn new(scenario: &Scenario, seed: u64) -> Self {
        RunTag {
            scenario_hash: scenario_hash(scenario),
            seed,
        }
    }
}

pub fn improvement_pct(uniform: f64, optimized: f64) -> f64 {
    100.0 * (1.0 - optimized / uniform)
}

fn lb_rmse_of(scenario: &Scenario, placement: &Placement) -> Result<f64> {
    Ok(fim::fim_full(scenario, placement, &scenario.source_params())?.lb_rmse)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRecord {
    pub beta_max_deg: f64,
    pub iter: usize,
    pub lb_rmse_m: f64,
    pub objective: f64,
    pub inner_iters: usize,
    pub det_t: f64,
    pub primal_residual: f64,
    pub mean_inner_iters: f64,
    pub converged: bool,
    pub placement_deg: String,
    pub scenario_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceRun {
    pub beta_max: f64,
    pub outcome: AdmmOutcome,
}

/// One optimizer run per `β_max`, with its full trace.
pub fn run_convergence(scenario: &Scenario, beta_max_list: &[f64], options: AdmmOptions) -> Result<Vec<ConvergenceRun>> {
    beta_max_list
        .par_iter()
        .map(|&beta_max| {
            let s = scenario.with_beta_max(beta_max)?;
            let outcome = admm::optimize(&s, &s.source_params(), options)?;
            Ok(ConvergenceRun { beta_max, outcome })
        })
        .collect()
}

pub fn convergence_records(runs: &[ConvergenceRun], tag: &RunTag) -> Vec<ConvergenceRecord> {
    let mut rows = Vec::new();
    for run in runs {
        let mean_inner = run.outcome.mean_inner_iters();
        for rec in &run.outcome.trace {
            rows.push(ConvergenceRecord {
                beta_max_deg: model::canonical_degrees(run.beta_max),
                iter: rec.iter,
                lb_rmse_m: rec.lb_rmse,
                objective: rec.objective,
                inner_iters: rec.inner_iters,
                det_t: rec.det_t,
                primal_residual: rec.primal_residual,
                mean_inner_iters: mean_inner,
                converged: run.outcome.converged,
                placement_deg: placement_column(&rec.placement),
                scenario_hash: tag.scenario_hash.clone(),
                seed: tag.seed,
            });
        }
    }
    rows
}

/// Uniform-versus-optimized comparison at one `(N, β_max)` point.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRecord {
    pub n: usize,
    pub beta_max_deg: f64,
    pub lb_rmse_uniform_m: f64,
    pub lb_rmse_opt_m: f64,
    pub improvement_pct: f64,
    pub iterations: usize,
    pub converged: bool,
    pub placement_deg: String,
    pub scenario_hash: String,
    pub seed: u64,
}

fn sweep_point(scenario: &Scenario, tag: &RunTag, options: AdmmOptions) -> Result<SweepRecord> {
    let outcome = admm::optimize(scenario, &scenario.source_params(), options)?;
    let uniform = outcome.uniform_lb_rmse();
    let opt = lb_rmse_of(scenario, &outcome.placement)?;
    Ok(SweepRecord {
        n: scenario.n_sensors(),
        beta_max_deg: model::canonical_degrees(scenario.beta_max),
        lb_rmse_uniform_m: uniform,
        lb_rmse_opt_m: opt,
        improvement_pct: improvement_pct(uniform, opt),
        iterations: outcome.iterations,
        converged: outcome.converged,
        placement_deg: placement_column(&outcome.placement),
        scenario_hash: tag.scenario_hash.clone(),
        seed: tag.seed,
    })
}

/// Rows ordered by `n`, then `β_max`, as listed. The template's sensors are
/// stretched to each `n` with [`Scenario::resized`].
pub fn run_sweep_n(
    template: &Scenario,
    n_list: &[usize],
    beta_max_list: &[f64],
    options: AdmmOptions,
    tag: &RunTag,
) -> Result<Vec<SweepRecord>> {
    if let Some(n) = n_list.iter().find(|&&n| n < 3) {
        return Err(crate::Error::config("n", format!("every sensor count must be >= 3, got {n}")));
    }
    let points: Vec<(usize, f64)> = n_list
        .iter()
        .flat_map(|&n| beta_max_list.iter().map(move |&b| (n, b)))
        .collect();
    points
        .par_iter()
        .map(|&(n, beta_max)| {
            let s = template.resized(n)?.with_beta_max(beta_max)?;
            sweep_point(&s, tag, options)
        })
        .collect()
}

pub fn run_sweep_angle(scenario: &Scenario, beta_grid: &[f64], options: AdmmOptions, tag: &RunTag) -> Result<Vec<SweepRecord>> {
    beta_grid
        .par_iter()
        .map(|&beta_max| sweep_point(&scenario.with_beta_max(beta_max)?, tag, options))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct PracticalRecord {
    /// Trial index, or `mean` for the aggregate row.
    pub trial: String,
    pub prior_err_m: f64,
    pub lb_rmse_theoretical_m: f64,
    pub lb_rmse_practical_m: f64,
    /// Estimation error of the trial; root-mean-square on the aggregate row.
    pub empirical_rmse_m: Option<f64>,
    pub placement_deg: String,
    pub scenario_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct PracticalSummary {
    pub records: Vec<PracticalRecord>,
    pub mean_theoretical: f64,
    pub mean_practical: f64,
    pub empirical_rmse: Option<f64>,
    pub all_converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct PracticalOptions {
    pub prior_std: f64,
    pub trials: usize,
    /// Also simulate readings and run the estimator per trial.
    pub estimate: bool,
}

/// Per trial: perturb the source prior, place the swarm around the prior,
/// and score that placement against the true source.
///
/// Trial `t` draws its prior error from substream `2t` of `seed` and its
/// measurement noise from the seed at index `2t + 1`.
pub fn run_practical(scenario: &Scenario, opts: PracticalOptions, seed: u64, options: AdmmOptions, tag: &RunTag) -> Result<PracticalSummary> {
    if opts.trials == 0 {
        return Err(crate::Error::config("trials", "must be at least 1"));
    }
    if !(opts.prior_std >= 0.0 && opts.prior_std.is_finite()) {
        return Err(crate::Error::config("prior_std", "must be finite and >= 0"));
    }
    let truth = scenario.source_params();
    let theoretical = admm::optimize(scenario, &truth, options)?;
    let theoretical_lb = lb_rmse_of(scenario, &theoretical.placement)?;
    let eff_var = scenario.effective_variance();
    let eff_std = scenario.effective_std();

    struct Trial {
        record: PracticalRecord,
        practical: f64,
        err: Option<f64>,
        converged: bool,
    }

    let trials: Vec<Trial> = (0..opts.trials)
        .into_par_iter()
        .map(|t| -> Result<Trial> {
            let mut draw = rng::substream(seed, 2 * t as u64);
            let (ex, ey): (f64, f64) = (StandardNormal.sample(&mut draw), StandardNormal.sample(&mut draw));
            let e = Vector2::new(ex, ey) * opts.prior_std;
            let prior = SourceParams {
                p0: truth.p0,
                position: truth.position + e,
            };
            let around_prior = scenario.with_source(prior.position);
            let outcome = admm::optimize(&around_prior, &prior, options)?;
            let positions = model::sensor_positions(&around_prior, &outcome.placement)?;
            let f = fim::fim_from_positions(&positions, &eff_var, scenario.gamma, truth.position, scenario.variant)?;
            let practical = fim::lb_rmse(&f)?;
            let err = if opts.estimate {
                let noise_seed = rng::derive_seed(seed, 2 * t as u64 + 1);
                let z = model::simulate_at_positions(
                    &positions,
                    &truth,
                    scenario.gamma,
                    &scenario.noise_std,
                    scenario.samples_per_position,
                    noise_seed,
                )?;
                let mle = estimator::mle_estimate(
                    &z,
                    &positions,
                    &eff_std,
                    scenario.gamma,
                    &prior,
                    &MleOptions {
                        prior_std: opts.prior_std,
                        ..MleOptions::default()
                    },
                )?;
                Some((mle.theta_hat.position - truth.position).norm())
            } else {
                None
            };
            Ok(Trial {
                record: PracticalRecord {
                    trial: t.to_string(),
                    prior_err_m: e.norm(),
                    lb_rmse_theoretical_m: theoretical_lb,
                    lb_rmse_practical_m: practical,
                    empirical_rmse_m: err,
                    placement_deg: placement_column(&outcome.placement),
                    scenario_hash: tag.scenario_hash.clone(),
                    seed: tag.seed,
                },
                practical,
                err,
                converged: outcome.converged,
            })
        })
        .collect::<Result<_>>()?;

    let count = trials.len() as f64;
    let mean_practical = trials.iter().map(|t| t.practical).sum::<f64>() / count;
    let mean_prior_err = trials.iter().map(|t| t.record.prior_err_m).sum::<f64>() / count;
    let empirical_rmse = opts
        .estimate
        .then(|| (trials.iter().map(|t| t.err.unwrap_or(0.0).powi(2)).sum::<f64>() / count).sqrt());
    let all_converged = theoretical.converged && trials.iter().all(|t| t.converged);
    let mut records: Vec<PracticalRecord> = trials.into_iter().map(|t| t.record).collect();
    records.push(PracticalRecord {
        trial: "mean".to_string(),
        prior_err_m: mean_prior_err,
        lb_rmse_theoretical_m: theoretical_lb,
        lb_rmse_practical_m: mean_practical,
        empirical_rmse_m: empirical_rmse,
        placement_deg: placement_column(&theoretical.placement),
        scenario_hash: tag.scenario_hash.clone(),
        seed: tag.seed,
    });
    Ok(PracticalSummary {
        records,
        mean_theoretical: theoretical_lb,
        mean_practical,
        empirical_rmse,
        all_converged,
    })
}

/// Derived quantities of a scenario, printed by `validate`.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub n: usize,
    pub weights: Vec<f64>,
    pub mean_inv_var: f64,
    pub g0: Vector2<f64>,
    pub b_rank: usize,
    pub lb_rmse_uniform_m: f64,
    pub scenario_hash: String,
}

pub fn validate(scenario: &Scenario) -> Result<ValidationReport> {
    scenario.validate()?;
    let w = fim::noise_weights(scenario);
    let b = fim::coupling_matrix(&w, scenario.variant);
    let eig = numerics::sym_eig(&b.b)?;
    let top = eig.values.first().copied().unwrap_or(0.0);
    let b_rank = eig.values.iter().filter(|&&v| v > 1e-10 * top.max(f64::MIN_POSITIVE)).count();
    let uniform = admm::uniform_init(scenario.n_sensors().max(2), scenario.beta_max)?;
    let lb = if scenario.n_sensors() >= 2 {
        lb_rmse_of(scenario, &uniform)?
    } else {
        f64::INFINITY
    };
    Ok(ValidationReport {
        n: scenario.n_sensors(),
        weights: w.w.iter().copied().collect(),
        mean_inv_var: w.mean_inv_var,
        g0: fim::g0_bound(scenario.beta_max)?.g0,
        b_rank,
        lb_rmse_uniform_m: lb,
        scenario_hash: scenario_hash(scenario),
    })
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let w: Vec<String> = self.weights.iter().map(|x| format!("{x:.6}")).collect();
        writeln!(f, "sensors: {}", self.n)?;
        writeln!(f, "weights: {}", w.join(", "))?;
        writeln!(f, "mean inverse variance: {:.6}", self.mean_inv_var)?;
        writeln!(f, "g0: [{:.6}, {:.6}]", self.g0.x, self.g0.y)?;
        writeln!(f, "coupling rank: {}", self.b_rank)?;
        writeln!(f, "uniform LB-RMSE (m): {:.6}", self.lb_rmse_uniform_m)?;
        write!(f, "scenario hash: {}", self.scenario_hash)
    }
}

/// Writes `records` as CSV with a header row.
pub fn write_csv<W: Write, R: Serialize>(out: W, records: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// LB-RMSE recomputed from a CSV placement column, for auditing output.
pub fn audit_lb_rmse(scenario: &Scenario, placement_deg: &str) -> Result<f64> {
    lb_rmse_of(scenario, &parse_placement_column(placement_deg)?)
}

/// Positions of `placement` around an arbitrary centre.
pub fn positions_around(scenario: &Scenario, centre: Vector2<f64>, placement: &Placement) -> Result<Vec<Vector3<f64>>> {
    model::sensor_positions(&scenario.with_source(centre), placement)
}
