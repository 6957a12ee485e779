use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use swarm_geometry::admm::{self, AdmmOptions};
use swarm_geometry::experiments::{self, PracticalOptions, RunTag};
use swarm_geometry::{Error, Scenario};

const EXIT_CONFIG: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "swarm-geometry", version, about = "Optimal measuring angles for a sensor swarm")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize one scenario and write a single comparison row.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Override the scenario's angle bound (degrees).
        #[arg(long)]
        beta_max_deg: Option<f64>,
        /// Allowed horizontal range `MIN,MAX`; with --h-range, every sensor
        /// is moved to the best distance before angles are optimized.
        #[arg(long, value_parser = parse_range, requires = "h_range")]
        r_range: Option<(f64, f64)>,
        #[arg(long, value_parser = parse_range, requires = "r_range")]
        h_range: Option<(f64, f64)>,
    },
    /// Per-iteration LB-RMSE traces for several angle bounds.
    Convergence {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "120,200,280,360")]
        beta_max_deg: Vec<f64>,
    },
    /// Uniform versus optimized LB-RMSE over swarm sizes.
    SweepN {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "4,8,12,16")]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "120")]
        beta_max_deg: Vec<f64>,
    },
    /// Uniform versus optimized LB-RMSE over a grid of angle bounds.
    SweepAngle {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 60.0)]
        from_deg: f64,
        #[arg(long, default_value_t = 360.0)]
        to_deg: f64,
        #[arg(long, default_value_t = 7.5)]
        step_deg: f64,
    },
    /// Placement around a noisy source prior, scored at the true source.
    Practical {
        #[command(flatten)]
        common: Common,
        /// Standard deviation of the prior error per axis (m).
        #[arg(long, default_value_t = 12500f64.sqrt())]
        prior_std: f64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Skip the simulated measurements and source estimation.
        #[arg(long)]
        no_estimate: bool,
    },
    /// Parse a scenario and print its derived quantities.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = AdmmOptions::default().rho)]
    rho: f64,
    #[arg(long, default_value_t = AdmmOptions::default().admm_tol)]
    admm_tol: f64,
    #[arg(long, default_value_t = AdmmOptions::default().mm_tol)]
    mm_tol: f64,
    #[arg(long, default_value_t = AdmmOptions::default().max_outer)]
    max_outer: usize,
    #[arg(long, default_value_t = AdmmOptions::default().max_inner)]
    max_inner: usize,
}

impl Common {
    fn options(&self) -> swarm_geometry::Result<AdmmOptions> {
        let o = AdmmOptions {
            rho: self.rho,
            admm_tol: self.admm_tol,
            mm_tol: self.mm_tol,
            max_outer: self.max_outer,
            max_inner: self.max_inner,
        };
        o.validate()?;
        Ok(o)
    }

    fn load(&self) -> swarm_geometry::Result<Scenario> {
        load_scenario(&self.scenario)
    }

    fn write<R: serde::Serialize>(&self, rows: &[R]) -> swarm_geometry::Result<()> {
        match &self.out {
            Some(path) => experiments::write_csv(BufWriter::new(File::create(path)?), rows),
            None => experiments::write_csv(io::stdout().lock(), rows),
        }
    }
}

fn load_scenario(path: &PathBuf) -> swarm_geometry::Result<Scenario> {
    Scenario::from_json_file(path).map_err(|e| match e {
        Error::Io(io) => Error::Config {
            path: path.display().to_string(),
            message: io.to_string(),
        },
        other => other,
    })
}

fn parse_range(text: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = text.split(',').collect();
    let [lo, hi] = parts.as_slice() else {
        return Err(format!("expected MIN,MAX, got {text:?}"));
    };
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{lo:?}: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{hi:?}: {e}"))?;
    Ok((lo, hi))
}

fn radians(degrees: &[f64]) -> swarm_geometry::Result<Vec<f64>> {
    degrees
        .iter()
        .map(|&d| {
            if d > 0.0 && d <= 360.0 {
                Ok(d.to_radians())
            } else {
                Err(Error::Config {
                    path: "beta_max_deg".into(),
                    message: format!("{d} is outside (0, 360]"),
                })
            }
        })
        .collect()
}

/// Runs a command; `Ok(true)` when every optimizer run converged.
fn run(command: Command) -> swarm_geometry::Result<bool> {
    match command {
        Command::Optimize {
            common,
            beta_max_deg,
            r_range,
            h_range,
        } => {
            let mut s = common.load()?;
            if let Some(d) = beta_max_deg {
                s = s.with_beta_max(radians(&[d])?[0])?;
            }
            if let (Some(r), Some(h)) = (r_range, h_range) {
                let (r_best, h_best) = admm::optimal_distance(r, h).map_err(|e| Error::Config {
                    path: "r_range/h_range".into(),
                    message: e.to_string(),
                })?;
                eprintln!("distance: r = {r_best} m, h = {h_best} m");
                s.horiz_dist.iter_mut().for_each(|r| *r = r_best);
                s.vert_dist.iter_mut().for_each(|h| *h = h_best);
            }
            let tag = RunTag::new(&s, common.seed);
            let rows = experiments::run_sweep_angle(&s, &[s.beta_max], common.options()?, &tag)?;
            let r = &rows[0];
            eprintln!(
                "LB-RMSE {:.4} m (uniform {:.4} m, {:.2}% better) after {} iterations",
                r.lb_rmse_opt_m, r.lb_rmse_uniform_m, r.improvement_pct, r.iterations
            );
            eprintln!("angles (deg): {}", r.placement_deg);
            common.write(&rows)?;
            Ok(r.converged)
        }
        Command::Convergence { common, beta_max_deg } => {
            let s = common.load()?;
            let runs = experiments::run_convergence(&s, &radians(&beta_max_deg)?, common.options()?)?;
            for run in &runs {
                eprintln!(
                    "β_max {:>6.1}°: {} iterations, converged {}, mean MM iterations {:.2}",
                    run.beta_max.to_degrees(),
                    run.outcome.iterations,
                    run.outcome.converged,
                    run.outcome.mean_inner_iters()
                );
            }
            common.write(&experiments::convergence_records(&runs, &RunTag::new(&s, common.seed)))?;
            Ok(runs.iter().all(|r| r.outcome.converged))
        }
        Command::SweepN {
            common,
            n,
            beta_max_deg,
        } => {
            let s = common.load()?;
            let tag = RunTag::new(&s, common.seed);
            let rows = experiments::run_sweep_n(&s, &n, &radians(&beta_max_deg)?, common.options()?, &tag)?;
            common.write(&rows)?;
            Ok(rows.iter().all(|r| r.converged))
        }
        Command::SweepAngle {
            common,
            from_deg,
            to_deg,
            step_deg,
        } => {
            if !(step_deg > 0.0) || to_deg < from_deg {
                return Err(Error::Config {
                    path: "step_deg".into(),
                    message: "need step > 0 and from <= to".into(),
                });
            }
            let count = ((to_deg - from_deg) / step_deg + 1e-9).floor() as usize + 1;
            let grid: Vec<f64> = (0..count).map(|k| from_deg + step_deg * k as f64).collect();
            let s = common.load()?;
            let tag = RunTag::new(&s, common.seed);
            let rows = experiments::run_sweep_angle(&s, &radians(&grid)?, common.options()?, &tag)?;
            common.write(&rows)?;
            Ok(rows.iter().all(|r| r.converged))
        }
        Command::Practical {
            common,
            prior_std,
            trials,
            no_estimate,
        } => {
            let s = common.load()?;
            let tag = RunTag::new(&s, common.seed);
            let opts = PracticalOptions {
                prior_std,
                trials,
                estimate: !no_estimate,
            };
            let out = experiments::run_practical(&s, opts, common.seed, common.options()?, &tag)?;
            eprintln!(
                "mean LB-RMSE: practical {:.4} m, theoretical {:.4} m",
                out.mean_practical, out.mean_theoretical
            );
            if let Some(e) = out.empirical_rmse {
                eprintln!("estimator RMSE: {e:.4} m");
            }
            common.write(&out.records)?;
            Ok(out.all_converged)
        }
        Command::Validate { scenario } => {
            let s = load_scenario(&scenario)?;
            println!("{}", experiments::validate(&s)?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let result = run(cli.command);
    eprintln!("elapsed: {:.3} s", start.elapsed().as_secs_f64());
    let _ = io::stdout().flush();
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("warning: at least one run stopped at the iteration cap");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
