//! Acceptance suite: one test and one `PASS`/`FAIL` line per criterion.
//!
//! Lines go straight to stderr so they show up even for passing tests.

use std::f64::consts::{LN_10, PI, TAU};
use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, Matrix2, Matrix3, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swarm_geometry::admm::{self, AdmmOptions, ProblemMatrices};
use swarm_geometry::estimator::{mle_estimate, MleOptions};
use swarm_geometry::experiments::{self, PracticalOptions, RunTag};
use swarm_geometry::fim;
use swarm_geometry::model::{self, angle_to_direction, Placement, Scenario, SourceParams, Variant};

fn report(id: u32, pass: bool, detail: &str) {
    let line = format!(
        "criterion {id:>2}: {}  {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    assert!(pass, "criterion {id}: {detail}");
}

fn rad(deg: f64) -> f64 {
    deg.to_radians()
}

fn reduction_at(scenario: &Scenario, k: usize) -> (f64, f64) {
    let start = Instant::now();
    let out = admm::optimize(scenario, &scenario.source_params(), AdmmOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    (100.0 * (1.0 - out.lb_rmse_at(k) / out.uniform_lb_rmse()), secs)
}

#[test]
fn criterion_01_case_a_120_reduction() {
    let (pct, secs) = reduction_at(&Scenario::case_a(rad(120.0)), 10);
    report(
        1,
        pct >= 20.0 && secs < 5.0,
        &format!("case A 120°: reduction after 10 iterations {pct:.2}% (need >= 20%), full run {secs:.3} s (need < 5 s)"),
    );
}

#[test]
fn criterion_02_case_a_280_reduction() {
    let (pct, _) = reduction_at(&Scenario::case_a(rad(280.0)), 10);
    report(
        2,
        (3.0..=10.0).contains(&pct),
        &format!("case A 280°: reduction after 10 iterations {pct:.2}% (need 3%..10%)"),
    );
}

#[test]
fn criterion_03_convergence_speed() {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, inner_cap) in [("A", 5.0), ("B", 3.0)] {
        for deg in [120.0, 200.0, 280.0, 360.0] {
            let s = if name == "A" {
                Scenario::case_a(rad(deg))
            } else {
                Scenario::case_b(rad(deg))
            };
            let out = admm::optimize(&s, &s.source_params(), AdmmOptions::default()).unwrap();
            let inner = out.mean_inner_iters();
            let good = out.converged && out.iterations <= 100 && inner <= inner_cap;
            ok &= good;
            parts.push(format!(
                "{name}{deg}:{}{} mm={inner:.2}",
                out.iterations,
                if out.converged { "" } else { "(cap)" }
            ));
        }
    }
    report(
        3,
        ok,
        &format!("outer iterations to 1e-4 (need <= 100; mean MM <= 5 A, <= 3 B): {}", parts.join(", ")),
    );
}

fn optimized_lb(s: &Scenario) -> f64 {
    let out = admm::optimize(s, &s.source_params(), AdmmOptions::default()).unwrap();
    fim::fim_full(s, &out.placement, &s.source_params()).unwrap().lb_rmse
}

fn plateau_spread(base: &Scenario, from_deg: f64) -> (f64, f64, f64) {
    let grid: Vec<f64> = (0..)
        .map(|k| from_deg + 7.5 * k as f64)
        .take_while(|&d| d <= 360.0 + 1e-9)
        .collect();
    let lbs: Vec<f64> = grid
        .iter()
        .map(|&d| optimized_lb(&base.with_beta_max(rad(d)).unwrap()))
        .collect();
    let hi = lbs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = lbs.iter().cloned().fold(f64::INFINITY, f64::min);
    (100.0 * (hi - lo) / lo, lo, hi)
}

#[test]
fn criterion_04_plateau() {
    let (b_spread, b_lo, b_hi) = plateau_spread(&Scenario::case_b(TAU), 105.0);
    let (a_spread, a_lo, a_hi) = plateau_spread(&Scenario::case_a(TAU), 97.5);
    report(
        4,
        b_spread < 5.0 && a_spread < 5.0,
        &format!(
            "optimized LB-RMSE spread, case B 105..360°: {b_spread:.1}% ({b_lo:.1}..{b_hi:.1} m); case A 97.5..360°: {a_spread:.1}% ({a_lo:.1}..{a_hi:.1} m) (need < 5% each)"
        ),
    );
}

#[test]
fn criterion_05_practical_mode() {
    let s = Scenario::case_a(rad(120.0));
    let opts = PracticalOptions {
        prior_std: 12500f64.sqrt(),
        trials: 100,
        estimate: false,
    };
    let out = experiments::run_practical(&s, opts, 2024, AdmmOptions::default(), &RunTag::new(&s, 2024)).unwrap();
    let dev = 100.0 * (out.mean_practical / out.mean_theoretical - 1.0);
    report(
        5,
        dev.abs() <= 10.0,
        &format!(
            "case A 120°, prior std √12500 m, 100 trials: practical {:.2} m vs theoretical {:.2} m ({dev:+.2}%, need within 10%)",
            out.mean_practical, out.mean_theoretical
        ),
    );
}

fn random_scenario(rng: &mut ChaCha8Rng) -> (Scenario, Vec<f64>) {
    let n = rng.random_range(3..12);
    let mut s = Scenario::uniform(n, 1000.0, 100.0, 1.0, TAU).unwrap();
    for i in 0..n {
        s.horiz_dist[i] = rng.random_range(100.0..2000.0);
        s.vert_dist[i] = rng.random_range(0.0..500.0);
        s.noise_std[i] = rng.random_range(0.5..4.0);
    }
    s.gamma = rng.random_range(1.5..4.0);
    let angles = (0..n).map(|_| rng.random_range(0.0..TAU)).collect();
    (s, angles)
}

/// `F` from its partitioned sums: `[Σσ⁻², aᵀ; a, H]` with rows
/// `a_x, a_y` of the log-distance gradient.
fn fim_by_sums(s: &Scenario, angles: &[f64]) -> Matrix3<f64> {
    let c = 10.0 * s.gamma / LN_10;
    let var = s.effective_variance();
    let mut f = Matrix3::zeros();
    for i in 0..angles.len() {
        let (r, h) = (s.horiz_dist[i], s.vert_dist[i]);
        let (dx, dy) = (r * angles[i].sin(), r * angles[i].cos());
        let d2 = r * r + h * h;
        let (ax, ay) = (c * dx / d2, c * dy / d2);
        f[(0, 0)] += 1.0 / var[i];
        f[(0, 1)] += ax / var[i];
        f[(0, 2)] += ay / var[i];
        f[(1, 1)] += ax * ax / var[i];
        f[(1, 2)] += ax * ay / var[i];
        f[(2, 2)] += ay * ay / var[i];
    }
    f[(1, 0)] = f[(0, 1)];
    f[(2, 0)] = f[(0, 2)];
    f[(2, 1)] = f[(1, 2)];
    f
}

/// `T = Σ w δ² g gᵀ − (Σ w δ g)(Σ w δ g)ᵀ`, `δ = r/d²`.
fn t_by_sums(s: &Scenario, angles: &[f64]) -> Matrix2<f64> {
    let inv: Vec<f64> = s.effective_variance().iter().map(|v| 1.0 / v).collect();
    let total: f64 = inv.iter().sum();
    let mut second = Matrix2::zeros();
    let mut first = Vector2::zeros();
    for i in 0..angles.len() {
        let w = inv[i] / total;
        let (r, h) = (s.horiz_dist[i], s.vert_dist[i]);
        let delta = r / (r * r + h * h);
        let g = angle_to_direction(angles[i]);
        second += g * g.transpose() * (w * delta * delta);
        first += g * (w * delta);
    }
    second - first * first.transpose()
}

#[test]
fn criterion_06_determinant_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let mut ratio_vs_sum: f64 = 0.0;
    for _ in 0..100 {
        let (s, angles) = random_scenario(&mut rng);
        let n = angles.len() as f64;
        let direct = fim_by_sums(&s, &angles).determinant();
        let inv: Vec<f64> = s.effective_variance().iter().map(|v| 1.0 / v).collect();
        let mean_inv = inv.iter().sum::<f64>() / n;
        let c = 10.0 * s.gamma / LN_10;
        let stated = c.powi(4) * n * n * mean_inv * mean_inv * t_by_sums(&s, &angles).determinant();
        worst = worst.max((direct - stated).abs() / direct.abs());
        // how far the ratio sits from N·σ̄⁻²
        ratio_vs_sum = ratio_vs_sum.max(((direct / stated) / (n * mean_inv) - 1.0).abs());
    }
    report(
        6,
        worst <= 1e-9,
        &format!(
            "|F| vs c⁴·N²·(σ̄⁻²)²·|T| on 100 scenarios: worst relative gap {worst:.3e} (need <= 1e-9); |F|/stated equals N·σ̄⁻² to {ratio_vs_sum:.1e}"
        ),
    );
}

#[test]
fn criterion_07_orthogonal_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let (s, angles) = random_scenario(&mut rng);
        let pl = Placement::from_angles(&angles);
        let mut u = fim::rotation(rng.random_range(0.0..TAU));
        if k % 2 == 1 {
            u *= Matrix2::new(1.0, 0.0, 0.0, -1.0);
        }
        let moved = fim::apply_orthogonal(&pl, &u).unwrap();
        let w = fim::noise_weights(&s);
        let b = fim::coupling_matrix(&w, Variant::Rssd);
        let d = fim::sensitivity(&s);
        let before = fim::t_matrix(pl.directions(), &d, &b).unwrap().determinant();
        let after = fim::t_matrix(moved.directions(), &d, &b).unwrap().determinant();
        worst = worst.max((before - after).abs() / before.abs());
    }
    report(
        7,
        worst <= 1e-10,
        &format!("|T| under 100 random rotations/reflections: worst relative change {worst:.3e} (need <= 1e-10)"),
    );
}

#[test]
fn criterion_08_vector_bound_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = 0;
    let mut total = 0;
    for deg in [60.0, 120.0, 200.0, 280.0] {
        let beta_max = rad(deg);
        let bound = fim::g0_bound(beta_max).unwrap();
        for _ in 0..10_000 {
            let beta = rng.random_range(0.0..TAU);
            let in_set = if beta_max <= PI {
                beta <= beta_max
            } else {
                beta <= PI / 2.0 + beta_max / 2.0 || beta >= 2.5 * PI - beta_max / 2.0
            };
            let feasible = bound.contains(&angle_to_direction(beta), 0.0);
            mismatches += usize::from(in_set != feasible);
            total += 1;
        }
    }
    report(
        8,
        mismatches == 0,
        &format!("{mismatches} mismatches between g ≥ g₀ and angle-set membership over {total} samples (need 0)"),
    );
}

/// Gradient descent with Armijo backtracking on
/// `−ln|XᵀX| + ρ/2·‖X‖² − ⟨J, X⟩`.
fn numerical_x_min(j: &DMatrix<f64>, rho: f64, start: DMatrix<f64>) -> f64 {
    let f = |x: &DMatrix<f64>| {
        let det = (x.transpose() * x).determinant();
        if det <= 0.0 {
            f64::INFINITY
        } else {
            -det.ln() + 0.5 * rho * x.norm_squared() - j.dot(x)
        }
    };
    let mut x = start;
    let mut fx = f(&x);
    for _ in 0..20_000 {
        let gram_inv = (x.transpose() * &x).try_inverse().unwrap();
        let grad = &x * gram_inv * -2.0 + &x * rho - j;
        let gn = grad.norm_squared();
        if gn < 1e-24 {
            break;
        }
        let mut step = 1.0;
        loop {
            let trial = &x - &grad * step;
            let ft = f(&trial);
            if ft <= fx - 1e-4 * step * gn {
                x = trial;
                fx = ft;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                return fx;
            }
        }
    }
    fx
}

#[test]
fn criterion_09_x_update_optimality() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..50 {
        let n = rng.random_range(3..10);
        let rho = [0.5, 1.0, 4.0, 16.0][rng.random_range(0..4)];
        let j = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-2.0..2.0));
        let x = admm::x_update(&j, rho).unwrap();
        let ours = admm::x_objective(&x, &j, rho);
        let start = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let theirs = numerical_x_min(&j, rho, start);
        worst = worst.max(ours - theirs);
    }
    report(
        9,
        worst <= 1e-6,
        &format!("X-step objective minus numerical minimum, worst of 50: {worst:.3e} (need <= 1e-6)"),
    );
}

#[test]
fn criterion_10_mm_global_and_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let beta_max = rad(120.0);
    let grid_n = 60;
    let grid: Vec<Vector2<f64>> = (0..grid_n)
        .map(|k| angle_to_direction(beta_max * k as f64 / (grid_n - 1) as f64))
        .collect();
    let (instances, mut above, mut non_monotone, mut worst_gap) = (200, 0, 0, 0.0f64);
    for _ in 0..instances {
        let mut s = Scenario::uniform(3, 1000.0, 100.0, 1.0, beta_max).unwrap();
        for i in 0..3 {
            s.horiz_dist[i] = rng.random_range(300.0..1500.0);
            s.vert_dist[i] = rng.random_range(50.0..300.0);
            s.noise_std[i] = rng.random_range(0.5..3.0);
        }
        let p = ProblemMatrices::new(&s).unwrap();
        let x = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let v = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let start: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..beta_max)).collect();
        let g0 = Placement::from_angles(&start).directions().clone();
        let rho = 16.0;
        let out = admm::g_update_mm(&x, &v, &g0, &p.k, &p.m_tilde, rho, &p.bound, 1e-12, 10_000);
        non_monotone += out.objectives.windows(2).filter(|w| w[1] > w[0] + 1e-10).count();
        let mm = *out.objectives.last().unwrap();

        let mut best = f64::INFINITY;
        let mut g = DMatrix::zeros(3, 2);
        for a in &grid {
            for b in &grid {
                for c in &grid {
                    for (row, dir) in [a, b, c].iter().enumerate() {
                        g[(row, 0)] = dir.x;
                        g[(row, 1)] = dir.y;
                    }
                    best = best.min(admm::g_objective(&g, &x, &v, &p.k, rho));
                }
            }
        }
        if mm > best + 1e-6 {
            above += 1;
            worst_gap = worst_gap.max(mm - best);
        }
    }
    report(
        10,
        above == 0 && non_monotone == 0,
        &format!(
            "N=3, 120°: {above}/{instances} MM results above the 60³ grid minimum (worst gap {worst_gap:.3e}); {non_monotone} non-monotone MM steps (need 0 and 0)"
        ),
    );
}

#[test]
fn criterion_11_distance_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 1000;
    let mut misses = 0;
    for _ in 0..100 {
        let r0 = rng.random_range(1.0..1000.0);
        let r1 = r0 + rng.random_range(1.0..2000.0);
        let h0 = rng.random_range(0.0..500.0);
        let h1 = h0 + rng.random_range(1.0..500.0);
        let (r, h) = admm::optimal_distance((r0, r1), (h0, h1)).unwrap();
        let f = |r: f64, h: f64| r / (r * r + h * h);
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for a in 0..n {
            let rr = r0 + (r1 - r0) * a as f64 / (n - 1) as f64;
            for b in 0..n {
                let hh = h0 + (h1 - h0) * b as f64 / (n - 1) as f64;
                let v = f(rr, hh);
                if v > best.0 {
                    best = (v, rr, hh);
                }
            }
        }
        let cell_r = (r1 - r0) / (n - 1) as f64;
        let cell_h = (h1 - h0) / (n - 1) as f64;
        if (r - best.1).abs() > cell_r + 1e-9 || (h - best.2).abs() > cell_h + 1e-9 || f(r, h) < best.0 {
            misses += 1;
        }
    }
    report(
        11,
        misses == 0,
        &format!("{misses}/100 rectangles where the closed form misses the 1000×1000 grid optimum by more than one cell (need 0)"),
    );
}

#[test]
fn criterion_12_estimator() {
    let s = Scenario::case_a(rad(120.0));
    let out = admm::optimize(&s, &s.source_params(), AdmmOptions::default()).unwrap();
    let positions = model::sensor_positions(&s, &out.placement).unwrap();
    let truth = s.source_params();
    let sig = s.effective_std();
    let lb = fim::fim_full(&s, &out.placement, &truth).unwrap().lb_rmse;

    let clean: Vec<f64> = positions
        .iter()
        .map(|p| model::mean_rss(truth.p0, s.gamma, p.norm()).unwrap())
        .collect();
    let init = SourceParams::new(0.0, 200.0, 0.0);
    let fit = mle_estimate(&clean, &positions, &sig, s.gamma, &init, &MleOptions::default()).unwrap();
    let noiseless_err = (fit.theta_hat.position - truth.position).norm();

    let trials = 1000;
    let sq: Vec<f64> = (0..trials)
        .map(|t| {
            let z = model::simulate_at_positions(&positions, &truth, s.gamma, &s.noise_std, s.samples_per_position, t)
                .unwrap();
            let est = mle_estimate(&z, &positions, &sig, s.gamma, &truth, &MleOptions::default()).unwrap();
            (est.theta_hat.position - truth.position).norm_squared()
        })
        .collect();
    let mse = sq.iter().sum::<f64>() / trials as f64;
    let sd = (sq.iter().map(|e| (e - mse).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt();
    let rmse = mse.sqrt();
    let se = sd / (trials as f64).sqrt() / (2.0 * rmse);
    report(
        12,
        noiseless_err <= 1e-4 && rmse >= lb - 3.0 * se,
        &format!(
            "noiseless recovery from 200 m off: {noiseless_err:.2e} m (need <= 1e-4); Monte-Carlo RMSE {rmse:.2} m ± {se:.2} vs LB-RMSE {lb:.2} m (need RMSE >= LB − 3·SE)"
        ),
    );
}

fn all_csv(seed: u64) -> Vec<u8> {
    let s = Scenario::case_a(rad(120.0));
    let tag = RunTag::new(&s, seed);
    let opts = AdmmOptions {
        max_outer: 50,
        ..AdmmOptions::default()
    };
    let mut buf = Vec::new();
    let runs = experiments::run_convergence(&s, &[rad(120.0), rad(280.0)], opts).unwrap();
    experiments::write_csv(&mut buf, &experiments::convergence_records(&runs, &tag)).unwrap();
    let sweep = experiments::run_sweep_n(&s, &[4, 8], &[rad(120.0)], opts, &tag).unwrap();
    experiments::write_csv(&mut buf, &sweep).unwrap();
    let practical = PracticalOptions {
        prior_std: 100.0,
        trials: 8,
        estimate: true,
    };
    let p = experiments::run_practical(&s, practical, seed, opts, &tag).unwrap();
    experiments::write_csv(&mut buf, &p.records).unwrap();
    buf
}

#[test]
fn criterion_13_determinism() {
    let a = all_csv(42);
    let b = all_csv(42);
    let c = all_csv(43);
    report(
        13,
        a == b && a != c,
        &format!(
            "two runs with seed 42 byte-identical: {} ({} bytes); seed 43 differs: {}",
            a == b,
            a.len(),
            a != c
        ),
    );
}
