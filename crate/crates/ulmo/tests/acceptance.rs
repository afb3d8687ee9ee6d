//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured values (or failing with the same detail).
//!
//! Criterion 4 (the desk-scale simulate-thin-fit study) is expected to fail
//! its two coarsest-interval clauses: with gamma = sigma = 1 and a
//! home-range coefficient of -10, the gradient force rotates the velocity
//! substantially within an observation interval of 0.2 or more, so the
//! frozen-gradient transition is severely misspecified there and the
//! maximum-likelihood fit genuinely prefers a flatter utilisation surface.
//! This was verified against an independent reimplementation and a
//! population-level pseudo-true-parameter computation; see the test output
//! for the measured clause values.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use ulmo::dynamics::{
    moments_with_gradient, overdamped_moments, regular_times, simulate, simulate_with,
    transition_moments, MovementParams,
};
use ulmo::field::{histogram_ud, AnalyticField, CovariateField, StationaryModel};
use ulmo::filter::{joint_density_oracle, kalman_loglik, FilterInit};
use ulmo::raster::{GridSpec, RasterGrid};
use ulmo::simstudy::{generate_covariates, pearson, run_simstudy, SimStudyConfig};
use ulmo::ssf::{ssf_coefficients, ssf_logdensity, ssf_taylor_limits, two_point_logdensity};
use ulmo::track::Track;

const SEED: u64 = 20_240_601;

fn params(gamma: f64, sigma: f64) -> MovementParams {
    MovementParams::new(gamma, sigma).unwrap()
}

/// Criterion 1: closed-form transition moments against a Monte Carlo
/// Euler-Maruyama oracle with frozen gradient, 20 random parameter tuples,
/// one million fine paths each, agreement within 3 Monte Carlo standard
/// errors per moment entry.
#[test]
fn criterion_1_transition_moment_oracle() {
    let start = std::time::Instant::now();
    let n_paths: usize = 1_000_000;
    let block = 8192usize;
    let mut worst: f64 = 0.0;
    for tuple in 0..20u64 {
        let mut setup = ulmo::rng::stream(SEED, 1000 + tuple);
        let gamma = 10f64.powf(setup.random_range(-1.0..0.5));
        let sigma = 10f64.powf(setup.random_range(-0.5..0.5));
        let dt = 10f64.powf(setup.random_range(-2.0..-0.3));
        let x0: f64 = setup.random_range(-1.0..1.0);
        let v0 = sigma * setup.sample::<f64, _>(StandardNormal);
        let grad: f64 = setup.random_range(-2.0..2.0);

        // Velocity by Euler-Maruyama; position by trapezoidal integration of
        // the simulated velocity path (the position equation carries no
        // noise of its own, so any quadrature of the path is admissible and
        // the trapezoid keeps the quadrature bias far below the MC noise).
        let nsub = ((2000.0 * gamma * dt).ceil() as usize).clamp(300, 20_000);
        let delta = dt / nsub as f64;
        let drift = sigma * sigma * grad;
        let noise = (2.0 * gamma).sqrt() * sigma * delta.sqrt();

        let n_blocks = n_paths / block;
        let partials: Vec<[f64; 5]> = (0..n_blocks)
            .into_par_iter()
            .map(|b| {
                let mut rng = ulmo::rng::stream(SEED, (tuple << 24) | (b as u64));
                let mut acc = [0.0f64; 5];
                for _ in 0..block {
                    let mut x = x0;
                    let mut v = v0;
                    for _ in 0..nsub {
                        let v_next = v + (-gamma * v + drift) * delta
                            + noise * rng.sample::<f64, _>(StandardNormal);
                        x += 0.5 * (v + v_next) * delta;
                        v = v_next;
                    }
                    acc[0] += x;
                    acc[1] += v;
                    acc[2] += x * x;
                    acc[3] += v * v;
                    acc[4] += x * v;
                }
                acc
            })
            .collect();
        let mut sums = [0.0f64; 5];
        for p in partials {
            for (s, v) in sums.iter_mut().zip(p) {
                *s += v;
            }
        }
        let n = (n_blocks * block) as f64;
        let mx = sums[0] / n;
        let mv = sums[1] / n;
        let cxx = sums[2] / n - mx * mx;
        let cvv = sums[3] / n - mv * mv;
        let cxv = sums[4] / n - mx * mv;

        let m = moments_with_gradient(params(gamma, sigma), &[x0, v0], &[grad], dt).unwrap();
        // Gaussian-theory standard errors of the sample moments.
        let checks = [
            ("mean_x", m.mu[0], mx, (m.q_xx / n).sqrt()),
            ("mean_v", m.mu[1], mv, (m.q_vv / n).sqrt()),
            ("var_x", m.q_xx, cxx, m.q_xx * (2.0 / n).sqrt()),
            ("var_v", m.q_vv, cvv, m.q_vv * (2.0 / n).sqrt()),
            ("cov_xv", m.q_xv, cxv, ((m.q_xx * m.q_vv + m.q_xv * m.q_xv) / n).sqrt()),
        ];
        for (name, want, got, se) in checks {
            let z = (got - want).abs() / se;
            worst = worst.max(z);
            assert!(
                z <= 3.0,
                "tuple {tuple} (gamma={gamma:.3}, sigma={sigma:.3}, dt={dt:.4}): \
                 {name} off by {z:.2} standard errors ({got} vs {want})"
            );
        }
    }
    println!(
        "criterion 1 (transition-moment Monte Carlo oracle): PASS — \
         20 tuples x 1e6 paths, worst deviation {worst:.2} SE, {:.1?}",
        start.elapsed()
    );
}

/// Criterion 2: Kalman log-likelihood equals the dense joint-Gaussian
/// oracle to 1e-8 relative on 50 random short tracks.
#[test]
fn criterion_2_likelihood_oracle() {
    let start = std::time::Instant::now();
    let mut rng = ulmo::rng::stream(SEED, 2);
    let mut worst: f64 = 0.0;
    for rep in 0..50 {
        let spec = GridSpec::square(0.0, 1.0, 9).unwrap();
        let raster = RasterGrid::from_fn(spec, |_, _| rng.random_range(-1.5..1.5)).unwrap();
        let model = StationaryModel::new(
            vec![
                CovariateField::raster(raster),
                CovariateField::QuadraticDistance { center: vec![0.5, 0.5] },
            ],
            vec![rng.random_range(-1.0..1.0), rng.random_range(-4.0..0.0)],
        )
        .unwrap();
        let p = params(rng.random_range(0.2..4.0), rng.random_range(0.3..2.5));
        let n = rng.random_range(2..=10);
        let mut t = 0.0;
        let mut times = Vec::new();
        for _ in 0..n {
            times.push(t);
            t += rng.random_range(0.05..0.8);
        }
        let positions: Vec<f64> = (0..2 * n).map(|_| rng.random_range(0.05..0.95)).collect();
        let track = Track::new(times, positions, 2).unwrap();
        let a = kalman_loglik(p, &model, &track, FilterInit::StationaryVelocity).unwrap();
        let b = joint_density_oracle(p, &model, &track, FilterInit::StationaryVelocity).unwrap();
        let rel = (a - b).abs() / b.abs().max(1.0);
        worst = worst.max(rel);
        assert!(rel <= 1e-8, "track {rep}: filter {a} vs oracle {b} (relative {rel:.3e})");
    }
    println!(
        "criterion 2 (likelihood oracle): PASS — 50 tracks, worst relative \
         difference {worst:.2e}, {:.1?}",
        start.elapsed()
    );
}

fn study_model(grid: GridSpec, bandwidth: f64, seed: u64) -> StationaryModel {
    let (c1, c2) = generate_covariates(grid, bandwidth, seed).unwrap();
    let cx = (grid.x_origin + grid.x_max()) / 2.0;
    let cy = (grid.y_origin + grid.y_max()) / 2.0;
    StationaryModel::new(
        vec![
            CovariateField::raster(c1),
            CovariateField::raster(c2),
            CovariateField::QuadraticDistance { center: vec![cx, cy] },
        ],
        vec![2.0, 5.0, -10.0],
    )
    .unwrap()
}

/// Criterion 3: a long simulation reproduces the closed-form utilisation
/// distribution, with constant and with position-dependent friction.
#[test]
fn criterion_3_stationarity() {
    let start = std::time::Instant::now();
    let grid = GridSpec::square(0.0, 4.0, 101).unwrap();
    let model = study_model(grid, 10.0, 21);
    let truth = model.normalize_ud(grid).unwrap();
    let times = regular_times(0.0, 0.01, 50_000);

    let mut rng = ulmo::rng::stream(21, 100);
    let e1: f64 = StandardNormal.sample(&mut rng);
    let e2: f64 = StandardNormal.sample(&mut rng);
    let track = simulate(params(1.0, 1.0), &model, &[2.0, e1, 2.0, e2], &times, &mut rng)
        .expect("simulation stays in domain");
    let emp = histogram_ud(track.positions(), grid).unwrap();
    let corr_const = pearson(emp.values(), truth.values()).unwrap();
    assert!(corr_const > 0.95, "constant-friction UD correlation {corr_const:.4} <= 0.95");

    // Friction depending on position through the first covariate field;
    // speed constant, so the stationary distribution is unchanged.
    let field = model.fields()[0].clone();
    let mut rng2 = ulmo::rng::stream(21, 101);
    let track2 = simulate_with(
        |_t, x| MovementParams::new((0.5 * field.value(x)?).exp(), 1.0),
        &model,
        &[2.0, 0.0, 2.0, 0.0],
        &times,
        &mut rng2,
    )
    .expect("simulation stays in domain");
    let emp2 = histogram_ud(track2.positions(), grid).unwrap();
    let corr_posdep = pearson(emp2.values(), truth.values()).unwrap();
    assert!(corr_posdep > 0.9, "position-dependent-friction correlation {corr_posdep:.4} <= 0.9");

    println!(
        "criterion 3 (stationarity): PASS — UD correlation {corr_const:.4} \
         (constant friction), {corr_posdep:.4} (position-dependent friction), {:.1?}",
        start.elapsed()
    );
}

/// Criterion 4: desk-scale simulate-thin-fit study. See the module comment:
/// the two coarsest-interval clauses fail for verified mathematical
/// reasons; the remaining clauses pass.
#[test]
fn criterion_4_desk_scale_study() {
    let start = std::time::Instant::now();
    let config = SimStudyConfig::desk(1234);
    let results = run_simstudy(&config).unwrap();
    let s = &results.summaries;
    assert_eq!(s.len(), 3);
    for row in &results.rows {
        assert!(row.error.is_none(), "replicate failure: {:?}", row.error);
    }

    let mut clauses: Vec<(String, bool)> = Vec::new();
    clauses.push((
        format!("median gamma at delta 0.02 in [0.9, 1.1] (got {:.3})", s[0].gamma_median),
        (0.9..=1.1).contains(&s[0].gamma_median),
    ));
    clauses.push((
        format!("median sigma at delta 0.02 in [0.95, 1.05] (got {:.3})", s[0].sigma_median),
        (0.95..=1.05).contains(&s[0].sigma_median),
    ));
    let b = |i: usize, k: usize| s[i].beta_median[k];
    clauses.push((
        format!(
            "beta1 medians decrease monotonically ({:.2} > {:.2} > {:.2})",
            b(0, 0), b(1, 0), b(2, 0)
        ),
        b(0, 0) > b(1, 0) && b(1, 0) > b(2, 0),
    ));
    clauses.push((
        format!(
            "beta2 medians decrease monotonically ({:.2} > {:.2} > {:.2})",
            b(0, 1), b(1, 1), b(2, 1)
        ),
        b(0, 1) > b(1, 1) && b(1, 1) > b(2, 1),
    ));
    for (i, delta) in [0.02, 0.2, 2.0].iter().enumerate() {
        clauses.push((
            format!("beta3 median within 15% of -10 at delta {delta} (got {:.2})", b(i, 2)),
            (b(i, 2) + 10.0).abs() <= 1.5,
        ));
    }
    clauses.push((
        format!("mean UD correlation at delta 2 >= 0.8 (got {:.3})", s[2].ud_corr_mean),
        s[2].ud_corr_mean >= 0.8,
    ));

    println!("criterion 4 (desk-scale study), {:.1?}:", start.elapsed());
    for (desc, ok) in &clauses {
        println!("  [{}] {desc}", if *ok { "pass" } else { "FAIL" });
    }
    let failed: Vec<&String> =
        clauses.iter().filter(|(_, ok)| !ok).map(|(d, _)| d).collect();
    assert!(
        failed.is_empty(),
        "{} of {} clauses failed: {:?}",
        failed.len(),
        clauses.len(),
        failed
    );
    println!("criterion 4 (desk-scale study): PASS");
}

/// Criterion 5: the step-selection rewriting of the two-point transition
/// kernel is exact up to normalization for planar log pi at a fine
/// interval, and the Taylor-limit coefficients agree to 0.2% there.
#[test]
fn criterion_5_ssf_equivalence() {
    let start = std::time::Instant::now();
    let p = params(1.0, 1.0);
    let dt = 1e-3;
    let model = StationaryModel::new(
        vec![CovariateField::Analytic(AnalyticField::planar(vec![0.7, -0.4]))],
        vec![1.3],
    )
    .unwrap();
    let coeffs = ssf_coefficients(p, model.beta(), dt).unwrap();

    let x_prev = [0.0, 0.0];
    let x_cur = [1.2e-3, -0.4e-3];
    let step = ulmo::dynamics::StepCoeffs::new(p, dt).unwrap();
    let sd = (dt * dt * step.var_vel).sqrt();
    let n = 81;
    let half = 6.0 * sd;
    let center = [2.4e-3, -0.8e-3];
    let mut ssf_logs = Vec::with_capacity(n * n);
    let mut kernel_logs = Vec::with_capacity(n * n);
    for iy in 0..n {
        for ix in 0..n {
            let x = [
                center[0] - half + 2.0 * half * ix as f64 / (n - 1) as f64,
                center[1] - half + 2.0 * half * iy as f64 / (n - 1) as f64,
            ];
            ssf_logs.push(ssf_logdensity(&coeffs, &x, &x_cur, &x_prev, &model).unwrap());
            kernel_logs.push(two_point_logdensity(p, &model, &x, &x_cur, &x_prev, dt).unwrap());
        }
    }
    let normalize = |logs: &[f64]| -> Vec<f64> {
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    };
    let pn = normalize(&ssf_logs);
    let qn = normalize(&kernel_logs);
    let tv = 0.5 * pn.iter().zip(&qn).map(|(a, b)| (a - b).abs()).sum::<f64>();
    assert!(tv < 0.02, "total variation {tv:.3e} >= 0.02");

    let taylor = ssf_taylor_limits(p, model.beta(), dt).unwrap();
    let ratios = [
        coeffs.c_len2 / taylor.c_len2,
        coeffs.c_persist / taylor.c_persist,
        coeffs.c_habitat[0] / taylor.c_habitat[0],
    ];
    let worst = ratios.iter().map(|r| (r - 1.0).abs()).fold(0.0f64, f64::max);
    assert!(worst <= 2e-3, "Taylor coefficient ratio off by {worst:.2e} > 0.2%");

    println!(
        "criterion 5 (step-selection equivalence): PASS — total variation {tv:.2e}, \
         worst Taylor ratio error {worst:.2e}, {:.1?}",
        start.elapsed()
    );
}

/// Criterion 6: position moments at very large friction match the
/// overdamped Euler moments at the matched diffusion parameter.
#[test]
fn criterion_6_overdamped_limit() {
    let start = std::time::Instant::now();
    let model = StationaryModel::new(
        vec![CovariateField::Analytic(AnalyticField::planar(vec![0.8, -0.5]))],
        vec![1.0],
    )
    .unwrap();
    let p = params(1e4, 1e2); // zeta = sigma / sqrt(gamma) = 1
    let dt = 0.1;
    let z = [0.3, 0.2, 0.6, -0.4];
    let under = transition_moments(p, &model, &z, dt).unwrap();
    let (over_mean, over_var) = overdamped_moments(1.0, &model, &[0.3, 0.6], dt).unwrap();
    let mean_err = (0..2)
        .map(|j| (under.mu[2 * j] - over_mean[j]).abs())
        .fold(0.0f64, f64::max);
    let var_err = (under.q_xx / over_var - 1.0).abs();
    assert!(mean_err <= 1e-3, "mean error {mean_err:.2e}");
    assert!(var_err <= 0.01, "variance relative error {var_err:.2e}");
    println!(
        "criterion 6 (overdamped limit): PASS — mean error {mean_err:.1e}, \
         variance error {var_err:.1e}, {:.1?}",
        start.elapsed()
    );
}

/// Criterion 7: analytic gradients match central finite differences at 200
/// random points within 1e-6.
#[test]
fn criterion_7_gradient_checks() {
    let start = std::time::Instant::now();
    let mut rng = ulmo::rng::stream(SEED, 7);
    let spec = GridSpec::new(0.0, 0.0, 0.35, 0.2, 14, 20).unwrap();
    let raster = RasterGrid::from_fn(spec, |_, _| rng.random_range(-2.0..2.0)).unwrap();
    let model = StationaryModel::new(
        vec![
            CovariateField::raster(raster.clone()),
            CovariateField::QuadraticDistance { center: vec![2.0, 1.5] },
        ],
        vec![1.7, -3.0],
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let x = rng.random_range(0.01..spec.x_max() - 0.01);
        let y = rng.random_range(0.01..spec.y_max() - 0.01);
        let hx = 1e-6 * spec.dx;
        let hy = 1e-6 * spec.dy;
        let g = raster.bilinear_gradient(x, y).unwrap();
        let fdx = (raster.bilinear_value(x + hx, y).unwrap()
            - raster.bilinear_value(x - hx, y).unwrap())
            / (2.0 * hx);
        let fdy = (raster.bilinear_value(x, y + hy).unwrap()
            - raster.bilinear_value(x, y - hy).unwrap())
            / (2.0 * hy);
        worst = worst.max((g[0] - fdx).abs()).max((g[1] - fdy).abs());

        let gm = model.grad_log_pi(&[x, y]).unwrap();
        let h = 1e-7;
        for axis in 0..2 {
            let mut xp = [x, y];
            let mut xm = [x, y];
            xp[axis] += h;
            xm[axis] -= h;
            let fd = (model.log_pi(&xp).unwrap() - model.log_pi(&xm).unwrap()) / (2.0 * h);
            worst = worst.max((gm[axis] - fd).abs());
        }
    }
    assert!(worst < 1e-6, "worst gradient deviation {worst:.3e}");
    println!(
        "criterion 7 (gradient checks): PASS — 200 points, worst deviation {worst:.1e}, {:.1?}",
        start.elapsed()
    );
}

/// Criterion 8: empirical mean speed and velocity variance on a free
/// landscape match the closed-form summaries.
#[test]
fn criterion_8_summary_identities() {
    let start = std::time::Instant::now();
    let p = params(1.0, 1.0);
    let model = StationaryModel::free(2);
    let times = regular_times(0.0, 0.25, 100_000);
    let mut rng = ulmo::rng::stream(SEED, 8);
    let track = simulate(p, &model, &[0.0, 0.0, 0.0, 0.0], &times, &mut rng).unwrap();
    let n = track.len() as f64;
    let mut speed_sum = 0.0;
    let mut var_sum = [0.0, 0.0];
    for v in track.velocities().unwrap() {
        speed_sum += (v[0] * v[0] + v[1] * v[1]).sqrt();
        var_sum[0] += v[0] * v[0];
        var_sum[1] += v[1] * v[1];
    }
    let mean_speed = speed_sum / n;
    let speed_err = (mean_speed / p.mean_speed() - 1.0).abs();
    assert!(speed_err < 0.02, "mean speed off by {:.3}%", 100.0 * speed_err);
    for (axis, vs) in var_sum.iter().enumerate() {
        let err = (vs / n / (p.sigma * p.sigma) - 1.0).abs();
        assert!(err < 0.05, "axis {axis} velocity variance off by {:.3}%", 100.0 * err);
    }
    println!(
        "criterion 8 (summary identities): PASS — mean speed {mean_speed:.4} vs {:.4} \
         (error {:.2}%), {:.1?}",
        p.mean_speed(),
        100.0 * speed_err,
        start.elapsed()
    );
}
