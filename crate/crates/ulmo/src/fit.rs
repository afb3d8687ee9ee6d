//! Maximum-likelihood estimation with standard errors and simulation-based
//! uncertainty.
//!
//! Parameters are estimated on an unconstrained scale (`log gamma`,
//! `log sigma`, `beta`; or the time-varying coefficient vectors) by
//! Nelder-Mead simplex search from a method-of-moments warm start plus
//! random restarts. The covariance of the estimates is the inverse observed
//! information, with the Hessian taken by central finite differences.
//! Uncertainty for derived quantities (notably the utilisation
//! distribution) comes from normal parameter draws around the optimum.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dynamics::{MovementParams, TimeVaryingSpec};
use crate::error::{Error, Result};
use crate::field::{StationaryModel, UdRaster};
use crate::filter::{loglik_prepared, loglik_prepared_tv, FilterData, FilterInit};
use crate::optim::{NelderMead, NmOutcome};
use crate::raster::{GridSpec, RasterGrid};
use crate::track::Track;

/// Whether movement parameters are constant or log-linear in track
/// covariates.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum FitMode {
    Constant,
    TimeVarying { gamma_covariates: Vec<String>, sigma_covariates: Vec<String> },
}

/// Optimizer and initialization settings. All values are recorded in the
/// fit output for auditability.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FitOptions {
    pub mode: FitMode,
    pub init: FilterInit,
    /// Random restarts after the warm start.
    pub n_restarts: usize,
    /// Standard deviation of restart perturbations in unconstrained space.
    pub restart_scale: f64,
    pub optimizer: NelderMead,
    /// Seed for restart perturbations.
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            mode: FitMode::Constant,
            init: FilterInit::StationaryVelocity,
            n_restarts: 3,
            restart_scale: 0.5,
            optimizer: NelderMead::default(),
            seed: 0,
        }
    }
}

/// Layout of the unconstrained parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum ParamLayout {
    /// `(log gamma, log sigma, beta_1, ..., beta_K)`.
    Constant { n_fields: usize },
    /// `(alpha_gamma, alpha_sigma, beta)`, intercepts first in each block.
    TimeVarying { n_gamma: usize, n_sigma: usize, n_fields: usize },
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        match *self {
            ParamLayout::Constant { n_fields } => 2 + n_fields,
            ParamLayout::TimeVarying { n_gamma, n_sigma, n_fields } => n_gamma + n_sigma + n_fields,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> Vec<String> {
        match *self {
            ParamLayout::Constant { n_fields } => {
                let mut v = vec!["log_gamma".to_string(), "log_sigma".to_string()];
                v.extend((1..=n_fields).map(|k| format!("beta{k}")));
                v
            }
            ParamLayout::TimeVarying { n_gamma, n_sigma, n_fields } => {
                let mut v: Vec<String> = (0..n_gamma).map(|k| format!("alpha_gamma{k}")).collect();
                v.extend((0..n_sigma).map(|k| format!("alpha_sigma{k}")));
                v.extend((1..=n_fields).map(|k| format!("beta{k}")));
                v
            }
        }
    }

    fn beta_offset(&self) -> usize {
        match *self {
            ParamLayout::Constant { .. } => 2,
            ParamLayout::TimeVarying { n_gamma, n_sigma, .. } => n_gamma + n_sigma,
        }
    }
}

/// Unconstrained parameter vector with its layout.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParamVector {
    pub theta: Vec<f64>,
    pub layout: ParamLayout,
}

impl ParamVector {
    pub fn new(theta: Vec<f64>, layout: ParamLayout) -> Result<Self> {
        if theta.len() != layout.len() {
            return Err(Error::invalid(format!(
                "parameter vector length {} does not match layout length {}",
                theta.len(),
                layout.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite parameter"));
        }
        Ok(ParamVector { theta, layout })
    }

    /// Movement parameters in constant mode.
    pub fn movement_params(&self) -> Result<MovementParams> {
        match self.layout {
            ParamLayout::Constant { .. } => {
                MovementParams::new(self.theta[0].exp(), self.theta[1].exp())
            }
            ParamLayout::TimeVarying { .. } => {
                Err(Error::invalid("time-varying fit has no single movement parameter pair"))
            }
        }
    }

    pub fn beta(&self) -> &[f64] {
        &self.theta[self.layout.beta_offset()..]
    }

    /// `(alpha_gamma, alpha_sigma)` blocks in time-varying mode.
    pub fn tv_alphas(&self) -> Option<(&[f64], &[f64])> {
        match self.layout {
            ParamLayout::TimeVarying { n_gamma, n_sigma, .. } => Some((
                &self.theta[..n_gamma],
                &self.theta[n_gamma..n_gamma + n_sigma],
            )),
            ParamLayout::Constant { .. } => None,
        }
    }
}

/// Point estimates, covariance, and optimization metadata.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_hat: ParamVector,
    /// Inverse observed information (negative-Hessian inverse) of the
    /// unconstrained parameters. `None` when the observed information is
    /// not positive definite (flat direction at the optimum); point
    /// estimates are still valid, standard errors are not available.
    pub covariance: Option<DMatrix<f64>>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub function_evals: usize,
    pub options: FitOptions,
}

impl FitResult {
    pub fn movement_params(&self) -> Result<MovementParams> {
        self.theta_hat.movement_params()
    }

    pub fn beta(&self) -> &[f64] {
        self.theta_hat.beta()
    }

    /// Standard errors of the unconstrained parameters, when the observed
    /// information was invertible.
    pub fn standard_errors(&self) -> Option<Vec<f64>> {
        let cov = self.covariance.as_ref()?;
        Some(cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect())
    }

    /// JSON document with named estimates, standard errors, the covariance
    /// matrix, and the exact configuration used.
    pub fn to_json(&self) -> serde_json::Value {
        let names = self.theta_hat.layout.names();
        let n = self.theta_hat.theta.len();
        let ses = self.standard_errors();
        let cov = self.covariance.as_ref().map(|c| {
            (0..n).map(|i| (0..n).map(|j| c[(i, j)]).collect()).collect::<Vec<Vec<f64>>>()
        });
        let mut estimates = serde_json::Map::new();
        for (name, value) in names.iter().zip(&self.theta_hat.theta) {
            estimates.insert(name.clone(), (*value).into());
        }
        if let Ok(p) = self.movement_params() {
            estimates.insert("gamma".into(), p.gamma.into());
            estimates.insert("sigma".into(), p.sigma.into());
        }
        serde_json::json!({
            "estimates": estimates,
            "theta": self.theta_hat.theta,
            "theta_names": names,
            "standard_errors": ses,
            "covariance": cov,
            "loglik": self.loglik,
            "converged": self.converged,
            "iterations": self.iterations,
            "function_evals": self.function_evals,
            "options": self.options,
        })
    }
}

/// Raster of coefficients of variation `SE(pi_hat(x)) / pi_hat(x)`.
#[derive(Debug, Clone)]
pub struct CvRaster {
    pub grid: RasterGrid,
}

struct Objective {
    data: Vec<FilterData>,
    resolved: Vec<Option<crate::dynamics::ResolvedTvSpec>>,
    layout: ParamLayout,
    init: FilterInit,
}

impl Objective {
    /// Negative total log-likelihood; non-finite or failed evaluations map
    /// to +infinity so the simplex retreats.
    fn value(&self, theta: &[f64]) -> f64 {
        let per_track = |pair: (&FilterData, &Option<crate::dynamics::ResolvedTvSpec>)| -> f64 {
            let (data, resolved) = pair;
            let beta = &theta[self.layout.beta_offset()..];
            let ll = match self.layout {
                ParamLayout::Constant { .. } => {
                    let params = match MovementParams::new(theta[0].exp(), theta[1].exp()) {
                        Ok(p) => p,
                        Err(_) => return f64::INFINITY,
                    };
                    loglik_prepared(data, params, beta, self.init)
                }
                ParamLayout::TimeVarying { n_gamma, n_sigma, .. } => loglik_prepared_tv(
                    data,
                    resolved.as_ref().expect("resolved in prepare"),
                    &theta[..n_gamma],
                    &theta[n_gamma..n_gamma + n_sigma],
                    beta,
                    self.init,
                ),
            };
            match ll {
                Ok(v) if v.is_finite() => -v,
                _ => f64::INFINITY,
            }
        };
        if theta.iter().any(|v| !v.is_finite() || v.abs() > 600.0) {
            return f64::INFINITY;
        }
        let values: Vec<f64> = if self.data.len() > 1 {
            self.data.par_iter().zip(self.resolved.par_iter()).map(per_track).collect()
        } else {
            self.data.iter().zip(self.resolved.iter()).map(per_track).collect()
        };
        values.into_iter().sum()
    }

    fn loglik(&self, theta: &[f64]) -> f64 {
        -self.value(theta)
    }
}

/// Method-of-moments starting values from empirical step velocities.
///
/// `gamma` from the lag-1 velocity autocorrelation (`-log(r1)/dt`, clipped
/// to `[1e-2, 1e2]`), `sigma` from the mean empirical speed divided by
/// `sqrt(pi/2)`.
pub fn warm_start(tracks: &[Track]) -> (f64, f64) {
    let mut dot_lag = 0.0;
    let mut dot_self = 0.0;
    let mut speed_sum = 0.0;
    let mut n_speed = 0usize;
    let mut dt_sum = 0.0;
    let mut n_dt = 0usize;
    for track in tracks {
        let d = track.dim();
        let m = track.len() - 1;
        let vel = |i: usize| -> Vec<f64> {
            let dt = track.dt(i);
            (0..d).map(|j| (track.position(i + 1)[j] - track.position(i)[j]) / dt).collect()
        };
        let mut prev: Option<Vec<f64>> = None;
        for i in 0..m {
            let v = vel(i);
            speed_sum += v.iter().map(|x| x * x).sum::<f64>().sqrt();
            n_speed += 1;
            dt_sum += track.dt(i);
            n_dt += 1;
            if let Some(p) = prev {
                dot_lag += p.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
                dot_self += p.iter().map(|a| a * a).sum::<f64>();
            }
            prev = Some(v);
        }
    }
    let dt_mean = if n_dt > 0 { dt_sum / n_dt as f64 } else { 1.0 };
    let r1 = if dot_self > 0.0 { (dot_lag / dot_self).clamp(1e-6, 0.999_999) } else { 0.5 };
    let gamma0 = (-r1.ln() / dt_mean).clamp(1e-2, 1e2);
    let mean_speed = if n_speed > 0 { speed_sum / n_speed as f64 } else { 1.0 };
    let sigma0 = (mean_speed / (std::f64::consts::PI / 2.0).sqrt()).max(1e-6);
    (gamma0, sigma0)
}

/// Maximize the summed Kalman log-likelihood over all tracks.
///
/// The model supplies the covariate fields; its coefficients are ignored
/// and estimated. Returns the best optimum over the warm start plus
/// `n_restarts` perturbed starts; `converged = false` flags a best run that
/// hit the iteration cap instead of the tolerances.
pub fn fit(tracks: &[Track], model: &StationaryModel, options: &FitOptions) -> Result<FitResult> {
    if tracks.is_empty() {
        return Err(Error::invalid("need at least one track"));
    }
    for (idx, track) in tracks.iter().enumerate() {
        if track.len() < 3 {
            return Err(Error::invalid(format!(
                "track {idx} has {} observations, need at least 3",
                track.len()
            )));
        }
    }
    let layout = match &options.mode {
        FitMode::Constant => ParamLayout::Constant { n_fields: model.n_fields() },
        FitMode::TimeVarying { gamma_covariates, sigma_covariates } => ParamLayout::TimeVarying {
            n_gamma: 1 + gamma_covariates.len(),
            n_sigma: 1 + sigma_covariates.len(),
            n_fields: model.n_fields(),
        },
    };

    let mut data = Vec::with_capacity(tracks.len());
    let mut resolved = Vec::with_capacity(tracks.len());
    for (idx, track) in tracks.iter().enumerate() {
        data.push(
            FilterData::prepare(model, track)
                .map_err(|e| Error::domain(format!("track {idx}: {e}")))?,
        );
        resolved.push(match &options.mode {
            FitMode::Constant => None,
            FitMode::TimeVarying { gamma_covariates, sigma_covariates } => {
                let spec = TimeVaryingSpec {
                    gamma_covariates: gamma_covariates.clone(),
                    sigma_covariates: sigma_covariates.clone(),
                    alpha_gamma: vec![0.0; 1 + gamma_covariates.len()],
                    alpha_sigma: vec![0.0; 1 + sigma_covariates.len()],
                };
                Some(spec.resolve(track.covariates()).map_err(|e| {
                    Error::invalid(format!("track {idx}: {e}"))
                })?)
            }
        });
    }
    let objective = Objective { data, resolved, layout, init: options.init };

    let (gamma0, sigma0) = warm_start(tracks);
    let mut theta0 = vec![0.0; layout.len()];
    match layout {
        ParamLayout::Constant { .. } => {
            theta0[0] = gamma0.ln();
            theta0[1] = sigma0.ln();
        }
        ParamLayout::TimeVarying { n_gamma, .. } => {
            theta0[0] = gamma0.ln();
            theta0[n_gamma] = sigma0.ln();
        }
    }

    let mut best: Option<NmOutcome> = None;
    let mut total_iters = 0usize;
    let mut total_evals = 0usize;
    for run in 0..=options.n_restarts {
        let start: Vec<f64> = if run == 0 {
            theta0.clone()
        } else {
            let mut rng = crate::rng::stream(options.seed, run as u64);
            theta0
                .iter()
                .map(|t| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    t + options.restart_scale * e
                })
                .collect()
        };
        let mut f = |x: &[f64]| objective.value(x);
        let out = options.optimizer.minimize(&mut f, &start);
        total_iters += out.iterations;
        total_evals += out.evals;
        if best.as_ref().is_none_or(|b| out.value < b.value) {
            best = Some(out);
        }
    }
    let best = best.expect("at least one run");
    if !best.value.is_finite() {
        return Err(Error::NonConvergence(
            "likelihood is not finite anywhere the optimizer searched".into(),
        ));
    }

    let theta_hat = ParamVector::new(best.x.clone(), layout)?;
    // A singular observed information (flat ridge, common at very coarse
    // observation intervals) invalidates standard errors but not the point
    // estimates.
    let covariance = hessian_covariance(|t| objective.loglik(t), &best.x).ok();
    Ok(FitResult {
        theta_hat,
        covariance,
        loglik: -best.value,
        converged: best.converged,
        iterations: total_iters,
        function_evals: total_evals,
        options: options.clone(),
    })
}

/// Inverse of the negative Hessian of `loglik` at `theta`, the asymptotic
/// covariance of the maximum-likelihood estimates.
///
/// The Hessian is taken by central finite differences with per-coordinate
/// relative step `1e-4`. A Hessian that is not negative definite is an
/// error: the optimum is flat in some direction or not converged.
pub fn hessian_covariance(
    mut loglik: impl FnMut(&[f64]) -> f64,
    theta: &[f64],
) -> Result<DMatrix<f64>> {
    let n = theta.len();
    let h: Vec<f64> = theta.iter().map(|t| 1e-4 * t.abs().max(1.0)).collect();
    let f0 = loglik(theta);
    if !f0.is_finite() {
        return Err(Error::numerical("log-likelihood not finite at the optimum"));
    }
    let mut at = |shifts: &[(usize, f64)]| -> Result<f64> {
        let mut x = theta.to_vec();
        for &(i, s) in shifts {
            x[i] += s;
        }
        let v = loglik(&x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::numerical("log-likelihood not finite near the optimum"))
        }
    };
    let mut hess = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let fp = at(&[(i, h[i])])?;
        let fm = at(&[(i, -h[i])])?;
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in i + 1..n {
            let fpp = at(&[(i, h[i]), (j, h[j])])?;
            let fpm = at(&[(i, h[i]), (j, -h[j])])?;
            let fmp = at(&[(i, -h[i]), (j, h[j])])?;
            let fmm = at(&[(i, -h[i]), (j, -h[j])])?;
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    let neg = -hess;
    let chol = neg.cholesky().ok_or_else(|| {
        Error::NonConvergence(
            "observed information is not positive definite; the optimum may be flat \
             or the optimizer did not converge"
                .into(),
        )
    })?;
    Ok(chol.inverse())
}

/// `n` multivariate-normal parameter draws centred on the estimates with
/// the fitted covariance.
pub fn sample_params(
    result: &FitResult,
    n: usize,
    rng: &mut impl rand::Rng,
) -> Result<Vec<ParamVector>> {
    let p = result.theta_hat.theta.len();
    let cov = result
        .covariance
        .as_ref()
        .ok_or_else(|| Error::numerical("fit has no valid covariance to sample from"))?;
    // Factor the covariance by symmetric eigendecomposition so that
    // singular (including all-zero) covariances are handled: draws then
    // simply have no spread along the null directions.
    let eig = cov.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    if eig.eigenvalues.iter().any(|&v| v < -1e-8 * max_eig.max(1e-300)) {
        return Err(Error::numerical("parameter covariance is not positive semidefinite"));
    }
    let mut l = eig.eigenvectors;
    for (j, ev) in eig.eigenvalues.iter().enumerate() {
        let s = ev.max(0.0).sqrt();
        for i in 0..p {
            l[(i, j)] *= s;
        }
    }
    let mut draws = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..p).map(|_| StandardNormal.sample(rng)).collect();
        let theta: Vec<f64> = (0..p)
            .map(|i| {
                result.theta_hat.theta[i] + (0..p).map(|j| l[(i, j)] * z[j]).sum::<f64>()
            })
            .collect();
        draws.push(ParamVector { theta, layout: result.theta_hat.layout });
    }
    Ok(draws)
}

/// Pointwise mean and coefficient of variation of the normalized
/// utilisation distribution across `n_draws` parameter draws.
///
/// Each draw's coefficients rebuild a normalized UD on the grid; the CV at
/// a cell is the across-draw standard deviation over the mean.
pub fn ud_with_uncertainty(
    result: &FitResult,
    model: &StationaryModel,
    grid: GridSpec,
    n_draws: usize,
    rng: &mut impl rand::Rng,
) -> Result<(UdRaster, CvRaster)> {
    if n_draws < 100 {
        return Err(Error::invalid(format!(
            "need at least 100 draws for stable uncertainty maps, got {n_draws}"
        )));
    }
    let draws = sample_params(result, n_draws, rng)?;
    let cells = grid.n_cells();
    // Chunked parallel map with an ordered sequential merge keeps the result
    // independent of scheduling. Per-cell Welford accumulators merge exactly,
    // so identical draws yield a CV of exactly zero.
    struct Acc {
        n: f64,
        mean: Vec<f64>,
        m2: Vec<f64>,
    }
    let partials: Vec<Result<Acc>> = draws
        .par_chunks(64)
        .map(|chunk| {
            let mut acc = Acc { n: 0.0, mean: vec![0.0; cells], m2: vec![0.0; cells] };
            for draw in chunk {
                let ud = model.with_beta(draw.beta().to_vec())?.normalize_ud(grid)?;
                acc.n += 1.0;
                for (i, v) in ud.values().iter().enumerate() {
                    let delta = v - acc.mean[i];
                    acc.mean[i] += delta / acc.n;
                    acc.m2[i] += delta * (v - acc.mean[i]);
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = Acc { n: 0.0, mean: vec![0.0; cells], m2: vec![0.0; cells] };
    for partial in partials {
        let part = partial?;
        let n = total.n + part.n;
        for i in 0..cells {
            let delta = part.mean[i] - total.mean[i];
            total.mean[i] += delta * part.n / n;
            total.m2[i] += part.m2[i] + delta * delta * total.n * part.n / n;
        }
        total.n = n;
    }
    let mean = total.mean;
    let mut cv = vec![0.0; cells];
    for i in 0..cells {
        let var = (total.m2[i] / (total.n - 1.0)).max(0.0);
        cv[i] = if mean[i] > 0.0 { var.sqrt() / mean[i] } else { 0.0 };
    }
    Ok((
        UdRaster { grid: RasterGrid::new(grid, mean)? },
        CvRaster { grid: RasterGrid::new(grid, cv)? },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::regular_times;
    use approx::assert_relative_eq;

    #[test]
    fn hessian_covariance_exact_for_quadratic() {
        // loglik = -0.5 theta' A theta has covariance A^{-1}.
        let a = [[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let ll = |t: &[f64]| {
            let mut acc = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    acc += t[i] * a[i][j] * t[j];
                }
            }
            -0.5 * acc
        };
        let cov = hessian_covariance(ll, &[0.0, 0.0, 0.0]).unwrap();
        let a_inv = DMatrix::from_row_slice(3, 3, &a.concat()).try_inverse().unwrap();
        for i in 0..3 {
            assert!(cov[(i, i)] > 0.0);
            for j in 0..3 {
                assert!((cov[(i, j)] - a_inv[(i, j)]).abs() < 1e-6);
                assert_relative_eq!(cov[(i, j)], cov[(j, i)], max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn hessian_rejects_indefinite_surface() {
        // A saddle: not negative definite, so no covariance exists.
        let ll = |t: &[f64]| -t[0] * t[0] + t[1] * t[1];
        let err = hessian_covariance(ll, &[0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::NonConvergence(_)));
    }

    fn dummy_result(theta: Vec<f64>, covariance: DMatrix<f64>) -> FitResult {
        let layout = ParamLayout::Constant { n_fields: theta.len() - 2 };
        FitResult {
            theta_hat: ParamVector::new(theta, layout).unwrap(),
            covariance: Some(covariance),
            loglik: 0.0,
            converged: true,
            iterations: 0,
            function_evals: 0,
            options: FitOptions::default(),
        }
    }

    #[test]
    fn sample_params_zero_covariance_is_degenerate() {
        let result = dummy_result(vec![0.1, -0.2, 3.0], DMatrix::zeros(3, 3));
        let mut rng = crate::rng::master(51);
        for draw in sample_params(&result, 20, &mut rng).unwrap() {
            assert_eq!(draw.theta, result.theta_hat.theta);
        }
    }

    #[test]
    fn sample_params_matches_identity_covariance() {
        let result = dummy_result(vec![0.0, 0.0, 0.0], DMatrix::identity(3, 3));
        let n = 100_000;
        let mut rng = crate::rng::master(52);
        let draws = sample_params(&result, n, &mut rng).unwrap();
        for i in 0..3 {
            for j in i..3 {
                let mut acc = 0.0;
                for d in &draws {
                    acc += d.theta[i] * d.theta[j];
                }
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((acc / n as f64 - want).abs() < 0.05, "cov[{i}{j}]");
            }
        }
        // Seeded reproducibility.
        let again = sample_params(&result, 5, &mut crate::rng::stream(9, 3)).unwrap();
        let again2 = sample_params(&result, 5, &mut crate::rng::stream(9, 3)).unwrap();
        assert_eq!(again, again2);
    }

    #[test]
    fn fit_recovers_free_movement_parameters() {
        // No habitat fields: the integrated OU model.
        let model = StationaryModel::free(2);
        let p = MovementParams { gamma: 1.5, sigma: 0.8 };
        let times = regular_times(0.0, 0.05, 4000);
        let mut rng = crate::rng::master(53);
        let track =
            crate::dynamics::simulate(p, &model, &[0.0, 0.0, 0.0, 0.0], &times, &mut rng)
                .unwrap();
        let result = fit(&[track], &model, &FitOptions::default()).unwrap();
        assert!(result.converged);
        let est = result.movement_params().unwrap();
        assert!((est.gamma / p.gamma - 1.0).abs() < 0.15, "gamma {}", est.gamma);
        assert!((est.sigma / p.sigma - 1.0).abs() < 0.05, "sigma {}", est.sigma);
        // The optimum should dominate the truth.
        let ll_true = crate::filter::kalman_loglik(
            p,
            &model,
            &crate::dynamics::simulate(p, &model, &[0.0; 4], &times, &mut crate::rng::master(53))
                .unwrap(),
            FilterInit::StationaryVelocity,
        )
        .unwrap();
        assert!(result.loglik >= ll_true - 1e-6);
    }

    #[test]
    fn fit_requires_three_observations() {
        let model = StationaryModel::free(2);
        let track = Track::new(vec![0.0, 1.0], vec![0.0, 0.0, 1.0, 1.0], 2).unwrap();
        let err = fit(&[track], &model, &FitOptions::default()).unwrap_err();
        assert!(err.to_string().contains("at least 3"));
        assert!(fit(&[], &model, &FitOptions::default()).is_err());
    }

    #[test]
    fn ud_uncertainty_zero_covariance_gives_zero_cv() {
        let spec = GridSpec::square(0.0, 1.0, 15).unwrap();
        let model = StationaryModel::new(
            vec![crate::field::CovariateField::QuadraticDistance { center: vec![0.5, 0.5] }],
            vec![-8.0],
        )
        .unwrap();
        let result = dummy_result(vec![0.0, 0.0, -8.0], DMatrix::zeros(3, 3));
        let mut rng = crate::rng::master(54);
        let (mean, cv) = ud_with_uncertainty(&result, &model, spec, 200, &mut rng).unwrap();
        assert!(cv.grid.values().iter().all(|v| *v == 0.0));
        let total: f64 = mean.values().iter().sum::<f64>() * spec.cell_area();
        assert_relative_eq!(total, 1.0, max_relative = 1e-9);

        let err = ud_with_uncertainty(&result, &model, spec, 99, &mut rng).unwrap_err();
        assert!(err.to_string().contains("100"));
    }

    #[test]
    fn ud_uncertainty_mean_sums_to_one_with_noise() {
        let spec = GridSpec::square(0.0, 1.0, 12).unwrap();
        let model = StationaryModel::new(
            vec![crate::field::CovariateField::QuadraticDistance { center: vec![0.5, 0.5] }],
            vec![-8.0],
        )
        .unwrap();
        let mut cov = DMatrix::zeros(3, 3);
        cov[(2, 2)] = 1.0;
        let result = dummy_result(vec![0.0, 0.0, -8.0], cov);
        let mut rng = crate::rng::master(55);
        let (mean, cv) = ud_with_uncertainty(&result, &model, spec, 300, &mut rng).unwrap();
        let total: f64 = mean.values().iter().sum::<f64>() * spec.cell_area();
        assert_relative_eq!(total, 1.0, max_relative = 1e-6);
        assert!(cv.grid.values().iter().any(|v| *v > 0.0));
        assert!(cv.grid.values().iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn warm_start_reasonable_on_synthetic_track() {
        let model = StationaryModel::free(2);
        let p = MovementParams { gamma: 1.0, sigma: 1.0 };
        let times = regular_times(0.0, 0.1, 2000);
        let mut rng = crate::rng::master(56);
        let track = crate::dynamics::simulate(p, &model, &[0.0; 4], &times, &mut rng).unwrap();
        let (g0, s0) = warm_start(&[track]);
        assert!(g0 > 0.3 && g0 < 3.0, "gamma0 {g0}");
        assert!(s0 > 0.5 && s0 < 2.0, "sigma0 {s0}");
    }
}
