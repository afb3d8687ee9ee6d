//! Discretised underdamped Langevin dynamics.
//!
//! The model couples position and velocity per spatial dimension:
//!
//! ```text
//! dX = V dt
//! dV = -gamma V dt + sigma^2 grad log pi(X) dt + sqrt(2 gamma) sigma dW
//! ```
//!
//! Holding the gradient fixed over a step of length `dt` makes the
//! transition Gaussian with closed-form mean and covariance; this module
//! provides those moments, exact-step simulation, thinning, scalar movement
//! summaries, and the overdamped (first-order) limit.

use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::field::StationaryModel;
use crate::track::{Track, TrackCovariates};

/// Friction `gamma` (1/time) and speed scale `sigma` (distance/time).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MovementParams {
    pub gamma: f64,
    pub sigma: f64,
}

impl MovementParams {
    pub fn new(gamma: f64, sigma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !(sigma > 0.0) || !gamma.is_finite() || !sigma.is_finite() {
            return Err(Error::invalid(format!(
                "movement parameters must be finite and positive: gamma={gamma}, sigma={sigma}"
            )));
        }
        Ok(MovementParams { gamma, sigma })
    }

    /// Mean two-dimensional speed, `sqrt(pi/2) * sigma`.
    pub fn mean_speed(&self) -> f64 {
        (std::f64::consts::PI / 2.0).sqrt() * self.sigma
    }

    /// Time for the velocity autocorrelation to decay by a factor e: `1/gamma`.
    pub fn relaxation_time(&self) -> f64 {
        1.0 / self.gamma
    }

    /// Time scale over which velocity autocorrelation decays by ~95%: `3/gamma`.
    pub fn decorrelation_time_95(&self) -> f64 {
        3.0 / self.gamma
    }

    /// Diffusion parameter `zeta = sigma / sqrt(gamma)` of the overdamped limit.
    pub fn overdamped_zeta(&self) -> f64 {
        self.sigma / self.gamma.sqrt()
    }
}

/// Closed-form per-step quantities for one `(gamma, sigma, dt)`.
///
/// These are shared by the transition moments, the simulator, and the
/// state-space filter blocks:
///
/// ```text
/// T = [[1, pos_vel], [0, exp_gd]]      B = [b_pos, b_vel]
/// Q = [[var_pos, cov_pos_vel], [cov_pos_vel, var_vel]]
/// ```
#[derive(Debug, Clone, Copy)]
pub struct StepCoeffs {
    pub dt: f64,
    /// `exp(-gamma dt)`: velocity persistence.
    pub exp_gd: f64,
    /// `(1 - exp(-gamma dt)) / gamma`: position response to initial velocity.
    pub pos_vel: f64,
    /// `(sigma^2/gamma)(dt - pos_vel)`: position response to the gradient.
    pub b_pos: f64,
    /// `sigma^2 * pos_vel`: velocity response to the gradient.
    pub b_vel: f64,
    pub var_pos: f64,
    pub cov_pos_vel: f64,
    pub var_vel: f64,
}

impl StepCoeffs {
    pub fn new(params: MovementParams, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        let MovementParams { gamma, sigma } = params;
        let u = gamma * dt;
        let s2 = sigma * sigma;
        let em1 = (-u).exp_m1();
        let em2 = (-2.0 * u).exp_m1();
        let pos_vel = -em1 / gamma;
        // 2u - exp(-2u) + 4 exp(-u) - 3, stably: the closed form cancels to
        // O(u^3), so switch to its series for small u.
        let scaled_var_pos = if u < 0.02 {
            u.powi(3)
                * (2.0 / 3.0
                    + u * (-0.5 + u * (7.0 / 30.0 + u * (-1.0 / 12.0 + u * (31.0 / 1260.0 - u / 160.0)))))
        } else {
            2.0 * u - em2 + 4.0 * em1
        };
        Ok(StepCoeffs {
            dt,
            exp_gd: 1.0 + em1,
            pos_vel,
            b_pos: s2 / gamma * (dt - pos_vel),
            b_vel: s2 * pos_vel,
            var_pos: s2 / (gamma * gamma) * scaled_var_pos,
            cov_pos_vel: s2 * gamma * pos_vel * pos_vel,
            var_vel: -s2 * em2,
        })
    }

    /// Lower Cholesky factor of the 2x2 covariance block.
    fn chol(&self) -> Result<(f64, f64, f64)> {
        if self.var_pos < 0.0 || self.var_vel < 0.0 {
            return Err(Error::numerical("negative variance in transition covariance"));
        }
        if self.var_pos == 0.0 {
            return Ok((0.0, 0.0, self.var_vel.sqrt()));
        }
        let l11 = self.var_pos.sqrt();
        let l21 = self.cov_pos_vel / l11;
        let d = self.var_vel - l21 * l21;
        if d < -1e-12 * self.var_vel {
            return Err(Error::numerical("transition covariance not positive semidefinite"));
        }
        Ok((l11, l21, d.max(0.0).sqrt()))
    }
}

/// Mean and shared per-dimension covariance block of one transition.
///
/// `mu` is ordered `(x_1, v_1, ..., x_d, v_d)`; the full covariance is
/// `I_d (kronecker) Q` with `Q = [[var_pos, cov], [cov, var_vel]]`.
#[derive(Debug, Clone)]
pub struct TransitionMoments {
    pub mu: Vec<f64>,
    pub q_xx: f64,
    pub q_xv: f64,
    pub q_vv: f64,
    coeffs: StepCoeffs,
}

impl TransitionMoments {
    pub fn dim(&self) -> usize {
        self.mu.len() / 2
    }

    pub fn q_matrix(&self) -> [[f64; 2]; 2] {
        [[self.q_xx, self.q_xv], [self.q_xv, self.q_vv]]
    }
}

/// Moments of the Gaussian transition from state `z = (x_1, v_1, ..., x_d,
/// v_d)` over an interval `dt`, with the gradient frozen at the interval
/// start.
pub fn transition_moments(
    params: MovementParams,
    model: &StationaryModel,
    z: &[f64],
    dt: f64,
) -> Result<TransitionMoments> {
    let d = model.dim();
    if z.len() != 2 * d {
        return Err(Error::invalid(format!(
            "state has length {}, expected {} for dimension {d}",
            z.len(),
            2 * d
        )));
    }
    let pos: Vec<f64> = (0..d).map(|j| z[2 * j]).collect();
    let grad = model.grad_log_pi(&pos)?;
    moments_with_gradient(params, z, &grad, dt)
}

/// As [`transition_moments`] with an explicit (frozen) gradient vector.
pub fn moments_with_gradient(
    params: MovementParams,
    z: &[f64],
    grad: &[f64],
    dt: f64,
) -> Result<TransitionMoments> {
    let c = StepCoeffs::new(params, dt)?;
    let d = grad.len();
    let mut mu = vec![0.0; 2 * d];
    for j in 0..d {
        let x = z[2 * j];
        let v = z[2 * j + 1];
        mu[2 * j] = x + c.pos_vel * v + c.b_pos * grad[j];
        mu[2 * j + 1] = c.exp_gd * v + c.b_vel * grad[j];
    }
    Ok(TransitionMoments {
        mu,
        q_xx: c.var_pos,
        q_xv: c.cov_pos_vel,
        q_vv: c.var_vel,
        coeffs: c,
    })
}

/// Draw the next state from `N(mu, I_d (kronecker) Q)`.
pub fn sample_transition(moments: &TransitionMoments, rng: &mut impl rand::Rng) -> Result<Vec<f64>> {
    let (l11, l21, l22) = moments.coeffs.chol()?;
    let mut z = moments.mu.clone();
    for j in 0..moments.dim() {
        let e1: f64 = rng.sample(StandardNormal);
        let e2: f64 = rng.sample(StandardNormal);
        z[2 * j] += l11 * e1;
        z[2 * j + 1] += l21 * e1 + l22 * e2;
    }
    Ok(z)
}

/// Simulate a trajectory at the given times with constant parameters.
///
/// `z0` is the initial state `(x_1, v_1, ..., x_d, v_d)`. The returned
/// track carries velocities. A walk that leaves the raster domain is a hard
/// error naming the step index.
pub fn simulate(
    params: MovementParams,
    model: &StationaryModel,
    z0: &[f64],
    times: &[f64],
    rng: &mut impl rand::Rng,
) -> Result<Track> {
    simulate_with(|_, _| Ok(params), model, z0, times, rng)
}

/// Simulate with movement parameters that may vary over time and position.
///
/// `params_at(t, x)` is evaluated at each interval start, matching the
/// frozen-gradient discretisation. The stationary distribution is preserved
/// when `sigma` depends on neither position nor velocity, and `gamma` not
/// on velocity.
pub fn simulate_with(
    mut params_at: impl FnMut(f64, &[f64]) -> Result<MovementParams>,
    model: &StationaryModel,
    z0: &[f64],
    times: &[f64],
    rng: &mut impl rand::Rng,
) -> Result<Track> {
    let d = model.dim();
    if z0.len() != 2 * d {
        return Err(Error::invalid(format!(
            "initial state has length {}, expected {}",
            z0.len(),
            2 * d
        )));
    }
    if times.len() < 2 {
        return Err(Error::invalid("need at least two times to simulate"));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("simulation times must be strictly increasing"));
    }
    let n = times.len();
    let mut positions = Vec::with_capacity(n * d);
    let mut velocities = Vec::with_capacity(n * d);
    let mut z = z0.to_vec();
    let mut pos = vec![0.0; d];
    let mut grad = vec![0.0; d];
    for j in 0..d {
        positions.push(z[2 * j]);
        velocities.push(z[2 * j + 1]);
    }
    for i in 0..n - 1 {
        for j in 0..d {
            pos[j] = z[2 * j];
        }
        if !model.in_domain(&pos) {
            return Err(Error::domain(format!(
                "simulated walk left the raster domain at step {i} (t={})",
                times[i]
            )));
        }
        model
            .grad_log_pi_into(&pos, &mut grad)
            .map_err(|e| Error::domain(format!("step {i}: {e}")))?;
        let params = params_at(times[i], &pos)?;
        let moments = moments_with_gradient(params, &z, &grad, times[i + 1] - times[i])?;
        z = sample_transition(&moments, rng)?;
        for j in 0..d {
            positions.push(z[2 * j]);
            velocities.push(z[2 * j + 1]);
        }
    }
    for j in 0..d {
        pos[j] = z[2 * j];
    }
    if !model.in_domain(&pos) {
        return Err(Error::domain(format!(
            "simulated walk left the raster domain at step {} (t={})",
            n - 1,
            times[n - 1]
        )));
    }
    Track::new(times.to_vec(), positions, d)?.with_velocities(velocities)
}

/// Regular time grid `t0, t0 + dt, ..., t0 + n_steps * dt`.
pub fn regular_times(t0: f64, dt: f64, n_steps: usize) -> Vec<f64> {
    (0..=n_steps).map(|i| t0 + i as f64 * dt).collect()
}

/// Euler-Maruyama moments of the overdamped limit
/// `dX = zeta^2 grad log pi dt + sqrt(2) zeta dW`.
///
/// Returns the mean vector and the per-axis variance `2 zeta^2 dt`.
pub fn overdamped_moments(
    zeta: f64,
    model: &StationaryModel,
    x: &[f64],
    dt: f64,
) -> Result<(Vec<f64>, f64)> {
    if !(zeta > 0.0) || !zeta.is_finite() {
        return Err(Error::invalid(format!("zeta must be positive, got {zeta}")));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    let grad = model.grad_log_pi(x)?;
    let mean = x.iter().zip(&grad).map(|(xi, gi)| xi + zeta * zeta * gi * dt).collect();
    Ok((mean, 2.0 * zeta * zeta * dt))
}

/// Log-linear time-varying movement parameters:
/// `gamma_t = exp(alpha_gamma . [1, a_t])`, `sigma_t = exp(alpha_sigma . [1, b_t])`,
/// where `a_t`, `b_t` are named covariate subsets of a track's covariate rows.
///
/// `sigma_t` covariates must be functions of time only; `gamma_t` covariates
/// may depend on time and position but not velocity, otherwise the
/// stationary distribution is not preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeVaryingSpec {
    /// Covariate names entering `gamma_t` (after the implicit intercept).
    pub gamma_covariates: Vec<String>,
    /// Covariate names entering `sigma_t` (after the implicit intercept).
    pub sigma_covariates: Vec<String>,
    /// Intercept-first coefficients, length `1 + gamma_covariates.len()`.
    pub alpha_gamma: Vec<f64>,
    /// Intercept-first coefficients, length `1 + sigma_covariates.len()`.
    pub alpha_sigma: Vec<f64>,
}

impl TimeVaryingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_gamma.len() != 1 + self.gamma_covariates.len()
            || self.alpha_sigma.len() != 1 + self.sigma_covariates.len()
        {
            return Err(Error::invalid(
                "time-varying coefficient lengths must be 1 + number of covariates",
            ));
        }
        Ok(())
    }

    pub fn n_coeffs(&self) -> usize {
        self.alpha_gamma.len() + self.alpha_sigma.len()
    }

    /// Resolve covariate names against a track's covariate columns.
    pub fn resolve(&self, covariates: Option<&TrackCovariates>) -> Result<ResolvedTvSpec> {
        self.validate()?;
        let lookup = |name: &String| -> Result<usize> {
            let cov = covariates.ok_or_else(|| {
                Error::invalid(format!("track has no covariates, needed for {name:?}"))
            })?;
            cov.names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::invalid(format!("track covariate {name:?} not found")))
        };
        Ok(ResolvedTvSpec {
            gamma_cols: self.gamma_covariates.iter().map(lookup).collect::<Result<_>>()?,
            sigma_cols: self.sigma_covariates.iter().map(lookup).collect::<Result<_>>()?,
        })
    }
}

/// Column indices of a [`TimeVaryingSpec`] resolved against one track.
#[derive(Debug, Clone)]
pub struct ResolvedTvSpec {
    gamma_cols: Vec<usize>,
    sigma_cols: Vec<usize>,
}

impl ResolvedTvSpec {
    /// Evaluate `(gamma_t, sigma_t)` from a covariate row under the log link.
    pub fn params(
        &self,
        alpha_gamma: &[f64],
        alpha_sigma: &[f64],
        row: &[f64],
    ) -> Result<MovementParams> {
        let lin = |alpha: &[f64], cols: &[usize]| {
            alpha[0] + cols.iter().zip(&alpha[1..]).map(|(&c, a)| a * row[c]).sum::<f64>()
        };
        let lg = lin(alpha_gamma, &self.gamma_cols);
        let ls = lin(alpha_sigma, &self.sigma_cols);
        if !lg.is_finite() || !ls.is_finite() || lg.abs() > 700.0 || ls.abs() > 700.0 {
            return Err(Error::numerical("time-varying linear predictor overflow"));
        }
        MovementParams::new(lg.exp(), ls.exp())
    }
}
