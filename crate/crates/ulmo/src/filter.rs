//! Exact log-likelihood of observed positions via the Kalman filter.
//!
//! Velocities are latent, so the discretised model is evaluated as a linear
//! Gaussian state-space model: the state is `(x_1, v_1, ..., x_d, v_d)`,
//! the observation picks out positions without error, and the gradient
//! input `h_i = grad log pi(x_i)` is known because it is evaluated at the
//! observed positions. The likelihood is conditional on the first position;
//! the velocity prior is zero-mean with configurable variance.
//!
//! Because the process is isotropic and positions are observed exactly, the
//! 2d x 2d covariance recursion collapses to one shared scalar velocity
//! variance plus a 2x2 per-step block, which is what [`kalman_loglik`]
//! implements. [`joint_density_oracle`] computes the same density by dense
//! joint-Gaussian assembly and is kept as an independent cross-check.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{MovementParams, ResolvedTvSpec, StepCoeffs, TimeVaryingSpec};
use crate::error::{Error, Result};
use crate::field::StationaryModel;
use crate::track::Track;

const LN_2PI: f64 = 1.8378770664093453;

/// State-space blocks for one time step (isotropic, per dimension).
///
/// The full matrices are `I_d (kronecker) t`, `I_d (kronecker) b`, and
/// `I_d (kronecker) q`; the observation matrix is `I_d (kronecker) (1 0)`.
#[derive(Debug, Clone, Copy)]
pub struct StateSpaceStep {
    pub t: [[f64; 2]; 2],
    pub b: [f64; 2],
    pub q: [[f64; 2]; 2],
}

/// Transition, input, and noise blocks for `(gamma, sigma)` over `dt`.
pub fn state_matrices(params: MovementParams, dt: f64) -> Result<StateSpaceStep> {
    let c = StepCoeffs::new(params, dt)?;
    Ok(StateSpaceStep {
        t: [[1.0, c.pos_vel], [0.0, c.exp_gd]],
        b: [c.b_pos, c.b_vel],
        q: [[c.var_pos, c.cov_pos_vel], [c.cov_pos_vel, c.var_vel]],
    })
}

/// Initialization of the filter at the first observation.
///
/// The position is conditioned on exactly (zero variance); the velocity
/// prior is zero-mean normal.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum FilterInit {
    /// Velocity prior variance `sigma^2` of the first interval's parameters,
    /// the stationary velocity law.
    StationaryVelocity,
    /// Fixed velocity prior variance (must be positive).
    VelocityVariance(f64),
}

impl Default for FilterInit {
    fn default() -> Self {
        FilterInit::StationaryVelocity
    }
}

impl FilterInit {
    fn variance(self, first_params: MovementParams) -> Result<f64> {
        let v = match self {
            FilterInit::StationaryVelocity => first_params.sigma * first_params.sigma,
            FilterInit::VelocityVariance(v) => v,
        };
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::invalid(format!("velocity prior variance must be > 0, got {v}")));
        }
        Ok(v)
    }
}

/// Per-parameter-evaluation inputs: movement parameters for interval `i`.
enum StepParams<'a> {
    Constant(MovementParams),
    TimeVarying {
        resolved: &'a ResolvedTvSpec,
        alpha_gamma: &'a [f64],
        alpha_sigma: &'a [f64],
    },
}

impl StepParams<'_> {
    fn at(&self, data: &FilterData, i: usize) -> Result<MovementParams> {
        match self {
            StepParams::Constant(p) => Ok(*p),
            StepParams::TimeVarying { resolved, alpha_gamma, alpha_sigma } => {
                let row = data.covariate_row(i)?;
                resolved.params(alpha_gamma, alpha_sigma, row)
            }
        }
    }
}

/// A track prepared for repeated likelihood evaluation.
///
/// Basis-field gradients at the observed positions do not depend on the
/// parameters, so they are computed once; `h_i(beta)` is then a cheap
/// linear combination inside the optimizer loop.
#[derive(Debug, Clone)]
pub struct FilterData {
    dim: usize,
    n: usize,
    n_fields: usize,
    times: Vec<f64>,
    positions: Vec<f64>,
    /// `(n-1) x K x d` gradients of each basis field at `x_i`.
    basis_grads: Vec<f64>,
    /// `n x p` covariate rows for time-varying parameters.
    cov_rows: Option<(usize, Vec<f64>)>,
}

impl FilterData {
    /// Evaluate and cache basis gradients at the observed positions.
    ///
    /// Errors if fewer than two observations or any position lies outside
    /// the model's raster domain, naming the offending index.
    pub fn prepare(model: &StationaryModel, track: &Track) -> Result<Self> {
        let d = model.dim();
        if track.dim() != d {
            return Err(Error::invalid(format!(
                "track dimension {} does not match model dimension {d}",
                track.dim()
            )));
        }
        let n = track.len();
        if n < 2 {
            return Err(Error::invalid("likelihood needs at least 2 observations"));
        }
        let k = model.n_fields();
        let mut basis_grads = vec![0.0; (n - 1) * k * d];
        let mut buf = vec![0.0; d];
        for i in 0..n {
            let x = track.position(i);
            if !model.in_domain(x) {
                return Err(Error::domain(format!(
                    "observation {i} (t={}) at ({}) is outside the raster extent",
                    track.time(i),
                    x.iter().map(f64::to_string).collect::<Vec<_>>().join(", ")
                )));
            }
            // The gradient at the final observation never enters the filter.
            if i + 1 < n {
                for (kk, field) in model.fields().iter().enumerate() {
                    buf.fill(0.0);
                    field
                        .add_gradient(x, 1.0, &mut buf)
                        .map_err(|e| Error::domain(format!("observation {i}: {e}")))?;
                    basis_grads[(i * k + kk) * d..(i * k + kk + 1) * d].copy_from_slice(&buf);
                }
            }
        }
        Ok(FilterData {
            dim: d,
            n,
            n_fields: k,
            times: track.times().to_vec(),
            positions: track.positions().flat_map(|p| p.to_vec()).collect(),
            basis_grads,
            cov_rows: track.covariates().map(|c| (c.names.len(), c.rows.clone())),
        })
    }

    pub fn n_obs(&self) -> usize {
        self.n
    }

    fn dt(&self, i: usize) -> f64 {
        self.times[i + 1] - self.times[i]
    }

    fn position(&self, i: usize, j: usize) -> f64 {
        self.positions[i * self.dim + j]
    }

    fn covariate_row(&self, i: usize) -> Result<&[f64]> {
        let (p, rows) = self
            .cov_rows
            .as_ref()
            .ok_or_else(|| Error::invalid("track has no covariates for time-varying parameters"))?;
        Ok(&rows[i * p..(i + 1) * p])
    }

    /// `h_i[j] = sum_k beta_k * grad_j psi_k(x_i)`.
    fn input(&self, beta: &[f64], i: usize, j: usize) -> f64 {
        let (k, d) = (self.n_fields, self.dim);
        beta.iter()
            .enumerate()
            .map(|(kk, b)| b * self.basis_grads[(i * k + kk) * d + j])
            .sum()
    }

    /// Kalman-filter log-likelihood over this prepared track.
    fn loglik(&self, params: &StepParams, beta: &[f64], init: FilterInit) -> Result<f64> {
        if beta.len() != self.n_fields {
            return Err(Error::invalid(format!(
                "{} coefficients for {} fields",
                beta.len(),
                self.n_fields
            )));
        }
        let d = self.dim;
        let first = params.at(self, 0)?;
        // Position is conditioned exactly, so the posterior state covariance
        // after each update is diag(0, w): one scalar velocity variance
        // shared across dimensions.
        let mut w = init.variance(first)?;
        let mut mv = vec![0.0; d];
        let mut ll = 0.0;
        for i in 0..self.n - 1 {
            let p = params.at(self, i)?;
            let c = StepCoeffs::new(p, self.dt(i))?;
            let pxx = c.pos_vel * c.pos_vel * w + c.var_pos;
            let pxv = c.exp_gd * c.pos_vel * w + c.cov_pos_vel;
            let pvv = c.exp_gd * c.exp_gd * w + c.var_vel;
            let mut s = pxx;
            if !(s > 0.0) {
                // Exact zero can only arise from extreme underflow; nudge by
                // a squared length scale so the density stays finite.
                s += 1e-12 * (p.sigma * c.dt) * (p.sigma * c.dt);
                if !(s > 0.0) {
                    return Err(Error::numerical(format!(
                        "innovation variance not positive at step {i}"
                    )));
                }
            }
            let gain = pxv / s;
            let log_s = s.ln();
            for j in 0..d {
                let h = self.input(beta, i, j);
                let pred_x = self.position(i, j) + c.pos_vel * mv[j] + c.b_pos * h;
                let pred_v = c.exp_gd * mv[j] + c.b_vel * h;
                let nu = self.position(i + 1, j) - pred_x;
                ll += -0.5 * (LN_2PI + log_s + nu * nu / s);
                mv[j] = pred_v + gain * nu;
            }
            w = pvv - pxv * pxv / s;
        }
        if !ll.is_finite() {
            return Err(Error::numerical("non-finite log-likelihood"));
        }
        Ok(ll)
    }
}

/// Log-likelihood `log f(x_2, ..., x_n | x_1, theta)` of a track under
/// constant movement parameters.
pub fn kalman_loglik(
    params: MovementParams,
    model: &StationaryModel,
    track: &Track,
    init: FilterInit,
) -> Result<f64> {
    let data = FilterData::prepare(model, track)?;
    data.loglik(&StepParams::Constant(params), model.beta(), init)
}

/// Log-likelihood with log-linear time-varying movement parameters.
///
/// `gamma_t` and `sigma_t` are evaluated from the track's covariate row at
/// each interval start.
pub fn kalman_loglik_tv(
    spec: &TimeVaryingSpec,
    model: &StationaryModel,
    track: &Track,
    init: FilterInit,
) -> Result<f64> {
    let data = FilterData::prepare(model, track)?;
    let resolved = spec.resolve(track.covariates())?;
    data.loglik(
        &StepParams::TimeVarying {
            resolved: &resolved,
            alpha_gamma: &spec.alpha_gamma,
            alpha_sigma: &spec.alpha_sigma,
        },
        model.beta(),
        init,
    )
}

/// Sum of per-track log-likelihoods for independent tracks.
pub fn kalman_loglik_multi(
    params: MovementParams,
    model: &StationaryModel,
    tracks: &[Track],
    init: FilterInit,
) -> Result<f64> {
    let mut total = 0.0;
    for track in tracks {
        total += kalman_loglik(params, model, track, init)?;
    }
    Ok(total)
}

/// Evaluation hooks used by [`crate::fit`]: likelihood of prepared data at
/// arbitrary coefficients.
pub fn loglik_prepared(
    data: &FilterData,
    params: MovementParams,
    beta: &[f64],
    init: FilterInit,
) -> Result<f64> {
    data.loglik(&StepParams::Constant(params), beta, init)
}

/// Time-varying variant of [`loglik_prepared`].
pub fn loglik_prepared_tv(
    data: &FilterData,
    resolved: &ResolvedTvSpec,
    alpha_gamma: &[f64],
    alpha_sigma: &[f64],
    beta: &[f64],
    init: FilterInit,
) -> Result<f64> {
    data.loglik(&StepParams::TimeVarying { resolved, alpha_gamma, alpha_sigma }, beta, init)
}

/// Same conditional density as [`kalman_loglik`], by dense joint-Gaussian
/// assembly: propagate the joint covariance of all states through the state
/// equation (the inputs `h_i` are known given the observed positions, so
/// the model is linear Gaussian), marginalize velocities, and evaluate the
/// positions' density. Independent of the filter recursion; kept as a test
/// oracle for small `n` (at most 10).
pub fn joint_density_oracle(
    params: MovementParams,
    model: &StationaryModel,
    track: &Track,
    init: FilterInit,
) -> Result<f64> {
    let data = FilterData::prepare(model, track)?;
    let n = data.n;
    if n > 10 {
        return Err(Error::invalid(format!(
            "joint density oracle supports at most 10 observations, got {n}"
        )));
    }
    let beta = model.beta();
    let d = data.dim;
    let s0 = init.variance(params)?;

    // Shared across dimensions: the 2n x 2n state covariance (state i's
    // position and velocity occupy rows 2i, 2i+1).
    let mut cov = DMatrix::<f64>::zeros(2 * n, 2 * n);
    cov[(1, 1)] = s0;
    let mut steps = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        steps.push(state_matrices(params, data.dt(i))?);
    }
    for (i, st) in steps.iter().enumerate() {
        let t =
            DMatrix::<f64>::from_row_slice(2, 2, &[st.t[0][0], st.t[0][1], st.t[1][0], st.t[1][1]]);
        // Cross blocks with every earlier state, then the new diagonal.
        for k in 0..=i {
            let c_ik = cov.view((2 * i, 2 * k), (2, 2)).clone_owned();
            let new = &t * c_ik;
            cov.view_mut((2 * (i + 1), 2 * k), (2, 2)).copy_from(&new);
            cov.view_mut((2 * k, 2 * (i + 1)), (2, 2)).copy_from(&new.transpose());
        }
        let c_ii = cov.view((2 * i, 2 * i), (2, 2)).clone_owned();
        let mut diag = &t * c_ii * t.transpose();
        diag[(0, 0)] += st.q[0][0];
        diag[(0, 1)] += st.q[0][1];
        diag[(1, 0)] += st.q[1][0];
        diag[(1, 1)] += st.q[1][1];
        cov.view_mut((2 * (i + 1), 2 * (i + 1)), (2, 2)).copy_from(&diag);
    }

    // Position marginal over observations 1..n (the first is conditioned on
    // exactly and carries zero variance).
    let m = n - 1;
    let mut pos_cov = DMatrix::<f64>::zeros(m, m);
    for a in 0..m {
        for b in 0..m {
            pos_cov[(a, b)] = cov[(2 * (a + 1), 2 * (b + 1))];
        }
    }
    let chol = pos_cov
        .cholesky()
        .ok_or_else(|| Error::numerical("joint position covariance not positive definite"))?;
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();

    // Mean recursion per dimension, then the Gaussian density.
    let mut ll = 0.0;
    for j in 0..d {
        let mut mean_x = vec![0.0; n];
        let mut mx = data.position(0, j);
        let mut mv = 0.0;
        mean_x[0] = mx;
        for (i, st) in steps.iter().enumerate() {
            let h = data.input(beta, i, j);
            let (nx, nv) = (
                st.t[0][0] * mx + st.t[0][1] * mv + st.b[0] * h,
                st.t[1][0] * mx + st.t[1][1] * mv + st.b[1] * h,
            );
            mx = nx;
            mv = nv;
            mean_x[i + 1] = mx;
        }
        let resid = DVector::<f64>::from_iterator(
            m,
            (0..m).map(|a| data.position(a + 1, j) - mean_x[a + 1]),
        );
        let solved = chol.solve(&resid);
        ll += -0.5 * (m as f64 * LN_2PI + log_det + resid.dot(&solved));
    }
    Ok(ll)
}
