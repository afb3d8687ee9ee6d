//! Step-selection-function representation of the discretised model.
//!
//! Conditioning on two past positions and substituting the finite-difference
//! velocity `(x_i - x_{i-1}) / dt` turns the discretised transition into a
//! two-point kernel whose exponent is, after rewriting, linear in three
//! familiar step-selection covariates: squared step length, the persistence
//! product `L_{i-1} L_i cos(phi_i)`, and the habitat fields at the next
//! location. This module computes those coefficients, their small-interval
//! Taylor limits, and the resulting unnormalized log-density; the companion
//! [`two_point_logdensity`] is the unrewritten kernel used to verify the
//! equivalence.

use crate::dynamics::{MovementParams, StepCoeffs};
use crate::error::{Error, Result};
use crate::field::StationaryModel;

/// Coefficients of the step-selection form of the discretised transition.
#[derive(Debug, Clone, PartialEq)]
pub struct SsfCoefficients {
    /// Coefficient of the squared step length `L_i^2`; negative.
    pub c_len2: f64,
    /// Coefficient of `L_{i-1} L_i cos(phi_i)`; positive.
    pub c_persist: f64,
    /// Coefficients of the habitat fields `psi_k(x_{i+1})`.
    pub c_habitat: Vec<f64>,
    pub dt: f64,
}

/// Exact coefficients for `(gamma, sigma)` at interval `dt`:
///
/// ```text
/// c_len2    = -1 / (2 dt^2 sigma^2 (1 - e^{-2 gamma dt}))
/// c_persist = e^{-gamma dt} / (dt^2 sigma^2 (1 - e^{-2 gamma dt}))
/// c_hab_k   = (1 - e^{-gamma dt}) beta_k / (dt gamma (1 - e^{-2 gamma dt}))
/// ```
pub fn ssf_coefficients(params: MovementParams, beta: &[f64], dt: f64) -> Result<SsfCoefficients> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    let MovementParams { gamma, sigma } = params;
    let u = gamma * dt;
    let one_m_e2 = -(-2.0 * u).exp_m1();
    let one_m_e = -(-u).exp_m1();
    let denom = dt * dt * sigma * sigma * one_m_e2;
    Ok(SsfCoefficients {
        c_len2: -1.0 / (2.0 * denom),
        c_persist: (-u).exp() / denom,
        c_habitat: beta.iter().map(|b| one_m_e * b / (dt * gamma * one_m_e2)).collect(),
        dt,
    })
}

/// First-order small-`dt` limits of the coefficients:
/// `-1/(4 gamma sigma^2 dt^3)`, `1/(2 gamma sigma^2 dt^3)`, and
/// `beta_k/(2 gamma dt)`.
pub fn ssf_taylor_limits(params: MovementParams, beta: &[f64], dt: f64) -> Result<SsfCoefficients> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    let MovementParams { gamma, sigma } = params;
    let cube = gamma * sigma * sigma * dt * dt * dt;
    Ok(SsfCoefficients {
        c_len2: -1.0 / (4.0 * cube),
        c_persist: 1.0 / (2.0 * cube),
        c_habitat: beta.iter().map(|b| b / (2.0 * gamma * dt)).collect(),
        dt,
    })
}

/// Unnormalized step-selection log-density of `x_next` given the two
/// previous positions.
///
/// The persistence term is computed through the inner-product identity
/// `(x_next - x_cur) . (x_cur - x_prev) = L_{i-1} L_i cos(phi_i)`, which
/// makes it vanish automatically when the previous step has zero length
/// (where the turning angle is undefined).
pub fn ssf_logdensity(
    coeffs: &SsfCoefficients,
    x_next: &[f64],
    x_cur: &[f64],
    x_prev: &[f64],
    model: &StationaryModel,
) -> Result<f64> {
    if coeffs.c_habitat.len() != model.n_fields() {
        return Err(Error::invalid(format!(
            "{} habitat coefficients for {} model fields",
            coeffs.c_habitat.len(),
            model.n_fields()
        )));
    }
    let mut len2 = 0.0;
    let mut dot = 0.0;
    for j in 0..x_next.len() {
        let step = x_next[j] - x_cur[j];
        len2 += step * step;
        dot += step * (x_cur[j] - x_prev[j]);
    }
    let mut acc = coeffs.c_len2 * len2 + coeffs.c_persist * dot;
    for (c, field) in coeffs.c_habitat.iter().zip(model.fields()) {
        acc += c * field.value(x_next)?;
    }
    Ok(acc)
}

/// Unnormalized log-density of the two-point transition kernel the
/// step-selection form is derived from: the discretised velocity transition
/// with `v_i` replaced by `(x_cur - x_prev) / dt` and the position update
/// `x_next = x_cur + dt * v_next`. Differs from [`ssf_logdensity`] only by
/// the linearization of `log pi` around `x_cur` (exact for planar fields)
/// and by `x_next`-independent constants.
pub fn two_point_logdensity(
    params: MovementParams,
    model: &StationaryModel,
    x_next: &[f64],
    x_cur: &[f64],
    x_prev: &[f64],
    dt: f64,
) -> Result<f64> {
    let c = StepCoeffs::new(params, dt)?;
    let grad = model.grad_log_pi(x_cur)?;
    let var = dt * dt * c.var_vel;
    let mut quad = 0.0;
    for j in 0..x_next.len() {
        let a = (x_next[j] - x_cur[j])
            - c.exp_gd * (x_cur[j] - x_prev[j])
            - dt * c.b_vel * grad[j];
        quad += a * a;
    }
    Ok(-quad / (2.0 * var))
}
