//! Interpolant processes and closed-form conditional drift regression
//! targets, Euclidean and Riemannian.

use crate::error::{FsError, Result};
use crate::geometry::{
    endpoint_velocity, geodesic_velocity, inv_jacobian_adjoint_apply, logdet_gradient,
    project_tangent, ManifoldSpec, Point, TangentVec,
};
use crate::vecmath::axpy;

/// The linear scheduler: alpha_t = t, sigma_t = 1 - t, g_t^2 = 2*gamma*t.
#[derive(Clone, Copy, Debug)]
pub struct LinearSchedule {
    pub gamma: f64,
}

impl LinearSchedule {
    pub fn new(gamma: f64) -> Self {
        assert!(gamma >= 0.0, "gamma must be non-negative");
        LinearSchedule { gamma }
    }

    pub fn alpha(&self, t: f64) -> f64 {
        t
    }

    pub fn sigma(&self, t: f64) -> f64 {
        1.0 - t
    }

    pub fn alpha_dot(&self, _t: f64) -> f64 {
        1.0
    }

    pub fn sigma_dot(&self, _t: f64) -> f64 {
        -1.0
    }

    pub fn g_squared(&self, t: f64) -> f64 {
        2.0 * self.gamma * t
    }
}

/// Linear interpolant (1 - t) x0 + t x1.
pub fn interpolate(x0: &[f64], x1: &[f64], t: f64) -> Result<Vec<f64>> {
    if x0.len() != x1.len() {
        return Err(FsError::DimMismatch {
            expected: x0.len(),
            got: x1.len(),
        });
    }
    Ok(crate::vecmath::lerp(x0, x1, t))
}

/// Conditional velocity of the path pushed forward from the noise endpoint:
/// (alpha_dot/alpha)(x - sigma_t x0) + sigma_dot x0.
pub fn conditional_velocity(
    x: &[f64],
    x0: &[f64],
    t: f64,
    schedule: &LinearSchedule,
) -> Result<Vec<f64>> {
    if x.len() != x0.len() {
        return Err(FsError::DimMismatch {
            expected: x.len(),
            got: x0.len(),
        });
    }
    let alpha = schedule.alpha(t);
    if alpha == 0.0 {
        return Err(FsError::SingularTime { t });
    }
    let a = schedule.alpha_dot(t) / alpha;
    let sig = schedule.sigma(t);
    let sdot = schedule.sigma_dot(t);
    Ok(x.iter()
        .zip(x0)
        .map(|(xi, x0i)| a * (xi - sig * x0i) + sdot * x0i)
        .collect())
}

/// Euclidean conditional drift target under the linear schedule:
/// x1 - x0 + gamma * score1. Independent of t because g_t^2/(2*alpha_t) is
/// the constant gamma.
pub fn euclid_drift_target(
    x0: &[f64],
    x1: &[f64],
    score1: &[f64],
    gamma: f64,
) -> Result<Vec<f64>> {
    if x0.len() != x1.len() || x0.len() != score1.len() {
        return Err(FsError::DimMismatch {
            expected: x0.len(),
            got: x1.len().max(score1.len()),
        });
    }
    let mut out = crate::vecmath::sub(x1, x0);
    axpy(&mut out, gamma, score1);
    Ok(out)
}

/// Riemannian conditional drift target at the geodesic interpolant:
///
/// `Xdot_t + gamma * t * (J_t^{-1})* [ P_perp_{x1}(score1) - grad_{x1} log|det J_t| ]`
///
/// The ambient score is projected to the tangent space at `x1` first; the
/// log-det correction is the closed-form gradient with respect to `x1`, and
/// the inverse Jacobian adjoint carries both terms to the interpolant.
pub fn riemann_drift_target(
    spec: &ManifoldSpec,
    x0: &Point,
    x1: &Point,
    ambient_score1: &[f64],
    t: f64,
    gamma: f64,
) -> Result<TangentVec> {
    if t <= 0.0 {
        return Err(FsError::SingularTime { t });
    }
    let xdot_t = geodesic_velocity(spec, x0, x1, t)?;
    let score_tan = project_tangent(spec, x1, ambient_score1)?;

    let omega1 =
        crate::geometry::norm_sigma(spec, &endpoint_velocity(spec, x0, x1)?.coords)?;
    let mut bracket = score_tan.coords;
    if omega1 > 0.0 {
        let ld = logdet_gradient(spec, x0, x1, t)?;
        axpy(&mut bracket, -1.0, &ld.coords);
    }
    let bracket = TangentVec {
        coords: bracket,
        base: x1.clone(),
    };
    let carried = inv_jacobian_adjoint_apply(spec, x0, x1, t, &bracket)?;

    let mut out = xdot_t.coords;
    axpy(&mut out, gamma * t, &carried.coords);
    Ok(TangentVec {
        coords: out,
        base: xdot_t.base,
    })
}
