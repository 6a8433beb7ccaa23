//! Euler-Maruyama integration of the sampling SDE
//! dX_t = u(X_t, t) dt + sqrt(2 gamma t) dW_t from t_start to 1, in Euclidean
//! space or on a constant-curvature manifold.

use crate::error::{FsError, Result};
use crate::geometry::{exp_map, project_tangent, ManifoldSpec, Point, TangentVec};
use crate::vecmath::all_finite;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Copy, Debug)]
pub struct SolverConfig {
    /// Number of Euler-Maruyama steps (function evaluations of the drift).
    pub nfe: usize,
    /// Diffusion scale: instantaneous variance rate is 2 * gamma * t.
    pub gamma: f64,
    /// Integration start time in [0, 1).
    pub t_start: f64,
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nfe == 0 {
            return Err(FsError::Config("nfe must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.t_start) {
            return Err(FsError::Config("t_start must lie in [0, 1)".into()));
        }
        if self.gamma < 0.0 {
            return Err(FsError::Config("gamma must be non-negative".into()));
        }
        Ok(())
    }
}

/// Applied to each noise increment (and optionally usable on drifts), e.g. to
/// keep particle systems mean-free.
pub type Projector<'a> = &'a dyn Fn(&mut [f64]);

/// Integrates one Euclidean path. `drift(x, t)` is evaluated exactly `nfe`
/// times. Returns the terminal state; optionally records every state
/// (including the initial one) into `trajectory`.
pub fn em_euclid(
    x0: &[f64],
    drift: &dyn Fn(&[f64], f64) -> Result<Vec<f64>>,
    cfg: &SolverConfig,
    rng: &mut ChaCha8Rng,
    noise_projector: Option<Projector>,
    mut trajectory: Option<&mut Vec<Vec<f64>>>,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let dim = x0.len();
    let h = (1.0 - cfg.t_start) / cfg.nfe as f64;
    let mut x = x0.to_vec();
    if let Some(tr) = trajectory.as_deref_mut() {
        tr.push(x.clone());
    }
    for step in 0..cfg.nfe {
        let t = cfg.t_start + step as f64 * h;
        let u = drift(&x, t)?;
        if u.len() != dim {
            return Err(FsError::DimMismatch {
                expected: dim,
                got: u.len(),
            });
        }
        let scale = (2.0 * cfg.gamma * t * h).sqrt();
        let mut z: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Some(p) = noise_projector {
            p(&mut z);
        }
        for i in 0..dim {
            x[i] += h * u[i] + scale * z[i];
        }
        if !all_finite(&x) {
            return Err(FsError::NonFinite {
                context: format!("em_euclid state at step {step}"),
            });
        }
        if let Some(tr) = trajectory.as_deref_mut() {
            tr.push(x.clone());
        }
    }
    Ok(x)
}

/// Integrates one path on a curved manifold. Drift outputs are projected onto
/// the tangent space at the current point; noise is an ambient Gaussian
/// projected the same way; each step moves along the exponential map.
pub fn em_manifold(
    spec: &ManifoldSpec,
    x0: &Point,
    drift: &dyn Fn(&Point, f64) -> Result<Vec<f64>>,
    cfg: &SolverConfig,
    rng: &mut ChaCha8Rng,
    mut trajectory: Option<&mut Vec<Vec<f64>>>,
) -> Result<Point> {
    cfg.validate()?;
    spec.require_curved("em_manifold")?;
    let dim = x0.coords.len();
    let h = (1.0 - cfg.t_start) / cfg.nfe as f64;
    let mut x = x0.clone();
    if let Some(tr) = trajectory.as_deref_mut() {
        tr.push(x.coords.clone());
    }
    for step in 0..cfg.nfe {
        let t = cfg.t_start + step as f64 * h;
        let u = drift(&x, t)?;
        if u.len() != dim {
            return Err(FsError::DimMismatch {
                expected: dim,
                got: u.len(),
            });
        }
        let u_tan = project_tangent(spec, &x, &u)?;
        let scale = (2.0 * cfg.gamma * t * h).sqrt();
        let z: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let z_tan = project_tangent(spec, &x, &z)?;
        let mut step_vec = vec![0.0; dim];
        for i in 0..dim {
            step_vec[i] = h * u_tan.coords[i] + scale * z_tan.coords[i];
        }
        let v = TangentVec::at(spec, &x, step_vec)?;
        x = exp_map(spec, &x, &v)?;
        if !all_finite(&x.coords) {
            return Err(FsError::NonFinite {
                context: format!("em_manifold state at step {step}"),
            });
        }
        if let Some(tr) = trajectory.as_deref_mut() {
            tr.push(x.coords.clone());
        }
    }
    Ok(x)
}
