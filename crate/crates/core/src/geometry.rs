//! Closed-form Riemannian primitives for constant-curvature manifolds
//! embedded in a metric ambient space.
//!
//! The manifold is the level set `<x,x>_S = 1/kappa` of a diagonal ambient
//! metric `S`. The sphere (`kappa > 0`, `S = I`) and the positive sheet of
//! the hyperboloid (`kappa < 0`, Lorentz signature with the time-like
//! coordinate first) are the two curved kinds; the Euclidean kind is the flat
//! degenerate case and rejects all curved-geometry operations.

use crate::error::{FsError, Result};
use crate::vecmath::axpy;

pub const POINT_TOL: f64 = 1e-9;
pub const TANGENT_TOL: f64 = 1e-9;
/// Below this geodesic angle, sin/sinh ratios switch to Taylor series.
pub const SMALL_ANGLE: f64 = 1e-6;
/// Antipodal / cut-locus rejection threshold on 1 + kappa*<x,y>_S.
pub const CUT_LOCUS_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ManifoldKind {
    Euclidean,
    Sphere,
    Hyperboloid,
}

/// Ambient metric and curvature defining a constant-curvature manifold.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldSpec {
    pub kind: ManifoldKind,
    /// Diagonal of the ambient metric; length `dim + 1` for curved kinds.
    pub sigma_diag: Vec<f64>,
    pub kappa: f64,
    /// Intrinsic dimension.
    pub dim: usize,
}

impl ManifoldSpec {
    pub fn euclidean(dim: usize) -> Self {
        ManifoldSpec {
            kind: ManifoldKind::Euclidean,
            sigma_diag: vec![1.0; dim],
            kappa: 0.0,
            dim,
        }
    }

    /// Unit sphere S^dim in R^{dim+1}.
    pub fn sphere(dim: usize) -> Self {
        Self::sphere_with_curvature(dim, 1.0)
    }

    pub fn sphere_with_curvature(dim: usize, kappa: f64) -> Self {
        assert!(kappa > 0.0);
        ManifoldSpec {
            kind: ManifoldKind::Sphere,
            sigma_diag: vec![1.0; dim + 1],
            kappa,
            dim,
        }
    }

    /// Hyperboloid H^dim, Lorentz metric diag(-1, 1, ..., 1), positive sheet.
    pub fn hyperboloid(dim: usize) -> Self {
        let mut sigma = vec![1.0; dim + 1];
        sigma[0] = -1.0;
        ManifoldSpec {
            kind: ManifoldKind::Hyperboloid,
            sigma_diag: sigma,
            kappa: -1.0,
            dim,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.sigma_diag.len()
    }

    pub fn is_curved(&self) -> bool {
        self.kind != ManifoldKind::Euclidean
    }

    pub(crate) fn require_curved(&self, op: &'static str) -> Result<()> {
        if self.is_curved() {
            Ok(())
        } else {
            Err(FsError::EuclideanKind { op })
        }
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() == self.ambient_dim() {
            Ok(())
        } else {
            Err(FsError::DimMismatch {
                expected: self.ambient_dim(),
                got: v.len(),
            })
        }
    }
}

/// Point on the manifold, stored in ambient coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub coords: Vec<f64>,
}

/// Tangent vector with its base point.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVec {
    pub coords: Vec<f64>,
    pub base: Point,
}

/// Ambient metric inner product: sum_i sigma[i] * u[i] * v[i].
pub fn inner(spec: &ManifoldSpec, u: &[f64], v: &[f64]) -> Result<f64> {
    spec.check_dim(u)?;
    spec.check_dim(v)?;
    Ok(u.iter()
        .zip(v)
        .zip(&spec.sigma_diag)
        .map(|((a, b), s)| s * a * b)
        .sum())
}

pub fn norm_sigma(spec: &ManifoldSpec, v: &[f64]) -> Result<f64> {
    Ok(inner(spec, v, v)?.max(0.0).sqrt())
}

impl Point {
    /// Validated constructor; checks `<x,x>_S = 1/kappa` for curved kinds.
    pub fn on_manifold(spec: &ManifoldSpec, coords: Vec<f64>) -> Result<Point> {
        spec.check_dim(&coords)?;
        if spec.is_curved() {
            let residual = (inner(spec, &coords, &coords)? - 1.0 / spec.kappa).abs();
            // Relative check: far out on the hyperboloid the ambient
            // coordinates are huge and the Minkowski form cancels
            // catastrophically, so an absolute residual bound is unattainable.
            let scale = 1.0 + crate::vecmath::dot(&coords, &coords);
            if residual > POINT_TOL * scale {
                return Err(FsError::OffManifold { residual });
            }
            if spec.kind == ManifoldKind::Hyperboloid && coords[0] <= 0.0 {
                return Err(FsError::Domain {
                    what: "hyperboloid point off the positive sheet".into(),
                });
            }
        }
        Ok(Point { coords })
    }
}

impl TangentVec {
    pub fn at(spec: &ManifoldSpec, base: &Point, coords: Vec<f64>) -> Result<TangentVec> {
        spec.check_dim(&coords)?;
        if spec.is_curved() {
            let residual = inner(spec, &coords, &base.coords)?.abs();
            if residual > TANGENT_TOL * (1.0 + crate::vecmath::norm2(&coords)) {
                return Err(FsError::NotTangent { residual });
            }
        }
        Ok(TangentVec {
            coords,
            base: base.clone(),
        })
    }
}

/// Rescale ambient coordinates back onto the level set `<x,x>_S = 1/kappa`.
pub fn renormalize(spec: &ManifoldSpec, coords: &mut [f64]) -> Result<()> {
    if !spec.is_curved() {
        return Ok(());
    }
    let q = inner(spec, coords, coords)?;
    let target = 1.0 / spec.kappa;
    if q * target <= 0.0 {
        return Err(FsError::DegeneratePoint);
    }
    let s = (target / q).sqrt();
    for c in coords.iter_mut() {
        *c *= s;
    }
    Ok(())
}

/// Orthogonal projection onto the tangent space at `x`.
pub fn project_tangent(spec: &ManifoldSpec, x: &Point, w: &[f64]) -> Result<TangentVec> {
    spec.check_dim(w)?;
    let xx = inner(spec, &x.coords, &x.coords)?;
    if xx == 0.0 {
        return Err(FsError::DegeneratePoint);
    }
    let xw = inner(spec, &x.coords, w)?;
    let mut out = w.to_vec();
    axpy(&mut out, -xw / xx, &x.coords);
    Ok(TangentVec {
        coords: out,
        base: x.clone(),
    })
}

/// Radial part `P_x w` of an ambient vector.
pub fn project_radial(spec: &ManifoldSpec, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let xx = inner(spec, x, x)?;
    if xx == 0.0 {
        return Err(FsError::DegeneratePoint);
    }
    let xw = inner(spec, x, w)?;
    Ok(crate::vecmath::scale(x, xw / xx))
}

fn sqrt_abs_kappa(spec: &ManifoldSpec) -> f64 {
    spec.kappa.abs().sqrt()
}

/// Geodesic shooting: `exp_x(v)`.
pub fn exp_map(spec: &ManifoldSpec, x: &Point, v: &TangentVec) -> Result<Point> {
    spec.require_curved("exp_map")?;
    let tangency = inner(spec, &v.coords, &x.coords)?.abs();
    if tangency > TANGENT_TOL * (1.0 + crate::vecmath::norm2(&v.coords)) {
        return Err(FsError::NotTangent { residual: tangency });
    }
    let sk = sqrt_abs_kappa(spec);
    let vnorm = norm_sigma(spec, &v.coords)?;
    let theta = sk * vnorm;
    if theta == 0.0 {
        return Ok(x.clone());
    }
    let (c, s) = match spec.kind {
        ManifoldKind::Sphere => (theta.cos(), theta.sin()),
        ManifoldKind::Hyperboloid => (theta.cosh(), theta.sinh()),
        ManifoldKind::Euclidean => unreachable!(),
    };
    let mut out = crate::vecmath::scale(&x.coords, c);
    axpy(&mut out, s / (sk * vnorm), &v.coords);
    renormalize(spec, &mut out)?;
    Point::on_manifold(spec, out)
}

/// Inverse of the exponential map: the tangent vector at `x` pointing to `y`
/// with length equal to the geodesic distance.
pub fn log_map(spec: &ManifoldSpec, x: &Point, y: &Point) -> Result<TangentVec> {
    spec.require_curved("log_map")?;
    let d = geodesic_distance(spec, x, y)?;
    if spec.kind == ManifoldKind::Sphere {
        // Antipodal pair: the minimizing geodesic is non-unique.
        let c = spec.kappa * inner(spec, &x.coords, &y.coords)?;
        if 1.0 + c < CUT_LOCUS_TOL {
            return Err(FsError::CutLocus);
        }
    }
    let dir = project_tangent(spec, x, &y.coords)?;
    let n = norm_sigma(spec, &dir.coords)?;
    if n == 0.0 || d == 0.0 {
        return Ok(TangentVec {
            coords: vec![0.0; spec.ambient_dim()],
            base: x.clone(),
        });
    }
    Ok(TangentVec {
        coords: crate::vecmath::scale(&dir.coords, d / n),
        base: x.clone(),
    })
}

/// Geodesic distance between two points on the manifold.
pub fn geodesic_distance(spec: &ManifoldSpec, x: &Point, y: &Point) -> Result<f64> {
    spec.require_curved("geodesic_distance")?;
    let sk = sqrt_abs_kappa(spec);
    let c = spec.kappa * inner(spec, &x.coords, &y.coords)?;
    match spec.kind {
        ManifoldKind::Sphere => Ok(c.clamp(-1.0, 1.0).acos() / sk),
        ManifoldKind::Hyperboloid => Ok(c.max(1.0).acosh() / sk),
        ManifoldKind::Euclidean => unreachable!(),
    }
}

/// Geodesic point at parameter `t`: runs from `x0` at t=0 to `x1` at t=1.
pub fn geodesic_interpolant(spec: &ManifoldSpec, x0: &Point, x1: &Point, t: f64) -> Result<Point> {
    let v = log_map(spec, x1, x0)?;
    let scaled = TangentVec {
        coords: crate::vecmath::scale(&v.coords, 1.0 - t),
        base: x1.clone(),
    };
    exp_map(spec, x1, &scaled)
}

/// Endpoint velocity of the geodesic interpolant at t = 1.
pub fn endpoint_velocity(spec: &ManifoldSpec, x0: &Point, x1: &Point) -> Result<TangentVec> {
    let v = log_map(spec, x1, x0)?;
    Ok(TangentVec {
        coords: crate::vecmath::scale(&v.coords, -1.0),
        base: x1.clone(),
    })
}

/// Time derivative of the geodesic interpolant; tangent at the interpolant.
///
/// A constant-speed geodesic has a parallel velocity field, so the velocity
/// at time `t` is the transport of the endpoint velocity.
pub fn geodesic_velocity(spec: &ManifoldSpec, x0: &Point, x1: &Point, t: f64) -> Result<TangentVec> {
    let xt = geodesic_interpolant(spec, x0, x1, t)?;
    let xdot1 = endpoint_velocity(spec, x0, x1)?;
    parallel_transport(spec, x1, &xt, &xdot1)
}

/// Parallel transport along the geodesic from `x1` to `xt`.
///
/// For constant-curvature level sets this is the metric reflection about the
/// midpoint `x1 + xt` restricted to tangent vectors.
pub fn parallel_transport(
    spec: &ManifoldSpec,
    x1: &Point,
    xt: &Point,
    v: &TangentVec,
) -> Result<TangentVec> {
    spec.require_curved("parallel_transport")?;
    let m = crate::vecmath::add(&x1.coords, &xt.coords);
    let mm = inner(spec, &m, &m)?;
    if mm.abs() < CUT_LOCUS_TOL {
        return Err(FsError::AntipodalMidpoint);
    }
    let mv = inner(spec, &m, &v.coords)?;
    let mut out = v.coords.clone();
    axpy(&mut out, -2.0 * mv / mm, &m);
    Ok(TangentVec {
        coords: out,
        base: xt.clone(),
    })
}

/// Normal-direction Jacobi scaling `c_t`: sin(t*w*sqrt(k))/sin(w*sqrt(k)) for
/// k > 0 and the sinh analogue for k < 0. Series expansion below
/// [`SMALL_ANGLE`] removes the 0/0 at near-coincident endpoints.
pub fn jacobian_scaling(spec: &ManifoldSpec, omega1: f64, t: f64) -> Result<f64> {
    spec.require_curved("jacobian_scaling")?;
    if omega1 <= 0.0 {
        return Err(FsError::Domain {
            what: format!("jacobian_scaling requires omega1 > 0, got {omega1}"),
        });
    }
    let theta = omega1 * sqrt_abs_kappa(spec);
    match spec.kind {
        ManifoldKind::Sphere => {
            if theta >= std::f64::consts::PI {
                return Err(FsError::Domain {
                    what: format!("sin ratio undefined at omega1*sqrt(kappa) = {theta} >= pi"),
                });
            }
            if theta < SMALL_ANGLE {
                let t2 = theta * theta;
                Ok(t * (1.0 + (1.0 - t * t) * t2 / 6.0
                    + (1.0 - t * t) * (7.0 - 3.0 * t * t) * t2 * t2 / 360.0))
            } else {
                Ok((t * theta).sin() / theta.sin())
            }
        }
        ManifoldKind::Hyperboloid => {
            if theta < SMALL_ANGLE {
                let t2 = theta * theta;
                Ok(t * (1.0 - (1.0 - t * t) * t2 / 6.0
                    + (1.0 - t * t) * (7.0 - 3.0 * t * t) * t2 * t2 / 360.0))
            } else {
                Ok((t * theta).sinh() / theta.sinh())
            }
        }
        ManifoldKind::Euclidean => unreachable!(),
    }
}

/// Applies the inverse Jacobian adjoint `(J_t^{-1})*` of the geodesic map to a
/// tangent vector `w` at `x1`, producing a tangent vector at the interpolant.
///
/// The tangential block (along the endpoint velocity) scales by `1/t`, the
/// normal block by `1/c_t`, both followed by the parallel transport.
pub fn inv_jacobian_adjoint_apply(
    spec: &ManifoldSpec,
    x0: &Point,
    x1: &Point,
    t: f64,
    w: &TangentVec,
) -> Result<TangentVec> {
    spec.require_curved("inv_jacobian_adjoint_apply")?;
    if t <= 0.0 {
        return Err(FsError::SingularTime { t });
    }
    let xt = geodesic_interpolant(spec, x0, x1, t)?;
    let xdot1 = endpoint_velocity(spec, x0, x1)?;
    let omega1 = norm_sigma(spec, &xdot1.coords)?;

    let (tang, norm) = split_along(spec, &w.coords, &xdot1.coords)?;
    let inv_ct = if omega1 < 1e-300 {
        1.0 / t
    } else {
        1.0 / jacobian_scaling(spec, omega1, t)?
    };
    let mut combined = crate::vecmath::scale(&tang, 1.0 / t);
    axpy(&mut combined, inv_ct, &norm);
    let v = TangentVec {
        coords: combined,
        base: x1.clone(),
    };
    parallel_transport(spec, x1, &xt, &v)
}

/// Applies the closed-form geodesic Jacobian `J_t = d X_t / d X_1` to a
/// tangent vector `v` at `x1`: the component along the endpoint velocity
/// scales by `t`, the normal component by the Jacobi ratio `c_t`, and both
/// are parallel-transported to the interpolant.
pub fn jacobian_apply(
    spec: &ManifoldSpec,
    x0: &Point,
    x1: &Point,
    t: f64,
    v: &TangentVec,
) -> Result<TangentVec> {
    spec.require_curved("jacobian_apply")?;
    let xt = geodesic_interpolant(spec, x0, x1, t)?;
    let xdot1 = endpoint_velocity(spec, x0, x1)?;
    let omega1 = norm_sigma(spec, &xdot1.coords)?;

    let (tang, norm) = split_along(spec, &v.coords, &xdot1.coords)?;
    let ct = if omega1 < 1e-300 {
        t
    } else {
        jacobian_scaling(spec, omega1, t)?
    };
    let mut combined = crate::vecmath::scale(&tang, t);
    axpy(&mut combined, ct, &norm);
    let w = TangentVec {
        coords: combined,
        base: x1.clone(),
    };
    parallel_transport(spec, x1, &xt, &w)
}

/// Splits `w` into its component along `dir` and the Sigma-orthogonal rest.
fn split_along(spec: &ManifoldSpec, w: &[f64], dir: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let dd = inner(spec, dir, dir)?;
    if dd.abs() < 1e-300 {
        return Ok((vec![0.0; w.len()], w.to_vec()));
    }
    let dw = inner(spec, dir, w)?;
    let tang = crate::vecmath::scale(dir, dw / dd);
    let norm = crate::vecmath::sub(w, &tang);
    Ok((tang, norm))
}

/// Gradient of `log |det J_t|` with respect to the geodesic endpoint `x1`,
/// evaluated in closed form. The result is tangent at `x1`, directed along
/// the endpoint velocity, and vanishes at t = 1.
///
/// Expressed at the interpolant (the convention the conditional score uses),
/// apply [`inv_jacobian_adjoint_apply`] to this vector.
pub fn logdet_gradient(spec: &ManifoldSpec, x0: &Point, x1: &Point, t: f64) -> Result<TangentVec> {
    spec.require_curved("logdet_gradient")?;
    if t <= 0.0 {
        return Err(FsError::SingularTime { t });
    }
    let xdot1 = endpoint_velocity(spec, x0, x1)?;
    let omega1 = norm_sigma(spec, &xdot1.coords)?;
    if omega1 == 0.0 {
        return Err(FsError::Domain {
            what: "logdet_gradient requires omega1 > 0".into(),
        });
    }
    let d = spec.dim as f64;
    let sk = sqrt_abs_kappa(spec);
    let theta = omega1 * sk;
    let coeff = match spec.kind {
        ManifoldKind::Sphere => {
            let tt = t * theta;
            if tt.sin().abs() < 1e-300 || theta.sin().abs() < 1e-300 {
                return Err(FsError::Domain {
                    what: format!("cot singular at t*omega1*sqrt(kappa) = {tt}"),
                });
            }
            (d - 1.0) * sk * (t * tt.cos() / tt.sin() - theta.cos() / theta.sin())
        }
        ManifoldKind::Hyperboloid => {
            let tt = t * theta;
            (d - 1.0) * sk * (t * tt.cosh() / tt.sinh() - theta.cosh() / theta.sinh())
        }
        ManifoldKind::Euclidean => unreachable!(),
    };
    Ok(TangentVec {
        coords: crate::vecmath::scale(&xdot1.coords, coeff / omega1),
        base: x1.clone(),
    })
}

/// Sigma-orthonormal basis of the tangent space at `x`, by Gram-Schmidt on
/// the projected ambient basis.
pub fn tangent_basis(spec: &ManifoldSpec, x: &Point) -> Result<Vec<Vec<f64>>> {
    spec.require_curved("tangent_basis")?;
    let n = spec.ambient_dim();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(spec.dim);
    for i in 0..n {
        if basis.len() == spec.dim {
            break;
        }
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        let mut v = project_tangent(spec, x, &e)?.coords;
        for b in &basis {
            let c = inner(spec, &v, b)?;
            axpy(&mut v, -c, b);
        }
        let nv = norm_sigma(spec, &v)?;
        if nv > 1e-8 {
            for c in v.iter_mut() {
                *c /= nv;
            }
            basis.push(v);
        }
    }
    if basis.len() != spec.dim {
        return Err(FsError::Domain {
            what: "tangent basis construction failed".into(),
        });
    }
    Ok(basis)
}
