//! Unnormalized target densities: reward (log unnormalized density), analytic
//! score, and reference-sampling oracles used only for evaluation.

use crate::error::{FsError, Result};
use crate::geometry::ManifoldSpec;
use crate::rng::{stream, Role};
use crate::vecmath::{all_finite, axpy, dot, norm2};
use rand::Rng;
use rand_distr::StandardNormal;

/// Floor on pair distances in the Lennard-Jones potential, relative to `rm`.
const LJ_DIST_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub enum TargetKind {
    /// Isotropic Gaussian mixture with shared variance.
    Gmm {
        centers: Vec<Vec<f64>>,
        weights: Vec<f64>,
        variance: f64,
    },
    /// Pairwise double-well potential for `n` 2-D particles.
    Dw4 {
        a: f64,
        b: f64,
        c: f64,
        d0: f64,
        tau: f64,
    },
    /// Lennard-Jones cluster with harmonic center-of-mass restraint.
    LennardJones {
        n: usize,
        rm: f64,
        tau: f64,
        eps: f64,
        osc_c: f64,
        /// Flips the pair term to the textbook sign convention.
        standard_sign: bool,
    },
    /// Mixture of von Mises-Fisher components on the unit sphere.
    VmfMixture {
        mus: Vec<Vec<f64>>,
        kappas: Vec<f64>,
        weights: Vec<f64>,
    },
}

#[derive(Clone, Debug)]
pub struct TargetDensity {
    pub kind: TargetKind,
    /// Total flattened dimension (ambient dimension for sphere targets).
    pub dim: usize,
    pub manifold: Option<ManifoldSpec>,
}

/// Flat particle-state view: n particles in d spatial dimensions.
#[derive(Clone, Copy, Debug)]
pub struct ParticleLayout {
    pub n: usize,
    pub d: usize,
}

impl TargetDensity {
    pub fn gmm(centers: Vec<Vec<f64>>, weights: Vec<f64>, variance: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(FsError::Empty { what: "gmm centers" });
        }
        let dim = centers[0].len();
        if centers.iter().any(|c| c.len() != dim) || centers.len() != weights.len() {
            return Err(FsError::Config("gmm centers/weights shape mismatch".into()));
        }
        if variance <= 0.0 {
            return Err(FsError::Config("gmm variance must be positive".into()));
        }
        Ok(TargetDensity {
            kind: TargetKind::Gmm {
                centers,
                weights,
                variance,
            },
            dim,
            manifold: None,
        })
    }

    pub fn dw4(a: f64, b: f64, c: f64, d0: f64, tau: f64) -> Self {
        TargetDensity {
            kind: TargetKind::Dw4 { a, b, c, d0, tau },
            dim: 8,
            manifold: None,
        }
    }

    pub fn lennard_jones(
        n: usize,
        rm: f64,
        tau: f64,
        eps: f64,
        osc_c: f64,
        standard_sign: bool,
    ) -> Self {
        TargetDensity {
            kind: TargetKind::LennardJones {
                n,
                rm,
                tau,
                eps,
                osc_c,
                standard_sign,
            },
            dim: 3 * n,
            manifold: None,
        }
    }

    pub fn vmf_mixture(mus: Vec<Vec<f64>>, kappas: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if mus.is_empty() {
            return Err(FsError::Empty { what: "vmf components" });
        }
        let dim = mus[0].len();
        if mus.iter().any(|m| m.len() != dim)
            || kappas.len() != mus.len()
            || weights.len() != mus.len()
        {
            return Err(FsError::Config("vmf component shape mismatch".into()));
        }
        for m in &mus {
            if (norm2(m) - 1.0).abs() > 1e-9 {
                return Err(FsError::Config("vmf mean directions must be unit-norm".into()));
            }
        }
        let wsum: f64 = weights.iter().sum();
        if (wsum - 1.0).abs() > 1e-9 {
            return Err(FsError::Config("vmf weights must sum to 1".into()));
        }
        Ok(TargetDensity {
            kind: TargetKind::VmfMixture {
                mus,
                kappas,
                weights,
            },
            dim,
            manifold: Some(ManifoldSpec::sphere(dim - 1)),
        })
    }

    pub fn particle_layout(&self) -> Option<ParticleLayout> {
        match self.kind {
            TargetKind::Dw4 { .. } => Some(ParticleLayout { n: 4, d: 2 }),
            TargetKind::LennardJones { n, .. } => Some(ParticleLayout { n, d: 3 }),
            _ => None,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.dim {
            Ok(())
        } else {
            Err(FsError::DimMismatch {
                expected: self.dim,
                got: x.len(),
            })
        }
    }

    /// Log unnormalized density r(x) = -E(x) for particle systems, a
    /// log-mixture for GMM/vMF.
    pub fn reward(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        match &self.kind {
            TargetKind::Gmm {
                centers,
                weights,
                variance,
            } => {
                let logs: Vec<f64> = centers
                    .iter()
                    .zip(weights)
                    .map(|(c, w)| {
                        let sq: f64 = x.iter().zip(c).map(|(xi, ci)| (xi - ci).powi(2)).sum();
                        w.ln() - sq / (2.0 * variance)
                    })
                    .collect();
                Ok(log_sum_exp(&logs))
            }
            TargetKind::Dw4 { a, b, c, d0, tau } => {
                let layout = ParticleLayout { n: 4, d: 2 };
                let mut e = 0.0;
                for_pairs(x, layout, |dij, _, _, _| {
                    let u = dij - d0;
                    e += a * u + b * u * u + c * u.powi(4);
                });
                Ok(-e / tau)
            }
            TargetKind::LennardJones {
                n,
                rm,
                tau,
                eps,
                osc_c,
                standard_sign,
            } => {
                let layout = ParticleLayout { n: *n, d: 3 };
                let sign = if *standard_sign { -1.0 } else { 1.0 };
                let floor = LJ_DIST_FLOOR * rm;
                let mut e_lj = 0.0;
                for_pairs(x, layout, |dij, _, _, _| {
                    let d = dij.max(floor);
                    let r6 = (rm / d).powi(6);
                    e_lj += sign * (r6 - r6 * r6);
                });
                e_lj *= eps / tau;
                let e_osc = harmonic_restraint(x, layout);
                Ok(-(e_lj + osc_c * e_osc))
            }
            TargetKind::VmfMixture {
                mus,
                kappas,
                weights,
            } => {
                let logs: Vec<f64> = mus
                    .iter()
                    .zip(kappas)
                    .zip(weights)
                    .map(|((m, k), w)| w.ln() + k * dot(m, x))
                    .collect();
                Ok(log_sum_exp(&logs))
            }
        }
    }

    /// Exact analytic gradient of the reward in ambient coordinates.
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        match &self.kind {
            TargetKind::Gmm {
                centers,
                weights,
                variance,
            } => {
                let logs: Vec<f64> = centers
                    .iter()
                    .zip(weights)
                    .map(|(c, w)| {
                        let sq: f64 = x.iter().zip(c).map(|(xi, ci)| (xi - ci).powi(2)).sum();
                        w.ln() - sq / (2.0 * variance)
                    })
                    .collect();
                let lse = log_sum_exp(&logs);
                let mut g = vec![0.0; self.dim];
                for (c, lw) in centers.iter().zip(&logs) {
                    let resp = (lw - lse).exp();
                    for i in 0..self.dim {
                        g[i] += resp * (c[i] - x[i]) / variance;
                    }
                }
                Ok(g)
            }
            TargetKind::Dw4 { a, b, c, d0, tau } => {
                let layout = ParticleLayout { n: 4, d: 2 };
                let mut g = vec![0.0; self.dim];
                for_pairs(x, layout, |dij, diff, i, j| {
                    if dij == 0.0 {
                        return;
                    }
                    let u = dij - d0;
                    let de = (a + 2.0 * b * u + 4.0 * c * u.powi(3)) / tau;
                    for k in 0..layout.d {
                        let gk = de * diff[k] / dij;
                        g[i * layout.d + k] -= gk;
                        g[j * layout.d + k] += gk;
                    }
                });
                Ok(g)
            }
            TargetKind::LennardJones {
                n,
                rm,
                tau,
                eps,
                osc_c,
                standard_sign,
            } => {
                let layout = ParticleLayout { n: *n, d: 3 };
                let sign = if *standard_sign { -1.0 } else { 1.0 };
                let floor = LJ_DIST_FLOOR * rm;
                let mut g = vec![0.0; self.dim];
                for_pairs(x, layout, |dij, diff, i, j| {
                    if dij <= floor {
                        // flat region under the distance floor
                        return;
                    }
                    let r6 = (rm / dij).powi(6);
                    // dE/dd for the pair term
                    let de = sign * eps / tau * (-6.0 * r6 / dij + 12.0 * r6 * r6 / dij);
                    for k in 0..3 {
                        let gk = de * diff[k] / dij;
                        g[i * 3 + k] -= gk;
                        g[j * 3 + k] += gk;
                    }
                });
                // harmonic restraint gradient: d/dx_i (1/2 sum ||x_i - com||^2)
                // = (x_i - com) since com contributions cancel
                let com = center_of_mass(x, layout);
                for i in 0..layout.n {
                    for k in 0..3 {
                        g[i * 3 + k] -= osc_c * (x[i * 3 + k] - com[k]);
                    }
                }
                Ok(g)
            }
            TargetKind::VmfMixture {
                mus,
                kappas,
                weights,
            } => {
                let logs: Vec<f64> = mus
                    .iter()
                    .zip(kappas)
                    .zip(weights)
                    .map(|((m, k), w)| w.ln() + k * dot(m, x))
                    .collect();
                let lse = log_sum_exp(&logs);
                let mut g = vec![0.0; self.dim];
                for ((m, k), lw) in mus.iter().zip(kappas).zip(&logs) {
                    let resp = (lw - lse).exp();
                    axpy(&mut g, resp * k, m);
                }
                Ok(g)
            }
        }
    }
}

fn log_sum_exp(logs: &[f64]) -> f64 {
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

/// Calls `f(dist, diff, i, j)` for every particle pair i < j.
fn for_pairs(x: &[f64], layout: ParticleLayout, mut f: impl FnMut(f64, &[f64], usize, usize)) {
    let mut diff = vec![0.0; layout.d];
    for i in 0..layout.n {
        for j in (i + 1)..layout.n {
            for k in 0..layout.d {
                diff[k] = x[i * layout.d + k] - x[j * layout.d + k];
            }
            f(norm2(&diff), &diff, i, j);
        }
    }
}

fn center_of_mass(x: &[f64], layout: ParticleLayout) -> Vec<f64> {
    let mut com = vec![0.0; layout.d];
    for i in 0..layout.n {
        for k in 0..layout.d {
            com[k] += x[i * layout.d + k];
        }
    }
    for c in com.iter_mut() {
        *c /= layout.n as f64;
    }
    com
}

fn harmonic_restraint(x: &[f64], layout: ParticleLayout) -> f64 {
    let com = center_of_mass(x, layout);
    let mut e = 0.0;
    for i in 0..layout.n {
        for k in 0..layout.d {
            e += 0.5 * (x[i * layout.d + k] - com[k]).powi(2);
        }
    }
    e
}

/// Rescales `g` to l2 norm `threshold` when it exceeds it.
pub fn clip_score(g: &[f64], threshold: f64) -> Vec<f64> {
    debug_assert!(threshold > 0.0);
    let n = norm2(g);
    if n <= threshold {
        g.to_vec()
    } else {
        crate::vecmath::scale(g, threshold / n)
    }
}

/// Subtracts the per-dimension mean across particles.
pub fn zero_com_project(x: &[f64], layout: ParticleLayout) -> Vec<f64> {
    let com = center_of_mass(x, layout);
    let mut out = x.to_vec();
    for i in 0..layout.n {
        for k in 0..layout.d {
            out[i * layout.d + k] -= com[k];
        }
    }
    out
}

/// Unadjusted Langevin reference sampler: x <- x + eps*score(x) + sqrt(2 eps) z,
/// with burn-in of half the steps and even thinning of the rest. Chains that
/// produce non-finite states are dropped.
pub fn langevin_reference(
    target: &TargetDensity,
    n_samples: usize,
    n_steps: usize,
    step_size: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if target.manifold.is_some() {
        return Err(FsError::Config(
            "langevin_reference requires a Euclidean target".into(),
        ));
    }
    if step_size < 0.0 {
        return Err(FsError::Config("step_size must be non-negative".into()));
    }
    let layout = target.particle_layout();
    let n_chains = n_samples.clamp(1, 64);
    let per_chain = n_samples.div_ceil(n_chains);
    let burn_in = n_steps / 2;
    let keep_steps = n_steps - burn_in;
    let noise_scale = (2.0 * step_size).sqrt();

    let mut samples = Vec::with_capacity(n_samples);
    for chain in 0..n_chains {
        let mut rng = stream(seed, Role::Oracle { tag: 1000 + chain as u64 });
        let mut x: Vec<f64> = (0..target.dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Some(l) = layout {
            x = zero_com_project(&x, l);
        }
        let mut kept = 0usize;
        let mut diverged = false;
        for step in 0..n_steps {
            let g = target.score(&x)?;
            let mut z: Vec<f64> = (0..target.dim).map(|_| rng.sample(StandardNormal)).collect();
            if let Some(l) = layout {
                z = zero_com_project(&z, l);
            }
            for i in 0..target.dim {
                x[i] += step_size * g[i] + noise_scale * z[i];
            }
            if !all_finite(&x) {
                diverged = true;
                break;
            }
            if step >= burn_in && kept < per_chain {
                // thin evenly over the kept half
                let stride = (keep_steps / per_chain).max(1);
                if (step - burn_in) % stride == 0 {
                    samples.push(x.clone());
                    kept += 1;
                }
            }
        }
        if n_steps == 0 && !diverged {
            samples.push(x.clone());
        }
        if samples.len() >= n_samples {
            break;
        }
    }
    samples.truncate(n_samples);
    Ok(samples)
}

/// Exact sampler for an isotropic Gaussian mixture. Evaluation-only ground
/// truth.
pub fn gmm_sample_oracle(
    centers: &[Vec<f64>],
    weights: &[f64],
    variance: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if centers.is_empty() || centers.len() != weights.len() {
        return Err(FsError::Config("gmm oracle shape mismatch".into()));
    }
    let dim = centers[0].len();
    let wsum: f64 = weights.iter().sum();
    let sd = variance.sqrt();
    let mut rng = stream(seed, Role::Oracle { tag: 88 });
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut u: f64 = rng.gen::<f64>() * wsum;
        let mut k = 0;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                k = i;
                break;
            }
            u -= w;
            k = i;
        }
        let x: Vec<f64> = centers[k]
            .iter()
            .map(|c| c + sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        debug_assert_eq!(x.len(), dim);
        out.push(x);
    }
    Ok(out)
}

/// Wood-style rejection sampler for the von Mises-Fisher distribution on the
/// unit sphere in R^p. Evaluation-only ground truth.
pub fn vmf_sample_oracle(mu: &[f64], kappa: f64, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let p = mu.len();
    if p < 2 {
        return Err(FsError::Config("vmf requires ambient dimension >= 2".into()));
    }
    if (norm2(mu) - 1.0).abs() > 1e-9 {
        return Err(FsError::Config("vmf mean direction must be unit-norm".into()));
    }
    if kappa < 0.0 {
        return Err(FsError::Config("vmf kappa must be non-negative".into()));
    }
    let mut rng = stream(seed, Role::Oracle { tag: 77 });
    let mut out = Vec::with_capacity(n);
    let pm1 = (p - 1) as f64;
    let b = (-2.0 * kappa + (4.0 * kappa * kappa + pm1 * pm1).sqrt()) / pm1;
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + pm1 * (1.0 - x0 * x0).ln();

    for _ in 0..n {
        let w = if kappa == 0.0 {
            // uniform: w has density prop to (1-w^2)^{(p-3)/2}; sample via
            // full-vector normalization below instead
            f64::NAN
        } else {
            loop {
                let z: f64 = sample_beta(&mut rng, pm1 / 2.0, pm1 / 2.0);
                let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
                let u: f64 = rng.gen();
                if kappa * w + pm1 * (1.0 - x0 * w).ln() - c >= u.ln() {
                    break w;
                }
            }
        };
        let sample = if kappa == 0.0 {
            let mut v: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            let nv = norm2(&v);
            v.iter_mut().for_each(|x| *x /= nv);
            v
        } else {
            // uniform direction orthogonal to e_p, then scale and rotate to mu
            let mut v: Vec<f64> = (0..p - 1).map(|_| rng.sample(StandardNormal)).collect();
            let nv = norm2(&v);
            v.iter_mut().for_each(|x| *x /= nv);
            let s = (1.0 - w * w).max(0.0).sqrt();
            let mut sample: Vec<f64> = v.iter().map(|vi| s * vi).collect();
            sample.push(w);
            rotate_pole_to(&mut sample, mu);
            let nv = norm2(&sample);
            sample.iter_mut().for_each(|x| *x /= nv);
            sample
        };
        out.push(sample);
    }
    Ok(out)
}

/// Exact sampler for a von Mises-Fisher mixture: multinomial component
/// choice, then per-component rejection sampling.
pub fn vmf_mixture_oracle(
    mus: &[Vec<f64>],
    kappas: &[f64],
    weights: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if mus.is_empty() || mus.len() != kappas.len() || mus.len() != weights.len() {
        return Err(FsError::Config("vmf oracle shape mismatch".into()));
    }
    let wsum: f64 = weights.iter().sum();
    let mut rng = stream(seed, Role::Oracle { tag: 78 });
    let mut counts = vec![0usize; mus.len()];
    for _ in 0..n {
        let mut u: f64 = rng.gen::<f64>() * wsum;
        let mut k = 0;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                k = i;
                break;
            }
            u -= w;
            k = i;
        }
        counts[k] += 1;
    }
    let mut out = Vec::with_capacity(n);
    for (k, &c) in counts.iter().enumerate() {
        out.extend(vmf_sample_oracle(&mus[k], kappas[k], c, seed.wrapping_add(k as u64 + 1))?);
    }
    Ok(out)
}

/// Householder reflection mapping the last basis vector e_p to `mu`, applied
/// in place.
fn rotate_pole_to(x: &mut [f64], mu: &[f64]) {
    let p = mu.len();
    let mut u = mu.to_vec();
    u[p - 1] -= 1.0;
    let un = norm2(&u);
    if un < 1e-12 {
        return;
    }
    u.iter_mut().for_each(|c| *c /= un);
    let proj = 2.0 * dot(&u, x);
    for i in 0..p {
        x[i] -= proj * u[i];
    }
    // reflection maps e_p -> mu but flips orientation; harmless here
}

fn sample_beta(rng: &mut impl Rng, a: f64, b: f64) -> f64 {
    let x = sample_gamma(rng, a);
    let y = sample_gamma(rng, b);
    x / (x + y)
}

// Marsaglia-Tsang gamma sampler (shape >= 0, unit scale).
fn sample_gamma(rng: &mut impl Rng, shape: f64) -> f64 {
    if shape < 1.0 {
        let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        return sample_gamma(rng, shape + 1.0) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let v = (1.0 + c * z).powi(3);
        if v <= 0.0 {
            continue;
        }
        let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        if u.ln() < 0.5 * z * z + d - d * v + d * v.ln() {
            return d * v;
        }
    }
}
