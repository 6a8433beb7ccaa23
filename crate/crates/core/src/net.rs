//! Drift network: a fully-connected MLP with sinusoidal time features,
//! trained by manual reverse-mode differentiation and Adam.

use crate::error::{FsError, Result};
use crate::geometry::{project_tangent, ManifoldSpec, Point};
use crate::rng::{stream, Role};
use crate::vecmath::all_finite;
use rand::Rng;
use std::io::{Read, Write};
use std::path::Path;

const CKPT_MAGIC: &[u8; 4] = b"FSMP";
const CKPT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
        }
    }

    fn id(self) -> u32 {
        match self {
            Activation::Silu => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_id(id: u32) -> Result<Self> {
        match id {
            0 => Ok(Activation::Silu),
            1 => Ok(Activation::Tanh),
            _ => Err(FsError::Checkpoint(format!("unknown activation id {id}"))),
        }
    }
}

/// MLP mapping (x, time features) -> drift vector in ambient coordinates.
#[derive(Clone, Debug)]
pub struct DriftModel {
    /// Full layer width sequence: input, hidden..., output.
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    /// Number of sinusoidal frequency pairs appended to the input.
    pub time_features: usize,
    /// Flattened weights and biases, layer by layer: W (out x in,
    /// row-major) then b.
    pub params: Vec<f64>,
}

/// Per-layer forward intermediates for one input, reused by backprop.
struct ForwardTrace {
    /// Input to each affine layer (post-activation of previous layer).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation outputs of each affine layer.
    pre: Vec<Vec<f64>>,
}

impl DriftModel {
    pub fn new(
        state_dim: usize,
        hidden: &[usize],
        activation: Activation,
        time_features: usize,
        seed: u64,
    ) -> Result<Self> {
        if state_dim == 0 {
            return Err(FsError::Config("state_dim must be positive".into()));
        }
        let input_dim = state_dim + 2 * time_features;
        let mut layer_dims = Vec::with_capacity(hidden.len() + 2);
        layer_dims.push(input_dim);
        layer_dims.extend_from_slice(hidden);
        layer_dims.push(state_dim);

        let mut rng = stream(seed, Role::Oracle { tag: 7001 });
        let n_layers = layer_dims.len() - 1;
        let mut params = Vec::with_capacity(Self::param_count(&layer_dims));
        for l in 0..n_layers {
            let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let last = l == n_layers - 1;
            for _ in 0..fan_out * fan_in {
                params.push(if last { 0.0 } else { rng.gen_range(-bound..bound) });
            }
            for _ in 0..fan_out {
                params.push(0.0);
            }
        }
        Ok(DriftModel {
            layer_dims,
            activation,
            time_features,
            params,
        })
    }

    pub fn state_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    fn param_count(layer_dims: &[usize]) -> usize {
        layer_dims
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }

    /// Embeds time as [sin(2^k pi t), cos(2^k pi t)] for k = 0..time_features.
    fn embed(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.layer_dims[0]);
        v.extend_from_slice(x);
        for k in 0..self.time_features {
            let w = (1u64 << k) as f64 * std::f64::consts::PI * t;
            v.push(w.sin());
            v.push(w.cos());
        }
        v
    }

    fn forward_traced(&self, x: &[f64], t: f64) -> (Vec<f64>, ForwardTrace) {
        let n_layers = self.layer_dims.len() - 1;
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers);
        let mut a = self.embed(x, t);
        let mut offset = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let w = &self.params[offset..offset + fan_out * fan_in];
            let b = &self.params[offset + fan_out * fan_in..offset + fan_out * fan_in + fan_out];
            offset += fan_out * fan_in + fan_out;
            let mut z = vec![0.0; fan_out];
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                z[o] = b[o] + crate::vecmath::dot(row, &a);
            }
            inputs.push(a);
            pre.push(z.clone());
            if l < n_layers - 1 {
                z.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            a = z;
        }
        (a, ForwardTrace { inputs, pre })
    }

    pub fn forward(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        if x.len() != self.state_dim() {
            return Err(FsError::DimMismatch {
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        Ok(self.forward_traced(x, t).0)
    }

    /// Backpropagates `dl_dout` (gradient of the loss w.r.t. the network
    /// output) through the trace, accumulating into `grad`.
    fn backward_into(&self, trace: &ForwardTrace, dl_dout: &[f64], grad: &mut [f64]) {
        let n_layers = self.layer_dims.len() - 1;
        let mut delta = dl_dout.to_vec();
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.layer_dims[l + 1] * self.layer_dims[l] + self.layer_dims[l + 1];
        }
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            if l < n_layers - 1 {
                for o in 0..fan_out {
                    delta[o] *= self.activation.derivative(trace.pre[l][o]);
                }
            }
            let base = offsets[l];
            let a = &trace.inputs[l];
            for o in 0..fan_out {
                let wg = &mut grad[base + o * fan_in..base + (o + 1) * fan_in];
                for i in 0..fan_in {
                    wg[i] += delta[o] * a[i];
                }
                grad[base + fan_out * fan_in + o] += delta[o];
            }
            if l > 0 {
                let w = &self.params[base..base + fan_out * fan_in];
                let mut prev = vec![0.0; fan_in];
                for o in 0..fan_out {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    for i in 0..fan_in {
                        prev[i] += delta[o] * row[i];
                    }
                }
                delta = prev;
            }
        }
    }

    /// Mean-squared regression loss over a batch and its parameter gradient.
    ///
    /// Euclidean: mean_b ||f(x_b, t_b) - y_b||^2.
    /// On a manifold, both prediction and target are first projected onto the
    /// tangent space at x_b and the residual is measured in the metric.
    pub fn loss_and_grad(
        &self,
        xs: &[Vec<f64>],
        ts: &[f64],
        ys: &[Vec<f64>],
        manifold: Option<&ManifoldSpec>,
    ) -> Result<(f64, Vec<f64>)> {
        if xs.is_empty() {
            return Err(FsError::Empty { what: "training batch" });
        }
        if xs.len() != ts.len() || xs.len() != ys.len() {
            return Err(FsError::DimMismatch {
                expected: xs.len(),
                got: ts.len().min(ys.len()),
            });
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let inv_b = 1.0 / xs.len() as f64;
        for ((x, &t), y) in xs.iter().zip(ts).zip(ys) {
            let (out, trace) = self.forward_traced(x, t);
            let (residual, dl_dout) = match manifold {
                None => {
                    let r: Vec<f64> = out.iter().zip(y).map(|(o, yi)| o - yi).collect();
                    let d: Vec<f64> = r.iter().map(|ri| 2.0 * inv_b * ri).collect();
                    (r, d)
                }
                Some(spec) => {
                    let base = Point::on_manifold(spec, x.clone())?;
                    let pred_t = project_tangent(spec, &base, &out)?;
                    let targ_t = project_tangent(spec, &base, y)?;
                    let r: Vec<f64> = pred_t
                        .coords
                        .iter()
                        .zip(&targ_t.coords)
                        .map(|(p, q)| p - q)
                        .collect();
                    // d/d(out) of ||P(out - y)||_Sigma^2 is 2 P^T Sigma P (out - y)
                    // = 2 Sigma r: the projector satisfies P^T Sigma = Sigma P,
                    // and r = P(out - y) is already tangent
                    let weighted: Vec<f64> = r
                        .iter()
                        .enumerate()
                        .map(|(i, ri)| 2.0 * inv_b * spec.sigma_diag[i] * ri)
                        .collect();
                    (r, weighted)
                }
            };
            match manifold {
                None => loss += inv_b * crate::vecmath::dot(&residual, &residual),
                Some(spec) => {
                    loss += inv_b
                        * residual
                            .iter()
                            .enumerate()
                            .map(|(i, ri)| spec.sigma_diag[i] * ri * ri)
                            .sum::<f64>()
                }
            }
            self.backward_into(&trace, &dl_dout, &mut grad);
        }
        if !loss.is_finite() || !all_finite(&grad) {
            return Err(FsError::NonFinite {
                context: "loss_and_grad".into(),
            });
        }
        Ok((loss, grad))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CKPT_MAGIC);
        buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.layer_dims.len() as u32).to_le_bytes());
        for &d in &self.layer_dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        buf.extend_from_slice(&self.activation.id().to_le_bytes());
        buf.extend_from_slice(&(self.time_features as u32).to_le_bytes());
        buf.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for &p in &self.params {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cur = 0usize;
        let take = |cur: &mut usize, n: usize| -> Result<&[u8]> {
            if *cur + n > bytes.len() {
                return Err(FsError::Checkpoint("truncated checkpoint".into()));
            }
            let s = &bytes[*cur..*cur + n];
            *cur += n;
            Ok(s)
        };
        let magic = take(&mut cur, 4)?;
        if magic != CKPT_MAGIC {
            return Err(FsError::Checkpoint(format!(
                "bad magic {:?}, expected {:?}",
                magic, CKPT_MAGIC
            )));
        }
        let version = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap());
        if version != CKPT_VERSION {
            return Err(FsError::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let n_dims = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize;
        if n_dims < 2 || n_dims > 1024 {
            return Err(FsError::Checkpoint(format!("bad layer count {n_dims}")));
        }
        let mut layer_dims = Vec::with_capacity(n_dims);
        for _ in 0..n_dims {
            layer_dims.push(u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize);
        }
        let activation =
            Activation::from_id(u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()))?;
        let time_features =
            u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize;
        let n_params = u64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap()) as usize;
        if n_params != Self::param_count(&layer_dims) {
            return Err(FsError::Checkpoint(format!(
                "param count {n_params} does not match layer dims {layer_dims:?}"
            )));
        }
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            params.push(f64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap()));
        }
        if cur != bytes.len() {
            return Err(FsError::Checkpoint("trailing bytes in checkpoint".into()));
        }
        if layer_dims[0] != *layer_dims.last().unwrap() + 2 * time_features {
            return Err(FsError::Checkpoint(
                "input dim inconsistent with state dim and time features".into(),
            ));
        }
        Ok(DriftModel {
            layer_dims,
            activation,
            time_features,
            params,
        })
    }
}

/// Adam optimizer state (beta1 = 0.9, beta2 = 0.999, eps = 1e-8).
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState {
            lr,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(FsError::DimMismatch {
                expected: self.m.len(),
                got: params.len().min(grad.len()),
            });
        }
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t as i32);
        let c2 = 1.0 - B2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + EPS);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Role};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn randomize(model: &mut DriftModel, seed: u64) {
        let mut rng = stream(seed, Role::Oracle { tag: 500 });
        for p in model.params.iter_mut() {
            *p = rng.sample::<f64, _>(StandardNormal) * 0.3;
        }
    }

    #[test]
    fn zero_final_layer_gives_zero_output() {
        let m = DriftModel::new(3, &[16, 16], Activation::Silu, 4, 0).unwrap();
        let out = m.forward(&[1.0, -0.5, 2.0], 0.3).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences_many_nets() {
        let mut rng = stream(7, Role::Oracle { tag: 501 });
        for trial in 0..20 {
            let dim = rng.gen_range(1..=4);
            let width = rng.gen_range(4..=12);
            let depth = rng.gen_range(1..=3);
            let act = if trial % 2 == 0 { Activation::Silu } else { Activation::Tanh };
            let mut m =
                DriftModel::new(dim, &vec![width; depth], act, 3, trial as u64).unwrap();
            randomize(&mut m, 100 + trial as u64);

            let b = 4;
            let xs: Vec<Vec<f64>> = (0..b)
                .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            let ts: Vec<f64> = (0..b).map(|_| rng.gen_range(0.05..1.0)).collect();
            let ys: Vec<Vec<f64>> = (0..b)
                .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();

            let (_, grad) = m.loss_and_grad(&xs, &ts, &ys, None).unwrap();
            let h = 1e-6;
            // spot-check a subset of parameters
            let n_check = 25.min(m.params.len());
            let stride = (m.params.len() / n_check).max(1);
            for pi in (0..m.params.len()).step_by(stride) {
                let orig = m.params[pi];
                m.params[pi] = orig + h;
                let (lp, _) = m.loss_and_grad(&xs, &ts, &ys, None).unwrap();
                m.params[pi] = orig - h;
                let (lm, _) = m.loss_and_grad(&xs, &ts, &ys, None).unwrap();
                m.params[pi] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let denom = grad[pi].abs().max(fd.abs()).max(1e-6);
                assert!(
                    (grad[pi] - fd).abs() / denom < 1e-4,
                    "trial {trial} param {pi}: analytic {} fd {}",
                    grad[pi],
                    fd
                );
            }
        }
    }

    #[test]
    fn manifold_gradient_matches_finite_differences() {
        let spec = ManifoldSpec::sphere(2);
        let mut rng = stream(8, Role::Oracle { tag: 502 });
        let mut m = DriftModel::new(3, &[8], Activation::Silu, 2, 9).unwrap();
        randomize(&mut m, 200);
        let b = 3;
        let xs: Vec<Vec<f64>> = (0..b)
            .map(|_| {
                let mut v: Vec<f64> =
                    (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let n = crate::vecmath::norm2(&v);
                v.iter_mut().for_each(|c| *c /= n);
                v
            })
            .collect();
        let ts: Vec<f64> = (0..b).map(|_| rng.gen_range(0.1..1.0)).collect();
        let ys: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let (_, grad) = m.loss_and_grad(&xs, &ts, &ys, Some(&spec)).unwrap();
        let h = 1e-6;
        for pi in (0..m.params.len()).step_by(7) {
            let orig = m.params[pi];
            m.params[pi] = orig + h;
            let (lp, _) = m.loss_and_grad(&xs, &ts, &ys, Some(&spec)).unwrap();
            m.params[pi] = orig - h;
            let (lm, _) = m.loss_and_grad(&xs, &ts, &ys, Some(&spec)).unwrap();
            m.params[pi] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let denom = grad[pi].abs().max(fd.abs()).max(1e-6);
            assert!((grad[pi] - fd).abs() / denom < 1e-4);
        }
    }

    #[test]
    fn adam_converges_on_quadratic() {
        // minimize ||p - p*||^2 directly through the optimizer
        let target = [1.5, -2.0, 0.5];
        let mut p = vec![0.0; 3];
        let mut adam = AdamState::new(3, 0.05);
        for _ in 0..2000 {
            let grad: Vec<f64> = p.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            adam.step(&mut p, &grad).unwrap();
        }
        for (a, b) in p.iter().zip(&target) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn mlp_fits_simple_function() {
        // regress f(x, t) = t * x on a tiny net
        let mut m = DriftModel::new(1, &[32, 32], Activation::Silu, 4, 11).unwrap();
        let mut adam = AdamState::new(m.params.len(), 3e-3);
        let mut rng = stream(12, Role::Oracle { tag: 503 });
        for _ in 0..1500 {
            let xs: Vec<Vec<f64>> = (0..32)
                .map(|_| vec![rng.gen_range(-2.0..2.0)])
                .collect();
            let ts: Vec<f64> = (0..32).map(|_| rng.gen_range(0.0..1.0)).collect();
            let ys: Vec<Vec<f64>> = xs
                .iter()
                .zip(&ts)
                .map(|(x, &t)| vec![t * x[0]])
                .collect();
            let (_, grad) = m.loss_and_grad(&xs, &ts, &ys, None).unwrap();
            adam.step(&mut m.params, &grad).unwrap();
        }
        let mut max_err: f64 = 0.0;
        for &x in &[-1.5, -0.5, 0.0, 0.7, 1.8] {
            for &t in &[0.1, 0.5, 0.9] {
                let out = m.forward(&[x], t).unwrap()[0];
                max_err = max_err.max((out - t * x).abs());
            }
        }
        assert!(max_err < 0.05, "max_err {max_err}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fsmp");
        let mut m = DriftModel::new(4, &[8, 8], Activation::Tanh, 5, 3).unwrap();
        randomize(&mut m, 42);
        m.save(&path).unwrap();
        let loaded = DriftModel::load(&path).unwrap();
        assert_eq!(m.layer_dims, loaded.layer_dims);
        assert_eq!(m.activation, loaded.activation);
        assert_eq!(m.time_features, loaded.time_features);
        assert_eq!(m.params, loaded.params);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fsmp");
        let m = DriftModel::new(2, &[4], Activation::Silu, 2, 1).unwrap();
        m.save(&path).unwrap();

        // bad magic
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        let bad = dir.path().join("bad.fsmp");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(DriftModel::load(&bad), Err(FsError::Checkpoint(_))));

        // truncated
        let orig = std::fs::read(&path).unwrap();
        std::fs::write(&bad, &orig[..orig.len() - 3]).unwrap();
        assert!(matches!(DriftModel::load(&bad), Err(FsError::Checkpoint(_))));

        // trailing garbage
        let mut ext = orig.clone();
        ext.push(0);
        std::fs::write(&bad, &ext).unwrap();
        assert!(matches!(DriftModel::load(&bad), Err(FsError::Checkpoint(_))));
    }
}
