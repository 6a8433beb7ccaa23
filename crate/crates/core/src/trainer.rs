//! Fixed-point training loop: alternate exploration (simulate the current
//! model, score the endpoints, store pairs) with optimization (regress the
//! drift network onto conditional drift targets built from stored pairs).

use crate::error::{FsError, Result};
use crate::geometry::{geodesic_interpolant, ManifoldKind, Point};
use crate::net::{Activation, AdamState, DriftModel};
use crate::process::{euclid_drift_target, interpolate, riemann_drift_target};
use crate::rng::{stream, Role};
use crate::sde::{em_euclid, em_manifold, SolverConfig};
use crate::targets::{clip_score, zero_com_project, TargetDensity};
use crate::vecmath::norm2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::path::PathBuf;

/// Batch rows per parallel gradient chunk; fixed so that results do not
/// depend on the worker count.
const GRAD_CHUNK: usize = 32;

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: Vec<(Vec<f64>, Vec<f64>)>,
    /// Next slot to overwrite once full (FIFO ring head).
    head: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(FsError::Config("buffer capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            entries: Vec::new(),
            head: 0,
            inserted: 0,
        })
    }

    pub fn push(&mut self, x1: Vec<f64>, score1: Vec<f64>) {
        if self.entries.len() < self.capacity {
            self.entries.push((x1, score1));
        } else {
            self.entries[self.head] = (x1, score1);
            self.head = (self.head + 1) % self.capacity;
        }
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn get(&self, idx: usize) -> &(Vec<f64>, Vec<f64>) {
        &self.entries[idx]
    }

    /// Uniform-with-replacement index sample.
    pub fn sample_indices(&self, batch: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        if self.entries.is_empty() {
            return Err(FsError::Empty { what: "replay buffer" });
        }
        Ok((0..batch).map(|_| rng.gen_range(0..self.entries.len())).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Vec<f64>, Vec<f64>)> {
        self.entries.iter()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GammaMode {
    Fixed(f64),
    /// gamma = c / sqrt(mean ||score||^2 + eps), refreshed after each
    /// exploration phase.
    Adaptive { c: f64, eps: f64 },
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub outer_loops: usize,
    pub inner_loops: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub new_samples_per_outer: usize,
    pub nfe_train: usize,
    pub gamma_mode: GammaMode,
    pub clip_threshold: f64,
    pub seed: u64,
    pub t_min: f64,
    pub hidden_dims: Vec<usize>,
    pub time_features: usize,
    pub learning_rate: f64,
    /// When set, the learning rate decays linearly from `learning_rate` to
    /// this value over the outer rounds; None keeps it constant.
    pub learning_rate_final: Option<f64>,
    /// Write ckpt_{round}.fsmp into this directory when set.
    pub out_dir: Option<PathBuf>,
    /// Checkpoint every k rounds (the final round is always written when
    /// out_dir is set); 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
}

impl TrainConfig {
    /// Paper-scale defaults: buffer 10,000; 1,024 new samples per round;
    /// batch 512; learning rate 3e-4; score clipping at 100.
    pub fn paper_scale(seed: u64) -> Self {
        TrainConfig {
            outer_loops: 100,
            inner_loops: 50,
            batch_size: 512,
            buffer_capacity: 10_000,
            new_samples_per_outer: 1024,
            nfe_train: 128,
            gamma_mode: GammaMode::Adaptive { c: 1.0, eps: 1e-8 },
            clip_threshold: 100.0,
            seed,
            t_min: 1e-3,
            hidden_dims: vec![128, 128, 128, 128],
            time_features: 8,
            learning_rate: 3e-4,
            learning_rate_final: None,
            out_dir: None,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || self.buffer_capacity == 0
            || self.new_samples_per_outer == 0
            || self.nfe_train == 0
        {
            return Err(FsError::Config("all training counts must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.t_min) {
            return Err(FsError::Config("t_min must lie in [0, 1)".into()));
        }
        if self.clip_threshold <= 0.0 {
            return Err(FsError::Config("clip_threshold must be positive".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(FsError::Config("learning_rate must be positive".into()));
        }
        if let Some(lr_final) = self.learning_rate_final {
            if lr_final <= 0.0 {
                return Err(FsError::Config(
                    "learning_rate_final must be positive".into(),
                ));
            }
        }
        match self.gamma_mode {
            GammaMode::Fixed(g) if g < 0.0 => {
                Err(FsError::Config("fixed gamma must be non-negative".into()))
            }
            GammaMode::Adaptive { c, eps } if c <= 0.0 || eps < 0.0 => {
                Err(FsError::Config("adaptive gamma requires c > 0, eps >= 0".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RoundMetrics {
    pub round: usize,
    pub loss_mean: f64,
    pub gamma: f64,
    pub buffer_len: usize,
    pub score_calls_total: u64,
    /// Zero unless FS_TIMING=1; kept out of the default output so repeated
    /// runs produce identical metrics files.
    pub wallclock_s: f64,
}

/// Worker cap: FS_THREADS when set, otherwise the machine's parallelism.
pub fn thread_count() -> usize {
    std::env::var("FS_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// Maps `f` over 0..n on up to `thread_count()` workers, returning results in
/// index order. Each item must be independent of the others.
fn parallel_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = thread_count().min(n.max(1));
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(workers);
    let mut pieces: Vec<Vec<T>> = Vec::with_capacity(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let f = &f;
                let lo = w * chunk;
                let hi = ((w + 1) * chunk).min(n);
                scope.spawn(move || (lo..hi).map(f).collect::<Vec<T>>())
            })
            .collect();
        for h in handles {
            pieces.push(h.join().expect("worker panicked"));
        }
    });
    pieces.into_iter().flatten().collect()
}

/// Draws one source sample: standard normal (Euclidean), mean-free projected
/// normal (particle systems), uniform (sphere).
pub fn sample_source(target: &TargetDensity, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x: Vec<f64> = (0..target.dim).map(|_| rng.sample(StandardNormal)).collect();
    if let Some(layout) = target.particle_layout() {
        x = zero_com_project(&x, layout);
    } else if let Some(spec) = &target.manifold {
        let radius = 1.0 / spec.kappa.sqrt();
        let n = norm2(&x);
        x.iter_mut().for_each(|c| *c *= radius / n);
    }
    x
}

/// Context shared by the training phases.
pub struct Trainer {
    pub target: TargetDensity,
    pub cfg: TrainConfig,
    pub model: DriftModel,
    pub buffer: ReplayBuffer,
    pub score_calls: u64,
    /// Trajectories dropped for producing non-finite states.
    pub dropped_trajectories: u64,
    gamma: f64,
    adam: AdamState,
}

impl Trainer {
    pub fn new(target: TargetDensity, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if let Some(spec) = &target.manifold {
            if spec.kind != ManifoldKind::Sphere {
                return Err(FsError::Config(
                    "training supports Euclidean and sphere targets".into(),
                ));
            }
        }
        let model = DriftModel::new(
            target.dim,
            &cfg.hidden_dims,
            Activation::Silu,
            cfg.time_features,
            cfg.seed,
        )?;
        let buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
        let gamma = match cfg.gamma_mode {
            GammaMode::Fixed(g) => g,
            // before any endpoints exist, fall back to the scale constant
            GammaMode::Adaptive { c, .. } => c,
        };
        let adam = AdamState::new(model.params.len(), cfg.learning_rate);
        Ok(Trainer {
            target,
            cfg,
            model,
            buffer,
            score_calls: 0,
            dropped_trajectories: 0,
            gamma,
            adam,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn sample_source(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        sample_source(&self.target, rng)
    }

    /// Exploration phase: simulates `new_samples_per_outer` trajectories with
    /// the current (detached) model, scores each surviving endpoint exactly
    /// once, and stores the clipped pairs. Returns the number of new entries.
    pub fn explore(&mut self, round: usize) -> Result<usize> {
        let cfg = &self.cfg;
        let solver = SolverConfig {
            nfe: cfg.nfe_train,
            gamma: self.gamma,
            t_start: 0.0,
        };
        let model = &self.model;
        let target = &self.target;
        let layout = target.particle_layout();
        let manifold = target.manifold.clone();
        let seed = cfg.seed;

        let endpoints: Vec<Result<Vec<f64>>> =
            parallel_map(cfg.new_samples_per_outer, |traj| {
                let mut rng = stream(
                    seed,
                    Role::Explore {
                        round: round as u64,
                        trajectory: traj as u64,
                    },
                );
                let dim = target.dim;
                let mut x0: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                match &manifold {
                    Some(spec) => {
                        let radius = 1.0 / spec.kappa.sqrt();
                        let n = norm2(&x0);
                        x0.iter_mut().for_each(|c| *c *= radius / n);
                        let start = Point::on_manifold(spec, x0)?;
                        let drift = |x: &Point, t: f64| model.forward(&x.coords, t);
                        em_manifold(spec, &start, &drift, &solver, &mut rng, None)
                            .map(|p| p.coords)
                    }
                    None => {
                        if let Some(l) = layout {
                            x0 = zero_com_project(&x0, l);
                            let drift = |x: &[f64], t: f64| {
                                model.forward(x, t).map(|u| zero_com_project(&u, l))
                            };
                            let proj = |z: &mut [f64]| {
                                let p = zero_com_project(z, l);
                                z.copy_from_slice(&p);
                            };
                            em_euclid(&x0, &drift, &solver, &mut rng, Some(&proj), None)
                        } else {
                            let drift = |x: &[f64], t: f64| model.forward(x, t);
                            em_euclid(&x0, &drift, &solver, &mut rng, None, None)
                        }
                    }
                }
            });

        let mut added = 0;
        for ep in endpoints {
            match ep {
                Ok(x1) => {
                    let g = self.target.score(&x1)?;
                    self.score_calls += 1;
                    self.buffer.push(x1, clip_score(&g, self.cfg.clip_threshold));
                    added += 1;
                }
                Err(FsError::NonFinite { .. }) => self.dropped_trajectories += 1,
                Err(e) => return Err(e),
            }
        }
        Ok(added)
    }

    /// gamma = c / sqrt(mean_buffer ||score||^2 + eps).
    pub fn adaptive_gamma(buffer: &ReplayBuffer, c: f64, eps: f64) -> Result<f64> {
        if buffer.is_empty() {
            return Err(FsError::Empty { what: "replay buffer" });
        }
        let mean_sq: f64 = buffer
            .iter()
            .map(|(_, g)| {
                let n = norm2(g);
                n * n
            })
            .sum::<f64>()
            / buffer.len() as f64;
        Ok(c / (mean_sq + eps).sqrt())
    }

    pub fn refresh_gamma(&mut self) -> Result<()> {
        if let GammaMode::Adaptive { c, eps } = self.cfg.gamma_mode {
            self.gamma = Self::adaptive_gamma(&self.buffer, c, eps)?;
        }
        Ok(())
    }

    /// One regression example: interpolant state, time, and drift target.
    fn build_example(
        &self,
        idx: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<f64>, f64, Vec<f64>)> {
        let (x1, score1) = self.buffer.get(idx);
        // near-antipodal draws on the sphere hit the cut locus; redraw
        for _attempt in 0..100 {
            let x0 = self.sample_source(rng);
            let t = rng.gen_range(self.cfg.t_min..1.0);
            match &self.target.manifold {
                None => {
                    let xt = interpolate(&x0, x1, t)?;
                    let y = euclid_drift_target(&x0, x1, score1, self.gamma)?;
                    return Ok((xt, t, y));
                }
                Some(spec) => {
                    let p0 = Point::on_manifold(spec, x0)?;
                    let p1 = Point::on_manifold(spec, x1.clone())?;
                    let interp = geodesic_interpolant(spec, &p0, &p1, t);
                    let tgt = riemann_drift_target(spec, &p0, &p1, score1, t, self.gamma);
                    match (interp, tgt) {
                        (Ok(xt), Ok(y)) => return Ok((xt.coords, t, y.coords)),
                        (Err(FsError::CutLocus), _)
                        | (Err(FsError::AntipodalMidpoint), _)
                        | (_, Err(FsError::CutLocus))
                        | (_, Err(FsError::AntipodalMidpoint)) => continue,
                        (Err(e), _) | (_, Err(e)) => return Err(e),
                    }
                }
            }
        }
        Err(FsError::Domain {
            what: "could not draw a non-antipodal source point".into(),
        })
    }

    /// Batch loss and gradient computed over fixed-size chunks in parallel;
    /// the chunk layout and reduction order are independent of the worker
    /// count, so results are reproducible under FS_THREADS.
    fn chunked_loss_and_grad(
        &self,
        xs: &[Vec<f64>],
        ts: &[f64],
        ys: &[Vec<f64>],
    ) -> Result<(f64, Vec<f64>)> {
        let b = xs.len();
        let n_chunks = b.div_ceil(GRAD_CHUNK);
        let manifold = self.target.manifold.as_ref();
        let parts: Vec<Result<(f64, Vec<f64>)>> = parallel_map(n_chunks, |c| {
            let lo = c * GRAD_CHUNK;
            let hi = ((c + 1) * GRAD_CHUNK).min(b);
            self.model
                .loss_and_grad(&xs[lo..hi], &ts[lo..hi], &ys[lo..hi], manifold)
        });
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.model.params.len()];
        for (c, part) in parts.into_iter().enumerate() {
            let (l, g) = part?;
            let lo = c * GRAD_CHUNK;
            let hi = ((c + 1) * GRAD_CHUNK).min(b);
            let w = (hi - lo) as f64 / b as f64;
            loss += w * l;
            for i in 0..grad.len() {
                grad[i] += w * g[i];
            }
        }
        Ok((loss, grad))
    }

    /// Optimization phase: `inner_loops` gradient steps on buffer batches.
    /// Performs no score evaluations. Returns the mean batch loss.
    pub fn optimize(&mut self, round: usize) -> Result<f64> {
        if self.cfg.inner_loops == 0 {
            return Ok(0.0);
        }
        if self.buffer.is_empty() {
            return Err(FsError::Empty { what: "replay buffer" });
        }
        let mut rng = stream(self.cfg.seed, Role::Optimize { round: round as u64 });
        if let Some(lr_final) = self.cfg.learning_rate_final {
            let span = (self.cfg.outer_loops.max(2) - 1) as f64;
            let frac = ((round.saturating_sub(1)) as f64 / span).min(1.0);
            self.adam.lr = self.cfg.learning_rate
                + frac * (lr_final - self.cfg.learning_rate);
        }
        let mut loss_sum = 0.0;
        for _ in 0..self.cfg.inner_loops {
            let idxs = self.buffer.sample_indices(self.cfg.batch_size, &mut rng)?;
            let mut xs = Vec::with_capacity(idxs.len());
            let mut ts = Vec::with_capacity(idxs.len());
            let mut ys = Vec::with_capacity(idxs.len());
            for idx in idxs {
                let (x, t, y) = self.build_example(idx, &mut rng)?;
                xs.push(x);
                ts.push(t);
                ys.push(y);
            }
            let (loss, grad) = self.chunked_loss_and_grad(&xs, &ts, &ys)?;
            self.adam.step(&mut self.model.params, &grad)?;
            loss_sum += loss;
        }
        Ok(loss_sum / self.cfg.inner_loops as f64)
    }

    /// Full training loop. Rounds are 1-indexed in metrics and checkpoint
    /// names.
    pub fn train(&mut self) -> Result<Vec<RoundMetrics>> {
        let timing = std::env::var("FS_TIMING").map(|v| v == "1").unwrap_or(false);
        let mut log = Vec::with_capacity(self.cfg.outer_loops);
        for round in 1..=self.cfg.outer_loops {
            let t0 = std::time::Instant::now();
            let step = |e: FsError| FsError::TrainRound {
                round,
                source: Box::new(e),
            };
            self.explore(round).map_err(step)?;
            self.refresh_gamma().map_err(step)?;
            let loss_mean = self.optimize(round).map_err(step)?;
            let metrics = RoundMetrics {
                round,
                loss_mean,
                gamma: self.gamma,
                buffer_len: self.buffer.len(),
                score_calls_total: self.score_calls,
                wallclock_s: if timing { t0.elapsed().as_secs_f64() } else { 0.0 },
            };
            log.push(metrics);
            if let Some(dir) = &self.cfg.out_dir {
                let due = self.cfg.checkpoint_every != 0
                    && round % self.cfg.checkpoint_every == 0;
                if due || round == self.cfg.outer_loops {
                    self.model
                        .save(&dir.join(format!("ckpt_{round}.fsmp")))
                        .map_err(step)?;
                }
            }
        }
        Ok(log)
    }
}

/// Convenience entry point: builds a trainer, runs it, and returns the final
/// model with its per-round metrics.
pub fn train(target: TargetDensity, cfg: TrainConfig) -> Result<(DriftModel, Vec<RoundMetrics>)> {
    let mut tr = Trainer::new(target, cfg)?;
    let log = tr.train()?;
    Ok((tr.model, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            outer_loops: 2,
            inner_loops: 3,
            batch_size: 16,
            buffer_capacity: 64,
            new_samples_per_outer: 8,
            nfe_train: 8,
            gamma_mode: GammaMode::Fixed(0.5),
            clip_threshold: 100.0,
            seed,
            t_min: 1e-3,
            hidden_dims: vec![16],
            time_features: 2,
            learning_rate: 3e-4,
            learning_rate_final: None,
            out_dir: None,
            checkpoint_every: 0,
        }
    }

    fn gmm_1d() -> TargetDensity {
        TargetDensity::gmm(vec![vec![2.0]], vec![1.0], 1.0).unwrap()
    }

    #[test]
    fn buffer_fifo_eviction() {
        let mut b = ReplayBuffer::new(5).unwrap();
        for i in 0..8 {
            b.push(vec![i as f64], vec![0.0]);
        }
        assert_eq!(b.len(), 5);
        assert_eq!(b.inserted(), 8);
        let present: Vec<f64> = b.iter().map(|(x, _)| x[0]).collect();
        for evicted in 0..3 {
            assert!(!present.contains(&(evicted as f64)));
        }
        for kept in 3..8 {
            assert!(present.contains(&(kept as f64)));
        }
    }

    #[test]
    fn buffer_sampling_uniform_with_replacement() {
        let mut b = ReplayBuffer::new(4).unwrap();
        for i in 0..4 {
            b.push(vec![i as f64], vec![0.0]);
        }
        let mut rng = stream(1, Role::Optimize { round: 0 });
        let idxs = b.sample_indices(4000, &mut rng).unwrap();
        let mut counts = [0usize; 4];
        for i in idxs {
            counts[i] += 1;
        }
        for c in counts {
            assert!((c as f64 / 4000.0 - 0.25).abs() < 0.05);
        }
    }

    #[test]
    fn explore_grows_buffer_and_counts_scores() {
        let mut tr = Trainer::new(gmm_1d(), tiny_cfg(3)).unwrap();
        let added = tr.explore(1).unwrap();
        assert_eq!(added, 8);
        assert_eq!(tr.buffer.len(), 8);
        assert_eq!(tr.score_calls, 8);
        assert_eq!(tr.dropped_trajectories, 0);
    }

    #[test]
    fn zero_model_explore_matches_driftless_process() {
        // zero-initialized final layer: endpoints follow x0 + noise; with
        // gamma = 0 they equal x0 exactly
        let mut cfg = tiny_cfg(4);
        cfg.gamma_mode = GammaMode::Fixed(0.0);
        cfg.new_samples_per_outer = 32;
        let mut tr = Trainer::new(gmm_1d(), cfg).unwrap();
        tr.explore(1).unwrap();
        for (traj, (x1, _)) in tr.buffer.iter().enumerate() {
            let mut rng = stream(4, Role::Explore { round: 1, trajectory: traj as u64 });
            let x0: f64 = rng.sample(StandardNormal);
            assert!((x1[0] - x0).abs() < 1e-12);
        }
    }

    #[test]
    fn optimize_makes_no_score_calls_and_inner_zero_is_noop() {
        let mut tr = Trainer::new(gmm_1d(), tiny_cfg(5)).unwrap();
        tr.explore(1).unwrap();
        let calls = tr.score_calls;
        tr.optimize(1).unwrap();
        assert_eq!(tr.score_calls, calls);

        let mut tr2 = Trainer::new(gmm_1d(), tiny_cfg(5)).unwrap();
        tr2.cfg.inner_loops = 0;
        tr2.explore(1).unwrap();
        let params_before = tr2.model.params.clone();
        tr2.optimize(1).unwrap();
        assert_eq!(tr2.model.params, params_before);
    }

    #[test]
    fn adaptive_gamma_examples() {
        let mut b = ReplayBuffer::new(8).unwrap();
        for _ in 0..4 {
            b.push(vec![0.0], vec![2.0]); // ||g||^2 = 4
        }
        assert!((Trainer::adaptive_gamma(&b, 1.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((Trainer::adaptive_gamma(&b, 2.0, 0.0).unwrap() - 1.0).abs() < 1e-15);
        let mut z = ReplayBuffer::new(8).unwrap();
        z.push(vec![0.0], vec![0.0]);
        assert!((Trainer::adaptive_gamma(&z, 1.0, 1e-8).unwrap() - 1e4).abs() < 1e-6);
        let empty = ReplayBuffer::new(8).unwrap();
        assert!(Trainer::adaptive_gamma(&empty, 1.0, 0.0).is_err());
    }

    #[test]
    fn single_pair_regression_learns_displacement() {
        // buffer pinned to one (x1, score) with gamma = 0: learned drift at
        // the interpolant must approach x1 - x0
        let mut cfg = tiny_cfg(6);
        cfg.inner_loops = 6000;
        cfg.batch_size = 64;
        cfg.learning_rate = 3e-3;
        cfg.hidden_dims = vec![32, 32];
        cfg.gamma_mode = GammaMode::Fixed(0.0);
        let mut tr = Trainer::new(gmm_1d(), cfg).unwrap();
        tr.buffer.push(vec![1.5], vec![0.0]);
        tr.optimize(1).unwrap();
        let x1 = 1.5;
        for &(x0, t) in &[(0.4f64, 0.3f64), (-0.8, 0.7), (1.0, 0.5)] {
            let xt = (1.0 - t) * x0 + t * x1;
            let pred = tr.model.forward(&[xt], t).unwrap()[0];
            // loose bound: this checks the regressed quantity is x1 - x0,
            // not the fit quality of a small net on a stiff target
            assert!((pred - (x1 - x0)).abs() < 0.1, "pred {pred} vs {}", x1 - x0);
        }
    }

    #[test]
    fn train_deterministic_and_budget_exact() {
        let (m1, log1) = train(gmm_1d(), tiny_cfg(7)).unwrap();
        let (m2, log2) = train(gmm_1d(), tiny_cfg(7)).unwrap();
        assert_eq!(m1.params, m2.params);
        assert_eq!(log1.len(), 2);
        for (a, b) in log1.iter().zip(&log2) {
            assert_eq!(a.loss_mean.to_bits(), b.loss_mean.to_bits());
            assert_eq!(a.gamma.to_bits(), b.gamma.to_bits());
            assert_eq!(a.score_calls_total, b.score_calls_total);
        }
        let cfg = tiny_cfg(7);
        assert_eq!(
            log1.last().unwrap().score_calls_total,
            (cfg.outer_loops * cfg.new_samples_per_outer) as u64
        );
    }

    #[test]
    fn train_zero_rounds_returns_initial_model() {
        let mut cfg = tiny_cfg(8);
        cfg.outer_loops = 0;
        let init = Trainer::new(gmm_1d(), cfg.clone()).unwrap().model.params.clone();
        let (m, log) = train(gmm_1d(), cfg).unwrap();
        assert!(log.is_empty());
        assert_eq!(m.params, init);
    }

    #[test]
    fn results_independent_of_thread_count() {
        // guarded manipulation of FS_THREADS; tests in this binary that read
        // it run quickly enough that the env var race window is acceptable
        // only if we serialize: use a local lock
        static LOCK: std::sync::Mutex<()> = std::sync::Mutex::new(());
        let _g = LOCK.lock().unwrap();
        std::env::set_var("FS_THREADS", "1");
        let (m1, _) = train(gmm_1d(), tiny_cfg(9)).unwrap();
        std::env::set_var("FS_THREADS", "4");
        let (m4, _) = train(gmm_1d(), tiny_cfg(9)).unwrap();
        std::env::remove_var("FS_THREADS");
        assert_eq!(m1.params, m4.params);
    }

    #[test]
    fn particle_training_keeps_com_free_samples() {
        let target = TargetDensity::dw4(0.0, -4.0, 0.9, 4.0, 1.0);
        let mut cfg = tiny_cfg(10);
        cfg.gamma_mode = GammaMode::Adaptive { c: 1.0, eps: 1e-8 };
        let mut tr = Trainer::new(target, cfg).unwrap();
        tr.explore(1).unwrap();
        for (x1, _) in tr.buffer.iter() {
            for k in 0..2 {
                let com: f64 = (0..4).map(|i| x1[i * 2 + k]).sum::<f64>() / 4.0;
                assert!(com.abs() < 1e-10, "com {com}");
            }
        }
    }

    #[test]
    fn sphere_training_smoke() {
        let target = TargetDensity::vmf_mixture(
            vec![vec![0.0, 0.0, 1.0]],
            vec![10.0],
            vec![1.0],
        )
        .unwrap();
        let mut cfg = tiny_cfg(11);
        cfg.gamma_mode = GammaMode::Adaptive { c: 1.0, eps: 1e-8 };
        let (model, log) = train(target, cfg).unwrap();
        assert_eq!(log.len(), 2);
        assert!(log.iter().all(|m| m.loss_mean.is_finite() && m.gamma > 0.0));
        assert_eq!(model.state_dim(), 3);
    }
}
