//! Command-line entry point: train a sampler, draw samples from a
//! checkpoint, evaluate sample files against reference oracles, and run the
//! numerical verification suite.

use clap::{Parser, Subcommand};
use flow_sampling::config::RunConfig;
use flow_sampling::error::FsError;
use flow_sampling::geometry::Point;
use flow_sampling::metrics;
use flow_sampling::net::DriftModel;
use flow_sampling::rng::{stream, Role};
use flow_sampling::sde::{em_euclid, em_manifold, SolverConfig};
use flow_sampling::targets::{
    gmm_sample_oracle, langevin_reference, vmf_mixture_oracle, zero_com_project, TargetDensity,
    TargetKind,
};
use flow_sampling::trainer::{sample_source, GammaMode};
use flow_sampling::vecmath::fmt_full;
use flow_sampling::{trainer, verify};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_CHECKPOINT: u8 = 3;

#[derive(Parser)]
#[command(
    name = "fs",
    about = "Flow sampling: train diffusion samplers from unnormalized densities"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the training loop and write metrics, checkpoints, and the
    /// resolved config into the output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides out_dir from the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed override.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Draw samples from a trained checkpoint into a CSV file.
    Sample {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path; defaults to the final checkpoint in --out.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Solver steps per trajectory.
        #[arg(long)]
        nfe: Option<usize>,
        /// Number of samples.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Evaluate a sample CSV against a reference sample set.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Generated samples (CSV, one row per sample).
        #[arg(long)]
        samples: PathBuf,
        /// Reference samples; generated from the target's oracle when absent.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the numerical verification suite and print pass/fail per check.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                FsError::Config(_) | FsError::DimMismatch { .. } => ExitCode::from(EXIT_CONFIG),
                FsError::Checkpoint(_) => ExitCode::from(EXIT_CHECKPOINT),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn run(cmd: Command) -> Result<ExitCode, FsError> {
    match cmd {
        Command::Train { config, out, seed } => cmd_train(&config, out, seed),
        Command::Sample {
            config,
            ckpt,
            out,
            seed,
            nfe,
            n,
        } => cmd_sample(&config, ckpt, out, seed, nfe, n),
        Command::Eval {
            config,
            samples,
            reference,
            out,
            seed,
        } => cmd_eval(&config, &samples, reference, out, seed),
        Command::Verify { seed } => cmd_verify(seed),
    }
}

fn load_config(
    path: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<(RunConfig, PathBuf), FsError> {
    let mut cfg = RunConfig::from_path(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = &out {
        cfg.out_dir = o.display().to_string();
    }
    let out_dir = PathBuf::from(&cfg.out_dir);
    Ok((cfg, out_dir))
}

fn cmd_train(config: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<ExitCode, FsError> {
    let (mut cfg, out_dir) = load_config(config, out, seed)?;
    std::fs::create_dir_all(&out_dir)?;
    let target = cfg.target.build()?;
    let train_cfg = cfg.train_config(Some(out_dir.clone()))?;
    let mut tr = trainer::Trainer::new(target, train_cfg)?;
    let log = tr.train()?;

    let mut csv = String::from("round,loss_mean,gamma,buffer_len,score_calls_total,wallclock_s\n");
    for m in &log {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.round,
            fmt_full(m.loss_mean),
            fmt_full(m.gamma),
            m.buffer_len,
            m.score_calls_total,
            fmt_full(m.wallclock_s)
        ));
    }
    std::fs::write(out_dir.join("metrics.csv"), csv)?;

    cfg.gamma_final = log.last().map(|m| m.gamma);
    std::fs::write(out_dir.join("config.resolved"), cfg.to_toml()?)?;
    if tr.dropped_trajectories > 0 {
        eprintln!(
            "note: {} exploration trajectories diverged and were dropped",
            tr.dropped_trajectories
        );
    }
    println!(
        "trained {} rounds; {} score evaluations; outputs in {}",
        log.len(),
        log.last().map(|m| m.score_calls_total).unwrap_or(0),
        out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Noise scale for sampling: the value resolved by training when present,
/// otherwise the configured fixed value (adaptive mode falls back to its
/// scale constant).
fn sampling_gamma(cfg: &RunConfig) -> Result<f64, FsError> {
    if let Some(g) = cfg.gamma_final {
        return Ok(g);
    }
    Ok(match cfg.gamma.mode()? {
        GammaMode::Fixed(g) => g,
        GammaMode::Adaptive { c, .. } => c,
    })
}

fn generate_samples(
    model: &DriftModel,
    target: &TargetDensity,
    solver: &SolverConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, FsError> {
    let layout = target.particle_layout();
    (0..n)
        .map(|traj| {
            let mut rng = stream(seed, Role::Sample { trajectory: traj as u64 });
            let x0 = sample_source(target, &mut rng);
            match &target.manifold {
                Some(spec) => {
                    let start = Point::on_manifold(spec, x0)?;
                    let drift = |x: &Point, t: f64| model.forward(&x.coords, t);
                    em_manifold(spec, &start, &drift, solver, &mut rng, None).map(|p| p.coords)
                }
                None => {
                    if let Some(l) = layout {
                        let drift = |x: &[f64], t: f64| {
                            model.forward(x, t).map(|u| zero_com_project(&u, l))
                        };
                        let proj = |z: &mut [f64]| {
                            let p = zero_com_project(z, l);
                            z.copy_from_slice(&p);
                        };
                        em_euclid(&x0, &drift, solver, &mut rng, Some(&proj), None)
                    } else {
                        let drift = |x: &[f64], t: f64| model.forward(x, t);
                        em_euclid(&x0, &drift, solver, &mut rng, None, None)
                    }
                }
            }
        })
        .collect()
}

fn write_samples_csv(path: &Path, dim: usize, rows: &[Vec<f64>]) -> Result<(), FsError> {
    let header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    let mut csv = header.join(",");
    csv.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&v| fmt_full(v)).collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    std::fs::write(path, csv)?;
    Ok(())
}

fn cmd_sample(
    config: &Path,
    ckpt: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    nfe: Option<usize>,
    n: Option<usize>,
) -> Result<ExitCode, FsError> {
    let (cfg, out_dir) = load_config(config, out, seed)?;
    let target = cfg.target.build()?;
    let ckpt_path = match ckpt {
        Some(p) => p,
        None => out_dir.join(format!("ckpt_{}.fsmp", cfg.train.outer_loops)),
    };
    let model = DriftModel::load(&ckpt_path)?;
    if model.state_dim() != target.dim {
        return Err(FsError::DimMismatch {
            expected: target.dim,
            got: model.state_dim(),
        });
    }
    let solver = SolverConfig {
        nfe: nfe.unwrap_or(cfg.sample.nfe),
        gamma: sampling_gamma(&cfg)?,
        t_start: 0.0,
    };
    let n = n.unwrap_or(cfg.sample.n);
    let rows = generate_samples(&model, &target, &solver, n, cfg.seed)?;
    std::fs::create_dir_all(&out_dir)?;
    let path = out_dir.join(format!("samples_{}.csv", cfg.seed));
    write_samples_csv(&path, target.dim, &rows)?;
    println!("wrote {} samples to {}", rows.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

fn read_samples_csv(path: &Path) -> Result<Vec<Vec<f64>>, FsError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if ln == 0 && cells[0].parse::<f64>().is_err() {
            continue; // header row
        }
        let row: Result<Vec<f64>, _> = cells.iter().map(|c| c.trim().parse::<f64>()).collect();
        match row {
            Ok(r) => rows.push(r),
            Err(e) => {
                return Err(FsError::Config(format!(
                    "{}:{}: bad number: {e}",
                    path.display(),
                    ln + 1
                )))
            }
        }
    }
    Ok(rows)
}

/// Reference sample set for a target: its exact sampler when one exists,
/// otherwise a Langevin chain.
fn reference_samples(
    cfg: &RunConfig,
    target: &TargetDensity,
    n: usize,
) -> Result<Vec<Vec<f64>>, FsError> {
    match &target.kind {
        TargetKind::Gmm {
            centers,
            weights,
            variance,
        } => gmm_sample_oracle(centers, weights, *variance, n, cfg.seed ^ 0x5eed),
        TargetKind::VmfMixture {
            mus,
            kappas,
            weights,
        } => vmf_mixture_oracle(mus, kappas, weights, n, cfg.seed ^ 0x5eed),
        TargetKind::Dw4 { .. } | TargetKind::LennardJones { .. } => langevin_reference(
            target,
            n,
            cfg.eval.langevin_steps,
            cfg.eval.langevin_step_size,
            cfg.seed ^ 0x5eed,
        ),
    }
}

fn cmd_eval(
    config: &Path,
    samples_path: &Path,
    reference: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<ExitCode, FsError> {
    let (cfg, out_dir) = load_config(config, out, seed)?;
    let target = cfg.target.build()?;
    let samples = read_samples_csv(samples_path)?;
    if samples.is_empty() {
        return Err(FsError::Empty { what: "samples file" });
    }
    if samples.iter().any(|r| r.len() != target.dim) {
        return Err(FsError::DimMismatch {
            expected: target.dim,
            got: samples.iter().find(|r| r.len() != target.dim).unwrap().len(),
        });
    }
    let reference = match reference {
        Some(p) => read_samples_csv(&p)?,
        None => reference_samples(&cfg, &target, cfg.eval.n_samples)?,
    };
    if reference.iter().any(|r| r.len() != target.dim) {
        return Err(FsError::DimMismatch {
            expected: target.dim,
            got: reference[0].len(),
        });
    }

    let mut report: Vec<(String, f64)> = Vec::new();
    let energy = |x: &[f64]| target.reward(x).map(|r| -r);
    report.push((
        "energy_w2".into(),
        metrics::energy_w2(&samples, &reference, &energy)?,
    ));
    let k = samples.len().min(reference.len()).min(1024);
    report.push((
        "w2_assignment".into(),
        metrics::w2_assignment(&samples[..k], &reference[..k])?,
    ));
    let first = |rows: &[Vec<f64>]| -> Vec<f64> { rows.iter().map(|r| r[0]).collect() };
    report.push((
        "w2_first_coord".into(),
        metrics::w2_1d(&first(&samples), &first(&reference))?,
    ));
    if target.dim >= 2 {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for r in samples.iter().chain(&reference) {
            for i in 0..2 {
                lo[i] = lo[i].min(r[i]);
                hi[i] = hi[i].max(r[i]);
            }
        }
        for i in 0..2 {
            let pad = 1e-9 + 1e-9 * (hi[i] - lo[i]).abs();
            lo[i] -= pad;
            hi[i] += pad;
        }
        report.push((
            "jsd_2d".into(),
            metrics::jsd_2d_hist(&samples, &reference, lo, hi, cfg.eval.bins)?,
        ));
    }
    if let TargetKind::VmfMixture { mus, .. } = &target.kind {
        let w = metrics::sphere_mode_weights(&samples, mus)?;
        for (i, wi) in w.iter().enumerate() {
            report.push((format!("mode_weight_{i}"), *wi));
        }
        if let Ok(dirs) = metrics::sphere_mode_directions(&samples, mus) {
            for (i, (d, m)) in dirs.iter().zip(mus).enumerate() {
                let ang = flow_sampling::vecmath::dot(d, m).clamp(-1.0, 1.0).acos();
                report.push((format!("mode_angle_deg_{i}"), ang.to_degrees()));
            }
        }
    }

    let stem = samples_path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "samples".into());
    let mut csv = String::from("metric,value,n_samples,seed\n");
    for (name, value) in &report {
        csv.push_str(&format!(
            "{name},{},{},{}\n",
            fmt_full(*value),
            samples.len(),
            cfg.seed
        ));
        println!("{name} = {value:.6}");
    }
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join(format!("eval_{stem}.csv")), csv)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(seed: u64) -> Result<ExitCode, FsError> {
    let checks = verify::run_all(seed);
    let mut all_ok = true;
    for c in &checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        println!("{status} {} — {}", c.name, c.detail);
        all_ok &= c.passed;
    }
    if all_ok {
        println!("all {} checks passed", checks.len());
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::FAILURE)
    }
}
