//! Run configuration: a TOML schema covering the target, training loop,
//! solver, and evaluation settings. Unknown keys are rejected; every field
//! except `target.kind` and `seed` has a default.

use crate::error::{FsError, Result};
use crate::targets::TargetDensity;
use crate::trainer::{GammaMode, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_experiment")]
    pub experiment: String,
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    pub target: TargetSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub gamma: GammaSection,
    #[serde(default)]
    pub sample: SampleSection,
    #[serde(default)]
    pub eval: EvalSection,
    /// Noise scale resolved at the end of training (written back into
    /// config.resolved so that sampling uses the trained value).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_final: Option<f64>,
}

fn default_experiment() -> String {
    "run".into()
}

fn default_out_dir() -> String {
    "out".into()
}

/// Target selection. The flat optional-field layout (rather than one table
/// per kind) keeps `kind` a required key with a direct error message;
/// `validate` rejects fields that do not belong to the chosen kind.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub osc_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standard_sign: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mus: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappas: Option<Vec<f64>>,
}

impl TargetSection {
    fn reject_foreign(&self, kind: &str, allowed: &[&str]) -> Result<()> {
        let fields: [(&str, bool); 15] = [
            ("centers", self.centers.is_some()),
            ("weights", self.weights.is_some()),
            ("variance", self.variance.is_some()),
            ("a", self.a.is_some()),
            ("b", self.b.is_some()),
            ("c", self.c.is_some()),
            ("d0", self.d0.is_some()),
            ("tau", self.tau.is_some()),
            ("n", self.n.is_some()),
            ("rm", self.rm.is_some()),
            ("eps", self.eps.is_some()),
            ("osc_c", self.osc_c.is_some()),
            ("standard_sign", self.standard_sign.is_some()),
            ("mus", self.mus.is_some()),
            ("kappas", self.kappas.is_some()),
        ];
        for (name, present) in fields {
            if present && !allowed.contains(&name) {
                return Err(FsError::Config(format!(
                    "target key `{name}` does not apply to kind `{kind}`"
                )));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<TargetDensity> {
        match self.kind.as_str() {
            "gmm" => {
                self.reject_foreign("gmm", &["centers", "weights", "variance"])?;
                let centers = self.centers.clone().unwrap_or_else(|| {
                    vec![
                        vec![3.0, 3.0],
                        vec![3.0, -3.0],
                        vec![-3.0, 3.0],
                        vec![-3.0, -3.0],
                    ]
                });
                let weights = self
                    .weights
                    .clone()
                    .unwrap_or_else(|| vec![1.0 / centers.len() as f64; centers.len()]);
                TargetDensity::gmm(centers, weights, self.variance.unwrap_or(1.0))
            }
            "dw4" => {
                self.reject_foreign("dw4", &["a", "b", "c", "d0", "tau"])?;
                Ok(TargetDensity::dw4(
                    self.a.unwrap_or(0.0),
                    self.b.unwrap_or(-4.0),
                    self.c.unwrap_or(0.9),
                    self.d0.unwrap_or(4.0),
                    self.tau.unwrap_or(1.0),
                ))
            }
            "lj" => {
                self.reject_foreign(
                    "lj",
                    &["n", "rm", "tau", "eps", "osc_c", "standard_sign"],
                )?;
                Ok(TargetDensity::lennard_jones(
                    self.n.unwrap_or(13),
                    self.rm.unwrap_or(1.0),
                    self.tau.unwrap_or(1.0),
                    self.eps.unwrap_or(1.0),
                    self.osc_c.unwrap_or(1.0),
                    self.standard_sign.unwrap_or(false),
                ))
            }
            "vmf" => {
                self.reject_foreign("vmf", &["mus", "kappas", "weights"])?;
                let mus = self.mus.clone().unwrap_or_else(|| {
                    vec![
                        vec![1.0, 0.0, 0.0],
                        vec![-1.0, 0.0, 0.0],
                        vec![0.0, 1.0, 0.0],
                        vec![0.0, -1.0, 0.0],
                        vec![0.0, 0.0, 1.0],
                        vec![0.0, 0.0, -1.0],
                    ]
                });
                let k = mus.len();
                TargetDensity::vmf_mixture(
                    mus,
                    self.kappas.clone().unwrap_or_else(|| vec![50.0; k]),
                    self.weights
                        .clone()
                        .unwrap_or_else(|| vec![1.0 / k as f64; k]),
                )
            }
            other => Err(FsError::Config(format!(
                "unknown target.kind `{other}` (expected gmm, dw4, lj, or vmf)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub outer_loops: usize,
    pub inner_loops: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub new_samples_per_outer: usize,
    pub nfe_train: usize,
    pub clip_threshold: f64,
    pub t_min: f64,
    pub hidden_dims: Vec<usize>,
    pub time_features: usize,
    pub learning_rate: f64,
    /// Linear decay target for the learning rate; None keeps it constant.
    pub learning_rate_final: Option<f64>,
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            outer_loops: 100,
            inner_loops: 50,
            batch_size: 256,
            buffer_capacity: 10_000,
            new_samples_per_outer: 256,
            nfe_train: 128,
            clip_threshold: 100.0,
            t_min: 1e-3,
            hidden_dims: vec![128, 128, 128],
            time_features: 8,
            learning_rate: 3e-4,
            learning_rate_final: None,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct GammaSection {
    pub mode: String,
    pub value: f64,
    pub c: f64,
    pub eps: f64,
}

impl Default for GammaSection {
    fn default() -> Self {
        GammaSection {
            mode: "adaptive".into(),
            value: 1.0,
            c: 1.0,
            eps: 1e-8,
        }
    }
}

impl GammaSection {
    pub fn mode(&self) -> Result<GammaMode> {
        match self.mode.as_str() {
            "fixed" => Ok(GammaMode::Fixed(self.value)),
            "adaptive" => Ok(GammaMode::Adaptive {
                c: self.c,
                eps: self.eps,
            }),
            other => Err(FsError::Config(format!(
                "unknown gamma.mode `{other}` (expected fixed or adaptive)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub n: usize,
    pub nfe: usize,
}

impl Default for SampleSection {
    fn default() -> Self {
        SampleSection { n: 10_000, nfe: 128 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub n_samples: usize,
    pub bins: usize,
    /// Langevin reference settings for particle targets.
    pub langevin_steps: usize,
    pub langevin_step_size: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            n_samples: 2000,
            bins: 50,
            langevin_steps: 5000,
            langevin_step_size: 1e-3,
        }
    }
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| FsError::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.target.build()?;
        self.gamma.mode()?;
        if self.sample.nfe == 0 {
            return Err(FsError::Config("sample.nfe must be positive".into()));
        }
        self.train_config(None)?.validate()
    }

    pub fn train_config(&self, out_dir: Option<std::path::PathBuf>) -> Result<TrainConfig> {
        Ok(TrainConfig {
            outer_loops: self.train.outer_loops,
            inner_loops: self.train.inner_loops,
            batch_size: self.train.batch_size,
            buffer_capacity: self.train.buffer_capacity,
            new_samples_per_outer: self.train.new_samples_per_outer,
            nfe_train: self.train.nfe_train,
            gamma_mode: self.gamma.mode()?,
            clip_threshold: self.train.clip_threshold,
            seed: self.seed,
            t_min: self.train.t_min,
            hidden_dims: self.train.hidden_dims.clone(),
            time_features: self.train.time_features,
            learning_rate: self.train.learning_rate,
            learning_rate_final: self.train.learning_rate_final,
            out_dir,
            checkpoint_every: self.train.checkpoint_every,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| FsError::Config(format!("config serialize error: {e}")))
    }
}
