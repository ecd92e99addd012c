//! Experiment configuration, loaded from TOML. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use glap_core::{DiffusionConfig, Execution, Likelihood, NetworkSpec, PredictiveKind, SamplerKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metric::MetricName;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskConfig,
    pub network: NetworkSpec,
    pub likelihood: Likelihood,
    pub sampler: SamplerConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// One replica per seed; data, initialization and sampling streams derive from it.
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub execution: Execution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_study: Option<RankStudyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<ShiftConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    SineRegression {
        #[serde(default = "default_sine_n")]
        n: usize,
        #[serde(default = "default_noise_sd")]
        noise_sd: f64,
        /// Held-out inputs on an even grid over `test_range`.
        #[serde(default = "default_sine_n")]
        n_test: usize,
        #[serde(default = "default_test_range")]
        test_range: [f64; 2],
    },
    #[serde(rename = "gaussian_mixture_2class")]
    GaussianMixture2class {
        n: usize,
        means: [[f64; 2]; 2],
        sd: f64,
        n_test: usize,
    },
    MnistSubset {
        #[serde(default = "default_train_images")]
        train_images: PathBuf,
        #[serde(default = "default_train_labels")]
        train_labels: PathBuf,
        #[serde(default = "default_test_images")]
        test_images: PathBuf,
        #[serde(default = "default_test_labels")]
        test_labels: PathBuf,
        #[serde(default = "default_limit")]
        limit: usize,
        #[serde(default = "default_limit")]
        test_limit: usize,
    },
}

fn default_sine_n() -> usize {
    100
}

fn default_noise_sd() -> f64 {
    0.1
}

fn default_test_range() -> [f64; 2] {
    [-2.0 * std::f64::consts::PI, 2.0 * std::f64::consts::PI]
}

fn default_limit() -> usize {
    500
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn default_train_images() -> PathBuf {
    bundled("digits-train-images-idx3-ubyte")
}

fn default_train_labels() -> PathBuf {
    bundled("digits-train-labels-idx1-ubyte")
}

fn default_test_images() -> PathBuf {
    bundled("digits-test-images-idx3-ubyte")
}

fn default_test_labels() -> PathBuf {
    bundled("digits-test-labels-idx1-ubyte")
}

impl TaskConfig {
    pub fn is_classification(&self) -> bool {
        !matches!(self, TaskConfig::SineRegression { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub samples: usize,
    /// Leading GGN eigenpairs kept (k).
    pub rank: usize,
    pub alpha: f64,
    #[serde(default = "one")]
    pub steps: usize,
    #[serde(default = "one_f64")]
    pub step_scale: f64,
    #[serde(default)]
    pub lanczos_iters: Option<usize>,
    #[serde(default)]
    pub freeze_metric: bool,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn one_f64() -> f64 {
    1.0
}

fn default_rank_tol() -> f64 {
    glap_core::curvature::DEFAULT_RANK_TOL
}

impl SamplerConfig {
    pub fn diffusion(&self, seed: u64) -> DiffusionConfig {
        DiffusionConfig {
            steps: self.steps,
            samples: self.samples,
            rank: self.rank,
            alpha: self.alpha,
            step_scale: self.step_scale,
            seed,
            lanczos_iters: self.lanczos_iters,
            freeze_metric: self.freeze_metric,
            rank_tol: self.rank_tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Minibatch size; full batch when absent.
    #[serde(default)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub predictive: PredictiveKind,
    pub metrics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankStudyConfig {
    pub subset_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftConfig {
    pub degrees: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_alpha_grid")]
    pub alphas: Vec<f64>,
}

pub fn default_alpha_grid() -> Vec<f64> {
    vec![0.1, 1.0, 5.0, 10.0, 50.0, 100.0]
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::parse(text, Path::new("<inline>"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON form of the config, with
    /// `output_dir` blanked so the same experiment hashes alike wherever it is written.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        value["output_dir"] = serde_json::Value::Null;
        let canonical = serde_json::to_vec(&value).expect("config serializes");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn metric_names(&self) -> Result<Vec<MetricName>> {
        self.eval.metrics.iter().map(|m| m.parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate().map_err(|e| Error::config(e.to_string()))?;
        self.likelihood.validate().map_err(|e| Error::config(e.to_string()))?;
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        let classification = self.task.is_classification();
        if classification != self.likelihood.is_classification() {
            return Err(Error::config("likelihood does not match the task type"));
        }
        let (input, classes) = match &self.task {
            TaskConfig::SineRegression {
                n,
                noise_sd,
                n_test,
                test_range,
            } => {
                if *n == 0 || *n_test == 0 || !(*noise_sd >= 0.0) || !(test_range[0] < test_range[1]) {
                    return Err(Error::config("sine task needs n, n_test > 0, noise_sd >= 0, lo < hi"));
                }
                (1, 1)
            }
            TaskConfig::GaussianMixture2class { n, sd, n_test, .. } => {
                if *n == 0 || n % 2 == 1 || *n_test == 0 || n_test % 2 == 1 || !(*sd > 0.0) {
                    return Err(Error::config("mixture task needs even positive n, n_test and sd > 0"));
                }
                (2, 2)
            }
            TaskConfig::MnistSubset { limit, test_limit, .. } => {
                if *limit == 0 || *test_limit == 0 {
                    return Err(Error::config("mnist limits must be positive"));
                }
                (self.network.input_dim, 10)
            }
        };
        if self.network.input_dim != input {
            return Err(Error::config(format!(
                "network input_dim {} does not match the task ({input})",
                self.network.input_dim
            )));
        }
        let want_out = match self.likelihood {
            Likelihood::Bernoulli => 1,
            Likelihood::Categorical => classes,
            Likelihood::Gaussian { .. } => 1,
        };
        if self.network.output_dim != want_out {
            return Err(Error::config(format!(
                "network output_dim {} does not match the task ({want_out})",
                self.network.output_dim
            )));
        }
        if matches!(self.likelihood, Likelihood::Bernoulli) && classes != 2 {
            return Err(Error::config("bernoulli likelihood needs a two-class task"));
        }
        let d = self.network.num_params();
        let s = &self.sampler;
        if s.samples == 0 || s.rank == 0 || s.steps == 0 || s.rank > d {
            return Err(Error::config(format!(
                "sampler needs samples, steps > 0 and 0 < rank <= D = {d}"
            )));
        }
        if !(s.alpha > 0.0 && s.alpha.is_finite()) || !(s.step_scale > 0.0) {
            return Err(Error::config("alpha and step_scale must be positive"));
        }
        if let Some(it) = s.lanczos_iters {
            if it < s.rank || it > d {
                return Err(Error::config(format!("lanczos_iters must lie in [rank, D = {d}]")));
            }
        }
        let t = &self.train;
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if t.batch_size == Some(0) {
            return Err(Error::config("batch_size must be positive"));
        }
        for m in self.metric_names()? {
            if !m.applies_to(classification) {
                return Err(Error::config(format!("metric `{m}` does not apply to this task")));
            }
        }
        if let Some(rs) = &self.rank_study {
            if rs.subset_sizes.is_empty() || rs.subset_sizes.contains(&0) {
                return Err(Error::config("rank study needs positive subset sizes"));
            }
        }
        if let Some(sw) = &self.sweep {
            if sw.alphas.iter().any(|a| !(*a > 0.0)) || sw.alphas.is_empty() {
                return Err(Error::config("sweep alphas must be positive"));
            }
        }
        Ok(())
    }
}
