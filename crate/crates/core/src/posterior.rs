//! Posterior samplers built on the GGN and the two predictive rules.
//!
//! * sampled Laplace: `w_hat + (GGN + alpha I)^{-1/2} eps`
//! * Laplace diffusion: Euler-Maruyama steps restricted to the local image of
//!   the GGN, recomputing the top-k eigenpairs at every step
//! * kernel diffusion: steps restricted to the local kernel with metric `alpha I`
//!
//! Every sample owns a ChaCha stream `(seed, sample_index)`, so chains are
//! independent of scheduling and reproducible bit for bit.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::curvature::{CurvatureOperator, DEFAULT_RANK_TOL};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::lanczos::{inv_sqrt_apply, lanczos_topk, LanczosConfig, LowRankEigen};
use crate::likelihood::Likelihood;
use crate::net::{axpy, Dataset, NetworkSpec, ParamVector, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    SampledLaplace,
    LaplaceDiffusion,
    KernelDiffusion,
}

impl SamplerKind {
    /// Identifier stored in sample files.
    pub fn id(self) -> u64 {
        match self {
            SamplerKind::SampledLaplace => 0,
            SamplerKind::LaplaceDiffusion => 1,
            SamplerKind::KernelDiffusion => 2,
        }
    }

    pub fn from_id(id: u64) -> Option<Self> {
        match id {
            0 => Some(SamplerKind::SampledLaplace),
            1 => Some(SamplerKind::LaplaceDiffusion),
            2 => Some(SamplerKind::KernelDiffusion),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::SampledLaplace => "sampled_laplace",
            SamplerKind::LaplaceDiffusion => "laplace_diffusion",
            SamplerKind::KernelDiffusion => "kernel_diffusion",
        }
    }
}

fn default_step_scale() -> f64 {
    1.0
}

fn default_rank_tol() -> f64 {
    DEFAULT_RANK_TOL
}

/// Settings shared by the diffusion samplers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    /// Euler-Maruyama steps T.
    pub steps: usize,
    /// Independent chains S.
    pub samples: usize,
    /// Eigenpairs k recomputed per step.
    pub rank: usize,
    /// Prior precision; also the metric offset inside `(Lambda + alpha)^{-1/2}`.
    pub alpha: f64,
    /// Multiplies the `1/sqrt(T)` step factor.
    #[serde(default = "default_step_scale")]
    pub step_scale: f64,
    pub seed: u64,
    /// Krylov dimension per eigensolve; `None` means `min(D, 2k + 50)`.
    #[serde(default)]
    pub lanczos_iters: Option<usize>,
    /// Reuse the eigenpairs at `w_hat` for every step.
    #[serde(default)]
    pub freeze_metric: bool,
    /// Eigenvalues at or below `rank_tol * lambda_max` are treated as kernel.
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
}

impl DiffusionConfig {
    pub fn new(steps: usize, samples: usize, rank: usize, alpha: f64, seed: u64) -> Self {
        DiffusionConfig {
            steps,
            samples,
            rank,
            alpha,
            step_scale: 1.0,
            seed,
            lanczos_iters: None,
            freeze_metric: false,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.steps == 0 || self.samples == 0 || self.rank == 0 {
            return Err(Error::invalid("steps, samples and rank must be positive"));
        }
        if self.rank > dim {
            return Err(Error::invalid(format!("rank {} exceeds dimension {dim}", self.rank)));
        }
        if !(self.alpha > 0.0) || !(self.step_scale > 0.0) {
            return Err(Error::invalid("alpha and step_scale must be positive"));
        }
        if let Some(it) = self.lanczos_iters {
            if it < self.rank || it > dim {
                return Err(Error::invalid(format!(
                    "lanczos_iters {it} must lie in [rank, dim] = [{}, {dim}]",
                    self.rank
                )));
            }
        }
        Ok(())
    }

    pub fn iters_for(&self, dim: usize) -> usize {
        self.lanczos_iters
            .unwrap_or_else(|| dim.min(2 * self.rank + 50))
            .max(self.rank)
    }
}

/// What produced a set of draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSnapshot {
    pub alpha: f64,
    pub rank: usize,
    pub steps: usize,
    pub step_scale: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    pub draws: Vec<ParamVector>,
    pub sampler: SamplerKind,
    pub config: SamplerSnapshot,
    pub w_hat: ParamVector,
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.w_hat.len()
    }

    /// Draws all equal to `w_hat`; the MAP "posterior".
    pub fn point_mass(w_hat: &[f64], sampler: SamplerKind) -> Self {
        PosteriorSamples {
            draws: vec![w_hat.into()],
            sampler,
            config: SamplerSnapshot {
                alpha: f64::INFINITY,
                rank: 0,
                steps: 0,
                step_scale: 0.0,
                seed: 0,
            },
            w_hat: w_hat.into(),
        }
    }
}

/// The random stream for chain `index` of a run seeded with `seed`.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn standard_normal(rng: &mut impl RngCore, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Sampled Laplace: `S` draws from `N(w_hat, (GGN + alpha I)^{-1})` under the
/// low-rank model held in `eig`.
pub fn sample_laplace(
    eig: &LowRankEigen,
    alpha: f64,
    w_hat: &[f64],
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<PosteriorSamples> {
    if w_hat.len() != eig.dim() {
        return Err(Error::dims("sample_laplace w_hat", eig.dim(), w_hat.len()));
    }
    if samples == 0 {
        return Err(Error::invalid("at least one sample is required"));
    }
    let draws = exec.try_map(samples, |s| {
        let mut rng = sample_rng(seed, s);
        let eps = standard_normal(&mut rng, w_hat.len());
        let mut w = inv_sqrt_apply(eig, alpha, &eps)?;
        axpy(1.0, w_hat, &mut w);
        Ok::<_, Error>(ParamVector::from(w))
    })?;
    Ok(PosteriorSamples {
        draws,
        sampler: SamplerKind::SampledLaplace,
        config: SamplerSnapshot {
            alpha,
            rank: eig.rank(),
            steps: 1,
            step_scale: 1.0,
            seed,
        },
        w_hat: w_hat.into(),
    })
}

/// Leading GGN eigenpairs at `w` (no prior term), kernel directions removed.
pub fn local_eigen(
    spec: &NetworkSpec,
    data: &Dataset,
    likelihood: Likelihood,
    w: &[f64],
    cfg: &DiffusionConfig,
    seed: u64,
) -> Result<LowRankEigen> {
    let op = CurvatureOperator::with_execution(spec, w, data, likelihood, 0.0, Execution::Sequential)?;
    let d = w.len();
    let lcfg = LanczosConfig::new(cfg.rank, cfg.iters_for(d), seed);
    Ok(lanczos_topk(&op, &lcfg)?.drop_kernel(cfg.rank_tol))
}

/// One image-restricted step `scale * U (Lambda + alpha)^{-1/2} eps`, eps ~ N(0, I_k).
pub fn laplace_diffusion_step(eig: &LowRankEigen, alpha: f64, scale: f64, rng: &mut impl RngCore) -> Vec<f64> {
    let eps = standard_normal(rng, eig.rank());
    let coeffs: Vec<f64> = eps
        .iter()
        .zip(&eig.lambdas)
        .map(|(e, &l)| scale * e / (l.max(0.0) + alpha).sqrt())
        .collect();
    eig.combine(&coeffs)
}

/// One kernel-restricted step `scale * alpha^{-1/2} (I - U U^T) eps`, eps ~ N(0, I_D).
pub fn kernel_diffusion_step(eig: &LowRankEigen, alpha: f64, scale: f64, rng: &mut impl RngCore) -> Vec<f64> {
    let eps = standard_normal(rng, eig.dim());
    let im = eig.combine(&eig.coefficients(&eps));
    let factor = scale / alpha.sqrt();
    eps.iter().zip(&im).map(|(e, p)| factor * (e - p)).collect()
}

#[derive(Clone, Copy)]
enum Walk {
    Image,
    Kernel,
}

fn diffuse(
    spec: &NetworkSpec,
    data: &Dataset,
    likelihood: Likelihood,
    w_hat: &[f64],
    cfg: &DiffusionConfig,
    walk: Walk,
    exec: Execution,
) -> Result<PosteriorSamples> {
    spec.validate()?;
    cfg.validate(w_hat.len())?;
    if w_hat.len() != spec.num_params() {
        return Err(Error::dims("diffusion w_hat", spec.num_params(), w_hat.len()));
    }
    let scale = cfg.step_scale / (cfg.steps as f64).sqrt();
    let frozen = if cfg.freeze_metric {
        Some(local_eigen(spec, data, likelihood, w_hat, cfg, cfg.seed)?)
    } else {
        None
    };
    let draws = exec.try_map(cfg.samples, |s| {
        let mut rng = sample_rng(cfg.seed, s);
        let mut w = w_hat.to_vec();
        for _ in 0..cfg.steps {
            let lanczos_seed = rng.next_u64();
            let local;
            let eig = match &frozen {
                Some(e) => e,
                None => {
                    local = local_eigen(spec, data, likelihood, &w, cfg, lanczos_seed).map_err(|e| Error::Sample {
                        index: s,
                        source: Box::new(e),
                    })?;
                    &local
                }
            };
            let step = match walk {
                Walk::Image => laplace_diffusion_step(eig, cfg.alpha, scale, &mut rng),
                Walk::Kernel => kernel_diffusion_step(eig, cfg.alpha, scale, &mut rng),
            };
            axpy(1.0, &step, &mut w);
            if !w.iter().all(|v| v.is_finite()) {
                return Err(Error::Sample {
                    index: s,
                    source: Box::new(Error::NonFinite("diffusion state".into())),
                });
            }
        }
        Ok(ParamVector::from(w))
    })?;
    Ok(PosteriorSamples {
        draws,
        sampler: match walk {
            Walk::Image => SamplerKind::LaplaceDiffusion,
            Walk::Kernel => SamplerKind::KernelDiffusion,
        },
        config: SamplerSnapshot {
            alpha: cfg.alpha,
            rank: cfg.rank,
            steps: cfg.steps,
            step_scale: cfg.step_scale,
            seed: cfg.seed,
        },
        w_hat: w_hat.into(),
    })
}

/// Laplace diffusion: each chain starts at `w_hat` and takes `T` steps
/// `w += (step_scale / sqrt(T)) U (Lambda + alpha)^{-1/2} eps` with `(U, Lambda)`
/// the top-k GGN eigenpairs at the current weights.
pub fn laplace_diffusion(
    spec: &NetworkSpec,
    data: &Dataset,
    likelihood: Likelihood,
    w_hat: &[f64],
    cfg: &DiffusionConfig,
    exec: Execution,
) -> Result<PosteriorSamples> {
    diffuse(spec, data, likelihood, w_hat, cfg, Walk::Image, exec)
}

/// Kernel-manifold diffusion: steps `(step_scale / sqrt(T alpha)) (I - U U^T) eps`
/// that leave training predictions unchanged to first order.
pub fn kernel_diffusion(
    spec: &NetworkSpec,
    data: &Dataset,
    likelihood: Likelihood,
    w_hat: &[f64],
    cfg: &DiffusionConfig,
    exec: Execution,
) -> Result<PosteriorSamples> {
    diffuse(spec, data, likelihood, w_hat, cfg, Walk::Kernel, exec)
}

/// Monte-Carlo predictive summary at one input.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictive {
    /// Mean output and unbiased between-sample variance (zero for one sample).
    Regression { mean: Vec<f64>, variance: Vec<f64> },
    /// Mean class probabilities.
    Classification { probs: Vec<f64> },
}

impl Predictive {
    pub fn mean(&self) -> &[f64] {
        match self {
            Predictive::Regression { mean, .. } => mean,
            Predictive::Classification { probs } => probs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictiveKind {
    /// Evaluate the network at every draw.
    Nn,
    /// First-order expansion around `w_hat`.
    Linearized,
}

fn summarize(outputs: &[Vec<f64>], likelihood: Likelihood) -> Predictive {
    let s = outputs.len();
    if likelihood.is_classification() {
        let mut probs = likelihood.mean_params(&outputs[0]);
        for out in &outputs[1..] {
            axpy(1.0, &likelihood.mean_params(out), &mut probs);
        }
        probs.iter_mut().for_each(|p| *p /= s as f64);
        return Predictive::Classification { probs };
    }
    let o = outputs[0].len();
    let mean: Vec<f64> = (0..o)
        .map(|k| outputs.iter().map(|f| f[k]).sum::<f64>() / s as f64)
        .collect();
    let variance = (0..o)
        .map(|k| {
            if s < 2 {
                0.0
            } else {
                outputs.iter().map(|f| (f[k] - mean[k]).powi(2)).sum::<f64>() / (s - 1) as f64
            }
        })
        .collect();
    Predictive::Regression { mean, variance }
}

/// Network outputs `f(w_i, x)` for every draw.
pub fn sample_outputs(spec: &NetworkSpec, samples: &PosteriorSamples, x: &[f64]) -> Result<Vec<Vec<f64>>> {
    samples
        .draws
        .iter()
        .map(|w| Ok(Trace::new(spec, w, x)?.output().to_vec()))
        .collect()
}

/// Linearized outputs `f(w_hat, x) + J_{w_hat}(x) (w_i - w_hat)` for every draw.
pub fn linearized_outputs(
    spec: &NetworkSpec,
    w_hat: &[f64],
    samples: &PosteriorSamples,
    x: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let trace = Trace::new(spec, w_hat, x)?;
    let base = trace.output().to_vec();
    samples
        .draws
        .iter()
        .map(|w| {
            if w.len() != w_hat.len() {
                return Err(Error::dims("linearized draw", w_hat.len(), w.len()));
            }
            let delta: Vec<f64> = w.iter().zip(w_hat).map(|(a, b)| a - b).collect();
            let mut out = trace.jvp(w_hat, &delta);
            axpy(1.0, &base, &mut out);
            Ok(out)
        })
        .collect()
}

/// Neural-network predictive: averages likelihood parameters over `f(w_i, x)`.
pub fn predictive_nn(
    spec: &NetworkSpec,
    samples: &PosteriorSamples,
    x: &[f64],
    likelihood: Likelihood,
) -> Result<Predictive> {
    if samples.is_empty() {
        return Err(Error::invalid("no posterior draws"));
    }
    Ok(summarize(&sample_outputs(spec, samples, x)?, likelihood))
}

/// Linearized predictive; the network is only evaluated at `w_hat`.
pub fn predictive_linearized(
    spec: &NetworkSpec,
    w_hat: &[f64],
    samples: &PosteriorSamples,
    x: &[f64],
    likelihood: Likelihood,
) -> Result<Predictive> {
    if samples.is_empty() {
        return Err(Error::invalid("no posterior draws"));
    }
    Ok(summarize(&linearized_outputs(spec, w_hat, samples, x)?, likelihood))
}

/// Predictive summaries for every input of `data`.
pub fn predict_dataset(
    spec: &NetworkSpec,
    samples: &PosteriorSamples,
    data: &Dataset,
    likelihood: Likelihood,
    kind: PredictiveKind,
    exec: Execution,
) -> Result<Vec<Predictive>> {
    exec.try_map(data.len(), |n| match kind {
        PredictiveKind::Nn => predictive_nn(spec, samples, data.input(n), likelihood),
        PredictiveKind::Linearized => predictive_linearized(spec, &samples.w_hat, samples, data.input(n), likelihood),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Activation;
    use nalgebra::DMatrix;

    fn diag_eig() -> LowRankEigen {
        LowRankEigen::from_parts(DMatrix::identity(2, 1), vec![3.0]).unwrap()
    }

    #[test]
    fn huge_alpha_pins_draws_to_mode() {
        let s = sample_laplace(&diag_eig(), 1e12, &[1.0, -2.0], 20, 4, Execution::Sequential).unwrap();
        for d in &s.draws {
            assert!((d[0] - 1.0).abs() < 1e-5 && (d[1] + 2.0).abs() < 1e-5);
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical_across_policies() {
        let a = sample_laplace(&diag_eig(), 1.0, &[0.0, 0.0], 9, 77, Execution::Sequential).unwrap();
        let b = sample_laplace(&diag_eig(), 1.0, &[0.0, 0.0], 9, 77, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        let c = sample_laplace(&diag_eig(), 1.0, &[0.0, 0.0], 9, 78, Execution::Parallel).unwrap();
        assert_ne!(a.draws, c.draws);
    }

    #[test]
    fn config_validation() {
        let mut cfg = DiffusionConfig::new(0, 1, 1, 1.0, 0);
        assert!(cfg.validate(3).is_err());
        cfg.steps = 1;
        assert!(cfg.validate(3).is_ok());
        cfg.rank = 4;
        assert!(cfg.validate(3).is_err());
        cfg.rank = 2;
        cfg.lanczos_iters = Some(1);
        assert!(cfg.validate(3).is_err());
        cfg.lanczos_iters = None;
        cfg.alpha = 0.0;
        assert!(cfg.validate(3).is_err());
    }

    #[test]
    fn step_directions_live_in_their_subspaces() {
        let mut rng = sample_rng(1, 0);
        let basis = DMatrix::from_column_slice(3, 1, &[0.6, 0.8, 0.0]);
        let eig = LowRankEigen::from_parts(basis, vec![2.0]).unwrap();
        let im = laplace_diffusion_step(&eig, 1.0, 1.0, &mut rng);
        // parallel to the basis vector
        assert!((im[0] * 0.8 - im[1] * 0.6).abs() < 1e-15 && im[2] == 0.0);
        let ker = kernel_diffusion_step(&eig, 4.0, 1.0, &mut rng);
        assert!((0.6 * ker[0] + 0.8 * ker[1]).abs() < 1e-15);
    }

    #[test]
    fn predictive_rules() {
        let spec = NetworkSpec::new(1, vec![], 1, Activation::Identity, vec![false]).unwrap();
        let gauss = Likelihood::Gaussian { variance: 1.0 };
        let mut s = PosteriorSamples::point_mass(&[2.0], SamplerKind::SampledLaplace);
        let p = predictive_nn(&spec, &s, &[1.5], gauss).unwrap();
        assert_eq!(
            p,
            Predictive::Regression {
                mean: vec![3.0],
                variance: vec![0.0]
            }
        );
        s.draws = vec![vec![1.0].into(), vec![3.0].into()];
        let p = predictive_nn(&spec, &s, &[1.0], gauss).unwrap();
        assert_eq!(
            p,
            Predictive::Regression {
                mean: vec![2.0],
                variance: vec![2.0]
            }
        );
    }

    #[test]
    fn two_sample_unbiased_variance() {
        let outputs = vec![vec![1.0], vec![3.0]];
        match summarize(&outputs, Likelihood::Gaussian { variance: 1.0 }) {
            Predictive::Regression { mean, variance } => {
                assert_eq!(mean, vec![2.0]);
                assert_eq!(variance, vec![2.0]);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn linearized_zero_displacement_is_map() {
        let spec = NetworkSpec::mlp(2, &[3], 3, Activation::Tanh);
        let w: Vec<f64> = (0..spec.num_params()).map(|i| (i as f64 * 0.37).sin()).collect();
        let s = PosteriorSamples::point_mass(&w, SamplerKind::SampledLaplace);
        let lin = predictive_linearized(&spec, &w, &s, &[0.2, -0.4], Likelihood::Categorical).unwrap();
        let nn = predictive_nn(&spec, &s, &[0.2, -0.4], Likelihood::Categorical).unwrap();
        for (a, b) in lin.mean().iter().zip(nn.mean()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((lin.mean().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
