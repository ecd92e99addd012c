//! Pipeline orchestration: data, MAP fit, posterior, predictive metrics.
//!
//! Every replica seed drives its own data draw, initialization and sampler
//! streams, so replicas are independent and run through one
//! [`Execution::try_map`].

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use glap_core::curvature::{dense_image_basis, CurvatureOperator};
use glap_core::io::{load_checkpoint, save_checkpoint, save_samples, write_atomic};
use glap_core::metrics::{auroc, classification_metrics, predictive_entropy, rmse, EvalBatch};
use glap_core::posterior::{local_eigen, predict_dataset};
use glap_core::{
    kernel_diffusion, laplace_diffusion, sample_laplace, Dataset, Execution, Likelihood, LowRankEigen,
    PosteriorSamples, Predictive, SamplerKind, Targets,
};

use crate::config::{ExperimentConfig, TaskConfig};
use crate::data::{generate_mixture, generate_sine, load_idx, rotate_inputs, sine_grid};
use crate::error::{Error, Result};
use crate::metric::{Base, Split};
use crate::record::{fmt17, unix_now, ResultsRecord};
use crate::train::{train_map, TrainReport};

/// splitmix64 finalizer; decorrelates a base seed from the replica seed.
pub fn mix_seed(base: u64, replica: u64) -> u64 {
    let mut z = base ^ replica.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<Splits> {
    match &cfg.task {
        TaskConfig::SineRegression {
            n,
            noise_sd,
            n_test,
            test_range,
        } => Ok(Splits {
            train: generate_sine(*n, *noise_sd, seed)?,
            test: sine_grid(*n_test, test_range[0], test_range[1])?,
        }),
        TaskConfig::GaussianMixture2class { n, means, sd, n_test } => {
            // a Bernoulli head has one output for the two classes
            let width = |d: Dataset| -> Result<Dataset> {
                let labels = d.labels().unwrap_or_default().to_vec();
                Ok(Dataset::classification(
                    2,
                    cfg.network.output_dim,
                    2,
                    d.inputs().to_vec(),
                    labels,
                )?)
            };
            Ok(Splits {
                train: width(generate_mixture(*n, *means, *sd, seed)?)?,
                test: width(generate_mixture(*n_test, *means, *sd, mix_seed(seed, 1))?)?,
            })
        }
        TaskConfig::MnistSubset {
            train_images,
            train_labels,
            test_images,
            test_labels,
            limit,
            test_limit,
        } => Ok(Splits {
            train: load_idx(train_images, train_labels, *limit)?,
            test: load_idx(test_images, test_labels, *test_limit)?,
        }),
    }
}

pub fn fit(cfg: &ExperimentConfig, train: &Dataset, seed: u64, exec: Execution) -> Result<TrainReport> {
    let mut tc = cfg.train.clone();
    tc.seed = mix_seed(cfg.train.seed, seed);
    train_map(&cfg.network, train, cfg.likelihood, cfg.sampler.alpha, &tc, exec)
}

/// Leading GGN eigenpairs at `w_hat` and the posterior draws for the configured sampler.
pub fn posterior(
    cfg: &ExperimentConfig,
    train: &Dataset,
    w_hat: &[f64],
    seed: u64,
    exec: Execution,
) -> Result<(LowRankEigen, PosteriorSamples)> {
    let s = &cfg.sampler;
    let dcfg = s.diffusion(mix_seed(s.seed, seed));
    let eig = local_eigen(&cfg.network, train, cfg.likelihood, w_hat, &dcfg, dcfg.seed)?;
    let samples = match s.kind {
        SamplerKind::SampledLaplace => sample_laplace(&eig, s.alpha, w_hat, s.samples, dcfg.seed, exec)?,
        SamplerKind::LaplaceDiffusion => laplace_diffusion(&cfg.network, train, cfg.likelihood, w_hat, &dcfg, exec)?,
        SamplerKind::KernelDiffusion => kernel_diffusion(&cfg.network, train, cfg.likelihood, w_hat, &dcfg, exec)?,
    };
    Ok((eig, samples))
}

fn real_targets(data: &Dataset) -> &[f64] {
    match data.targets() {
        Targets::Regression(y) => y,
        Targets::Classes { .. } => &[],
    }
}

/// Metric values for one split under one predictive.
fn split_metrics(preds: &[Predictive], data: &Dataset, likelihood: Likelihood) -> Result<BTreeMap<Base, f64>> {
    let mut out = BTreeMap::new();
    match likelihood {
        Likelihood::Gaussian { variance: noise } => {
            let mut means = Vec::with_capacity(preds.len());
            let mut vars = Vec::with_capacity(preds.len());
            for p in preds {
                if let Predictive::Regression { mean, variance } = p {
                    means.extend_from_slice(mean);
                    vars.extend_from_slice(variance);
                }
            }
            let y = real_targets(data);
            out.insert(Base::Rmse, rmse(&means, y)?);
            out.insert(Base::Variance, vars.iter().sum::<f64>() / vars.len() as f64);
            out.insert(Base::MaxVariance, vars.iter().copied().fold(0.0, f64::max));
            let nll = means
                .iter()
                .zip(&vars)
                .zip(y)
                .map(|((m, v), t)| {
                    let s2 = v + noise;
                    0.5 * ((2.0 * std::f64::consts::PI * s2).ln() + (t - m).powi(2) / s2)
                })
                .sum::<f64>()
                / means.len() as f64;
            out.insert(Base::Nll, nll);
        }
        _ => {
            let rows: Vec<Vec<f64>> = preds.iter().map(|p| class_probs(p, likelihood)).collect();
            let labels = data.labels().unwrap_or(&[]).to_vec();
            let batch = EvalBatch::from_rows(&rows, labels)?;
            let m = classification_metrics(&batch);
            out.insert(Base::Confidence, m.confidence);
            out.insert(Base::Accuracy, m.accuracy);
            out.insert(Base::Nll, m.nll);
            out.insert(Base::Brier, m.brier);
            out.insert(Base::Ece, m.ece);
            out.insert(Base::Mce, m.mce);
            let ent = rows.iter().map(|r| predictive_entropy(r)).sum::<f64>() / rows.len() as f64;
            out.insert(Base::Entropy, ent);
        }
    }
    Ok(out)
}

/// Class probabilities; a Bernoulli logit's mean parameter becomes `[1 - p, p]`.
fn class_probs(p: &Predictive, likelihood: Likelihood) -> Vec<f64> {
    let probs = p.mean().to_vec();
    match likelihood {
        Likelihood::Bernoulli if probs.len() == 1 => vec![1.0 - probs[0], probs[0]],
        _ => probs,
    }
}

/// Evaluates the requested metrics; keys are the metric names as written.
pub fn evaluate(
    cfg: &ExperimentConfig,
    splits: &Splits,
    samples: &PosteriorSamples,
    exec: Execution,
) -> Result<BTreeMap<String, f64>> {
    let names = cfg.metric_names()?;
    let map = PosteriorSamples::point_mass(&samples.w_hat, samples.sampler);
    let mut cache: BTreeMap<(bool, Split), BTreeMap<Base, f64>> = BTreeMap::new();
    let mut out = BTreeMap::new();
    for name in names {
        let key = (name.map, name.split);
        let metrics = match cache.entry(key) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => {
                let data = match name.split {
                    Split::Train => &splits.train,
                    Split::Test => &splits.test,
                };
                let s = if name.map { &map } else { samples };
                let preds = predict_dataset(&cfg.network, s, data, cfg.likelihood, cfg.eval.predictive, exec)?;
                e.insert(split_metrics(&preds, data, cfg.likelihood)?)
            }
        };
        out.insert(name.to_string(), metrics[&name.base]);
    }
    Ok(out)
}

/// Everything one replica produced.
#[derive(Debug, Clone)]
pub struct Replica {
    pub seed: u64,
    pub splits: Splits,
    pub train: TrainReport,
    pub eigen: LowRankEigen,
    pub samples: PosteriorSamples,
    pub metrics: BTreeMap<String, f64>,
}

/// How far a run goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Train,
    Sample,
    Evaluate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Load `checkpoint_seed{s}.bin` from the output directory when present.
    pub reuse_checkpoints: bool,
    /// Skip all file output.
    pub dry: bool,
}

pub fn checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("checkpoint_seed{seed}.bin"))
}

pub fn samples_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("samples_seed{seed}.bin"))
}

pub fn eigenspectrum_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("eigenspectrum_seed{seed}.csv"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn run_replica(
    cfg: &ExperimentConfig,
    seed: u64,
    stop: Stage,
    opts: RunOptions,
    hash: &str,
    exec: Execution,
) -> Result<Replica> {
    let dir = &cfg.output_dir;
    let splits = prepare_data(cfg, seed).map_err(|e| e.in_stage("data", hash))?;
    let ckpt = checkpoint_path(dir, seed);
    let train = if opts.reuse_checkpoints && ckpt.exists() {
        let w = load_checkpoint(&ckpt).map_err(|e| Error::from(e).in_stage("load_checkpoint", hash))?;
        if w.len() != cfg.network.num_params() {
            return Err(Error::config(format!(
                "{} holds {} parameters, network needs {}",
                ckpt.display(),
                w.len(),
                cfg.network.num_params()
            )));
        }
        TrainReport {
            weights: w,
            loss_trace: Vec::new(),
        }
    } else {
        fit(cfg, &splits.train, seed, exec).map_err(|e| e.in_stage("train", hash))?
    };
    if !opts.dry {
        save_checkpoint(&ckpt, &train.weights).map_err(|e| Error::from(e).in_stage("write", hash))?;
    }
    let w_hat = train.weights.clone();
    let (eigen, samples) = if stop >= Stage::Sample {
        posterior(cfg, &splits.train, &w_hat, seed, exec).map_err(|e| e.in_stage("sample", hash))?
    } else {
        (
            LowRankEigen::empty(w_hat.len()),
            PosteriorSamples::point_mass(&w_hat, cfg.sampler.kind),
        )
    };
    if !opts.dry && stop >= Stage::Sample {
        save_samples(&samples_path(dir, seed), &samples).map_err(|e| Error::from(e).in_stage("write", hash))?;
        let mut csv = Vec::new();
        eigen
            .write_csv(&mut csv)
            .map_err(|e| Error::io(eigenspectrum_path(dir, seed), e))?;
        write_atomic(&eigenspectrum_path(dir, seed), &csv).map_err(|e| Error::from(e).in_stage("write", hash))?;
    }
    let metrics = match stop {
        Stage::Evaluate => evaluate(cfg, &splits, &samples, exec).map_err(|e| e.in_stage("evaluate", hash))?,
        _ => BTreeMap::from([(
            "final_objective".to_string(),
            train.loss_trace.last().copied().unwrap_or(f64::NAN),
        )]),
    };
    Ok(Replica {
        seed,
        splits,
        train,
        eigen,
        samples,
        metrics,
    })
}

fn prepare(cfg: &ExperimentConfig, opts: RunOptions) -> Result<String> {
    cfg.validate()?;
    if !opts.dry {
        ensure_dir(&cfg.output_dir)?;
    }
    Ok(cfg.hash())
}

/// Runs every replica up to `stop` and aggregates their metrics.
pub fn run_stage(cfg: &ExperimentConfig, stop: Stage, opts: RunOptions) -> Result<(ResultsRecord, Vec<Replica>)> {
    let hash = prepare(cfg, opts)?;
    let started = unix_now();
    let exec = cfg.execution;
    let replicas = exec.try_map(cfg.seeds.len(), |i| {
        run_replica(cfg, cfg.seeds[i], stop, opts, &hash, exec)
    })?;
    let kind = match stop {
        Stage::Train => "train",
        Stage::Sample => "sample",
        Stage::Evaluate => "evaluate",
    };
    let mut record = ResultsRecord::new(
        kind,
        hash,
        cfg.seeds.clone(),
        replicas.iter().map(|r| r.metrics.clone()).collect(),
    );
    record.provenance.started_at = started;
    record.provenance.finished_at = unix_now();
    if !opts.dry {
        record.write(&cfg.output_dir, "results")?;
    }
    Ok((record, replicas))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultsRecord> {
    Ok(run_stage(cfg, Stage::Evaluate, RunOptions::default())?.0)
}

/// Spearman rank correlation with midranks for ties; NaN when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0 + 1.0;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Square root of the whitened-Jacobian entry budget for the rank study.
const RANK_STUDY_DENSE_BUDGET: usize = 4000;

/// One point of the rank study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankPoint {
    pub subset_size: usize,
    pub rank: usize,
    pub kernel_dim: usize,
    pub train_accuracy: f64,
}

/// For each subset size, the GGN of the first `n` training points at the
/// full-data MAP fixes the image basis; sampled Laplace under that basis is
/// scored by NN-predictive accuracy on the full training set.
pub fn rank_study_replica(
    cfg: &ExperimentConfig,
    seed: u64,
    sizes: &[usize],
    hash: &str,
    exec: Execution,
) -> Result<Vec<RankPoint>> {
    let splits = prepare_data(cfg, seed).map_err(|e| e.in_stage("data", hash))?;
    let report = fit(cfg, &splits.train, seed, exec).map_err(|e| e.in_stage("train", hash))?;
    let w = &report.weights;
    let d = w.len();
    let s = &cfg.sampler;
    let mut points = Vec::with_capacity(sizes.len());
    for (i, &n) in sizes.iter().enumerate() {
        let n = n.min(splits.train.len());
        let idx: Vec<usize> = (0..n).collect();
        let subset = splits.train.subset(&idx)?;
        let eig = {
            let op = CurvatureOperator::with_execution(&cfg.network, w, &subset, cfg.likelihood, 0.0, exec)?
                .with_dense_budget(RANK_STUDY_DENSE_BUDGET);
            dense_image_basis(&op, s.rank_tol).map_err(|e| Error::from(e).in_stage("rank_basis", hash))?
        };
        let sample_seed = mix_seed(mix_seed(s.seed, seed), i as u64);
        let samples = sample_laplace(&eig, s.alpha, w, s.samples, sample_seed, exec)
            .map_err(|e| Error::from(e).in_stage("sample", hash))?;
        let preds = predict_dataset(
            &cfg.network,
            &samples,
            &splits.train,
            cfg.likelihood,
            cfg.eval.predictive,
            exec,
        )?;
        let m = split_metrics(&preds, &splits.train, cfg.likelihood)?;
        points.push(RankPoint {
            subset_size: n,
            rank: eig.rank(),
            kernel_dim: d - eig.rank(),
            train_accuracy: m[&Base::Accuracy],
        });
    }
    Ok(points)
}

pub fn run_rank_study(cfg: &ExperimentConfig, opts: RunOptions) -> Result<ResultsRecord> {
    let hash = prepare(cfg, opts)?;
    if !cfg.task.is_classification() {
        return Err(Error::config("rank study needs a classification task"));
    }
    let sizes = cfg
        .rank_study
        .as_ref()
        .ok_or_else(|| Error::config("rank study needs a [rank_study] table"))?
        .subset_sizes
        .clone();
    let started = unix_now();
    let exec = cfg.execution;
    let per_seed = exec.try_map(cfg.seeds.len(), |i| {
        rank_study_replica(cfg, cfg.seeds[i], &sizes, &hash, exec)
    })?;
    let mut metrics = Vec::new();
    let mut rows = Vec::new();
    for (seed, points) in cfg.seeds.iter().zip(&per_seed) {
        let ranks: Vec<f64> = points.iter().map(|p| p.rank as f64).collect();
        let accs: Vec<f64> = points.iter().map(|p| p.train_accuracy).collect();
        metrics.push(BTreeMap::from([(
            "spearman_rank_accuracy".to_string(),
            spearman(&ranks, &accs),
        )]));
        for p in points {
            rows.push(BTreeMap::from([
                ("seed".to_string(), *seed as f64),
                ("subset_size".to_string(), p.subset_size as f64),
                ("rank".to_string(), p.rank as f64),
                ("kernel_dim".to_string(), p.kernel_dim as f64),
                ("train_accuracy".to_string(), p.train_accuracy),
            ]));
        }
    }
    let mut record = ResultsRecord::new("rank_study", hash, cfg.seeds.clone(), metrics);
    record.rows = rows;
    record.provenance.started_at = started;
    record.provenance.finished_at = unix_now();
    if !opts.dry {
        record.write(&cfg.output_dir, "rank_study")?;
    }
    Ok(record)
}

/// Test-set metrics under rotation, plus the AUROC of predictive entropy for
/// separating rotated from unrotated inputs.
pub fn run_shift_study(cfg: &ExperimentConfig, opts: RunOptions) -> Result<ResultsRecord> {
    let hash = prepare(cfg, opts)?;
    let degrees = cfg
        .shift
        .as_ref()
        .ok_or_else(|| Error::config("shift study needs a [shift] table"))?
        .degrees
        .clone();
    if !matches!(cfg.task, TaskConfig::MnistSubset { .. }) {
        return Err(Error::config("shift study needs an image task"));
    }
    let started = unix_now();
    let exec = cfg.execution;
    let per_seed = exec.try_map(cfg.seeds.len(), |i| {
        let seed = cfg.seeds[i];
        let splits = prepare_data(cfg, seed).map_err(|e| e.in_stage("data", &hash))?;
        let report = fit(cfg, &splits.train, seed, exec).map_err(|e| e.in_stage("train", &hash))?;
        let (_, samples) =
            posterior(cfg, &splits.train, &report.weights, seed, exec).map_err(|e| e.in_stage("sample", &hash))?;
        let entropies = |data: &Dataset| -> Result<(Vec<f64>, BTreeMap<Base, f64>)> {
            let preds = predict_dataset(&cfg.network, &samples, data, cfg.likelihood, cfg.eval.predictive, exec)?;
            let ent = preds
                .iter()
                .map(|p| predictive_entropy(&class_probs(p, cfg.likelihood)))
                .collect();
            Ok((ent, split_metrics(&preds, data, cfg.likelihood)?))
        };
        let (base_ent, _) = entropies(&splits.test)?;
        let mut out = BTreeMap::new();
        for &deg in &degrees {
            let rotated = rotate_inputs(&splits.test, deg)?;
            let (ent, m) = entropies(&rotated)?;
            let tag = deg_tag(deg);
            out.insert(format!("rot{tag}_accuracy"), m[&Base::Accuracy]);
            out.insert(format!("rot{tag}_nll"), m[&Base::Nll]);
            out.insert(format!("rot{tag}_ece"), m[&Base::Ece]);
            out.insert(format!("rot{tag}_entropy"), m[&Base::Entropy]);
            out.insert(format!("rot{tag}_auroc"), auroc(&base_ent, &ent)?);
        }
        Ok::<_, Error>(out)
    })?;
    let mut record = ResultsRecord::new("shift_study", hash, cfg.seeds.clone(), per_seed);
    record.provenance.started_at = started;
    record.provenance.finished_at = unix_now();
    if !opts.dry {
        record.write(&cfg.output_dir, "shift_study")?;
    }
    Ok(record)
}

fn deg_tag(deg: f64) -> String {
    if deg.fract() == 0.0 {
        format!("{}", deg as i64)
    } else {
        fmt17(deg)
    }
}

/// Reruns the full pipeline for each prior precision in the sweep grid; the
/// same alpha drives the MAP prior and the sampler.
pub fn run_alpha_sweep(cfg: &ExperimentConfig, opts: RunOptions) -> Result<ResultsRecord> {
    let hash = prepare(cfg, opts)?;
    let alphas = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::config("alpha sweep needs a [sweep] table"))?
        .alphas
        .clone();
    let started = unix_now();
    let mut rows = Vec::new();
    for &alpha in &alphas {
        let mut c = cfg.clone();
        c.sampler.alpha = alpha;
        let (rec, _) = run_stage(&c, Stage::Evaluate, RunOptions { dry: true, ..opts })?;
        let mut row = BTreeMap::from([("alpha".to_string(), alpha)]);
        for (k, s) in &rec.metrics {
            row.insert(format!("{k}_mean"), s.mean);
            row.insert(format!("{k}_std"), s.std);
        }
        rows.push(row);
    }
    let mut record = ResultsRecord::new("sweep_alpha", hash, cfg.seeds.clone(), Vec::new());
    record.rows = rows;
    record.provenance.started_at = started;
    record.provenance.finished_at = unix_now();
    if !opts.dry {
        record.write(&cfg.output_dir, "sweep_alpha")?;
    }
    Ok(record)
}
