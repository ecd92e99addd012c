//! MAP fitting: minimizes `-sum_n log p(y_n | f(w, x_n)) + alpha/2 ||w||^2`.

use glap_core::net::Trace;
use glap_core::{Dataset, Execution, Likelihood, NetworkSpec, ParamVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Optimizer, TrainConfig};
use crate::error::{Error, Result};

const CHUNK: usize = 32;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub weights: ParamVector,
    /// Full objective at the start of every epoch, plus the final value.
    pub loss_trace: Vec<f64>,
}

/// Glorot-uniform weights and zero biases.
pub fn init_weights(spec: &NetworkSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0; spec.num_params()];
    for layer in spec.layers() {
        let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
        for v in &mut w[layer.offset..layer.offset + layer.fan_in * layer.fan_out] {
            *v = rng.random_range(-limit..limit);
        }
    }
    w.into()
}

/// Objective and gradient over the points in `batch`, with the data term
/// multiplied by `scale`.
#[allow(clippy::too_many_arguments)]
pub fn objective_and_grad(
    spec: &NetworkSpec,
    w: &[f64],
    data: &Dataset,
    likelihood: Likelihood,
    alpha: f64,
    batch: &[usize],
    scale: f64,
    exec: Execution,
) -> Result<(f64, Vec<f64>)> {
    let d = w.len();
    let chunks = batch.len().div_ceil(CHUNK);
    let partial = exec.try_map(chunks, |c| {
        let mut grad = vec![0.0; d];
        let mut loss = 0.0;
        for &n in &batch[c * CHUNK..((c + 1) * CHUNK).min(batch.len())] {
            let trace = Trace::new(spec, w, data.input(n))?;
            loss -= likelihood.log_lik(trace.output(), data.target(n))?;
            let g = likelihood.loss_grad(trace.output(), data.target(n))?;
            trace.vjp_accumulate(w, &g, &mut grad);
        }
        Ok::<_, glap_core::Error>((loss, grad))
    })?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; d];
    for (l, g) in partial {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let sq: f64 = w.iter().map(|v| v * v).sum();
    let obj = scale * loss + 0.5 * alpha * sq;
    for (g, v) in grad.iter_mut().zip(w) {
        *g = scale * *g + alpha * v;
    }
    Ok((obj, grad))
}

pub fn train_map(
    spec: &NetworkSpec,
    data: &Dataset,
    likelihood: Likelihood,
    alpha: f64,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<TrainReport> {
    let mut w = init_weights(spec, cfg.seed).into_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let n = data.len();
    let all: Vec<usize> = (0..n).collect();
    let batch_size = cfg.batch_size.unwrap_or(n).clamp(1, n.max(1));
    let mut m = vec![0.0; w.len()];
    let mut v = vec![0.0; w.len()];
    let mut t = 0i32;
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    let check = |epoch: usize, loss: f64, trace: &[f64]| -> Result<()> {
        if loss.is_finite() {
            Ok(())
        } else {
            Err(Error::Diverged {
                epoch,
                loss,
                trace: trace.to_vec(),
            })
        }
    };

    for epoch in 0..cfg.epochs {
        let mut order = all.clone();
        if batch_size < n {
            order.shuffle(&mut rng);
        }
        let mut epoch_start = None;
        for batch in order.chunks(batch_size) {
            let scale = n as f64 / batch.len() as f64;
            let (obj, grad) = objective_and_grad(spec, &w, data, likelihood, alpha, batch, scale, exec)?;
            epoch_start.get_or_insert(obj);
            if !obj.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                trace.push(obj);
                check(epoch, f64::NAN, &trace)?;
            }
            t += 1;
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (wi, g) in w.iter_mut().zip(&grad) {
                        *wi -= cfg.lr * g;
                    }
                }
                Optimizer::Adam => {
                    let c1 = 1.0 - ADAM_BETA1.powi(t);
                    let c2 = 1.0 - ADAM_BETA2.powi(t);
                    for i in 0..w.len() {
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grad[i];
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
                        w[i] -= cfg.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        trace.push(epoch_start.unwrap_or(0.0));
    }
    let (final_obj, _) = objective_and_grad(spec, &w, data, likelihood, alpha, &all, 1.0, exec)?;
    trace.push(final_obj);
    check(cfg.epochs, final_obj, &trace)?;
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::Diverged {
            epoch: cfg.epochs,
            loss: final_obj,
            trace,
        });
    }
    Ok(TrainReport {
        weights: w.into(),
        loss_trace: trace,
    })
}
