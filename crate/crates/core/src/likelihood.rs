//! Observation models `p(y | f)`, their output-space Hessians `H = -d²/df² log p`,
//! and the loss gradients used for MAP fitting.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Target;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Likelihood {
    /// Homoscedastic Gaussian with noise variance `variance`.
    Gaussian { variance: f64 },
    /// Softmax over the network outputs.
    Categorical,
    /// Single logit, labels in {0, 1}.
    Bernoulli,
}

impl Default for Likelihood {
    fn default() -> Self {
        Likelihood::Gaussian { variance: 1.0 }
    }
}

impl Likelihood {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Likelihood::Gaussian { variance } if !(variance > 0.0 && variance.is_finite()) => Err(Error::invalid(
                format!("gaussian variance must be positive, got {variance}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn is_classification(&self) -> bool {
        !matches!(self, Likelihood::Gaussian { .. })
    }

    /// Log density (or mass) of `target` given the network output `prediction`.
    pub fn log_lik(&self, prediction: &[f64], target: Target<'_>) -> Result<f64> {
        check_finite(prediction)?;
        match (*self, target) {
            (Likelihood::Gaussian { variance }, Target::Real(y)) => {
                if y.len() != prediction.len() {
                    return Err(Error::dims("gaussian target", prediction.len(), y.len()));
                }
                let sq: f64 = y.iter().zip(prediction).map(|(a, b)| (a - b) * (a - b)).sum();
                let o = prediction.len() as f64;
                Ok(-0.5 * sq / variance - 0.5 * o * (2.0 * std::f64::consts::PI * variance).ln())
            }
            (Likelihood::Categorical, Target::Class(c)) => {
                if c >= prediction.len() {
                    return Err(Error::InvalidLabel {
                        label: c,
                        classes: prediction.len(),
                    });
                }
                Ok(prediction[c] - log_sum_exp(prediction))
            }
            (Likelihood::Bernoulli, Target::Class(c)) => {
                let z = single_logit(prediction)?;
                match c {
                    1 => Ok(-softplus(-z)),
                    0 => Ok(-softplus(z)),
                    _ => Err(Error::InvalidLabel { label: c, classes: 2 }),
                }
            }
            _ => Err(Error::invalid("target kind does not match likelihood")),
        }
    }

    /// `-d/df log p(y | f)`, the per-datum training-loss gradient in output space.
    pub fn loss_grad(&self, prediction: &[f64], target: Target<'_>) -> Result<Vec<f64>> {
        match (*self, target) {
            (Likelihood::Gaussian { variance }, Target::Real(y)) => {
                if y.len() != prediction.len() {
                    return Err(Error::dims("gaussian target", prediction.len(), y.len()));
                }
                Ok(prediction.iter().zip(y).map(|(f, t)| (f - t) / variance).collect())
            }
            (Likelihood::Categorical, Target::Class(c)) => {
                if c >= prediction.len() {
                    return Err(Error::InvalidLabel {
                        label: c,
                        classes: prediction.len(),
                    });
                }
                let mut p = softmax(prediction);
                p[c] -= 1.0;
                Ok(p)
            }
            (Likelihood::Bernoulli, Target::Class(c)) => {
                if c > 1 {
                    return Err(Error::InvalidLabel { label: c, classes: 2 });
                }
                Ok(vec![sigmoid(single_logit(prediction)?) - c as f64])
            }
            _ => Err(Error::invalid("target kind does not match likelihood")),
        }
    }

    /// The output-space Hessian `H(x)` at `prediction`; independent of the target.
    pub fn output_hessian(&self, prediction: &[f64]) -> Result<DMatrix<f64>> {
        check_finite(prediction)?;
        let o = prediction.len();
        Ok(match *self {
            Likelihood::Gaussian { variance } => DMatrix::identity(o, o) / variance,
            Likelihood::Categorical => {
                let p = softmax(prediction);
                DMatrix::from_fn(o, o, |i, j| if i == j { p[i] - p[i] * p[i] } else { -p[i] * p[j] })
            }
            Likelihood::Bernoulli => {
                let p = sigmoid(single_logit(prediction)?);
                DMatrix::from_element(1, 1, p * (1.0 - p))
            }
        })
    }

    /// Maps a network output to the likelihood's mean parameters: class
    /// probabilities for classifiers (two columns for Bernoulli), the output
    /// itself for regression.
    pub fn mean_params(&self, prediction: &[f64]) -> Vec<f64> {
        match self {
            Likelihood::Gaussian { .. } => prediction.to_vec(),
            Likelihood::Categorical => softmax(prediction),
            Likelihood::Bernoulli => {
                let p = sigmoid(prediction[0]);
                vec![1.0 - p, p]
            }
        }
    }
}

/// `H v` for a precomputed output Hessian, written into `out`.
pub(crate) fn hessian_apply(h: &DMatrix<f64>, v: &[f64], out: &mut [f64]) {
    let o = v.len();
    for i in 0..o {
        let mut acc = 0.0;
        for j in 0..o {
            acc += h[(i, j)] * v[j];
        }
        out[i] = acc;
    }
}

/// Symmetric square root of a PSD matrix; tiny negative eigenvalues are clamped.
pub fn psd_sqrt(h: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = h.clone().symmetric_eigen();
    let s = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&s) * eig.eigenvectors.transpose()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn single_logit(prediction: &[f64]) -> Result<f64> {
    match prediction {
        [z] => Ok(*z),
        _ => Err(Error::dims("bernoulli logit", 1, prediction.len())),
    }
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("prediction".into()))
    }
}
