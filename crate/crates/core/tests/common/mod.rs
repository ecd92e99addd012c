#![allow(dead_code)]

use glap_core::net::{forward, jvp};
use glap_core::{Activation, Dataset, Likelihood, NetworkSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Random dense net, weights and classification data.
pub fn random_classifier(
    seed: u64,
    input: usize,
    hidden: &[usize],
    classes: usize,
    n: usize,
    act: Activation,
) -> (NetworkSpec, Vec<f64>, Dataset) {
    let spec = NetworkSpec::mlp(input, hidden, classes, act);
    let mut r = rng(seed);
    let w = uniform_vec(&mut r, spec.num_params(), 1.0);
    let x = uniform_vec(&mut r, n * input, 2.0);
    let labels = (0..n).map(|_| r.random_range(0..classes)).collect();
    let data = Dataset::classification(input, classes, classes, x, labels).unwrap();
    (spec, w, data)
}

pub fn random_regression(
    seed: u64,
    input: usize,
    hidden: &[usize],
    output: usize,
    n: usize,
    act: Activation,
) -> (NetworkSpec, Vec<f64>, Dataset) {
    let spec = NetworkSpec::mlp(input, hidden, output, act);
    let mut r = rng(seed);
    let w = uniform_vec(&mut r, spec.num_params(), 1.0);
    let x = uniform_vec(&mut r, n * input, 2.0);
    let y = uniform_vec(&mut r, n * output, 1.0);
    (spec, w, Dataset::regression(input, output, x, y).unwrap())
}

/// Stacked Jacobian assembled column by column from forward-mode products.
pub fn jacobian_by_columns(spec: &NetworkSpec, w: &[f64], data: &Dataset) -> DMatrix<f64> {
    let (n, o, d) = (data.len(), spec.output_dim, w.len());
    let mut jac = DMatrix::zeros(n * o, d);
    let mut e = vec![0.0; d];
    for j in 0..d {
        e.fill(0.0);
        e[j] = 1.0;
        for i in 0..n {
            let col = jvp(spec, w, data.input(i), &e).unwrap();
            for k in 0..o {
                jac[(i * o + k, j)] = col[k];
            }
        }
    }
    jac
}

/// Block-diagonal output Hessian over the dataset.
pub fn stacked_hessian(spec: &NetworkSpec, w: &[f64], data: &Dataset, lik: Likelihood) -> DMatrix<f64> {
    let (n, o) = (data.len(), spec.output_dim);
    let mut h = DMatrix::zeros(n * o, n * o);
    for i in 0..n {
        let f = forward(spec, w, data.input(i)).unwrap();
        let hi = lik.output_hessian(&f).unwrap();
        h.view_mut((i * o, i * o), (o, o)).copy_from(&hi);
    }
    h
}

/// `J^T H J + alpha I` from the column-built Jacobian.
pub fn oracle_ggn(spec: &NetworkSpec, w: &[f64], data: &Dataset, lik: Likelihood, alpha: f64) -> DMatrix<f64> {
    let j = jacobian_by_columns(spec, w, data);
    let h = stacked_hessian(spec, w, data, lik);
    let d = w.len();
    j.transpose() * h * j + DMatrix::identity(d, d) * alpha
}

/// Eigenvalues sorted descending.
pub fn sorted_spectrum(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// `f(M) v` through a dense symmetric eigendecomposition.
pub fn spectral_apply(m: &DMatrix<f64>, f: impl Fn(f64) -> f64, v: &[f64]) -> Vec<f64> {
    let eig = m.clone().symmetric_eigen();
    let fv = eig.eigenvalues.map(f);
    let out =
        &eig.eigenvectors * DMatrix::from_diagonal(&fv) * eig.eigenvectors.transpose() * DVector::from_column_slice(v);
    out.iter().copied().collect()
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Sample covariance of rows (ddof = 1) around their empirical mean.
pub fn sample_covariance(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let s = rows.len();
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / s as f64;
        }
    }
    let mut c = DMatrix::zeros(d, d);
    for r in rows {
        let dv = DVector::from_iterator(d, r.iter().zip(&mean).map(|(a, b)| a - b));
        c += &dv * dv.transpose();
    }
    c / (s - 1) as f64
}
