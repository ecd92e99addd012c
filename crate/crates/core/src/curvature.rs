//! Generalized Gauss-Newton curvature `sum_n J_n^T H_n J_n + alpha I`, its
//! dense and kernel-space (NTK) materializations, and the Laplace covariance
//! split into kernel and image parts.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::lanczos::{inv_sqrt_apply, LinearOperator, LowRankEigen};
use crate::likelihood::{hessian_apply, psd_sqrt, Likelihood};
use crate::net::{axpy, dot, Dataset, NetworkSpec, ParamVector, Trace, DEFAULT_JACOBIAN_BUDGET};

/// Largest D (for the GGN) or N*O (for the NTK) materialized densely by default.
pub const DEFAULT_DENSE_BUDGET: usize = 2000;

/// Relative eigenvalue threshold separating image from kernel.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Data points reduced together before partial sums are combined in order.
const CHUNK: usize = 16;

/// Matrix-free `v -> (GGN_w + alpha I) v` with per-datum forward passes and
/// output Hessians cached at construction.
pub struct CurvatureOperator<'a> {
    spec: &'a NetworkSpec,
    w: &'a [f64],
    data: &'a Dataset,
    likelihood: Likelihood,
    alpha: f64,
    exec: Execution,
    dense_budget: usize,
    cache: Vec<(Trace, DMatrix<f64>)>,
}

impl<'a> CurvatureOperator<'a> {
    pub fn new(
        spec: &'a NetworkSpec,
        w: &'a [f64],
        data: &'a Dataset,
        likelihood: Likelihood,
        alpha: f64,
    ) -> Result<Self> {
        Self::with_execution(spec, w, data, likelihood, alpha, Execution::default())
    }

    pub fn with_execution(
        spec: &'a NetworkSpec,
        w: &'a [f64],
        data: &'a Dataset,
        likelihood: Likelihood,
        alpha: f64,
        exec: Execution,
    ) -> Result<Self> {
        spec.validate()?;
        likelihood.validate()?;
        if w.len() != spec.num_params() {
            return Err(Error::dims("curvature weights", spec.num_params(), w.len()));
        }
        if !data.is_empty() && (data.input_dim() != spec.input_dim || data.output_dim() != spec.output_dim) {
            return Err(Error::invalid("dataset widths do not match the network"));
        }
        if !(alpha >= 0.0) {
            return Err(Error::invalid(format!("alpha must be nonnegative, got {alpha}")));
        }
        let layers = spec.layers();
        let cache = exec.try_map(data.len(), |n| {
            let trace = Trace::new_unchecked(layers.clone(), w, data.input(n));
            let h = likelihood.output_hessian(trace.output())?;
            Ok::<_, Error>((trace, h))
        })?;
        Ok(CurvatureOperator {
            spec,
            w,
            data,
            likelihood,
            alpha,
            exec,
            dense_budget: DEFAULT_DENSE_BUDGET,
            cache,
        })
    }

    pub fn with_dense_budget(mut self, budget: usize) -> Self {
        self.dense_budget = budget;
        self
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.spec
    }

    pub fn weights(&self) -> &[f64] {
        self.w
    }

    pub fn dataset(&self) -> &Dataset {
        self.data
    }

    pub fn likelihood(&self) -> Likelihood {
        self.likelihood
    }

    /// Same context with a different prior precision; traces are reused.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0) {
            return Err(Error::invalid(format!("alpha must be nonnegative, got {alpha}")));
        }
        Ok(CurvatureOperator {
            alpha,
            cache: self.cache.clone(),
            ..*self
        })
    }

    /// `(GGN + alpha I) v`, streamed over the data without forming any Jacobian.
    pub fn ggn_matvec(&self, v: &[f64]) -> Result<ParamVector> {
        if v.len() != self.dim() {
            return Err(Error::dims("ggn_matvec vector", self.dim(), v.len()));
        }
        let mut out = vec![0.0; self.dim()];
        self.apply_into(v, &mut out);
        Ok(out.into())
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let o = self.spec.output_dim;
        let chunks = self.cache.len().div_ceil(CHUNK);
        let partials = self.exec.map(chunks, |c| {
            let mut acc = vec![0.0; d];
            let mut hv = vec![0.0; o];
            for (trace, h) in &self.cache[c * CHUNK..((c + 1) * CHUNK).min(self.cache.len())] {
                let jv = trace.jvp(self.w, v);
                hessian_apply(h, &jv, &mut hv);
                trace.vjp_accumulate(self.w, &hv, &mut acc);
            }
            acc
        });
        out.iter_mut().zip(v).for_each(|(o, vi)| *o = self.alpha * vi);
        // reduction order is fixed regardless of execution policy
        let mut total = vec![0.0; d];
        for p in &partials {
            axpy(1.0, p, &mut total);
        }
        axpy(1.0, &total, out);
    }

    /// `v^T GGN v` (no prior term), i.e. the squared pullback norm of `v`.
    pub fn quadratic_form(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.dim() {
            return Err(Error::dims("quadratic form vector", self.dim(), v.len()));
        }
        let mut hv = vec![0.0; self.spec.output_dim];
        Ok(self
            .cache
            .iter()
            .map(|(trace, h)| {
                let jv = trace.jvp(self.w, v);
                hessian_apply(h, &jv, &mut hv);
                dot(&jv, &hv)
            })
            .sum())
    }

    /// Row blocks `H_n^{1/2} J_n`, stacked into an `(N*O) x D` matrix.
    fn whitened_jacobian(&self) -> Result<DMatrix<f64>> {
        let (n, o, d) = (self.cache.len(), self.spec.output_dim, self.dim());
        let requested = n.saturating_mul(o).saturating_mul(d);
        if requested > DEFAULT_JACOBIAN_BUDGET.max(self.dense_budget * self.dense_budget) {
            return Err(Error::BudgetExceeded {
                requested,
                budget: DEFAULT_JACOBIAN_BUDGET.max(self.dense_budget * self.dense_budget),
            });
        }
        let mut m = DMatrix::zeros(n * o, d);
        let mut unit = vec![0.0; o];
        for (i, (trace, h)) in self.cache.iter().enumerate() {
            let root = psd_sqrt(h);
            let mut jn = DMatrix::zeros(o, d);
            for k in 0..o {
                unit.fill(0.0);
                unit[k] = 1.0;
                let row = trace.vjp(self.w, &unit);
                for (j, val) in row.iter().enumerate() {
                    jn[(k, j)] = *val;
                }
            }
            m.rows_mut(i * o, o).copy_from(&(root * jn));
        }
        Ok(m)
    }

    /// Stacked plain Jacobian `J` (no Hessian weighting).
    pub fn jacobian(&self) -> Result<DMatrix<f64>> {
        crate::net::dense_jacobian(self.spec, self.w, self.data, DEFAULT_JACOBIAN_BUDGET)
    }
}

impl LinearOperator for CurvatureOperator<'_> {
    fn dim(&self) -> usize {
        self.w.len()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        self.apply_into(v, out)
    }
}

/// Dense `GGN + alpha I`, accumulated per datum as `(H^{1/2} J_n)^T (H^{1/2} J_n)`.
pub fn dense_ggn(op: &CurvatureOperator<'_>) -> Result<DMatrix<f64>> {
    let d = op.dim();
    if d > op.dense_budget {
        return Err(Error::BudgetExceeded {
            requested: d,
            budget: op.dense_budget,
        });
    }
    let m = op.whitened_jacobian()?;
    let mut g = DMatrix::identity(d, d) * op.alpha;
    g.gemm_tr(1.0, &m, &m, 1.0);
    Ok(symmetrize(g))
}

/// `H^{1/2} J J^T H^{1/2}`, the `NO x NO` tangent kernel on the training set.
pub fn ntk_matrix(op: &CurvatureOperator<'_>) -> Result<DMatrix<f64>> {
    let no = op.cache.len() * op.spec.output_dim;
    if no > op.dense_budget {
        return Err(Error::BudgetExceeded {
            requested: no,
            budget: op.dense_budget,
        });
    }
    let m = op.whitened_jacobian()?;
    Ok(symmetrize(&m * m.transpose()))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Number of GGN eigenvalues above `tol * lambda_max`, ignoring the prior.
///
/// Uses whichever of GGN (D x D) and NTK (NO x NO) is smaller; both share
/// their nonzero spectrum. An all-zero GGN has rank 0.
pub fn ggn_rank(op: &CurvatureOperator<'_>, tol: f64) -> Result<usize> {
    let no = op.cache.len() * op.spec.output_dim;
    if no == 0 {
        return Ok(0);
    }
    let spectrum = if no <= op.dim() {
        ntk_matrix(op)?.symmetric_eigenvalues()
    } else {
        dense_ggn(&op.with_alpha(0.0)?)?.symmetric_eigenvalues()
    };
    Ok(count_above(spectrum.as_slice(), tol))
}

pub(crate) fn count_above(spectrum: &[f64], tol: f64) -> usize {
    let max = spectrum.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return 0;
    }
    spectrum.iter().filter(|&&l| l > tol * max).count()
}

/// Orthonormal basis of the GGN image (D x r) with its eigenvalues, from a
/// thin SVD of the whitened Jacobian `H^{1/2} J = W S V^T` (so `GGN = V S^2 V^T`).
pub fn dense_image_basis(op: &CurvatureOperator<'_>, tol: f64) -> Result<LowRankEigen> {
    if op.cache.is_empty() {
        return Ok(LowRankEigen::empty(op.dim()));
    }
    let m = op.whitened_jacobian()?;
    let svd = m.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::NonFinite("singular value decomposition".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let basis = v_t.select_rows(order.iter()).transpose();
    let lambdas = order.iter().map(|&i| svd.singular_values[i].powi(2)).collect();
    Ok(LowRankEigen::from_parts(basis, lambdas)?.drop_kernel(tol))
}

/// Laplace covariance `Sigma = U (Lambda + alpha)^{-1} U^T + alpha^{-1} (I - U U^T)`
/// held implicitly through the image basis `U`.
#[derive(Debug, Clone)]
pub struct CovarianceDecomposition {
    eig: LowRankEigen,
    alpha: f64,
}

/// Builds the implicit covariance from leading GGN eigenpairs. Pairs with
/// nonpositive eigenvalues belong to the kernel and are dropped.
pub fn decompose_covariance(eig: &LowRankEigen, alpha: f64) -> Result<CovarianceDecomposition> {
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("prior precision must be positive, got {alpha}")));
    }
    let defect = eig.orthogonality_defect();
    if eig.rank() > 0 && defect > 1e-8 {
        return Err(Error::invalid(format!(
            "eigenbasis is not orthonormal (max |U^T U - I| = {defect:.3e})"
        )));
    }
    let keep = eig.lambdas.iter().take_while(|&&l| l > 0.0).count();
    Ok(CovarianceDecomposition {
        eig: eig.clone().truncate(keep),
        alpha,
    })
}

impl CovarianceDecomposition {
    pub fn dim(&self) -> usize {
        self.eig.dim()
    }

    pub fn rank(&self) -> usize {
        self.eig.rank()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.eig.basis
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.eig.lambdas
    }

    pub fn eigen(&self) -> &LowRankEigen {
        &self.eig
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::dims("covariance vector", self.dim(), v.len()));
        }
        Ok(())
    }

    /// Applies `U f(Lambda) U^T v + g (I - U U^T) v`.
    fn spectral_apply(&self, v: &[f64], image: impl Fn(f64) -> f64, kernel: f64) -> Vec<f64> {
        let coeffs: Vec<f64> = self
            .eig
            .coefficients(v)
            .into_iter()
            .zip(&self.eig.lambdas)
            .map(|(c, &l)| c * (image(l) - kernel))
            .collect();
        let mut out: Vec<f64> = v.iter().map(|x| kernel * x).collect();
        axpy(1.0, &self.eig.combine(&coeffs), &mut out);
        out
    }

    pub fn apply_sigma(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v)?;
        let a = self.alpha;
        Ok(self.spectral_apply(v, |l| (l + a).recip(), a.recip()))
    }

    /// `Sigma^{1/2} v = (GGN + alpha I)^{-1/2} v`.
    pub fn apply_sigma_sqrt(&self, v: &[f64]) -> Result<Vec<f64>> {
        inv_sqrt_apply(&self.eig, self.alpha, v)
    }

    /// `Sigma^{-1} v = (GGN + alpha I) v` under the low-rank model.
    pub fn apply_precision(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v)?;
        let a = self.alpha;
        Ok(self.spectral_apply(v, |l| l + a, a))
    }

    pub fn project_image(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v)?;
        Ok(self.eig.combine(&self.eig.coefficients(v)))
    }

    pub fn project_kernel(&self, v: &[f64]) -> Result<Vec<f64>> {
        let im = self.project_image(v)?;
        Ok(v.iter().zip(&im).map(|(a, b)| a - b).collect())
    }

    /// Dense covariance; for tests and small problems.
    pub fn to_dense_sigma(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        let mut e = vec![0.0; d];
        for j in 0..d {
            e.fill(0.0);
            e[j] = 1.0;
            let col = self.apply_sigma(&e).expect("unit vector has the right length");
            m.column_mut(j).copy_from_slice(&col);
        }
        m
    }
}

/// Splits `w_sample - w_hat` into its kernel and image parts, `(w_ker, w_im)`.
pub fn split_sample(
    decomp: &CovarianceDecomposition,
    w_sample: &[f64],
    w_hat: &[f64],
) -> Result<(ParamVector, ParamVector)> {
    if w_sample.len() != w_hat.len() {
        return Err(Error::dims("split_sample", w_hat.len(), w_sample.len()));
    }
    let delta: Vec<f64> = w_sample.iter().zip(w_hat).map(|(a, b)| a - b).collect();
    let im = decomp.project_image(&delta)?;
    let ker: Vec<f64> = delta.iter().zip(&im).map(|(a, b)| a - b).collect();
    Ok((ker.into(), im.into()))
}
