//! Pullback-metric geometry on weight space: path lengths under
//! `v^T (J^T H J)_w v`, ReLU rescalings, and checks that rescalings act as
//! isometries with tangents in the GGN kernel.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::curvature::{dense_ggn, dense_image_basis, CurvatureOperator, DEFAULT_RANK_TOL};
use crate::error::{Error, Result};
use crate::likelihood::Likelihood;
use crate::net::{dot, Activation, Dataset, NetworkSpec, ParamVector};

/// Piecewise-linear path through `waypoints`, each segment integrated with
/// `subdivisions` midpoint evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSpec {
    pub waypoints: Vec<ParamVector>,
    pub subdivisions: usize,
}

impl PathSpec {
    pub fn new(waypoints: Vec<ParamVector>, subdivisions: usize) -> Result<Self> {
        let path = PathSpec {
            waypoints,
            subdivisions,
        };
        path.validate()?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.waypoints.len() < 2 {
            return Err(Error::invalid("a path needs at least two waypoints"));
        }
        if self.subdivisions == 0 {
            return Err(Error::invalid("subdivisions must be positive"));
        }
        let d = self.waypoints[0].len();
        if let Some(bad) = self.waypoints.iter().find(|w| w.len() != d) {
            return Err(Error::dims("path waypoint", d, bad.len()));
        }
        Ok(())
    }

    /// `self` followed by `other`; the shared endpoint appears once.
    pub fn concat(&self, other: &PathSpec) -> Result<PathSpec> {
        let mut waypoints = self.waypoints.clone();
        let skip = usize::from(self.waypoints.last() == other.waypoints.first());
        waypoints.extend(other.waypoints.iter().skip(skip).cloned());
        PathSpec::new(waypoints, self.subdivisions)
    }
}

/// Length of `path` under the pullback metric of the training set.
pub fn pullback_length(spec: &NetworkSpec, data: &Dataset, likelihood: Likelihood, path: &PathSpec) -> Result<f64> {
    path.validate()?;
    let m = path.subdivisions;
    let mut total = 0.0;
    for seg in path.waypoints.windows(2) {
        let (a, b) = (&seg[0], &seg[1]);
        let delta: Vec<f64> = b.iter().zip(a.iter()).map(|(x, y)| x - y).collect();
        if delta.iter().all(|&v| v == 0.0) {
            continue;
        }
        for i in 0..m {
            let t = (i as f64 + 0.5) / m as f64;
            let point: Vec<f64> = a.iter().zip(&delta).map(|(x, d)| x + t * d).collect();
            let op = CurvatureOperator::new(spec, &point, data, likelihood, 0.0)?;
            let speed_sq = op.quadratic_form(&delta)?;
            total += speed_sq.max(0.0).sqrt() / m as f64;
        }
    }
    Ok(total)
}

/// Positive rescaling of one ReLU unit: incoming weights and bias times
/// `alpha`, outgoing weights divided by `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReparamAction {
    ReluScaling {
        /// Hidden layer, 0-based.
        layer_index: usize,
        unit_index: usize,
        alpha: f64,
    },
}

impl ReparamAction {
    pub fn relu_scaling(layer_index: usize, unit_index: usize, alpha: f64) -> Self {
        ReparamAction::ReluScaling {
            layer_index,
            unit_index,
            alpha,
        }
    }

    /// Per-parameter factor of the (diagonal) action; also its Jacobian.
    pub fn scale_factors(&self, spec: &NetworkSpec) -> Result<Vec<f64>> {
        let ReparamAction::ReluScaling {
            layer_index,
            unit_index,
            alpha,
        } = *self;
        if !(alpha > 0.0) {
            return Err(Error::invalid(format!("scaling factor must be positive, got {alpha}")));
        }
        if spec.activation != Activation::Relu {
            return Err(Error::invalid("rescaling symmetry requires relu activations"));
        }
        if layer_index >= spec.hidden.len() || unit_index >= spec.hidden[layer_index] {
            return Err(Error::invalid(format!("no hidden unit ({layer_index}, {unit_index})")));
        }
        let layers = spec.layers();
        let mut factors = vec![1.0; spec.num_params()];
        let incoming = layers[layer_index];
        for i in 0..incoming.fan_in {
            factors[incoming.weight_index(unit_index, i)] = alpha;
        }
        if let Some(b) = incoming.bias_index(unit_index) {
            factors[b] = alpha;
        }
        let outgoing = layers[layer_index + 1];
        for o in 0..outgoing.fan_out {
            factors[outgoing.weight_index(o, unit_index)] = 1.0 / alpha;
        }
        Ok(factors)
    }

    /// `d/dalpha g_alpha(w)` at `alpha = 1`: `+w` on incoming, `-w` on outgoing.
    pub fn tangent(&self, spec: &NetworkSpec, w: &[f64]) -> Result<Vec<f64>> {
        let ReparamAction::ReluScaling {
            layer_index,
            unit_index,
            ..
        } = *self;
        let probe = ReparamAction::relu_scaling(layer_index, unit_index, 2.0);
        let factors = probe.scale_factors(spec)?;
        Ok(factors
            .iter()
            .zip(w)
            .map(|(&f, &x)| {
                if f > 1.0 {
                    x
                } else if f < 1.0 {
                    -x
                } else {
                    0.0
                }
            })
            .collect())
    }
}

pub fn apply_reparam(spec: &NetworkSpec, w: &[f64], action: &ReparamAction) -> Result<ParamVector> {
    if w.len() != spec.num_params() {
        return Err(Error::dims("reparameterized weights", spec.num_params(), w.len()));
    }
    let factors = action.scale_factors(spec)?;
    Ok(w.iter().zip(&factors).map(|(x, f)| x * f).collect::<Vec<_>>().into())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformReport {
    pub max_abs_error: f64,
    /// Largest entry of `|GGN(w)|`, for scale.
    pub ggn_max: f64,
}

/// Verifies the change-of-variables rule `GGN(w) = Dg^T GGN(g(w)) Dg` entrywise.
pub fn check_ggn_transform(
    spec: &NetworkSpec,
    data: &Dataset,
    likelihood: Likelihood,
    w: &[f64],
    action: &ReparamAction,
) -> Result<TransformReport> {
    let factors = action.scale_factors(spec)?;
    let moved = apply_reparam(spec, w, action)?;
    let g_here = dense_ggn(&CurvatureOperator::new(spec, w, data, likelihood, 0.0)?)?;
    let g_there = dense_ggn(&CurvatureOperator::new(spec, &moved, data, likelihood, 0.0)?)?;
    let pulled = DMatrix::from_fn(g_there.nrows(), g_there.ncols(), |i, j| {
        factors[i] * g_there[(i, j)] * factors[j]
    });
    Ok(TransformReport {
        max_abs_error: (&g_here - pulled).abs().max(),
        ggn_max: g_here.abs().max(),
    })
}

/// `||(I - P_ker) v|| / ||v||` for an arbitrary tangent `v` at `w`; 0 means
/// `v` lies entirely in the GGN kernel.
pub fn kernel_alignment_of(
    spec: &NetworkSpec,
    data: &Dataset,
    likelihood: Likelihood,
    w: &[f64],
    tangent: &[f64],
) -> Result<f64> {
    let norm = dot(tangent, tangent).sqrt();
    if norm == 0.0 {
        return Err(Error::invalid("zero tangent has no direction"));
    }
    let op = CurvatureOperator::new(spec, w, data, likelihood, 0.0)?;
    let image = dense_image_basis(&op, DEFAULT_RANK_TOL)?;
    let coeffs = image.coefficients(tangent);
    Ok(dot(&coeffs, &coeffs).sqrt() / norm)
}

/// [`kernel_alignment_of`] for the tangent of a rescaling action.
pub fn kernel_alignment(
    spec: &NetworkSpec,
    data: &Dataset,
    likelihood: Likelihood,
    w: &[f64],
    action: &ReparamAction,
) -> Result<f64> {
    let tangent = action.tangent(spec, w)?;
    kernel_alignment_of(spec, data, likelihood, w, &tangent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::forward;

    fn relu_chain() -> NetworkSpec {
        NetworkSpec::new(1, vec![1], 1, Activation::Relu, vec![false, false]).unwrap()
    }

    fn gauss() -> Likelihood {
        Likelihood::Gaussian { variance: 1.0 }
    }

    #[test]
    fn identity_and_group_property() {
        let spec = NetworkSpec::mlp(2, &[3, 2], 1, Activation::Relu);
        let w: Vec<f64> = (0..spec.num_params()).map(|i| 0.1 * i as f64 - 0.7).collect();
        let id = apply_reparam(&spec, &w, &ReparamAction::relu_scaling(1, 1, 1.0)).unwrap();
        assert_eq!(id.as_ref(), w.as_slice());
        let half = apply_reparam(&spec, &w, &ReparamAction::relu_scaling(0, 2, 0.5)).unwrap();
        let back = apply_reparam(&spec, &half, &ReparamAction::relu_scaling(0, 2, 2.0)).unwrap();
        assert_eq!(back.as_ref(), w.as_slice());
    }

    #[test]
    fn relu_chain_rescaling() {
        let spec = relu_chain();
        // (w1, w2) = (2, 3) flattened as [w2, w1]
        let moved = apply_reparam(&spec, &[3.0, 2.0], &ReparamAction::relu_scaling(0, 0, 2.0)).unwrap();
        assert_eq!(moved.as_ref(), &[6.0, 1.0]);
        for x in [0.5, 1.0, 2.0] {
            assert_eq!(
                forward(&spec, &[3.0, 2.0], &[x]).unwrap(),
                forward(&spec, &moved, &[x]).unwrap()
            );
        }
    }

    #[test]
    fn invalid_actions() {
        let spec = relu_chain();
        assert!(apply_reparam(&spec, &[1.0, 1.0], &ReparamAction::relu_scaling(1, 0, 2.0)).is_err());
        assert!(apply_reparam(&spec, &[1.0, 1.0], &ReparamAction::relu_scaling(0, 1, 2.0)).is_err());
        assert!(apply_reparam(&spec, &[1.0, 1.0], &ReparamAction::relu_scaling(0, 0, -1.0)).is_err());
        let tanh = NetworkSpec::new(1, vec![1], 1, Activation::Tanh, vec![false, false]).unwrap();
        assert!(apply_reparam(&tanh, &[1.0, 1.0], &ReparamAction::relu_scaling(0, 0, 2.0)).is_err());
    }

    #[test]
    fn constant_path_has_zero_length() {
        let spec = relu_chain();
        let data = Dataset::regression(1, 1, vec![1.0], vec![0.0]).unwrap();
        let p = PathSpec::new(vec![vec![3.0, 2.0].into(), vec![3.0, 2.0].into()], 10).unwrap();
        assert_eq!(pullback_length(&spec, &data, gauss(), &p).unwrap(), 0.0);
    }

    #[test]
    fn linear_straight_path() {
        let spec = NetworkSpec::new(2, vec![], 1, Activation::Identity, vec![false]).unwrap();
        let data = Dataset::regression(2, 1, vec![1.0, 2.0], vec![0.0]).unwrap();
        let p = PathSpec::new(vec![vec![1.0, 0.0].into(), vec![1.0, 1.0].into()], 7).unwrap();
        let len = pullback_length(&spec, &data, gauss(), &p).unwrap();
        assert!((len - 2.0).abs() < 1e-14);
    }

    #[test]
    fn relu_chain_transform_fixture() {
        let spec = relu_chain();
        let data = Dataset::regression(1, 1, vec![1.0], vec![0.0]).unwrap();
        let w = [3.0, 2.0];
        let rep = check_ggn_transform(&spec, &data, gauss(), &w, &ReparamAction::relu_scaling(0, 0, 2.0)).unwrap();
        assert_eq!(rep.max_abs_error, 0.0);
        assert_eq!(rep.ggn_max, 9.0);
        let rep = check_ggn_transform(&spec, &data, gauss(), &w, &ReparamAction::relu_scaling(0, 0, 1.0)).unwrap();
        assert_eq!(rep.max_abs_error, 0.0);
    }

    #[test]
    fn alignment_homogeneous_and_zero_rejected() {
        let spec = NetworkSpec::new(2, vec![], 1, Activation::Identity, vec![false]).unwrap();
        let data = Dataset::regression(2, 1, vec![1.0, 2.0, 3.0, -1.0], vec![0.0, 0.0]).unwrap();
        let w = [0.3, 0.4];
        let r1 = kernel_alignment_of(&spec, &data, gauss(), &w, &[1.0, -0.5]).unwrap();
        let r2 = kernel_alignment_of(&spec, &data, gauss(), &w, &[10.0, -5.0]).unwrap();
        assert!((r1 - 1.0).abs() < 1e-12 && (r1 - r2).abs() < 1e-12);
        assert!(kernel_alignment_of(&spec, &data, gauss(), &w, &[0.0, 0.0]).is_err());
    }
}
