//! Dense feedforward networks with hand-written forward and reverse mode.
//!
//! Parameters are flattened layer-major; within a layer the weight matrix
//! (`fan_out x fan_in`, row-major) comes first, followed by the bias. The
//! checkpoint format in [`crate::io`] depends on this order.

use std::ops::{Deref, DerefMut};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entry budget for [`dense_jacobian`] unless the caller passes another.
pub const DEFAULT_JACOBIAN_BUDGET: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative at the pre-activation `z`. The ReLU subgradient at 0 is 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Architecture of a dense network `f: R^D x R^I -> R^O`.
///
/// `activation` is applied after every hidden layer; the output layer is
/// always linear. `bias_per_layer` has one entry per affine layer, i.e.
/// `hidden.len() + 1` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub bias_per_layer: Vec<bool>,
}

/// One affine layer and where its parameters live in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub bias: bool,
    pub offset: usize,
    pub activation: Activation,
}

impl Layer {
    #[inline]
    pub fn weight_index(&self, out: usize, inp: usize) -> usize {
        self.offset + out * self.fan_in + inp
    }

    #[inline]
    pub fn bias_index(&self, out: usize) -> Option<usize> {
        self.bias.then(|| self.offset + self.fan_out * self.fan_in + out)
    }

    pub fn len(&self) -> usize {
        self.fan_out * self.fan_in + if self.bias { self.fan_out } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    fn affine(&self, w: &[f64], a: &[f64], z: &mut [f64]) {
        let wmat = &w[self.offset..self.offset + self.fan_out * self.fan_in];
        for (o, zo) in z.iter_mut().enumerate() {
            let row = &wmat[o * self.fan_in..(o + 1) * self.fan_in];
            let mut acc = dot(row, a);
            if let Some(b) = self.bias_index(o) {
                acc += w[b];
            }
            *zo = acc;
        }
    }
}

impl NetworkSpec {
    pub fn new(
        input_dim: usize,
        hidden: Vec<usize>,
        output_dim: usize,
        activation: Activation,
        bias_per_layer: Vec<bool>,
    ) -> Result<Self> {
        let spec = NetworkSpec {
            input_dim,
            output_dim,
            hidden,
            activation,
            bias_per_layer,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Multilayer perceptron with a bias on every layer.
    pub fn mlp(input_dim: usize, hidden: &[usize], output_dim: usize, activation: Activation) -> Self {
        NetworkSpec {
            input_dim,
            output_dim,
            hidden: hidden.to_vec(),
            activation,
            bias_per_layer: vec![true; hidden.len() + 1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::invalid("input and output widths must be positive"));
        }
        if let Some(pos) = self.hidden.iter().position(|&h| h == 0) {
            return Err(Error::invalid(format!("hidden layer {pos} has zero width")));
        }
        if self.bias_per_layer.len() != self.hidden.len() + 1 {
            return Err(Error::dims(
                "bias_per_layer",
                self.hidden.len() + 1,
                self.bias_per_layer.len(),
            ));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn layers(&self) -> Vec<Layer> {
        let widths: Vec<usize> = std::iter::once(self.input_dim)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(self.output_dim))
            .collect();
        let last = widths.len() - 2;
        let mut offset = 0;
        widths
            .windows(2)
            .enumerate()
            .map(|(l, pair)| {
                let layer = Layer {
                    fan_in: pair[0],
                    fan_out: pair[1],
                    bias: self.bias_per_layer.get(l).copied().unwrap_or(true),
                    offset,
                    activation: if l == last {
                        Activation::Identity
                    } else {
                        self.activation
                    },
                };
                offset += layer.len();
                layer
            })
            .collect()
    }

    /// Number of parameters D.
    pub fn num_params(&self) -> usize {
        self.layers().iter().map(Layer::len).sum()
    }

    fn check_params(&self, w: &[f64]) -> Result<()> {
        let d = self.num_params();
        if w.len() != d {
            return Err(Error::dims("parameter vector", d, w.len()));
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::dims("layer 0 input", self.input_dim, x.len()));
        }
        Ok(())
    }
}

/// Flat weight vector of length D.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(d: usize) -> Self {
        ParamVector(vec![0.0; d])
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

impl From<&[f64]> for ParamVector {
    fn from(v: &[f64]) -> Self {
        ParamVector(v.to_vec())
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    /// Row-major `N x O` real targets.
    Regression(Vec<f64>),
    Classes {
        labels: Vec<usize>,
        num_classes: usize,
    },
}

/// Borrowed view of a single target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target<'a> {
    Real(&'a [f64]),
    Class(usize),
}

/// Inputs (row-major `N x I`) with their targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    input_dim: usize,
    output_dim: usize,
    inputs: Vec<f64>,
    targets: Targets,
}

impl Dataset {
    pub fn regression(input_dim: usize, output_dim: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        let ds = Dataset {
            input_dim,
            output_dim,
            inputs,
            targets: Targets::Regression(targets),
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Class-labelled data. `output_dim` is the network output width, which is
    /// `num_classes` for softmax models and 1 for a Bernoulli logit.
    pub fn classification(
        input_dim: usize,
        output_dim: usize,
        num_classes: usize,
        inputs: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let ds = Dataset {
            input_dim,
            output_dim,
            inputs,
            targets: Targets::Classes { labels, num_classes },
        };
        ds.validate()?;
        Ok(ds)
    }

    /// A dataset with no points; its GGN is identically zero.
    pub fn empty(input_dim: usize, output_dim: usize) -> Self {
        Dataset {
            input_dim,
            output_dim,
            inputs: Vec::new(),
            targets: Targets::Regression(Vec::new()),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::invalid("dataset widths must be positive"));
        }
        if self.inputs.is_empty() || !self.inputs.len().is_multiple_of(self.input_dim) {
            return Err(Error::invalid(format!(
                "input buffer of length {} is not a nonempty multiple of {}",
                self.inputs.len(),
                self.input_dim
            )));
        }
        let n = self.inputs.len() / self.input_dim;
        if !self.inputs.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("dataset inputs".into()));
        }
        match &self.targets {
            Targets::Regression(y) => {
                if y.len() != n * self.output_dim {
                    return Err(Error::dims("regression targets", n * self.output_dim, y.len()));
                }
                if !y.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite("dataset targets".into()));
                }
            }
            Targets::Classes { labels, num_classes } => {
                if labels.len() != n {
                    return Err(Error::dims("class labels", n, labels.len()));
                }
                if let Some(&bad) = labels.iter().find(|&&l| l >= *num_classes) {
                    return Err(Error::InvalidLabel {
                        label: bad,
                        classes: *num_classes,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.input_dim
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn input(&self, n: usize) -> &[f64] {
        &self.inputs[n * self.input_dim..(n + 1) * self.input_dim]
    }

    pub fn target(&self, n: usize) -> Target<'_> {
        match &self.targets {
            Targets::Regression(y) => Target::Real(&y[n * self.output_dim..(n + 1) * self.output_dim]),
            Targets::Classes { labels, .. } => Target::Class(labels[n]),
        }
    }

    /// Class labels, if this is a classification dataset.
    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes { labels, .. } => Some(labels),
            Targets::Regression(_) => None,
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut inputs = Vec::with_capacity(indices.len() * self.input_dim);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!("subset index {i} out of range")));
            }
            inputs.extend_from_slice(self.input(i));
        }
        let targets = match &self.targets {
            Targets::Regression(_) => Targets::Regression(
                indices
                    .iter()
                    .flat_map(|&i| match self.target(i) {
                        Target::Real(y) => y.to_vec(),
                        Target::Class(_) => unreachable!(),
                    })
                    .collect(),
            ),
            Targets::Classes { labels, num_classes } => Targets::Classes {
                labels: indices.iter().map(|&i| labels[i]).collect(),
                num_classes: *num_classes,
            },
        };
        if indices.is_empty() {
            return Ok(Dataset::empty(self.input_dim, self.output_dim));
        }
        let ds = Dataset {
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            inputs,
            targets,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Same targets with replaced inputs (used for covariate shift).
    pub fn with_inputs(&self, inputs: Vec<f64>) -> Result<Self> {
        let ds = Dataset { inputs, ..self.clone() };
        if ds.inputs.len() != self.inputs.len() {
            return Err(Error::dims("replacement inputs", self.inputs.len(), ds.inputs.len()));
        }
        ds.validate()?;
        Ok(ds)
    }
}

/// Cached forward pass at one input: everything reverse and forward mode need.
#[derive(Debug, Clone)]
pub struct Trace {
    layers: Vec<Layer>,
    /// `acts[0]` is the input, `acts[l + 1]` the post-activation of layer l.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn new(spec: &NetworkSpec, w: &[f64], x: &[f64]) -> Result<Self> {
        spec.validate()?;
        spec.check_params(w)?;
        spec.check_input(x)?;
        Ok(Self::new_unchecked(spec.layers(), w, x))
    }

    pub(crate) fn new_unchecked(layers: Vec<Layer>, w: &[f64], x: &[f64]) -> Self {
        let mut acts = Vec::with_capacity(layers.len() + 1);
        let mut pre = Vec::with_capacity(layers.len());
        acts.push(x.to_vec());
        for layer in &layers {
            let mut z = vec![0.0; layer.fan_out];
            layer.affine(w, acts.last().unwrap(), &mut z);
            let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(z);
            acts.push(a);
        }
        Trace { layers, acts, pre }
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::len).sum()
    }

    /// `J_w(x) . tangent`.
    pub fn jvp(&self, w: &[f64], tangent: &[f64]) -> Vec<f64> {
        // the input does not depend on w
        let mut da = vec![0.0; self.acts[0].len()];
        for (l, layer) in self.layers.iter().enumerate() {
            let a = &self.acts[l];
            let mut dz = vec![0.0; layer.fan_out];
            for (o, dzo) in dz.iter_mut().enumerate() {
                let row = layer.weight_index(o, 0);
                let mut acc = dot(&tangent[row..row + layer.fan_in], a);
                if l > 0 {
                    acc += dot(&w[row..row + layer.fan_in], &da);
                }
                if let Some(b) = layer.bias_index(o) {
                    acc += tangent[b];
                }
                *dzo = acc;
            }
            for (v, &z) in dz.iter_mut().zip(&self.pre[l]) {
                *v *= layer.activation.derivative(z);
            }
            da = dz;
        }
        da
    }

    /// Adds `J_w(x)^T . cotangent` into `out`.
    pub fn vjp_accumulate(&self, w: &[f64], cotangent: &[f64], out: &mut [f64]) {
        let mut g = cotangent.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            for (v, &z) in g.iter_mut().zip(&self.pre[l]) {
                *v *= layer.activation.derivative(z);
            }
            let a = &self.acts[l];
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                let row = layer.weight_index(o, 0);
                axpy(go, a, &mut out[row..row + layer.fan_in]);
                if let Some(b) = layer.bias_index(o) {
                    out[b] += go;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; layer.fan_in];
                for (o, &go) in g.iter().enumerate() {
                    if go == 0.0 {
                        continue;
                    }
                    let row = layer.weight_index(o, 0);
                    axpy(go, &w[row..row + layer.fan_in], &mut prev);
                }
                g = prev;
            }
        }
    }

    pub fn vjp(&self, w: &[f64], cotangent: &[f64]) -> ParamVector {
        let mut out = vec![0.0; self.num_params()];
        self.vjp_accumulate(w, cotangent, &mut out);
        ParamVector(out)
    }
}

pub fn forward(spec: &NetworkSpec, w: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    Ok(Trace::new(spec, w, x)?.acts.pop().unwrap())
}

/// Network outputs for every input row of `data`, row-major `N x O`.
pub fn forward_batch(spec: &NetworkSpec, w: &[f64], data: &Dataset) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    spec.check_params(w)?;
    if data.input_dim() != spec.input_dim {
        return Err(Error::dims("dataset input width", spec.input_dim, data.input_dim()));
    }
    let layers = spec.layers();
    Ok((0..data.len())
        .map(|n| {
            let mut t = Trace::new_unchecked(layers.clone(), w, data.input(n));
            t.acts.pop().unwrap()
        })
        .collect())
}

pub fn jvp(spec: &NetworkSpec, w: &[f64], x: &[f64], tangent: &[f64]) -> Result<Vec<f64>> {
    let trace = Trace::new(spec, w, x)?;
    if tangent.len() != w.len() {
        return Err(Error::dims("jvp tangent", w.len(), tangent.len()));
    }
    Ok(trace.jvp(w, tangent))
}

pub fn vjp(spec: &NetworkSpec, w: &[f64], x: &[f64], cotangent: &[f64]) -> Result<ParamVector> {
    let trace = Trace::new(spec, w, x)?;
    if cotangent.len() != spec.output_dim {
        return Err(Error::dims("vjp cotangent", spec.output_dim, cotangent.len()));
    }
    Ok(trace.vjp(w, cotangent))
}

/// Stacked per-datum Jacobians, an `(N*O) x D` matrix whose row block n is `J_w(x_n)`.
pub fn dense_jacobian(spec: &NetworkSpec, w: &[f64], data: &Dataset, budget: usize) -> Result<DMatrix<f64>> {
    spec.validate()?;
    spec.check_params(w)?;
    let (n, o, d) = (data.len(), spec.output_dim, w.len());
    let requested = n.saturating_mul(o).saturating_mul(d);
    if requested > budget {
        return Err(Error::BudgetExceeded { requested, budget });
    }
    if data.input_dim() != spec.input_dim {
        return Err(Error::dims("dataset input width", spec.input_dim, data.input_dim()));
    }
    let layers = spec.layers();
    let mut jac = DMatrix::zeros(n * o, d);
    let mut unit = vec![0.0; o];
    for i in 0..n {
        let trace = Trace::new_unchecked(layers.clone(), w, data.input(i));
        for k in 0..o {
            unit.fill(0.0);
            unit[k] = 1.0;
            let row = trace.vjp(w, &unit);
            for (j, v) in row.iter().enumerate() {
                jac[(i * o + k, j)] = *v;
            }
        }
    }
    Ok(jac)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
