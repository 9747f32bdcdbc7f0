//! Minimal dense classifier with exact reverse-mode gradients.
//!
//! Parameters live in one flat [`ParamVector`]. Each layer occupies a
//! contiguous slice: a row-major `(fan_out, fan_in)` weight matrix followed by
//! `fan_out` biases. Hidden layers apply the configured activation; the last
//! layer emits raw logits.
//!
//! All arithmetic is `f64`. Transcendentals go through `libm` so results are
//! bit-identical across platforms.

use alloc::vec;
use alloc::vec::Vec;

use rand::distr::{Distribution, Uniform};

use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => libm::tanh(x),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Architecture descriptor binding a [`ParamVector`] to a runnable classifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
}

/// Contiguous `[start, start + len)` slice of the parameter vector owned by one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerSlice {
    pub start: usize,
    pub len: usize,
}

impl ModelSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        num_classes: usize,
        activation: Activation,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidConfig("input_dim must be positive".into()));
        }
        if hidden_dims.contains(&0) {
            return Err(Error::InvalidConfig("hidden widths must be positive".into()));
        }
        if num_classes < 2 {
            return Err(Error::InvalidConfig("num_classes must be at least 2".into()));
        }
        Ok(Self {
            input_dim,
            hidden_dims,
            num_classes,
            activation,
        })
    }

    /// `(fan_in, fan_out)` for every layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut fan_in = self.input_dim;
        for &h in self.hidden_dims.iter().chain(core::iter::once(&self.num_classes)) {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|&(fan_in, fan_out)| (fan_in + 1) * fan_out)
            .sum()
    }

    pub fn layer_offsets(&self) -> Vec<LayerSlice> {
        let mut start = 0;
        self.layer_dims()
            .iter()
            .map(|&(fan_in, fan_out)| {
                let len = (fan_in + 1) * fan_out;
                let slice = LayerSlice { start, len };
                start += len;
                slice
            })
            .collect()
    }

    /// FNV-1a over the descriptor; identifies which spec a vector belongs to.
    pub fn spec_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        feed(self.input_dim as u64);
        feed(self.hidden_dims.len() as u64);
        for &w in &self.hidden_dims {
            feed(w as u64);
        }
        feed(self.num_classes as u64);
        feed(match self.activation {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        });
        h
    }

    pub fn zeros(&self) -> ParamVector {
        ParamVector {
            values: vec![0.0; self.parameter_count()],
            spec_hash: self.spec_hash(),
            layer_offsets: self.layer_offsets(),
        }
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = seed::rng(seed);
        let mut params = self.zeros();
        for (&(fan_in, fan_out), slice) in self.layer_dims().iter().zip(self.layer_offsets()) {
            let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            let dist = Uniform::new(-limit, limit).expect("finite positive limit");
            let weights = &mut params.values[slice.start..slice.start + fan_in * fan_out];
            for w in weights {
                *w = dist.sample(&mut rng);
            }
        }
        params
    }
}

/// Flat parameter vector bound to a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    spec_hash: u64,
    layer_offsets: Vec<LayerSlice>,
}

impl ParamVector {
    pub fn from_values(spec: &ModelSpec, values: Vec<f64>) -> Result<Self> {
        let expected = spec.parameter_count();
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                axis: "parameters",
                expected,
                found: values.len(),
            });
        }
        Ok(Self {
            values,
            spec_hash: spec.spec_hash(),
            layer_offsets: spec.layer_offsets(),
        })
    }

    /// A vector with the same binding as `self` but different values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::DimensionMismatch {
                axis: "parameters",
                expected: self.values.len(),
                found: values.len(),
            });
        }
        Ok(Self {
            values,
            spec_hash: self.spec_hash,
            layer_offsets: self.layer_offsets.clone(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spec_hash(&self) -> u64 {
        self.spec_hash
    }

    pub fn layer_offsets(&self) -> &[LayerSlice] {
        &self.layer_offsets
    }

    pub fn is_bound_to(&self, spec: &ModelSpec) -> bool {
        self.spec_hash == spec.spec_hash() && self.values.len() == spec.parameter_count()
    }

    pub fn ensure_bound(&self, spec: &ModelSpec) -> Result<()> {
        if self.is_bound_to(spec) {
            Ok(())
        } else {
            Err(Error::SpecMismatch)
        }
    }

    pub fn ensure_same_binding(&self, other: &ParamVector) -> Result<()> {
        if self.spec_hash == other.spec_hash && self.values.len() == other.values.len() {
            Ok(())
        } else {
            Err(Error::SpecMismatch)
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                axis: "matrix elements",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    axis: "row length",
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stacks matrices with equal column counts.
    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for m in parts {
            if m.cols != cols {
                return Err(Error::DimensionMismatch {
                    axis: "columns",
                    expected: cols,
                    found: m.cols,
                });
            }
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        Ok(Matrix { rows, cols, data })
    }
}

/// Inputs with optional integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Option<Vec<usize>>,
}

impl Batch {
    pub fn labeled(inputs: Matrix, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != inputs.rows() {
            return Err(Error::DimensionMismatch {
                axis: "labels",
                expected: inputs.rows(),
                found: labels.len(),
            });
        }
        Self::check_finite(&inputs)?;
        Ok(Self {
            inputs,
            labels: Some(labels),
        })
    }

    pub fn unlabeled(inputs: Matrix) -> Result<Self> {
        Self::check_finite(&inputs)?;
        Ok(Self {
            inputs,
            labels: None,
        })
    }

    fn check_finite(inputs: &Matrix) -> Result<()> {
        if inputs.as_slice().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("batch inputs"))
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.select_rows(indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradResult {
    pub loss: f64,
    pub param_grad: Vec<f64>,
}

/// Contiguous range of logit columns a task is scored on.
///
/// With a shared head every task uses all columns. With per-task heads task
/// `t` reads columns `[t * C, (t + 1) * C)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ClassWindow {
    pub start: usize,
    pub len: usize,
}

impl ClassWindow {
    pub fn full(spec: &ModelSpec) -> Self {
        Self {
            start: 0,
            len: spec.num_classes,
        }
    }

    fn check(&self, num_classes: usize) -> Result<()> {
        if self.len < 2 || self.start + self.len > num_classes {
            return Err(Error::InvalidConfig(alloc::format!(
                "class window [{}, {}) outside {} logits",
                self.start,
                self.start + self.len,
                num_classes
            )));
        }
        Ok(())
    }
}

/// Training signal for [`objective_and_grad`].
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// Mean cross-entropy against integer labels (relative to the window).
    CrossEntropy(&'a [usize]),
    /// Mean Shannon entropy of the predictions.
    Entropy,
}

struct ForwardTrace {
    /// `acts[0]` is the input; `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    /// Hidden-layer pre-activations.
    pre: Vec<Vec<f64>>,
}

fn check_inputs(spec: &ModelSpec, params: &ParamVector, inputs: &Matrix) -> Result<()> {
    params.ensure_bound(spec)?;
    if inputs.cols() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            axis: "input columns",
            expected: spec.input_dim,
            found: inputs.cols(),
        });
    }
    Ok(())
}

fn affine(
    input: &[f64],
    batch: usize,
    fan_in: usize,
    fan_out: usize,
    layer: &[f64],
    out: &mut [f64],
) {
    let (weights, biases) = layer.split_at(fan_in * fan_out);
    // Four outputs at a time: independent accumulators, each summed in input order.
    let quads = fan_out / 4 * 4;
    for b in 0..batch {
        let x = &input[b * fan_in..(b + 1) * fan_in];
        let y = &mut out[b * fan_out..(b + 1) * fan_out];
        for o in (0..quads).step_by(4) {
            let w0 = &weights[o * fan_in..(o + 1) * fan_in];
            let w1 = &weights[(o + 1) * fan_in..(o + 2) * fan_in];
            let w2 = &weights[(o + 2) * fan_in..(o + 3) * fan_in];
            let w3 = &weights[(o + 3) * fan_in..(o + 4) * fan_in];
            let (mut a0, mut a1, mut a2, mut a3) = (biases[o], biases[o + 1], biases[o + 2], biases[o + 3]);
            for i in 0..fan_in {
                let xi = x[i];
                a0 += w0[i] * xi;
                a1 += w1[i] * xi;
                a2 += w2[i] * xi;
                a3 += w3[i] * xi;
            }
            y[o] = a0;
            y[o + 1] = a1;
            y[o + 2] = a2;
            y[o + 3] = a3;
        }
        for o in quads..fan_out {
            let w = &weights[o * fan_in..(o + 1) * fan_in];
            let mut acc = biases[o];
            for (wi, xi) in w.iter().zip(x) {
                acc += wi * xi;
            }
            y[o] = acc;
        }
    }
}

fn forward_trace(spec: &ModelSpec, params: &ParamVector, inputs: &Matrix) -> ForwardTrace {
    let batch = inputs.rows();
    let dims = spec.layer_dims();
    let last = dims.len() - 1;
    let mut acts = Vec::with_capacity(dims.len() + 1);
    let mut pre = Vec::with_capacity(last);
    acts.push(inputs.as_slice().to_vec());
    for (l, (&(fan_in, fan_out), slice)) in dims.iter().zip(params.layer_offsets()).enumerate() {
        let layer = &params.values()[slice.start..slice.start + slice.len];
        let mut z = vec![0.0; batch * fan_out];
        affine(&acts[l], batch, fan_in, fan_out, layer, &mut z);
        if l == last {
            acts.push(z);
        } else {
            let a = z.iter().map(|&v| spec.activation.apply(v)).collect();
            pre.push(z);
            acts.push(a);
        }
    }
    ForwardTrace { acts, pre }
}

/// Raw logits, one row per input.
pub fn forward(spec: &ModelSpec, params: &ParamVector, inputs: &Matrix) -> Result<Matrix> {
    check_inputs(spec, params, inputs)?;
    let mut trace = forward_trace(spec, params, inputs);
    let logits = trace.acts.pop().expect("at least one layer");
    Matrix::new(inputs.rows(), spec.num_classes, logits)
}

fn check_logits(logits: &[f64]) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::Empty("logits"));
    }
    if logits.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("logits"))
    }
}

/// `log softmax` by max subtraction; assumes finite, nonempty input.
fn log_softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &z in logits {
        sum += libm::exp(z - max);
    }
    let log_norm = libm::log(sum);
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = z - max - log_norm;
    }
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    check_logits(logits)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| libm::exp(z - max)).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Shannon entropy (nats) of `softmax(logits)`.
pub fn prediction_entropy(logits: &[f64]) -> Result<f64> {
    check_logits(logits)?;
    let mut log_p = vec![0.0; logits.len()];
    log_softmax_into(logits, &mut log_p);
    Ok(entropy_from_log_probs(&log_p))
}

fn entropy_from_log_probs(log_p: &[f64]) -> f64 {
    let h: f64 = log_p.iter().map(|&lp| -libm::exp(lp) * lp).sum();
    // Rounding can leave a -0.0 or a value one ulp under zero at the one-hot limit.
    h.max(0.0)
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::DimensionMismatch {
            axis: "labels",
            expected: rows,
            found: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Mean cross-entropy of `logits` (all columns) against `labels`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(labels, logits.rows(), logits.cols())?;
    if logits.rows() == 0 {
        return Err(Error::Empty("batch"));
    }
    check_logits(logits.as_slice())?;
    let mut log_p = vec![0.0; logits.cols()];
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        log_softmax_into(logits.row(i), &mut log_p);
        total -= log_p[y];
    }
    Ok(total / logits.rows() as f64)
}

/// Loss and exact parameter gradient for a labeled batch scored on all logits.
pub fn loss_and_grad(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<GradResult> {
    let labels = batch
        .labels
        .as_deref()
        .ok_or(Error::Empty("batch labels"))?;
    objective_and_grad(
        spec,
        params,
        &batch.inputs,
        Objective::CrossEntropy(labels),
        ClassWindow::full(spec),
    )
}

/// Mean objective over the batch and its exact reverse-mode gradient.
///
/// Only the logits inside `window` take part; the others get zero gradient.
pub fn objective_and_grad(
    spec: &ModelSpec,
    params: &ParamVector,
    inputs: &Matrix,
    objective: Objective<'_>,
    window: ClassWindow,
) -> Result<GradResult> {
    check_inputs(spec, params, inputs)?;
    window.check(spec.num_classes)?;
    let batch = inputs.rows();
    if batch == 0 {
        return Err(Error::Empty("batch"));
    }
    if let Objective::CrossEntropy(labels) = objective {
        check_labels(labels, batch, window.len)?;
    }

    let trace = forward_trace(spec, params, inputs);
    let classes = spec.num_classes;
    let logits = trace.acts.last().expect("at least one layer");
    check_logits(logits)?;

    // dL/dlogits, already divided by the batch size.
    let scale = 1.0 / batch as f64;
    let mut delta = vec![0.0; batch * classes];
    let mut log_p = vec![0.0; window.len];
    let mut loss = 0.0;
    for b in 0..batch {
        let row = &logits[b * classes + window.start..b * classes + window.start + window.len];
        log_softmax_into(row, &mut log_p);
        let d = &mut delta[b * classes + window.start..b * classes + window.start + window.len];
        match objective {
            Objective::CrossEntropy(labels) => {
                let y = labels[b];
                loss -= log_p[y];
                for (k, dk) in d.iter_mut().enumerate() {
                    *dk = libm::exp(log_p[k]) * scale;
                }
                d[y] -= scale;
            }
            Objective::Entropy => {
                let h = entropy_from_log_probs(&log_p);
                loss += h;
                // dH/dz_k = -p_k (ln p_k + H)
                for (k, dk) in d.iter_mut().enumerate() {
                    *dk = -libm::exp(log_p[k]) * (log_p[k] + h) * scale;
                }
            }
        }
    }
    loss *= scale;

    let mut grad = vec![0.0; params.len()];
    let dims = spec.layer_dims();
    let offsets = params.layer_offsets();
    for l in (0..dims.len()).rev() {
        let (fan_in, fan_out) = dims[l];
        let slice = offsets[l];
        let layer = &params.values()[slice.start..slice.start + slice.len];
        let weights = &layer[..fan_in * fan_out];
        let input = &trace.acts[l];
        let (gw, gb) = grad[slice.start..slice.start + slice.len].split_at_mut(fan_in * fan_out);
        for b in 0..batch {
            let x = &input[b * fan_in..(b + 1) * fan_in];
            let d = &delta[b * fan_out..(b + 1) * fan_out];
            for (o, &dv) in d.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                gb[o] += dv;
                for (g, &xi) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(x) {
                    *g += dv * xi;
                }
            }
        }
        if l == 0 {
            break;
        }
        // Propagate to the previous layer's pre-activations.
        let pre = &trace.pre[l - 1];
        let mut next = vec![0.0; batch * fan_in];
        for b in 0..batch {
            let d = &delta[b * fan_out..(b + 1) * fan_out];
            let dn = &mut next[b * fan_in..(b + 1) * fan_in];
            for (o, &dv) in d.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                for (n, &w) in dn.iter_mut().zip(&weights[o * fan_in..(o + 1) * fan_in]) {
                    *n += dv * w;
                }
            }
            for (i, n) in dn.iter_mut().enumerate() {
                let idx = b * fan_in + i;
                *n *= spec.activation.derivative(pre[idx], input[idx]);
            }
        }
        delta = next;
    }

    if !grad.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFinite("parameter gradient"));
    }
    Ok(GradResult {
        loss,
        param_grad: grad,
    })
}

/// `values - learning_rate * grad`, elementwise.
pub fn sgd_step(params: &ParamVector, grad: &[f64], learning_rate: f64) -> Result<ParamVector> {
    if grad.len() != params.len() {
        return Err(Error::DimensionMismatch {
            axis: "gradient",
            expected: params.len(),
            found: grad.len(),
        });
    }
    let values = params
        .values()
        .iter()
        .zip(grad)
        .map(|(&v, &g)| v - learning_rate * g)
        .collect();
    params.with_values(values)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn linear_spec(d: usize, c: usize) -> ModelSpec {
        ModelSpec::new(d, vec![], c, Activation::Relu).unwrap()
    }

    #[test]
    fn parameter_count_and_offsets() {
        let spec = ModelSpec::new(3, vec![4, 2], 5, Activation::Tanh).unwrap();
        assert_eq!(spec.parameter_count(), 4 * 4 + 5 * 2 + 3 * 5);
        let offsets = spec.layer_offsets();
        assert_eq!(offsets[0], LayerSlice { start: 0, len: 16 });
        assert_eq!(offsets[1], LayerSlice { start: 16, len: 10 });
        assert_eq!(offsets[2], LayerSlice { start: 26, len: 15 });
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::new(0, vec![], 2, Activation::Relu).is_err());
        assert!(ModelSpec::new(2, vec![0], 2, Activation::Relu).is_err());
        assert!(ModelSpec::new(2, vec![], 1, Activation::Relu).is_err());
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let spec = ModelSpec::new(3, vec![4], 3, Activation::Relu).unwrap();
        let inputs = Matrix::new(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.5, 0.5]).unwrap();
        let logits = forward(&spec, &spec.zeros(), &inputs).unwrap();
        assert!(logits.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_linear_layer() {
        let spec = linear_spec(1, 2);
        let params = ParamVector::from_values(&spec, vec![1.0, -1.0, 0.0, 0.0]).unwrap();
        let logits = forward(&spec, &params, &Matrix::new(1, 1, vec![2.0]).unwrap()).unwrap();
        assert_eq!(logits.as_slice(), &[2.0, -2.0]);
    }

    #[test]
    fn forward_dimension_mismatch_names_axis() {
        let spec = linear_spec(2, 2);
        let err = forward(&spec, &spec.zeros(), &Matrix::zeros(1, 3)).unwrap_err();
        assert_eq!(
            err,
            Error::DimensionMismatch {
                axis: "input columns",
                expected: 2,
                found: 3
            }
        );
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.0; 4]).unwrap(), vec![0.25; 4]);
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!(close(p[0], 1.0, 1e-12) && p[1] < 1e-300);
        let e = core::f64::consts::E;
        let p = softmax(&[1.0, 2.0]).unwrap();
        assert!(close(p[0], 1.0 / (1.0 + e), 1e-15));
        assert!(close(p[1], e / (1.0 + e), 1e-15));
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
        assert!(softmax(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        let m = Matrix::new(1, 2, vec![100.0, -100.0]).unwrap();
        assert!(cross_entropy(&m, &[0]).unwrap() < 1e-12);
        let m = Matrix::zeros(3, 4);
        assert!(close(cross_entropy(&m, &[0, 1, 3]).unwrap(), libm::log(4.0), 1e-15));
        let m = Matrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        let expected = libm::log(1.0 + core::f64::consts::E) - 1.0;
        assert!(close(cross_entropy(&m, &[1]).unwrap(), expected, 1e-15));
        assert!(close(expected, 0.313262, 1e-6));
        assert_eq!(
            cross_entropy(&m, &[2]).unwrap_err(),
            Error::LabelOutOfRange {
                label: 2,
                classes: 2
            }
        );
    }

    #[test]
    fn entropy_cases() {
        assert!(close(prediction_entropy(&[3.0; 4]).unwrap(), libm::log(4.0), 1e-15));
        assert!(prediction_entropy(&[60.0, 0.0, 0.0]).unwrap() < 1e-9);
        // Logits whose softmax is (0.5, 0.25, 0.25).
        let l2 = libm::log(2.0);
        let h = prediction_entropy(&[l2, 0.0, 0.0]).unwrap();
        let direct = -(0.5 * libm::log(0.5) + 2.0 * 0.25 * libm::log(0.25));
        assert!(close(h, direct, 1e-15));
        assert!(close(h, 1.039721, 1e-6));
    }

    #[test]
    fn gradient_vanishes_at_toy_minimum() {
        // Zero inputs leave only the biases in play; a balanced two-label batch
        // has its unique minimum at equal biases, which zero parameters satisfy.
        let spec = linear_spec(1, 2);
        let batch = Batch::labeled(Matrix::zeros(2, 1), vec![0, 1]).unwrap();
        let g = loss_and_grad(&spec, &spec.zeros(), &batch).unwrap();
        assert!(g.param_grad.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn descent_along_negative_gradient_reduces_loss() {
        let spec = ModelSpec::new(3, vec![5], 3, Activation::Tanh).unwrap();
        let params = spec.init_params(11);
        let inputs = Matrix::new(2, 3, vec![0.3, -0.2, 0.9, -1.0, 0.4, 0.1]).unwrap();
        let batch = Batch::labeled(inputs, vec![2, 0]).unwrap();
        let g = loss_and_grad(&spec, &params, &batch).unwrap();
        let stepped = sgd_step(&params, &g.param_grad, 1e-3).unwrap();
        let after = loss_and_grad(&spec, &stepped, &batch).unwrap();
        assert!(after.loss < g.loss);
    }

    #[test]
    fn sgd_cases() {
        let spec = linear_spec(1, 2);
        let params = ParamVector::from_values(&spec, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let grad = [1.0, -1.0, 0.0, 0.0];
        assert_eq!(sgd_step(&params, &grad, 0.0).unwrap(), params);
        assert_eq!(
            &sgd_step(&params, &grad, 0.5).unwrap().values()[..2],
            &[0.5, 1.5]
        );
        assert!(sgd_step(&params, &[1.0], 0.1).is_err());
    }

    #[test]
    fn windowed_cross_entropy_ignores_outside_logits() {
        let spec = linear_spec(2, 4);
        let params = spec.init_params(3);
        let inputs = Matrix::new(1, 2, vec![0.5, -0.5]).unwrap();
        let window = ClassWindow { start: 2, len: 2 };
        let g = objective_and_grad(&spec, &params, &inputs, Objective::CrossEntropy(&[1]), window)
            .unwrap();
        let logits = forward(&spec, &params, &inputs).unwrap();
        let sub = Matrix::new(1, 2, logits.row(0)[2..].to_vec()).unwrap();
        assert!(close(g.loss, cross_entropy(&sub, &[1]).unwrap(), 1e-15));
        // Rows 0 and 1 of the weight matrix feed logits outside the window.
        assert!(g.param_grad[..4].iter().all(|&v| v == 0.0));
    }
}
