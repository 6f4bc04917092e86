//! Feed-forward network substrate: dense layers, reverse-mode gradients,
//! Adam, and a binary checkpoint format.
//!
//! Everything works on row-major batches (`batch × features`). The
//! single-vector entry points are thin wrappers over a batch of one.

mod adam;
mod checkpoint;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{read_network, write_network};

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len("Matrix::from_vec", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    /// Stacks equally sized rows into a matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_len("Matrix::from_rows", cols, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `c ← a·b`, with `a` (m×k) and `b` (k×n) given by element strides and `c`
/// row-major m×n.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_strides: (usize, usize), b: &[f64], b_strides: (usize, usize), c: &mut [f64]) {
    let last = |rows: usize, cols: usize, (rs, cs): (usize, usize)| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(a.len() >= last(m, k, a_strides) && b.len() >= last(k, n, b_strides) && c.len() >= m * n);
    // SAFETY: the assertion above keeps every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed in terms of the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Identity => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// A fully connected layer `y = act(W x + b)` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, biases: Vec<f64>, activation: Activation) -> Result<Self> {
        check_len("DenseLayer bias", weights.rows(), biases.len())?;
        Ok(Self {
            weights,
            biases,
            activation,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let data = (0..inputs * outputs)
            .map(|_| rng.gen_range(-limit..=limit))
            .collect();
        Self {
            weights: Matrix {
                rows: outputs,
                cols: inputs,
                data,
            },
            biases: vec![0.0; outputs],
            activation,
        }
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            weights: Matrix::zeros(outputs, inputs),
            biases: vec![0.0; outputs],
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    fn forward_batch(&self, x: &Matrix) -> Matrix {
        let (b, i, o) = (x.rows(), self.inputs(), self.outputs());
        let mut out = Matrix::zeros(b, o);
        gemm(b, i, o, &x.data, (i, 1), &self.weights.data, (1, i), &mut out.data);
        for row in out.data.chunks_exact_mut(o.max(1)) {
            for (v, bias) in row.iter_mut().zip(&self.biases) {
                *v = self.activation.apply(*v + bias);
            }
        }
        out
    }
}

/// Ordered stack of dense layers.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<DenseLayer>,
    version: u64,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Activations recorded by a forward pass; `activations[0]` is the input
/// batch and `activations[k + 1]` the output of layer `k`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    activations: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("cache holds the input at least")
    }

    pub fn input(&self) -> &Matrix {
        &self.activations[0]
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].rows()
    }
}

impl Network {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Contract("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            check_len("Network layer chaining", pair[0].outputs(), pair[1].inputs())?;
        }
        for l in &layers {
            check_len("DenseLayer bias", l.outputs(), l.biases.len())?;
        }
        Ok(Self {
            layers,
            version: fresh_version(),
        })
    }

    /// Builds `sizes[0] → sizes[1] → … → sizes[k]` with `hidden` activations
    /// on every layer but the last, which uses `output`.
    pub fn glorot<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Contract("need at least input and output sizes".into()));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let act = if k + 1 == n { output } else { hidden };
                DenseLayer::glorot(sizes[k], sizes[k + 1], act, rng)
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Mutable access to the layers. Any outstanding [`ForwardCache`] becomes
    /// stale.
    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        self.version = fresh_version();
        &mut self.layers
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.biases.len())
            .sum()
    }

    pub fn forward_batch(&self, input: &Matrix) -> Result<(Matrix, ForwardCache)> {
        check_len("Network::forward input", self.input_size(), input.cols())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.clone());
        for layer in &self.layers {
            let next = layer.forward_batch(activations.last().unwrap());
            activations.push(next);
        }
        let out = activations.last().unwrap().clone();
        Ok((
            out,
            ForwardCache {
                version: self.version,
                activations,
            },
        ))
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let x = Matrix::from_vec(1, input.len(), input.to_vec())?;
        let (out, cache) = self.forward_batch(&x)?;
        Ok((out.into_vec(), cache))
    }

    /// Forward pass without recording a cache.
    pub fn predict_batch(&self, input: &Matrix) -> Result<Matrix> {
        check_len("Network::predict input", self.input_size(), input.cols())?;
        let mut x = self.layers[0].forward_batch(input);
        for layer in &self.layers[1..] {
            x = layer.forward_batch(&x);
        }
        Ok(x)
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_len("Network::predict input", self.input_size(), input.len())?;
        let x = Matrix::from_vec(1, input.len(), input.to_vec())?;
        Ok(self.predict_batch(&x)?.into_vec())
    }

    /// Reverse pass. Returns parameter gradients summed over the batch and
    /// the gradient with respect to the input batch.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Matrix) -> Result<(GradientSet, Matrix)> {
        let (grads, input_grad) = self.backward_impl(cache, output_grad, true)?;
        Ok((grads, input_grad.unwrap()))
    }

    /// Reverse pass for parameter gradients only.
    pub fn backward_params(&self, cache: &ForwardCache, output_grad: &Matrix) -> Result<GradientSet> {
        Ok(self.backward_impl(cache, output_grad, false)?.0)
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        output_grad: &Matrix,
        want_input: bool,
    ) -> Result<(GradientSet, Option<Matrix>)> {
        if cache.version != self.version || cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::Contract(
                "forward cache does not belong to the current network parameters".into(),
            ));
        }
        let batch = cache.batch_size();
        check_len("Network::backward batch", batch, output_grad.rows())?;
        check_len("Network::backward output grad", self.output_size(), output_grad.cols())?;

        let mut grads = GradientSet::zeros_like(self);
        let mut delta = output_grad.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let out = &cache.activations[k + 1];
            let inp = &cache.activations[k];
            // delta := dL/d(pre-activation)
            for (d, y) in delta.data.iter_mut().zip(&out.data) {
                *d *= layer.activation.derivative_from_output(*y);
            }
            let g = &mut grads.layers[k];
            let (o, i) = (layer.outputs(), layer.inputs());
            // gW = δᵀ·x, gb = column sums of δ
            gemm(o, batch, i, &delta.data, (1, o), &inp.data, (i, 1), &mut g.weights.data);
            for row in delta.data.chunks_exact(o) {
                for (gb, d) in g.biases.iter_mut().zip(row) {
                    *gb += d;
                }
            }
            if k == 0 && !want_input {
                return Ok((grads, None));
            }
            let mut prev = Matrix::zeros(batch, i);
            gemm(batch, o, i, &delta.data, (o, 1), &layer.weights.data, (i, 1), &mut prev.data);
            delta = prev;
        }
        Ok((grads, Some(delta)))
    }

    /// Single-sample backward pass.
    pub fn backward_one(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<(GradientSet, Vec<f64>)> {
        let g = Matrix::from_vec(1, output_grad.len(), output_grad.to_vec())?;
        let (grads, input_grad) = self.backward(cache, &g)?;
        Ok((grads, input_grad.into_vec()))
    }

    /// Overwrites every parameter with the values of `other`.
    pub fn copy_from(&mut self, other: &Network) -> Result<()> {
        if !self.congruent(other) {
            return Err(Error::Contract("cannot copy between networks of different shape".into()));
        }
        self.layers.clone_from(&other.layers);
        self.version = other.version;
        Ok(())
    }

    pub fn congruent(&self, other: &Network) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weights.same_shape(&b.weights) && a.activation == b.activation)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.data.iter().chain(&l.biases).all(|v| v.is_finite()))
    }
}

/// L2 weight penalty: the sum of squared weights over all layers (biases
/// excluded), together with its gradient `2·W`.
pub fn l2_penalty(net: &Network) -> (f64, GradientSet) {
    let mut grads = GradientSet::zeros_like(net);
    let mut value = 0.0;
    for (l, g) in net.layers.iter().zip(&mut grads.layers) {
        for (w, gw) in l.weights.data.iter().zip(&mut g.weights.data) {
            value += w * w;
            *gw = 2.0 * w;
        }
    }
    (value, grads)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

/// Parameter gradients, shape-congruent with the owning [`Network`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGrad>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Matrix::zeros(l.outputs(), l.inputs()),
                    biases: vec![0.0; l.outputs()],
                })
                .collect(),
        }
    }

    pub fn congruent(&self, other: &GradientSet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weights.same_shape(&b.weights) && a.biases.len() == b.biases.len())
    }

    pub fn matches(&self, net: &Network) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.same_shape(&l.weights) && g.biases.len() == l.biases.len())
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) -> Result<()> {
        if !self.congruent(other) {
            return Err(Error::Contract("gradient sets are not shape-congruent".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            axpy(scale, &b.weights.data, &mut a.weights.data);
            axpy(scale, &b.biases, &mut a.biases);
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.data.iter_mut().for_each(|v| *v *= factor);
            l.biases.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|v| v == 0.0)
    }

    /// All gradient entries, layer by layer, weights before biases.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.data.iter().chain(&l.biases).copied())
    }

    pub fn first_non_finite_layer(&self) -> Option<usize> {
        self.layers
            .iter()
            .position(|l| l.weights.data.iter().chain(&l.biases).any(|v| !v.is_finite()))
    }
}

/// Elementwise `a + scale · b`.
pub fn accumulate(a: &GradientSet, b: &GradientSet, scale: f64) -> Result<GradientSet> {
    let mut out = a.clone();
    out.add_scaled(b, scale)?;
    Ok(out)
}

/// Flat parameter view used by finite-difference checks and tests.
pub fn parameters(net: &Network) -> Vec<f64> {
    net.layers
        .iter()
        .flat_map(|l| l.weights.data.iter().chain(&l.biases).copied())
        .collect()
}

/// Writes a flat parameter vector (same order as [`parameters`]) back into
/// `net`.
pub fn set_parameters(net: &mut Network, values: &[f64]) -> Result<()> {
    check_len("set_parameters", net.parameter_count(), values.len())?;
    let mut it = values.iter().copied();
    for l in net.layers_mut() {
        for w in &mut l.weights.data {
            *w = it.next().unwrap();
        }
        for b in &mut l.biases {
            *b = it.next().unwrap();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(weights: &[&[f64]], biases: &[f64], act: Activation) -> Network {
        let w = Matrix::from_rows(weights).unwrap();
        Network::new(vec![DenseLayer::new(w, biases.to_vec(), act).unwrap()]).unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = single(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0], Activation::Identity);
        let (out, _) = net.forward(&[1.0, 2.0]).unwrap();
        assert_eq!(out, vec![1.0, 2.0]);
    }

    #[test]
    fn affine_layer_matches_hand_evaluation() {
        let net = single(&[&[2.0, 0.0], &[0.0, 3.0]], &[1.0, -1.0], Activation::Identity);
        let (out, _) = net.forward(&[1.0, 1.0]).unwrap();
        assert_eq!(out, vec![3.0, 2.0]);
    }

    #[test]
    fn tanh_of_zero_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Network::glorot(&[4, 3], Activation::Tanh, Activation::Tanh, &mut rng).unwrap();
        net.layers_mut()[0].biases.iter_mut().for_each(|b| *b = 0.0);
        let (out, _) = net.forward(&[0.0; 4]).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_rejects_wrong_input_length() {
        let net = single(&[&[1.0, 0.0]], &[0.0], Activation::Identity);
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn identity_backward_is_outer_product() {
        let net = single(&[&[0.5, -1.0], &[2.0, 0.25]], &[0.0, 0.0], Activation::Identity);
        let x = [3.0, -2.0];
        let g = [0.7, -1.3];
        let (_, cache) = net.forward(&x).unwrap();
        let (grads, dx) = net.backward_one(&cache, &g).unwrap();
        let gw = &grads.layers[0].weights;
        for o in 0..2 {
            for i in 0..2 {
                assert_eq!(gw.get(o, i), g[o] * x[i]);
            }
        }
        assert_eq!(grads.layers[0].biases, g.to_vec());
        // W^T g
        assert_eq!(dx, vec![0.5 * 0.7 + 2.0 * -1.3, -1.0 * 0.7 + 0.25 * -1.3]);
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Network::glorot(&[3, 5, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let (_, cache) = net.forward(&[0.1, 0.2, 0.3]).unwrap();
        let (grads, dx) = net.backward_one(&cache, &[0.0, 0.0]).unwrap();
        assert!(grads.is_zero());
        assert!(dx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Network::glorot(&[2, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let (_, cache) = net.forward(&[0.1, 0.2]).unwrap();
        net.layers_mut()[0].biases[0] = 1.0;
        assert!(matches!(net.backward_one(&cache, &[1.0, 1.0]), Err(Error::Contract(_))));

        let other = Network::glorot(&[2, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let (_, foreign) = other.forward(&[0.1, 0.2]).unwrap();
        assert!(net.backward_one(&foreign, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn accumulate_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Network::glorot(&[3, 4, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let (_, g) = l2_penalty(&net);
        let zero = GradientSet::zeros_like(&net);
        assert_eq!(accumulate(&g, &zero, 1.0).unwrap(), g);
        let doubled = accumulate(&zero, &g, 2.0).unwrap();
        assert!(doubled.values().zip(g.values()).all(|(d, v)| d == 2.0 * v));
        assert!(accumulate(&g, &g, -1.0).unwrap().is_zero());

        let other = Network::glorot(&[3, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        assert!(accumulate(&g, &GradientSet::zeros_like(&other), 1.0).is_err());
    }

    #[test]
    fn l2_penalty_cases() {
        let zero = single(&[&[0.0, 0.0]], &[5.0], Activation::Identity);
        assert_eq!(l2_penalty(&zero).0, 0.0);

        let one = single(&[&[2.0]], &[7.0], Activation::Identity);
        let (v, g) = l2_penalty(&one);
        assert_eq!(v, 4.0);
        assert_eq!(g.layers[0].weights.get(0, 0), 4.0);
        assert_eq!(g.layers[0].biases[0], 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Network::glorot(&[4, 6, 3], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let before = l2_penalty(&net).0;
        for l in net.layers_mut() {
            l.weights.data_mut().iter_mut().for_each(|w| *w *= 2.0);
        }
        let after = l2_penalty(&net).0;
        assert!((after - 4.0 * before).abs() < 1e-12 * after);
    }

    #[test]
    fn batch_and_single_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Network::glorot(&[5, 7, 3], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let batch = net.predict_batch(&Matrix::from_rows(&rows).unwrap()).unwrap();
        for (r, row) in rows.iter().enumerate() {
            assert_eq!(batch.row(r), net.predict(row).unwrap().as_slice());
            assert_eq!(net.forward(row).unwrap().0, net.predict(row).unwrap());
        }
    }

    /// Loss used by the finite-difference checks: `Σ c_k · y_k` summed over
    /// the batch.
    fn linear_loss(net: &Network, x: &Matrix, c: &Matrix) -> f64 {
        let y = net.predict_batch(x).unwrap();
        y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
    }

    fn check_fd(net: &Network, x: &Matrix, c: &Matrix) -> std::result::Result<(), TestCaseError> {
        let (_, cache) = net.forward_batch(x).unwrap();
        let (grads, dx) = net.backward(&cache, c).unwrap();
        let analytic: Vec<f64> = grads.values().collect();
        let base = parameters(net);
        let h = 1e-5;
        let mut probe = net.clone();
        for (k, &a) in analytic.iter().enumerate() {
            let mut p = base.clone();
            p[k] += h;
            set_parameters(&mut probe, &p).unwrap();
            let up = linear_loss(&probe, x, c);
            p[k] -= 2.0 * h;
            set_parameters(&mut probe, &p).unwrap();
            let down = linear_loss(&probe, x, c);
            let fd = (up - down) / (2.0 * h);
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-2);
            prop_assert!(err < 1e-4, "param {k}: analytic {a} vs fd {fd}");
        }
        for (k, &a) in dx.data().iter().enumerate() {
            let mut xp = x.clone();
            xp.data_mut()[k] += h;
            let up = linear_loss(net, &xp, c);
            xp.data_mut()[k] -= 2.0 * h;
            let down = linear_loss(net, &xp, c);
            let fd = (up - down) / (2.0 * h);
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-2);
            prop_assert!(err < 1e-4, "input {k}: analytic {a} vs fd {fd}");
        }
        Ok(())
    }

    fn arb_net_case() -> impl Strategy<Value = (Vec<usize>, Vec<u8>, u64, usize)> {
        (
            prop::collection::vec(1usize..=8, 2..=4),
            prop::collection::vec(0u8..3, 3),
            any::<u64>(),
            1usize..=3,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn gradients_match_finite_differences((sizes, acts, seed, batch) in arb_net_case()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let layers = sizes
                .windows(2)
                .enumerate()
                .map(|(k, w)| {
                    let act = Activation::from_tag(acts[k]).unwrap();
                    let mut l = DenseLayer::glorot(w[0], w[1], act, &mut rng);
                    l.biases.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
                    l
                })
                .collect();
            let net = Network::new(layers).unwrap();
            let input = sizes[0];
            let out = *sizes.last().unwrap();
            let x = Matrix::from_vec(batch, input, (0..batch * input).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let c = Matrix::from_vec(batch, out, (0..batch * out).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            check_fd(&net, &x, &c)?;
        }

        #[test]
        fn operations_preserve_shape(sizes in prop::collection::vec(1usize..=8, 2..=4), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = Network::glorot(&sizes, Activation::Tanh, Activation::Identity, &mut rng).unwrap();
            let x: Vec<f64> = (0..sizes[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (y, cache) = net.forward(&x).unwrap();
            prop_assert_eq!(y.len(), *sizes.last().unwrap());
            let (g, dx) = net.backward_one(&cache, &y).unwrap();
            prop_assert!(g.matches(&net));
            prop_assert_eq!(dx.len(), sizes[0]);
            let (_, pg) = l2_penalty(&net);
            let sum = accumulate(&g, &pg, 0.5).unwrap();
            prop_assert!(sum.matches(&net));
            let mut opt = Adam::new(&net, AdamConfig::default());
            let mut updated = net.clone();
            opt.step(&mut updated, &sum).unwrap();
            prop_assert!(updated.congruent(&net));
        }

        #[test]
        fn forward_is_deterministic(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = Network::glorot(&[6, 8, 3], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let a = net.predict(&x).unwrap();
            let b = net.predict(&x).unwrap();
            prop_assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
}
