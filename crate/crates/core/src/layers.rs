//! Feed-forward layers: 1-D convolution, max pooling, dense, dropout.
//!
//! Every layer has a `*_forward` returning its output plus a cache, and a
//! matching `*_backward` consuming that cache. Parameter gradients come
//! back in the same struct type as the parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, glorot_fill, softmax_in_place, Mat, Rng};

/// A `timesteps x channels` sequence, row-major by timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqTensor {
    timesteps: usize,
    channels: usize,
    data: Vec<f64>,
}

impl SeqTensor {
    pub fn new(timesteps: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if timesteps == 0 {
            return Err(Error::shape("sequence with zero timesteps"));
        }
        if data.len() != timesteps * channels {
            return Err(Error::shape(format!(
                "sequence {timesteps}x{channels} needs {} values, got {}",
                timesteps * channels,
                data.len()
            )));
        }
        Ok(SeqTensor {
            timesteps,
            channels,
            data,
        })
    }

    pub fn zeros(timesteps: usize, channels: usize) -> Self {
        SeqTensor {
            timesteps,
            channels,
            data: vec![0.0; timesteps * channels],
        }
    }

    /// A feature vector viewed as a one-channel sequence.
    pub fn from_features(features: &[f64]) -> Result<Self> {
        SeqTensor::new(features.len(), 1, features.to_vec())
    }

    pub fn from_mat(m: &Mat) -> Result<Self> {
        SeqTensor::new(m.rows(), m.cols(), m.data().to_vec())
    }

    pub fn to_mat(&self) -> Mat {
        Mat::new(self.timesteps, self.channels, self.data.clone()).expect("consistent shape")
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn step(&self, t: usize) -> &[f64] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    #[inline]
    pub fn step_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.channels..(t + 1) * self.channels]
    }

    /// Same data with the time axis reversed.
    pub fn reversed(&self) -> SeqTensor {
        let mut data = Vec::with_capacity(self.data.len());
        for t in (0..self.timesteps).rev() {
            data.extend_from_slice(self.step(t));
        }
        SeqTensor {
            timesteps: self.timesteps,
            channels: self.channels,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    Softmax,
}

impl Activation {
    fn apply(self, z: &[f64], out: &mut [f64]) {
        match self {
            Activation::Relu => out.iter_mut().zip(z).for_each(|(o, &v)| *o = v.max(0.0)),
            Activation::Tanh => out.iter_mut().zip(z).for_each(|(o, &v)| *o = v.tanh()),
            Activation::Identity => out.copy_from_slice(z),
            Activation::Softmax => {
                out.copy_from_slice(z);
                softmax_in_place(out);
            }
        }
    }

    /// Gradient w.r.t. the pre-activation given the gradient w.r.t. the output.
    fn backward(self, dy: &[f64], z: &[f64], y: &[f64], dz: &mut [f64]) {
        match self {
            Activation::Relu => {
                for ((d, &g), &v) in dz.iter_mut().zip(dy).zip(z) {
                    *d = if v > 0.0 { g } else { 0.0 };
                }
            }
            Activation::Tanh => {
                for ((d, &g), &o) in dz.iter_mut().zip(dy).zip(y) {
                    *d = g * (1.0 - o * o);
                }
            }
            Activation::Identity => dz.copy_from_slice(dy),
            Activation::Softmax => {
                let s = dot(dy, y);
                for ((d, &g), &o) in dz.iter_mut().zip(dy).zip(y) {
                    *d = o * (g - s);
                }
            }
        }
    }
}

/// Convolution weights laid out `[k][in_channel][filter]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1DParams {
    pub kernel_size: usize,
    pub in_channels: usize,
    pub filters: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv1DParams {
    pub fn zeros(kernel_size: usize, in_channels: usize, filters: usize) -> Self {
        Conv1DParams {
            kernel_size,
            in_channels,
            filters,
            weights: vec![0.0; kernel_size * in_channels * filters],
            bias: vec![0.0; filters],
        }
    }

    pub fn glorot(kernel_size: usize, in_channels: usize, filters: usize, rng: &mut Rng) -> Result<Self> {
        let n = kernel_size * in_channels * filters;
        let weights = glorot_fill(kernel_size * in_channels, kernel_size * filters, n, rng)?;
        Ok(Conv1DParams {
            weights,
            ..Conv1DParams::zeros(kernel_size, in_channels, filters)
        })
    }

    #[inline]
    fn tap(&self, k: usize, c: usize) -> &[f64] {
        let off = (k * self.in_channels + c) * self.filters;
        &self.weights[off..off + self.filters]
    }

    fn check(&self) -> Result<()> {
        if self.weights.len() != self.kernel_size * self.in_channels * self.filters || self.bias.len() != self.filters {
            return Err(Error::shape("conv parameters inconsistent with their dimensions"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    input: SeqTensor,
    pre: SeqTensor,
    output: SeqTensor,
    activation: Activation,
}

impl ConvCache {
    pub fn pre_activation(&self) -> &SeqTensor {
        &self.pre
    }
}

/// Valid-padding, stride-1 convolution followed by `activation`.
pub fn conv1d_forward(x: &SeqTensor, p: &Conv1DParams, activation: Activation) -> Result<(SeqTensor, ConvCache)> {
    p.check()?;
    if x.channels() != p.in_channels {
        return Err(Error::shape(format!(
            "conv expects {} input channels, got {}",
            p.in_channels,
            x.channels()
        )));
    }
    if x.timesteps() < p.kernel_size {
        return Err(Error::shape(format!(
            "conv kernel {} longer than sequence of {} steps",
            p.kernel_size,
            x.timesteps()
        )));
    }
    let out_len = x.timesteps() - p.kernel_size + 1;
    let mut pre = SeqTensor::zeros(out_len, p.filters);
    for t in 0..out_len {
        let dst = pre.step_mut(t);
        dst.copy_from_slice(&p.bias);
        for k in 0..p.kernel_size {
            for (c, &xv) in x.step(t + k).iter().enumerate() {
                axpy(xv, p.tap(k, c), dst);
            }
        }
    }
    let mut output = SeqTensor::zeros(out_len, p.filters);
    for t in 0..out_len {
        activation.apply(pre.step(t), output.step_mut(t));
    }
    let cache = ConvCache {
        input: x.clone(),
        pre,
        output: output.clone(),
        activation,
    };
    Ok((output, cache))
}

pub fn conv1d_backward(dy: &SeqTensor, cache: &ConvCache, p: &Conv1DParams) -> Result<(Conv1DParams, SeqTensor)> {
    if dy.timesteps() != cache.pre.timesteps() || dy.channels() != cache.pre.channels() {
        return Err(Error::shape("conv upstream gradient does not match cached output"));
    }
    let mut grads = Conv1DParams::zeros(p.kernel_size, p.in_channels, p.filters);
    let mut dx = SeqTensor::zeros(cache.input.timesteps(), cache.input.channels());
    let mut dpre = vec![0.0; p.filters];
    for t in 0..dy.timesteps() {
        cache
            .activation
            .backward(dy.step(t), cache.pre.step(t), cache.output.step(t), &mut dpre);
        axpy(1.0, &dpre, &mut grads.bias);
        for k in 0..p.kernel_size {
            for c in 0..p.in_channels {
                let xv = cache.input.step(t + k)[c];
                let off = (k * p.in_channels + c) * p.filters;
                axpy(xv, &dpre, &mut grads.weights[off..off + p.filters]);
                dx.step_mut(t + k)[c] += dot(p.tap(k, c), &dpre);
            }
        }
    }
    Ok((grads, dx))
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    pub pool: usize,
    pub input_timesteps: usize,
    pub channels: usize,
    /// Source timestep of every pooled cell, `[pooled_t][channel]`.
    pub argmax: Vec<usize>,
}

/// Non-overlapping max pooling; a trailing partial window is dropped.
pub fn maxpool1d_forward(x: &SeqTensor, pool: usize) -> Result<(SeqTensor, PoolCache)> {
    if pool == 0 {
        return Err(Error::param("pool size must be at least 1"));
    }
    let out_len = x.timesteps() / pool;
    if out_len == 0 {
        return Err(Error::shape(format!(
            "pool size {pool} exceeds sequence length {}",
            x.timesteps()
        )));
    }
    let ch = x.channels();
    let mut out = SeqTensor::zeros(out_len, ch);
    let mut argmax = vec![0; out_len * ch];
    for w in 0..out_len {
        for c in 0..ch {
            let mut best = w * pool;
            for t in w * pool + 1..(w + 1) * pool {
                if x.step(t)[c] > x.step(best)[c] {
                    best = t;
                }
            }
            argmax[w * ch + c] = best;
            out.step_mut(w)[c] = x.step(best)[c];
        }
    }
    Ok((
        out,
        PoolCache {
            pool,
            input_timesteps: x.timesteps(),
            channels: ch,
            argmax,
        },
    ))
}

pub fn maxpool1d_backward(dy: &SeqTensor, cache: &PoolCache) -> Result<SeqTensor> {
    if dy.channels() != cache.channels || dy.timesteps() * dy.channels() != cache.argmax.len() {
        return Err(Error::shape("pool upstream gradient does not match cache"));
    }
    let mut dx = SeqTensor::zeros(cache.input_timesteps, cache.channels);
    for w in 0..dy.timesteps() {
        for c in 0..cache.channels {
            let src = cache.argmax[w * cache.channels + c];
            dx.step_mut(src)[c] += dy.step(w)[c];
        }
    }
    Ok(dx)
}

/// Fully connected layer, `weights` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub weights: Mat,
    pub bias: Vec<f64>,
}

impl DenseParams {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        DenseParams {
            weights: Mat::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    pub fn glorot(inputs: usize, outputs: usize, rng: &mut Rng) -> Result<Self> {
        let data = glorot_fill(inputs, outputs, inputs * outputs, rng)?;
        Ok(DenseParams {
            weights: Mat::new(outputs, inputs, data)?,
            bias: vec![0.0; outputs],
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }
}

/// Cache for a dense layer applied to a batch of row vectors.
#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Mat,
    pre: Mat,
    output: Mat,
    activation: Activation,
}

impl DenseCache {
    pub fn output(&self) -> &Mat {
        &self.output
    }
}

/// `activation(W x + b)` for every row `x` of `batch`.
pub fn dense_forward_batch(batch: &Mat, p: &DenseParams, activation: Activation) -> Result<(Mat, DenseCache)> {
    if batch.cols() != p.inputs() || p.bias.len() != p.outputs() {
        return Err(Error::shape(format!(
            "dense layer {}x{} applied to width {}",
            p.outputs(),
            p.inputs(),
            batch.cols()
        )));
    }
    let mut pre = batch.matmul_transb(&p.weights)?;
    for r in 0..pre.rows() {
        axpy(1.0, &p.bias, pre.row_mut(r));
    }
    let mut output = Mat::zeros(pre.rows(), pre.cols());
    for r in 0..pre.rows() {
        activation.apply(pre.row(r), output.row_mut(r));
    }
    let cache = DenseCache {
        input: batch.clone(),
        pre,
        output: output.clone(),
        activation,
    };
    Ok((output, cache))
}

pub fn dense_forward(x: &[f64], p: &DenseParams, activation: Activation) -> Result<(Vec<f64>, DenseCache)> {
    let batch = Mat::new(1, x.len(), x.to_vec())?;
    let (out, cache) = dense_forward_batch(&batch, p, activation)?;
    Ok((out.into_data(), cache))
}

/// Backward pass starting from the gradient w.r.t. the layer output.
pub fn dense_backward_batch(dy: &Mat, cache: &DenseCache, p: &DenseParams) -> Result<(DenseParams, Mat)> {
    if dy.shape() != cache.output.shape() {
        return Err(Error::shape(format!(
            "dense upstream {:?} vs cached output {:?}",
            dy.shape(),
            cache.output.shape()
        )));
    }
    let mut dz = Mat::zeros(dy.rows(), dy.cols());
    for r in 0..dy.rows() {
        cache
            .activation
            .backward(dy.row(r), cache.pre.row(r), cache.output.row(r), dz.row_mut(r));
    }
    dense_backward_preact_batch(&dz, cache, p)
}

/// Backward pass starting from the gradient w.r.t. the pre-activation,
/// used when the loss already folded the softmax Jacobian in.
pub fn dense_backward_preact_batch(dz: &Mat, cache: &DenseCache, p: &DenseParams) -> Result<(DenseParams, Mat)> {
    if dz.shape() != cache.pre.shape() {
        return Err(Error::shape("dense pre-activation gradient does not match cache"));
    }
    let mut grads = DenseParams::zeros(p.inputs(), p.outputs());
    let mut dx = Mat::zeros(dz.rows(), p.inputs());
    for r in 0..dz.rows() {
        let g = dz.row(r);
        axpy(1.0, g, &mut grads.bias);
        grads.weights.add_outer(g, cache.input.row(r));
        p.weights.matvec_t_acc(g, dx.row_mut(r));
    }
    Ok((grads, dx))
}

pub fn dense_backward(dy: &[f64], cache: &DenseCache, p: &DenseParams) -> Result<(DenseParams, Vec<f64>)> {
    let dy = Mat::new(1, dy.len(), dy.to_vec())?;
    let (g, dx) = dense_backward_batch(&dy, cache, p)?;
    Ok((g, dx.into_data()))
}

/// Per-element multiplier applied by dropout: 0 or `1 / (1 - rate)`.
/// `None` means the layer acted as the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(Option<Vec<f64>>);

impl DropoutMask {
    pub fn identity() -> Self {
        DropoutMask(None)
    }

    pub fn scales(&self) -> Option<&[f64]> {
        self.0.as_deref()
    }
}

/// Inverted dropout. Inference mode and `rate == 0` never touch the RNG.
pub fn dropout_forward(x: &[f64], rate: f64, training: bool, rng: &mut Rng) -> Result<(Vec<f64>, DropoutMask)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::param(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((x.to_vec(), DropoutMask::identity()));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = x
        .iter()
        .map(|_| if rng.next_f64() < rate { 0.0 } else { keep })
        .collect();
    let out = x.iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok((out, DropoutMask(Some(mask))))
}

pub fn dropout_backward(dy: &[f64], mask: &DropoutMask) -> Result<Vec<f64>> {
    match &mask.0 {
        None => Ok(dy.to_vec()),
        Some(m) if m.len() == dy.len() => Ok(dy.iter().zip(m).map(|(g, s)| g * s).collect()),
        Some(m) => Err(Error::shape(format!(
            "dropout mask of length {} for gradient of length {}",
            m.len(),
            dy.len()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = 1e-5;

    fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / n.abs().max(1.0)
    }

    fn random_seq(t: usize, c: usize, rng: &mut Rng) -> SeqTensor {
        SeqTensor::new(t, c, (0..t * c).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    /// Scalar objective: weighted sum of outputs with fixed random weights.
    fn probe(len: usize, rng: &mut Rng) -> Vec<f64> {
        (0..len).map(|_| rng.uniform(-1.0, 1.0)).collect()
    }

    fn weighted(out: &[f64], w: &[f64]) -> f64 {
        out.iter().zip(w).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn conv_shape_chain() {
        let mut rng = Rng::new(1);
        let x = random_seq(57, 1, &mut rng);
        let p = Conv1DParams::glorot(3, 1, 64, &mut rng).unwrap();
        let (y, _) = conv1d_forward(&x, &p, Activation::Relu).unwrap();
        assert_eq!((y.timesteps(), y.channels()), (55, 64));
        let (pooled, _) = maxpool1d_forward(&y, 2).unwrap();
        assert_eq!((pooled.timesteps(), pooled.channels()), (27, 64));
    }

    #[test]
    fn conv_identity_kernel() {
        let x = SeqTensor::new(5, 1, vec![0.5, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = Conv1DParams {
            weights: vec![0.0, 1.0, 0.0],
            ..Conv1DParams::zeros(3, 1, 1)
        };
        let (y, _) = conv1d_forward(&x, &p, Activation::Relu).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn conv_too_short_is_shape_error() {
        let x = SeqTensor::new(2, 1, vec![1.0, 2.0]).unwrap();
        let p = Conv1DParams::zeros(3, 1, 1);
        assert!(matches!(conv1d_forward(&x, &p, Activation::Relu), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_matches_sliding_window() {
        let mut rng = Rng::new(9);
        let x = random_seq(8, 1, &mut rng);
        let mut p = Conv1DParams::glorot(3, 1, 2, &mut rng).unwrap();
        p.bias = vec![0.1, -0.2];
        let (y, cache) = conv1d_forward(&x, &p, Activation::Identity).unwrap();
        for t in 0..6 {
            for f in 0..2 {
                let mut s = p.bias[f];
                for k in 0..3 {
                    s += x.data()[t + k] * p.weights[k * 2 + f];
                }
                assert!((y.step(t)[f] - s).abs() < 1e-12);
                assert_eq!(cache.pre_activation().step(t)[f], y.step(t)[f]);
            }
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = Rng::new(21);
        let x = random_seq(7, 2, &mut rng);
        let mut p = Conv1DParams::glorot(3, 2, 3, &mut rng).unwrap();
        p.bias = probe(3, &mut rng);
        let w = probe(5 * 3, &mut rng);
        let f =
            |x: &SeqTensor, p: &Conv1DParams| weighted(conv1d_forward(x, p, Activation::Tanh).unwrap().0.data(), &w);
        let (_, cache) = conv1d_forward(&x, &p, Activation::Tanh).unwrap();
        let dy = SeqTensor::new(5, 3, w.clone()).unwrap();
        let (g, dx) = conv1d_backward(&dy, &cache, &p).unwrap();
        for i in 0..p.weights.len() {
            let mut a = p.clone();
            a.weights[i] += EPS;
            let mut b = p.clone();
            b.weights[i] -= EPS;
            let fd = (f(&x, &a) - f(&x, &b)) / (2.0 * EPS);
            assert!(rel_err(g.weights[i], fd) < 1e-4);
        }
        for i in 0..3 {
            let mut a = p.clone();
            a.bias[i] += EPS;
            let mut b = p.clone();
            b.bias[i] -= EPS;
            let fd = (f(&x, &a) - f(&x, &b)) / (2.0 * EPS);
            assert!(rel_err(g.bias[i], fd) < 1e-4);
        }
        for i in 0..x.data().len() {
            let mut a = x.clone();
            a.data_mut()[i] += EPS;
            let mut b = x.clone();
            b.data_mut()[i] -= EPS;
            let fd = (f(&a, &p) - f(&b, &p)) / (2.0 * EPS);
            assert!(rel_err(dx.data()[i], fd) < 1e-4);
        }
    }

    #[test]
    fn pool_examples() {
        let x = SeqTensor::new(4, 1, vec![1.0, 3.0, 2.0, 0.0]).unwrap();
        let (y, cache) = maxpool1d_forward(&x, 2).unwrap();
        assert_eq!(y.data(), &[3.0, 2.0]);
        assert_eq!(cache.argmax, vec![1, 2]);
        let x = SeqTensor::zeros(55, 1);
        assert_eq!(maxpool1d_forward(&x, 2).unwrap().0.timesteps(), 27);
        assert!(matches!(maxpool1d_forward(&x, 0), Err(Error::Param(_))));
    }

    #[test]
    fn pool_backward_routes_to_argmax() {
        let mut rng = Rng::new(4);
        let x = random_seq(9, 3, &mut rng);
        let w = probe(4 * 3, &mut rng);
        let f = |x: &SeqTensor| weighted(maxpool1d_forward(x, 2).unwrap().0.data(), &w);
        let (_, cache) = maxpool1d_forward(&x, 2).unwrap();
        let dx = maxpool1d_backward(&SeqTensor::new(4, 3, w.clone()).unwrap(), &cache).unwrap();
        for i in 0..x.data().len() {
            let mut a = x.clone();
            a.data_mut()[i] += EPS;
            let mut b = x.clone();
            b.data_mut()[i] -= EPS;
            let fd = (f(&a) - f(&b)) / (2.0 * EPS);
            assert!(rel_err(dx.data()[i], fd) < 1e-4);
        }
        // Trailing timestep 8 sits in the dropped partial window.
        assert!(dx.step(8).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn dense_examples() {
        let x = vec![1.5, -2.0, 0.25];
        let eye = DenseParams {
            weights: Mat::identity(3),
            bias: vec![0.0; 3],
        };
        assert_eq!(dense_forward(&x, &eye, Activation::Identity).unwrap().0, x);
        let c = vec![0.3, 0.1];
        let zero_w = DenseParams {
            weights: Mat::zeros(2, 3),
            bias: c.clone(),
        };
        assert_eq!(dense_forward(&x, &zero_w, Activation::Identity).unwrap().0, c);
        assert!(dense_forward(&[1.0], &zero_w, Activation::Identity).is_err());
    }

    #[test]
    fn dense_matches_composed_primitives() {
        let mut rng = Rng::new(2);
        let p = DenseParams {
            bias: probe(4, &mut rng),
            ..DenseParams::glorot(6, 4, &mut rng).unwrap()
        };
        let x = probe(6, &mut rng);
        let (y, _) = dense_forward(&x, &p, Activation::Identity).unwrap();
        let mut expect = p.weights.matvec(&x).unwrap();
        axpy(1.0, &p.bias, &mut expect);
        for (a, b) in y.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_gradients_all_activations() {
        for act in [
            Activation::Relu,
            Activation::Tanh,
            Activation::Identity,
            Activation::Softmax,
        ] {
            let mut rng = Rng::new(17);
            let p = DenseParams {
                bias: probe(4, &mut rng),
                ..DenseParams::glorot(5, 4, &mut rng).unwrap()
            };
            let x = probe(5, &mut rng);
            let w = probe(4, &mut rng);
            let f = |x: &[f64], p: &DenseParams| weighted(&dense_forward(x, p, act).unwrap().0, &w);
            let (_, cache) = dense_forward(&x, &p, act).unwrap();
            let (g, dx) = dense_backward(&w, &cache, &p).unwrap();
            for i in 0..p.weights.data().len() {
                let mut a = p.clone();
                a.weights.data_mut()[i] += EPS;
                let mut b = p.clone();
                b.weights.data_mut()[i] -= EPS;
                let fd = (f(&x, &a) - f(&x, &b)) / (2.0 * EPS);
                assert!(rel_err(g.weights.data()[i], fd) < 1e-4, "{act:?}");
            }
            for i in 0..4 {
                let mut a = p.clone();
                a.bias[i] += EPS;
                let mut b = p.clone();
                b.bias[i] -= EPS;
                let fd = (f(&x, &a) - f(&x, &b)) / (2.0 * EPS);
                assert!(rel_err(g.bias[i], fd) < 1e-4, "{act:?}");
            }
            for i in 0..5 {
                let mut a = x.clone();
                a[i] += EPS;
                let mut b = x.clone();
                b[i] -= EPS;
                let fd = (f(&a, &p) - f(&b, &p)) / (2.0 * EPS);
                assert!(rel_err(dx[i], fd) < 1e-4, "{act:?}");
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = Rng::new(8);
        let x = random_seq(6, 2, &mut rng);
        let p = Conv1DParams::glorot(3, 2, 2, &mut rng).unwrap();
        let (y, cache) = conv1d_forward(&x, &p, Activation::Relu).unwrap();
        let (g, dx) = conv1d_backward(&SeqTensor::zeros(y.timesteps(), 2), &cache, &p).unwrap();
        assert!(g.weights.iter().chain(&g.bias).chain(dx.data()).all(|&v| v == 0.0));

        let d = DenseParams::glorot(3, 2, &mut rng).unwrap();
        let (_, cache) = dense_forward(&[1.0, 2.0, 3.0], &d, Activation::Tanh).unwrap();
        let (g, dx) = dense_backward(&[0.0, 0.0], &cache, &d).unwrap();
        assert!(g.weights.data().iter().chain(&g.bias).chain(&dx).all(|&v| v == 0.0));
    }

    #[test]
    fn dropout_modes() {
        let mut rng = Rng::new(3);
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        assert_eq!(dropout_forward(&x, 0.0, true, &mut rng).unwrap().0, x);
        let before = rng.clone();
        assert_eq!(dropout_forward(&x, 0.5, false, &mut rng).unwrap().0, x);
        assert_eq!(rng, before, "inference must not consume randomness");
        assert!(matches!(dropout_forward(&x, 1.0, true, &mut rng), Err(Error::Param(_))));
    }

    #[test]
    fn dropout_rate_concentrates() {
        let mut rng = Rng::new(99);
        let x = vec![1.0; 100_000];
        let (y, mask) = dropout_forward(&x, 0.2, true, &mut rng).unwrap();
        let zeros = y.iter().filter(|&&v| v == 0.0).count() as f64 / x.len() as f64;
        assert!((zeros - 0.2).abs() < 0.01, "zero fraction {zeros}");
        assert!(y.iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-15));
        let g = dropout_backward(&x, &mask).unwrap();
        assert_eq!(g, y);
    }
}
