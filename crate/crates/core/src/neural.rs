//! Feedforward ReLU networks with reverse-mode gradients, Adam, and checkpoints.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;

/// ReLU on hidden layers, linear output. Layer `l` maps rows `x` to `x · W_l + b_l`
/// with `W_l` stored as (fan_in, fan_out).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    sizes: Vec<usize>,
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
}

/// Layer inputs recorded by [`Mlp::forward_tape`]; `inputs[0]` is the batch itself.
pub struct Tape<T> {
    inputs: Vec<Array2<T>>,
}

impl<T: Scalar> Mlp<T> {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return invalid(format!("bad layer sizes {sizes:?}"));
        }
        let weights = sizes.windows(2).map(|w| Array2::zeros((w[0], w[1]))).collect();
        let biases = sizes[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Ok(Mlp { sizes: sizes.to_vec(), weights, biases })
    }

    /// He-normal weights, zero biases.
    pub fn he<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        for w in net.weights.iter_mut() {
            let std = (2.0 / w.nrows() as f64).sqrt();
            w.mapv_inplace(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::of(z * std)
            });
        }
        Ok(net)
    }

    /// Single linear layer computing the identity.
    pub fn identity(n: usize) -> Self {
        let mut net = Self::zeros(&[n, n]).unwrap();
        net.weights[0] = Array2::eye(n);
        net
    }

    pub fn from_layers(weights: Vec<Array2<T>>, biases: Vec<Array1<T>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return invalid("need one bias per weight matrix");
        }
        let mut sizes = vec![weights[0].nrows()];
        for (w, b) in weights.iter().zip(&biases) {
            if w.nrows() != *sizes.last().unwrap() || b.len() != w.ncols() {
                return invalid("inconsistent layer shapes");
            }
            sizes.push(w.ncols());
        }
        Ok(Mlp { sizes, weights, biases })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.sizes).unwrap()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            sizes: self.sizes.clone(),
            weights: self.weights.iter().map(|w| w.mapv(|x| U::of(x.f64()))).collect(),
            biases: self.biases.iter().map(|b| b.mapv(|x| U::of(x.f64()))).collect(),
        }
    }

    /// Parameters in checkpoint order: per layer, weights row-major then biases.
    pub fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape { expected: self.param_count(), got: flat.len() });
        }
        let mut it = flat.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().for_each(|x| *x = it.next().unwrap());
            b.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape { expected: self.input_dim(), got: x.len() });
        }
        let view = ArrayView2::from_shape((1, x.len()), x).unwrap();
        Ok(self.forward_batch(view).into_raw_vec_and_offset().0)
    }

    /// Rows of `x` are samples.
    pub fn forward_batch(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut h = self.layer(0, x);
        for l in 1..self.num_layers() {
            h = self.layer(l, h.view());
        }
        h
    }

    pub fn forward_tape(&self, x: ArrayView2<T>) -> (Array2<T>, Tape<T>) {
        let mut inputs = Vec::with_capacity(self.num_layers());
        inputs.push(x.to_owned());
        for l in 0..self.num_layers() - 1 {
            let h = self.layer(l, inputs[l].view());
            inputs.push(h);
        }
        let out = self.layer(self.num_layers() - 1, inputs.last().unwrap().view());
        (out, Tape { inputs })
    }

    fn layer(&self, l: usize, x: ArrayView2<T>) -> Array2<T> {
        let mut h = x.dot(&self.weights[l]);
        h += &self.biases[l];
        if l + 1 < self.num_layers() {
            h.mapv_inplace(|v| v.max(T::zero()));
        }
        h
    }

    /// Backpropagates `grad_out` (d loss / d output, one row per sample). Parameter
    /// gradients are accumulated into `grads` when given; the gradient with respect
    /// to the input batch is returned.
    pub fn backward(&self, tape: &Tape<T>, grad_out: ArrayView2<T>, mut grads: Option<&mut Mlp<T>>) -> Array2<T> {
        let mut g = grad_out.to_owned();
        for l in (0..self.num_layers()).rev() {
            if let Some(gr) = grads.as_deref_mut() {
                gr.weights[l] += &tape.inputs[l].t().dot(&g);
                gr.biases[l] += &g.sum_axis(Axis(0));
            }
            let mut prev = g.dot(&self.weights[l].t());
            if l > 0 {
                Zip::from(&mut prev).and(&tape.inputs[l]).for_each(|p, &a| {
                    if a <= T::zero() {
                        *p = T::zero();
                    }
                });
            }
            g = prev;
        }
        g
    }

    pub fn scale(&mut self, s: T) {
        self.weights.iter_mut().for_each(|w| *w *= s);
        self.biases.iter_mut().for_each(|b| *b *= s);
    }

    pub fn add_assign(&mut self, other: &Mlp<T>) {
        self.weights.iter_mut().zip(&other.weights).for_each(|(a, b)| *a += b);
        self.biases.iter_mut().zip(&other.biases).for_each(|(a, b)| *a += b);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_bytes_with_meta(None)
    }

    /// Checkpoint bytes with an arbitrary JSON value stored in the header.
    pub fn to_bytes_with_meta(&self, meta: Option<serde_json::Value>) -> Vec<u8> {
        let header = CheckpointHeader {
            layer_sizes: self.sizes.clone(),
            activation: "relu".into(),
            version: CHECKPOINT_VERSION,
            param_count: self.param_count(),
            meta,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(4 + json.len() + 8 * self.param_count());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for x in self.flat_params() {
            out.extend_from_slice(&x.f64().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(Self::from_bytes_with_meta(bytes)?.0)
    }

    pub fn from_bytes_with_meta(bytes: &[u8]) -> Result<(Self, Option<serde_json::Value>)> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let len = bytes.get(..4).ok_or_else(|| bad("truncated header length"))?;
        let len = u32::from_le_bytes(len.try_into().unwrap()) as usize;
        let json = bytes.get(4..4 + len).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "version {} not supported (expected {CHECKPOINT_VERSION})",
                header.version
            )));
        }
        if header.activation != "relu" {
            return Err(Error::Checkpoint(format!("unknown activation {}", header.activation)));
        }
        let mut net = Self::zeros(&header.layer_sizes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if net.param_count() != header.param_count {
            return Err(bad("parameter count does not match layer sizes"));
        }
        let payload = &bytes[4 + len..];
        if payload.len() != 8 * header.param_count {
            return Err(Error::Checkpoint(format!(
                "payload has {} bytes, expected {}",
                payload.len(),
                8 * header.param_count
            )));
        }
        let flat: Vec<T> =
            payload.chunks_exact(8).map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap()))).collect();
        net.set_flat_params(&flat)?;
        Ok((net, header.meta))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.save_with_meta(path, None)
    }

    pub fn save_with_meta(&self, path: impl AsRef<Path>, meta: Option<serde_json::Value>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes_with_meta(meta))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::load_with_meta(path)?.0)
    }

    pub fn load_with_meta(path: impl AsRef<Path>) -> Result<(Self, Option<serde_json::Value>)> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes_with_meta(&bytes)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    layer_sizes: Vec<usize>,
    activation: String,
    version: u32,
    param_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
}

/// Loss value and parameter gradients for a loss defined on the batch output.
/// `loss` returns the scalar and its gradient with respect to the output.
pub fn grad_params<T: Scalar, F>(net: &Mlp<T>, x: ArrayView2<T>, loss: F) -> Result<(T, Mlp<T>)>
where
    F: FnOnce(&Array2<T>) -> (T, Array2<T>),
{
    let (out, tape) = net.forward_tape(x);
    let (value, g) = loss(&out);
    if !value.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let mut grads = net.zeros_like();
    net.backward(&tape, g.view(), Some(&mut grads));
    Ok((value, grads))
}

/// Piecewise-constant learning rate: `(first_iteration, rate)` pairs, ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule(pub Vec<(usize, f64)>);

impl LrSchedule {
    pub fn constant(rate: f64) -> Self {
        LrSchedule(vec![(0, rate)])
    }

    pub fn rate(&self, iteration: usize) -> f64 {
        self.0.iter().take_while(|(start, _)| *start <= iteration).last().map_or(self.0[0].1, |&(_, r)| r)
    }
}

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub m: Mlp<T>,
    pub v: Mlp<T>,
    pub step_count: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
}

impl<T: Scalar> Adam<T> {
    pub fn new(net: &Mlp<T>, schedule: LrSchedule) -> Self {
        Adam { m: net.zeros_like(), v: net.zeros_like(), step_count: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8, schedule }
    }

    /// One update; the rate is looked up at the number of steps already taken.
    pub fn step(&mut self, net: &mut Mlp<T>, grads: &Mlp<T>) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        let lr = self.schedule.rate(self.step_count);
        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(t));
        let c2 = T::of(1.0 - self.beta2.powi(t));
        let (lr, eps, one) = (T::of(lr), T::of(self.eps), T::one());
        let update = |p: &mut T, m: &mut T, v: &mut T, g: &T| {
            *m = b1 * *m + (one - b1) * *g;
            *v = b2 * *v + (one - b2) * *g * *g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for l in 0..net.num_layers() {
            Zip::from(&mut net.weights[l])
                .and(&mut self.m.weights[l])
                .and(&mut self.v.weights[l])
                .and(&grads.weights[l])
                .for_each(update);
            Zip::from(&mut net.biases[l])
                .and(&mut self.m.biases[l])
                .and(&mut self.v.biases[l])
                .and(&grads.biases[l])
                .for_each(update);
        }
        if !net.is_finite() {
            return Err(Error::NonFinite("parameters after update".into()));
        }
        Ok(())
    }
}
