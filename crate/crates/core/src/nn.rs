//! Dense layers, multilayer perceptrons with hand-written backpropagation,
//! and an Adam optimizer.
//!
//! Batches are row-major: a batch of `B` inputs of width `n` is a `B × n`
//! matrix, and a layer computes `Y = X·W + 1·bᵀ` with `W` stored `in × out`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

/// Anything that exposes its parameters as an ordered list of flat tensors.
///
/// The order must be stable: optimizers, checkpoints and finite-difference
/// checks all rely on it.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
    /// `(rows, cols)` of every tensor, same order as [`ParamSet::tensors`].
    fn shapes(&self) -> Vec<(usize, usize)>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    fn set_flat(&mut self, values: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, values.len(), "flat parameter length mismatch");
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in × out`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: DMatrix::zeros(input, output),
            bias: DVector::zeros(output),
        }
    }

    /// Uniform fan-in initialization, `U(-1/√in, 1/√in)` for weights and biases.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        Self {
            weight: DMatrix::from_fn(input, output, |_, _| dist.sample(rng)),
            bias: DVector::from_fn(output, |_, _| dist.sample(rng)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * &self.weight;
        for mut row in y.row_iter_mut() {
            row += self.bias.transpose();
        }
        y
    }

    /// Returns `(dW, db, dX)` for upstream gradient `dy`.
    pub fn backward(&self, x: &DMatrix<f64>, dy: &DMatrix<f64>) -> (LinearGrad, DMatrix<f64>) {
        let weight = x.tr_mul(dy);
        let bias = DVector::from_iterator(dy.ncols(), dy.column_iter().map(|c| c.sum()));
        let dx = dy * self.weight.transpose();
        (LinearGrad { weight, bias }, dx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl LinearGrad {
    pub fn zeros_like(layer: &Linear) -> Self {
        Self {
            weight: DMatrix::zeros(layer.weight.nrows(), layer.weight.ncols()),
            bias: DVector::zeros(layer.bias.len()),
        }
    }
}

/// A stack of [`Linear`] layers with ReLU between them.
///
/// `relu_output` additionally rectifies the last layer, which is what the
/// shared per-point network of the shape encoder wants.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub relu_output: bool,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    /// Input to every layer (post-activation of the previous one).
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activation of every layer.
    pre: Vec<DMatrix<f64>>,
    pub output: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub layers: Vec<LinearGrad>,
}

impl Mlp {
    /// `sizes = [in, h1, ..., out]`.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], relu_output: bool, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let layers = sizes.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        Self {
            layers,
            relu_output,
        }
    }

    pub fn zeros(sizes: &[usize], relu_output: bool) -> Self {
        let layers = sizes.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect();
        Self {
            layers,
            relu_output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Linear::output_dim).unwrap_or(0)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(Linear::output_dim));
        s
    }

    fn rectified(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.relu_output
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if self.rectified(i) {
                h.apply(|v| *v = v.max(0.0));
            }
        }
        h
    }

    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        let m = DMatrix::from_row_slice(1, x.len(), x);
        self.forward(&m).as_slice().to_vec()
    }

    pub fn forward_trace(&self, x: &DMatrix<f64>) -> MlpTrace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            inputs.push(h);
            h = z.clone();
            if self.rectified(i) {
                h.apply(|v| *v = v.max(0.0));
            }
            pre.push(z);
        }
        MlpTrace {
            inputs,
            pre,
            output: h,
        }
    }

    /// Backpropagates `d_out` (same shape as the traced output).
    /// Returns parameter gradients and the gradient w.r.t. the input.
    pub fn backward(&self, trace: &MlpTrace, d_out: &DMatrix<f64>) -> (MlpGrad, DMatrix<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut d = d_out.clone();
        for i in (0..self.layers.len()).rev() {
            if self.rectified(i) {
                d.zip_apply(&trace.pre[i], |g, z| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            let (g, dx) = self.layers[i].backward(&trace.inputs[i], &d);
            grads.push(g);
            d = dx;
        }
        grads.reverse();
        (MlpGrad { layers: grads }, d)
    }

    pub fn zero_grad(&self) -> MlpGrad {
        MlpGrad {
            layers: self.layers.iter().map(LinearGrad::zeros_like).collect(),
        }
    }

    /// `self ← τ·source + (1−τ)·self`.
    pub fn polyak_from(&mut self, source: &Mlp, tau: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(source.tensors()) {
            if tau == 1.0 {
                dst.copy_from_slice(src);
            } else {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = tau * s + (1.0 - tau) * *d;
                }
            }
        }
    }
}

impl MlpGrad {
    pub fn add_assign(&mut self, other: &MlpGrad) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight *= s;
            l.bias *= s;
        }
    }
}

macro_rules! linear_param_set {
    ($ty:ty, $field:ident) => {
        impl ParamSet for $ty {
            fn tensors(&self) -> Vec<&[f64]> {
                self.$field
                    .iter()
                    .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
                    .collect()
            }

            fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
                self.$field
                    .iter_mut()
                    .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
                    .collect()
            }

            fn shapes(&self) -> Vec<(usize, usize)> {
                self.$field
                    .iter()
                    .flat_map(|l| {
                        [
                            (l.weight.nrows(), l.weight.ncols()),
                            (l.bias.len(), 1),
                        ]
                    })
                    .collect()
            }
        }
    };
}

linear_param_set!(Mlp, layers);
linear_param_set!(MlpGrad, layers);

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step<P: ParamSet + ?Sized, G: ParamSet + ?Sized>(&mut self, params: &mut P, grads: &G) {
        let grads = grads.tensors();
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let lr = self.learning_rate;
        if lr == 0.0 {
            return;
        }
        for (k, p) in params.tensors_mut().into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], grads[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr * mh / (vh.sqrt() + self.epsilon);
            }
        }
    }
}

/// Relative error between two gradient vectors, `‖a − b‖ / max(‖a‖ + ‖b‖, tiny)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nb).max(1e-300)
}

/// Central finite-difference gradient of `loss` w.r.t. the flat parameters of `params`.
pub fn numeric_gradient<P: ParamSet + Clone>(
    params: &P,
    step: f64,
    mut loss: impl FnMut(&P) -> f64,
) -> Vec<f64> {
    let base = params.flat();
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(base.len());
    let mut x = base.clone();
    for i in 0..base.len() {
        x[i] = base[i] + step;
        probe.set_flat(&x);
        let up = loss(&probe);
        x[i] = base[i] - step;
        probe.set_flat(&x);
        let down = loss(&probe);
        x[i] = base[i];
        out.push((up - down) / (2.0 * step));
    }
    out
}
