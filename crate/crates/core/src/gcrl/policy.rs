use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpGrad, MlpTrace};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Squashed actions are pulled this far inside the open interval (−1, 1).
const BOUND_MARGIN: f64 = 1e-12;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln(1 − tanh²u)` without cancellation for large `|u|`.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

/// Tanh-squashed diagonal Gaussian. The network emits `[mean, log_std]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub net: Mlp,
}

/// Everything a reparameterized batch sample needs for backpropagation.
#[derive(Debug, Clone)]
pub struct PolicySample {
    trace: MlpTrace,
    eps: DMatrix<f64>,
    std: DMatrix<f64>,
    /// Entries whose log-std hit the clamp get no gradient.
    clamped: Vec<bool>,
    pub actions: DMatrix<f64>,
    pub log_prob: DVector<f64>,
}

impl GaussianPolicy {
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], action_dim: usize, rng: &mut R) -> Self {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * action_dim);
        Self { net: Mlp::init(&sizes, false, rng) }
    }

    pub fn from_net(net: Mlp) -> Result<Self> {
        if net.output_dim() % 2 != 0 || net.relu_output {
            return Err(Error::Format("policy network must emit [mean, log_std] pairs".into()));
        }
        Ok(Self { net })
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.net.output_dim() / 2
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::input(format!("policy expects {} inputs, got {}", self.input_dim(), x.len())));
        }
        Ok(())
    }

    /// `tanh(mean)`, no noise.
    pub fn deterministic(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let out = self.net.forward_one(input);
        Ok(out[..self.action_dim()].iter().map(|m| m.tanh().clamp(-1.0 + BOUND_MARGIN, 1.0 - BOUND_MARGIN)).collect())
    }

    /// `tanh(mean)` when deterministic, otherwise a squashed sample.
    pub fn act<R: Rng + ?Sized>(&self, input: &[f64], deterministic: bool, rng: &mut R) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let out = self.net.forward_one(input);
        let a = self.action_dim();
        let action = (0..a)
            .map(|j| {
                let mean = out[j];
                let u = if deterministic {
                    mean
                } else {
                    let std = out[a + j].clamp(LOG_STD_MIN, LOG_STD_MAX).exp();
                    mean + std * rng.sample::<f64, _>(StandardNormal)
                };
                u.tanh().clamp(-1.0 + BOUND_MARGIN, 1.0 - BOUND_MARGIN)
            })
            .collect();
        Ok(action)
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> DMatrix<f64> {
        DMatrix::from_fn(batch, self.action_dim(), |_, _| rng.sample(StandardNormal))
    }

    /// Reparameterized sample `a = tanh(μ + σ·ε)` for a batch with fixed noise.
    pub fn sample(&self, x: &DMatrix<f64>, eps: &DMatrix<f64>) -> PolicySample {
        let a = self.action_dim();
        let b = x.nrows();
        assert_eq!(eps.shape(), (b, a), "noise shape must be batch × action_dim");
        let trace = self.net.forward_trace(x);
        let out = &trace.output;
        let mut std = DMatrix::zeros(b, a);
        let mut clamped = vec![false; b * a];
        let mut actions = DMatrix::zeros(b, a);
        let mut log_prob = DVector::zeros(b);
        for i in 0..b {
            let mut lp = 0.0;
            for j in 0..a {
                let raw = out[(i, a + j)];
                let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                clamped[i * a + j] = raw != ls;
                let s = ls.exp();
                let u = out[(i, j)] + s * eps[(i, j)];
                std[(i, j)] = s;
                actions[(i, j)] = u.tanh();
                lp += -0.5 * eps[(i, j)].powi(2) - ls - HALF_LN_2PI - log_one_minus_tanh_sq(u);
            }
            log_prob[i] = lp;
        }
        PolicySample {
            trace,
            eps: eps.clone(),
            std,
            clamped,
            actions,
            log_prob,
        }
    }

    /// Gradients of a loss given `∂L/∂a` (batch × action) and `∂L/∂log π` (batch).
    pub fn backward(&self, s: &PolicySample, d_actions: &DMatrix<f64>, d_log_prob: &DVector<f64>) -> (MlpGrad, DMatrix<f64>) {
        let a = self.action_dim();
        let b = s.actions.nrows();
        let mut d_out = DMatrix::zeros(b, 2 * a);
        for i in 0..b {
            for j in 0..a {
                let t = s.actions[(i, j)];
                let du = d_actions[(i, j)] * (1.0 - t * t) + d_log_prob[i] * 2.0 * t;
                d_out[(i, j)] = du;
                if !s.clamped[i * a + j] {
                    d_out[(i, a + j)] = du * s.std[(i, j)] * s.eps[(i, j)] - d_log_prob[i];
                }
            }
        }
        self.net.backward(&s.trace, &d_out)
    }
}
