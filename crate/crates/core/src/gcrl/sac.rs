use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::buffer::Transition;
use super::policy::GaussianPolicy;
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::nn::{Adam, Mlp, MlpGrad, ParamSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub initial_alpha: f64,
    /// Defaults to `−action_dim`.
    pub target_entropy: Option<f64>,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub buffer_capacity: usize,
    /// Environment steps.
    pub steps: usize,
    /// Uniform random actions before the first update.
    pub warmup_steps: usize,
    pub updates_per_step: usize,
    /// Learning-curve rows are written every this many steps.
    pub log_interval: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.98,
            tau: 0.005,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            initial_alpha: 0.2,
            target_entropy: None,
            batch_size: 256,
            hidden: vec![256, 256],
            buffer_capacity: 200_000,
            steps: 300_000,
            warmup_steps: 5_000,
            updates_per_step: 1,
            log_interval: 5_000,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) && self.gamma != 0.0 {
            return Err(Error::Config(format!("gamma {} must lie in [0, 1)", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau {} must lie in (0, 1]", self.tau)));
        }
        for (name, lr) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr), ("alpha_lr", self.alpha_lr)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        if !(self.initial_alpha > 0.0) {
            return Err(Error::Config("initial_alpha must be positive".into()));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.log_interval == 0 || self.hidden.is_empty() {
            return Err(Error::Config("batch size, capacity, log interval and hidden sizes must be non-zero".into()));
        }
        Ok(())
    }
}

/// Scalar parameter wrapper so the temperature can use [`Adam`].
#[derive(Debug, Clone, PartialEq)]
struct Scalar([f64; 1]);

impl ParamSet for Scalar {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.0]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.0]
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        vec![(1, 1)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SacDiagnostics {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    /// Mean `−log π` of the batch.
    pub entropy: f64,
}

/// Affine map `(s − offset)·scale` applied to each state entry before it
/// enters a network.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputNorm {
    pub fn new(offset: &[f64], scale: &[f64]) -> Self {
        assert_eq!(offset.len(), scale.len(), "offset and scale lengths differ");
        Self {
            offset: offset.to_vec(),
            scale: scale.to_vec(),
        }
    }

    pub fn scale_only(scale: &[f64]) -> Self {
        Self::new(&vec![0.0; scale.len()], scale)
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }
}

/// Twin-critic soft actor-critic with automatic temperature.
#[derive(Debug, Clone)]
pub struct SacAgent {
    pub config: SacConfig,
    pub state_norm: InputNorm,
    pub goal_dim: usize,
    pub policy: GaussianPolicy,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    log_alpha: Scalar,
    actor_opt: Adam,
    q1_opt: Adam,
    q2_opt: Adam,
    alpha_opt: Adam,
    updates: usize,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(state_norm: InputNorm, goal_dim: usize, action_dim: usize, config: SacConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let input = state_norm.dim() + goal_dim;
        let policy = GaussianPolicy::init(input, &config.hidden, action_dim, rng);
        let mut sizes = vec![input + action_dim];
        sizes.extend_from_slice(&config.hidden);
        sizes.push(1);
        let q1 = Mlp::init(&sizes, false, rng);
        let q2 = Mlp::init(&sizes, false, rng);
        Ok(Self {
            log_alpha: Scalar([config.initial_alpha.ln()]),
            actor_opt: Adam::new(config.actor_lr),
            q1_opt: Adam::new(config.critic_lr),
            q2_opt: Adam::new(config.critic_lr),
            alpha_opt: Adam::new(config.alpha_lr),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            policy,
            state_norm,
            goal_dim,
            config,
            updates: 0,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.policy.action_dim()
    }

    pub fn state_dim(&self) -> usize {
        self.state_norm.dim()
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.0[0].exp()
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn target_entropy(&self) -> f64 {
        self.config.target_entropy.unwrap_or(-(self.action_dim() as f64))
    }

    /// Scaled state followed by the goal.
    pub fn network_input(&self, state: &[f64], goal: Option<&[f64]>) -> Result<Vec<f64>> {
        network_input(&self.state_norm, self.goal_dim, state, goal)
    }

    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], goal: Option<&[f64]>, deterministic: bool, rng: &mut R) -> Result<Vec<f64>> {
        self.policy.act(&self.network_input(state, goal)?, deterministic, rng)
    }

    fn batch_inputs(&self, batch: &[&Transition], next: bool) -> Result<DMatrix<f64>> {
        let width = self.state_dim() + self.goal_dim;
        let mut m = DMatrix::zeros(batch.len(), width);
        for (i, t) in batch.iter().enumerate() {
            let s = if next { &t.next_state } else { &t.state };
            let row = self.network_input(s, t.goal.as_ref().map(|g| g.as_slice()))?;
            for (j, v) in row.into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }

    pub fn save_policy(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(path, &self.policy.net)
    }
}

pub(crate) fn network_input(norm: &InputNorm, goal_dim: usize, state: &[f64], goal: Option<&[f64]>) -> Result<Vec<f64>> {
    if state.len() != norm.dim() {
        return Err(Error::input(format!("state has {} entries, expected {}", state.len(), norm.dim())));
    }
    let goal = goal.unwrap_or(&[]);
    if goal.len() != goal_dim {
        return Err(Error::input(format!("goal has {} entries, expected {goal_dim}", goal.len())));
    }
    let mut x: Vec<f64> = state.iter().zip(&norm.offset).zip(&norm.scale).map(|((s, o), k)| (s - o) * k).collect();
    x.extend_from_slice(goal);
    Ok(x)
}

pub fn load_policy(path: impl AsRef<Path>) -> Result<GaussianPolicy> {
    let tensors = checkpoint::load_tensors(path)?;
    GaussianPolicy::from_net(checkpoint::mlp_from(&tensors, false)?)
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows());
    let mut m = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    m.columns_mut(0, a.ncols()).copy_from(a);
    m.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    m
}

/// Soft Bellman target `r + γ(1 − done)(min Q' − α log π')`.
pub fn soft_target(reward: f64, done: bool, gamma: f64, min_next_q: f64, alpha: f64, next_log_prob: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * (min_next_q - alpha * next_log_prob)
    }
}

/// `½·mean (Q(x) − y)²` and its parameter gradient.
pub fn critic_loss_and_grad(q: &Mlp, inputs: &DMatrix<f64>, targets: &DVector<f64>) -> (f64, MlpGrad) {
    let b = inputs.nrows() as f64;
    let trace = q.forward_trace(inputs);
    let diff = trace.output.column(0) - targets;
    let loss = 0.5 * diff.norm_squared() / b;
    let d_out = DMatrix::from_column_slice(diff.len(), 1, (diff / b).as_slice());
    let (g, _) = q.backward(&trace, &d_out);
    (loss, g)
}

/// `mean(α log π(a|s) − min(Q1, Q2)(s, a))` and its policy gradient, for fixed noise.
pub fn actor_loss_and_grad(
    policy: &GaussianPolicy,
    q1: &Mlp,
    q2: &Mlp,
    inputs: &DMatrix<f64>,
    eps: &DMatrix<f64>,
    alpha: f64,
) -> (f64, MlpGrad, DVector<f64>) {
    let n = inputs.nrows();
    let b = n as f64;
    let sample = policy.sample(inputs, eps);
    let sa = hcat(inputs, &sample.actions);
    let t1 = q1.forward_trace(&sa);
    let t2 = q2.forward_trace(&sa);
    let mut loss = 0.0;
    let mut d1 = DMatrix::zeros(n, 1);
    let mut d2 = DMatrix::zeros(n, 1);
    for i in 0..n {
        let (v1, v2) = (t1.output[(i, 0)], t2.output[(i, 0)]);
        loss += alpha * sample.log_prob[i] - v1.min(v2);
        if v1 <= v2 {
            d1[(i, 0)] = -1.0 / b;
        } else {
            d2[(i, 0)] = -1.0 / b;
        }
    }
    let (_, dx1) = q1.backward(&t1, &d1);
    let (_, dx2) = q2.backward(&t2, &d2);
    let a0 = inputs.ncols();
    let d_actions = (dx1 + dx2).columns(a0, sample.actions.ncols()).into_owned();
    let d_logp = DVector::from_element(n, alpha / b);
    let (g, _) = policy.backward(&sample, &d_actions, &d_logp);
    (loss / b, g, sample.log_prob)
}

fn diverged(updates: usize, what: &str) -> Error {
    Error::Divergence {
        epoch: updates,
        detail: format!("non-finite {what} at update {updates}"),
    }
}

/// One gradient step on both critics, the actor and the temperature, then a
/// Polyak update of the target critics.
pub fn sac_update<R: Rng + ?Sized>(agent: &mut SacAgent, batch: &[&Transition], rng: &mut R) -> Result<SacDiagnostics> {
    if batch.is_empty() {
        return Err(Error::input("empty batch"));
    }
    let n = batch.len();
    let x = agent.batch_inputs(batch, false)?;
    let x_next = agent.batch_inputs(batch, true)?;
    let ad = agent.action_dim();
    let actions = DMatrix::from_fn(n, ad, |i, j| batch[i].action[j]);
    let alpha = agent.alpha();

    let eps_next = agent.policy.sample_noise(n, rng);
    let next = agent.policy.sample(&x_next, &eps_next);
    let sa_next = hcat(&x_next, &next.actions);
    let q1n = agent.q1_target.forward(&sa_next);
    let q2n = agent.q2_target.forward(&sa_next);
    let targets = DVector::from_fn(n, |i, _| {
        soft_target(
            batch[i].reward,
            batch[i].done,
            agent.config.gamma,
            q1n[(i, 0)].min(q2n[(i, 0)]),
            alpha,
            next.log_prob[i],
        )
    });

    let sa = hcat(&x, &actions);
    let (l1, g1) = critic_loss_and_grad(&agent.q1, &sa, &targets);
    let (l2, g2) = critic_loss_and_grad(&agent.q2, &sa, &targets);
    if !(l1.is_finite() && l2.is_finite() && g1.all_finite() && g2.all_finite()) {
        return Err(diverged(agent.updates, "critic loss"));
    }
    agent.q1_opt.step(&mut agent.q1, &g1);
    agent.q2_opt.step(&mut agent.q2, &g2);

    let eps = agent.policy.sample_noise(n, rng);
    let (actor_loss, ga, log_prob) = actor_loss_and_grad(&agent.policy, &agent.q1, &agent.q2, &x, &eps, alpha);
    if !(actor_loss.is_finite() && ga.all_finite()) {
        return Err(diverged(agent.updates, "actor loss"));
    }
    agent.actor_opt.step(&mut agent.policy.net, &ga);

    let target_entropy = agent.target_entropy();
    let mean_lp = log_prob.mean();
    let alpha_loss = -agent.log_alpha.0[0] * (mean_lp + target_entropy);
    let g_alpha = Scalar([-(mean_lp + target_entropy)]);
    agent.alpha_opt.step(&mut agent.log_alpha, &g_alpha);

    let tau = agent.config.tau;
    agent.q1_target.polyak_from(&agent.q1, tau);
    agent.q2_target.polyak_from(&agent.q2, tau);
    agent.updates += 1;
    if !(agent.policy.net.all_finite() && agent.q1.all_finite() && agent.q2.all_finite() && agent.log_alpha.0[0].is_finite()) {
        return Err(diverged(agent.updates, "parameters"));
    }
    Ok(SacDiagnostics {
        critic_loss: 0.5 * (l1 + l2),
        actor_loss,
        alpha_loss,
        alpha: agent.alpha(),
        entropy: -mean_lp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcrl::buffer::Source;
    use crate::nn::{numeric_gradient, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(rng: &mut ChaCha8Rng) -> SacAgent {
        let config = SacConfig {
            hidden: vec![6],
            batch_size: 8,
            ..SacConfig::default()
        };
        SacAgent::new(InputNorm::scale_only(&[1.0, 2.0, 0.5]), 0, 2, config, rng).unwrap()
    }

    fn batch(rng: &mut ChaCha8Rng, n: usize) -> Vec<Transition> {
        (0..n)
            .map(|i| Transition {
                state: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                action: (0..2).map(|_| rng.gen_range(-0.9..0.9)).collect(),
                reward: rng.gen_range(-1.0..1.0),
                next_state: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                goal: None,
                done: i % 4 == 0,
                source: Source::Policy,
            })
            .collect()
    }

    #[test]
    fn target_closed_forms() {
        assert_eq!(soft_target(1.5, false, 0.0, 7.0, 0.2, -3.0), 1.5);
        assert_eq!(soft_target(1.5, true, 0.98, 7.0, 0.2, -3.0), 1.5);
        assert!((soft_target(1.0, false, 0.5, 2.0, 0.1, -1.0) - 2.05).abs() < 1e-15);
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = Mlp::init(&[5, 8, 6, 1], false, &mut rng);
        assert!(q.num_params() <= 200);
        let x = DMatrix::from_fn(7, 5, |_, _| rng.gen_range(-1.0..1.0));
        let y = DVector::from_fn(7, |_, _| rng.gen_range(-1.0..1.0));
        let (_, g) = critic_loss_and_grad(&q, &x, &y);
        let num = numeric_gradient(&q, 1e-6, |p| critic_loss_and_grad(p, &x, &y).0);
        assert!(relative_error(&g.flat(), &num) < 1e-4);
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let policy = GaussianPolicy::init(3, &[6], 2, &mut rng);
        let q1 = Mlp::init(&[5, 6, 1], false, &mut rng);
        let q2 = Mlp::init(&[5, 6, 1], false, &mut rng);
        assert!(policy.net.num_params() <= 200);
        let x = DMatrix::from_fn(6, 3, |_, _| rng.gen_range(-1.0..1.0));
        let eps = policy.sample_noise(6, &mut rng);
        let (_, g, _) = actor_loss_and_grad(&policy, &q1, &q2, &x, &eps, 0.3);
        let num = numeric_gradient(&policy.net, 1e-6, |n| {
            actor_loss_and_grad(&GaussianPolicy { net: n.clone() }, &q1, &q2, &x, &eps, 0.3).0
        });
        assert!(relative_error(&g.flat(), &num) < 1e-4);
    }

    #[test]
    fn unit_tau_copies_critics() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut agent = tiny(&mut rng);
        agent.config.tau = 1.0;
        let data = batch(&mut rng, 8);
        let refs: Vec<&Transition> = data.iter().collect();
        sac_update(&mut agent, &refs, &mut rng).unwrap();
        assert_eq!(agent.q1_target, agent.q1);
        assert_eq!(agent.q2_target, agent.q2);
    }

    #[test]
    fn updates_are_deterministic_and_reduce_critic_loss() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut agent = tiny(&mut rng);
            agent.config.gamma = 0.0;
            let data = batch(&mut rng, 8);
            let refs: Vec<&Transition> = data.iter().collect();
            let first = sac_update(&mut agent, &refs, &mut rng).unwrap();
            let mut last = first;
            for _ in 0..300 {
                last = sac_update(&mut agent, &refs, &mut rng).unwrap();
            }
            (first, last, agent.policy.net.flat())
        };
        let (first, last, w) = run();
        assert!(last.critic_loss < first.critic_loss);
        assert_eq!(w, run().2);
    }

    #[test]
    fn rejects_non_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut agent = tiny(&mut rng);
        let mut data = batch(&mut rng, 8);
        data[0].reward = f64::NAN;
        let refs: Vec<&Transition> = data.iter().collect();
        assert!(matches!(sac_update(&mut agent, &refs, &mut rng), Err(Error::Divergence { .. })));
        assert!(agent.act(&[0.0; 2], None, true, &mut rng).is_err());
    }

    #[test]
    fn policy_checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let agent = tiny(&mut rng);
        let dir = std::env::temp_dir().join(format!("hg-policy-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("p.bin");
        agent.save_policy(&path).unwrap();
        assert_eq!(load_policy(&path).unwrap(), agent.policy);
        std::fs::remove_dir_all(dir).ok();
    }
}
