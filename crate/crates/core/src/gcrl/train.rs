use std::collections::VecDeque;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::buffer::{Mixing, ReplayBuffer, Source, Transition};
use super::policy::GaussianPolicy;
use super::sac::{network_input, sac_update, InputNorm, SacAgent, SacConfig, SacDiagnostics};
use crate::cloud::CorruptionParams;
use crate::encoder::{observed_latent_curve, ShapeModel};
use crate::error::{Error, Result};
use crate::geometry::HingeToolSpec;
use crate::sim::{
    project_onto_curve, HighAction, HighLevelEnv, HighObservation, LowLevelController, LowLevelEnv, LowObservation, HAND_DOF,
    HIGH_ACTION_DIM, HIGH_OBS_OFFSET, HIGH_OBS_SCALE, LOW_OBS_SCALE,
};

/// Episodes averaged into each learning-curve row.
pub const CURVE_WINDOW: usize = 20;

/// Maps normalized high-level actions in `[−1, 1]⁵` to physical commands.
/// The latent part spans the bounding box of the reachable curve, widened by
/// [`HighActionMap::LATENT_MARGIN`].
#[derive(Debug, Clone, PartialEq)]
pub struct HighActionMap {
    pub curve: Vec<Vector2<f64>>,
    pub latent_center: Vector2<f64>,
    pub latent_half_extent: Vector2<f64>,
    pub arm_scale: f64,
}

impl HighActionMap {
    pub const LATENT_MARGIN: f64 = 1.25;
    pub const ARM_SCALE: f64 = 0.2;

    /// `corruption` is the per-frame perception noise the low level saw.
    pub fn new(model: &ShapeModel, spec: &HingeToolSpec, corruption: &CorruptionParams, samples: usize) -> Self {
        let curve: Vec<Vector2<f64>> = observed_latent_curve(model, spec, corruption, samples.max(2)).into_iter().map(|(_, z)| z).collect();
        Self::from_curve(curve, Self::ARM_SCALE)
    }

    pub fn from_curve(curve: Vec<Vector2<f64>>, arm_scale: f64) -> Self {
        let lo = curve.iter().fold(Vector2::repeat(f64::INFINITY), |m, z| m.inf(z));
        let hi = curve.iter().fold(Vector2::repeat(f64::NEG_INFINITY), |m, z| m.sup(z));
        let half = ((hi - lo) * 0.5 * Self::LATENT_MARGIN).map(|h| h.max(1e-3));
        Self {
            latent_center: (lo + hi) * 0.5,
            latent_half_extent: half,
            curve,
            arm_scale,
        }
    }

    /// The latent goal is projected onto the reachable curve.
    pub fn to_action(&self, a: &[f64]) -> Result<HighAction> {
        if a.len() != HIGH_ACTION_DIM {
            return Err(Error::input(format!("high-level action needs {HIGH_ACTION_DIM} entries")));
        }
        let z = self.latent_center + Vector2::new(a[0], a[1]).component_mul(&self.latent_half_extent);
        Ok(HighAction {
            z_goal: project_onto_curve(&z, &self.curve),
            a_arm: Vector3::new(a[2], a[3], a[4]) * self.arm_scale,
        })
    }

    /// Inverse of the scaling (not of the projection), clipped inside the bounds.
    pub fn normalize(&self, action: &HighAction) -> Vec<f64> {
        let lim = 1.0 - 1e-6;
        let z = (action.z_goal - self.latent_center).component_div(&self.latent_half_extent);
        let v = action.a_arm / self.arm_scale;
        [z.x, z.y, v.x, v.y, v.z].iter().map(|x| x.clamp(-lim, lim)).collect()
    }
}

/// Frozen low-level policy acting deterministically in joint-command units.
#[derive(Debug, Clone, PartialEq)]
pub struct LowPolicyController {
    pub policy: GaussianPolicy,
    pub action_scale: f64,
}

impl LowPolicyController {
    pub fn new(policy: GaussianPolicy, action_scale: f64) -> Result<Self> {
        if policy.input_dim() != LOW_OBS_SCALE.len() + 2 || policy.action_dim() != HAND_DOF {
            return Err(Error::Format(format!(
                "low-level policy must map {} inputs to {HAND_DOF} actions",
                LOW_OBS_SCALE.len() + 2
            )));
        }
        Ok(Self { policy, action_scale })
    }
}

impl LowLevelController for LowPolicyController {
    fn act(&self, observation: &LowObservation, goal: &Vector2<f64>) -> [f64; HAND_DOF] {
        let x = network_input(&low_norm(), 2, observation.as_slice(), Some(goal.as_slice())).expect("fixed dimensions");
        let a = self.policy.deterministic(&x).expect("fixed dimensions");
        let mut out = [0.0; HAND_DOF];
        for (o, v) in out.iter_mut().zip(a) {
            *o = v * self.action_scale;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowCurveRow {
    pub step: usize,
    pub episodes: usize,
    /// Share of the last episodes that met the success predicate.
    pub success_rate: f64,
    /// Mean per-step reward terms since the previous row.
    pub goal_reward: f64,
    pub effort_reward: f64,
    pub total_reward: f64,
    pub alpha: f64,
    pub critic_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighCurveRow {
    pub step: usize,
    pub episodes: usize,
    /// Mean cumulative reward of the last episodes.
    #[serde(rename = "return")]
    pub mean_return: f64,
    pub success_rate: f64,
    pub alpha: f64,
    pub critic_loss: f64,
}

fn window_mean(w: &VecDeque<f64>) -> f64 {
    if w.is_empty() {
        0.0
    } else {
        w.iter().sum::<f64>() / w.len() as f64
    }
}

fn push_window(w: &mut VecDeque<f64>, v: f64) {
    if w.len() == CURVE_WINDOW {
        w.pop_front();
    }
    w.push_back(v);
}

fn uniform_action<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub struct LowTraining {
    pub agent: SacAgent,
    pub curve: Vec<LowCurveRow>,
}

/// Trains the goal-conditioned finger policy. Episodes are never cut short
/// on success, so every transition bootstraps.
pub fn train_low<R: Rng + ?Sized>(
    env: &mut LowLevelEnv,
    config: &SacConfig,
    rng: &mut R,
    mut on_row: impl FnMut(&LowCurveRow),
) -> Result<LowTraining> {
    let mut agent = SacAgent::new(low_norm(), 2, HAND_DOF, config.clone(), rng)?;
    let scale = env.hand().params.action_clamp;
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut curve = Vec::new();
    let mut outcomes = VecDeque::new();
    let mut episodes = 0;
    let mut sums = [0.0; 3];
    let mut count = 0usize;
    let mut diag = SacDiagnostics::default();

    let mut obs = env.reset()?;
    for step in 1..=config.steps {
        let goal = env.goal();
        let a = if step <= config.warmup_steps {
            uniform_action(HAND_DOF, rng)
        } else {
            agent.act(obs.as_slice(), Some(goal.as_slice()), false, rng)?
        };
        let command: Vec<f64> = a.iter().map(|v| v * scale).collect();
        let s = env.step(&command)?;
        buffer.push(Transition {
            state: obs.as_slice().to_vec(),
            action: a,
            reward: s.reward.total,
            next_state: s.observation.as_slice().to_vec(),
            goal: Some([goal.x, goal.y]),
            done: false,
            source: Source::Policy,
        });
        sums[0] += s.reward.goal;
        sums[1] += s.reward.effort;
        sums[2] += s.reward.total;
        count += 1;
        obs = s.observation;

        if step > config.warmup_steps && buffer.len() >= config.batch_size {
            for _ in 0..config.updates_per_step {
                let batch = buffer.sample(config.batch_size, rng);
                diag = sac_update(&mut agent, &batch, rng)?;
            }
        }
        if s.truncated {
            push_window(&mut outcomes, if s.success { 1.0 } else { 0.0 });
            episodes += 1;
            obs = env.reset()?;
        }
        if step % config.log_interval == 0 {
            let n = count.max(1) as f64;
            let row = LowCurveRow {
                step,
                episodes,
                success_rate: window_mean(&outcomes),
                goal_reward: sums[0] / n,
                effort_reward: sums[1] / n,
                total_reward: sums[2] / n,
                alpha: agent.alpha(),
                critic_loss: diag.critic_loss,
            };
            on_row(&row);
            curve.push(row);
            sums = [0.0; 3];
            count = 0;
        }
    }
    Ok(LowTraining { agent, curve })
}

pub struct HighTraining {
    pub agent: SacAgent,
    pub curve: Vec<HighCurveRow>,
}

/// Trains the arm and latent-goal policy against a frozen low level. When
/// `privileged` is non-empty its transitions are mixed into every batch.
pub fn train_high<R: Rng + ?Sized>(
    env: &mut HighLevelEnv,
    map: &HighActionMap,
    privileged: &[Transition],
    mixing: Mixing,
    config: &SacConfig,
    rng: &mut R,
    mut on_row: impl FnMut(&HighCurveRow),
) -> Result<HighTraining> {
    let mut agent = SacAgent::new(high_norm(), 0, HIGH_ACTION_DIM, config.clone(), rng)?;
    let mut online = ReplayBuffer::new(config.buffer_capacity);
    let priv_buffer = ReplayBuffer::from_transitions(privileged.to_vec());
    let mut curve = Vec::new();
    let mut returns = VecDeque::new();
    let mut outcomes = VecDeque::new();
    let mut episodes = 0;
    let mut ep_return = 0.0;
    let mut diag = SacDiagnostics::default();

    let mut obs = env.reset()?;
    for step in 1..=config.steps {
        let a = if step <= config.warmup_steps {
            uniform_action(HIGH_ACTION_DIM, rng)
        } else {
            agent.act(obs.as_slice(), None, false, rng)?
        };
        let s = env.step(&map.to_action(&a)?)?;
        online.push(Transition {
            state: obs.as_slice().to_vec(),
            action: a,
            reward: s.reward.total,
            next_state: s.observation.as_slice().to_vec(),
            goal: None,
            done: s.terminal,
            source: Source::Policy,
        });
        ep_return += s.reward.total;
        obs = s.observation;

        let available = online.len() + priv_buffer.len();
        if step > config.warmup_steps && available >= config.batch_size {
            for _ in 0..config.updates_per_step {
                let batch = mixing.sample(&online, &priv_buffer, config.batch_size, rng);
                diag = sac_update(&mut agent, &batch, rng)?;
            }
        }
        if s.done() {
            push_window(&mut returns, ep_return);
            push_window(&mut outcomes, if s.reward.success { 1.0 } else { 0.0 });
            episodes += 1;
            ep_return = 0.0;
            obs = env.reset()?;
        }
        if step % config.log_interval == 0 {
            let row = HighCurveRow {
                step,
                episodes,
                mean_return: window_mean(&returns),
                success_rate: window_mean(&outcomes),
                alpha: agent.alpha(),
                critic_loss: diag.critic_loss,
            };
            on_row(&row);
            curve.push(row);
        }
    }
    Ok(HighTraining { agent, curve })
}

fn low_norm() -> InputNorm {
    InputNorm::scale_only(&LOW_OBS_SCALE)
}

fn high_norm() -> InputNorm {
    InputNorm::new(&HIGH_OBS_OFFSET, &HIGH_OBS_SCALE)
}

/// Normalized high-level observation input for a learned policy.
pub fn high_policy_input(obs: &HighObservation) -> Vec<f64> {
    network_input(&high_norm(), 0, obs.as_slice(), None).expect("fixed dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_map_scales_and_projects() {
        let map = HighActionMap::from_curve(vec![Vector2::new(-1.0, 0.0), Vector2::new(1.0, 0.0)], 0.2);
        assert_eq!(map.latent_center, Vector2::zeros());
        assert!((map.latent_half_extent.x - 1.25).abs() < 1e-12);
        let a = map.to_action(&[0.2, 0.5, 1.0, -0.5, 0.0]).unwrap();
        assert!((a.z_goal - Vector2::new(0.25, 0.0)).norm() < 1e-12);
        assert!((a.a_arm - Vector3::new(0.2, -0.1, 0.0)).norm() < 1e-12);
        let n = map.normalize(&a);
        assert!((n[0] - 0.2).abs() < 1e-12 && n[1] == 0.0 && (n[2] - (1.0 - 1e-6)).abs() < 1e-12);
        assert!(map.to_action(&[0.0; 4]).is_err());
    }

    #[test]
    fn window_keeps_recent() {
        let mut w = VecDeque::new();
        for i in 0..30 {
            push_window(&mut w, i as f64);
        }
        assert_eq!(w.len(), CURVE_WINDOW);
        assert_eq!(window_mean(&w), 19.5);
    }
}
