use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::GaussianPolicy;
use super::train::{high_policy_input, HighActionMap};
use crate::error::Result;
use crate::sim::{FailureKind, HighAction, HighLevelEnv, HighObservation, HighStep, HIGH_ACTION_DIM};

/// One high-level command: either through the frozen low level or, for the
/// privileged controller, straight to the hinge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Command {
    Learned(HighAction),
    Privileged { a_arm: Vector3<f64>, hinge_angle: f64 },
}

pub trait HighLevelPolicy {
    fn reset(&mut self) {}
    fn command(&mut self, env: &HighLevelEnv, obs: &HighObservation) -> Result<Command>;
}

pub fn apply(env: &mut HighLevelEnv, command: &Command) -> Result<HighStep> {
    match command {
        Command::Learned(a) => env.step(a),
        Command::Privileged { a_arm, hinge_angle } => env.step_privileged(a_arm, *hinge_angle),
    }
}

/// Deterministic rollouts of a trained policy.
pub struct LearnedHighPolicy {
    pub policy: GaussianPolicy,
    pub map: HighActionMap,
}

impl HighLevelPolicy for LearnedHighPolicy {
    fn command(&mut self, _: &HighLevelEnv, obs: &HighObservation) -> Result<Command> {
        let a = self.policy.deterministic(&high_policy_input(obs))?;
        Ok(Command::Learned(self.map.to_action(&a)?))
    }
}

/// Uniform random normalized actions.
pub struct RandomHighPolicy {
    pub map: HighActionMap,
    pub rng: ChaCha8Rng,
}

impl HighLevelPolicy for RandomHighPolicy {
    fn command(&mut self, _: &HighLevelEnv, _: &HighObservation) -> Result<Command> {
        let a: Vec<f64> = (0..HIGH_ACTION_DIM).map(|_| self.rng.gen_range(-1.0..1.0)).collect();
        Ok(Command::Learned(self.map.to_action(&a)?))
    }
}

/// Keeps the arm still and the hinge where it is.
pub struct HoldPolicy;

impl HighLevelPolicy for HoldPolicy {
    fn command(&mut self, env: &HighLevelEnv, _: &HighObservation) -> Result<Command> {
        Ok(Command::Privileged {
            a_arm: Vector3::zeros(),
            hinge_angle: env.hand_state().phi,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub success: bool,
    pub steps: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub radius: f64,
    pub failure: Option<FailureKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_steps: f64,
    pub failures: BTreeMap<String, usize>,
}

impl EvalSummary {
    pub fn from_outcomes(outcomes: &[EpisodeOutcome]) -> Self {
        let n = outcomes.len().max(1) as f64;
        let mut failures = BTreeMap::from([("timeout".to_string(), 0), ("penalty".to_string(), 0), ("detach".to_string(), 0)]);
        for o in outcomes {
            if let Some(f) = o.failure {
                let key = serde_json::to_value(f).expect("plain enum").as_str().expect("string tag").to_string();
                *failures.entry(key).or_default() += 1;
            }
        }
        Self {
            episodes: outcomes.len(),
            success_rate: outcomes.iter().filter(|o| o.success).count() as f64 / n,
            mean_return: outcomes.iter().map(|o| o.episode_return).sum::<f64>() / n,
            mean_steps: outcomes.iter().map(|o| o.steps as f64).sum::<f64>() / n,
            failures,
        }
    }
}

/// Runs one episode; `on_step` sees every command and its result.
pub fn run_episode(
    env: &mut HighLevelEnv,
    policy: &mut dyn HighLevelPolicy,
    on_step: &mut dyn FnMut(&Command, &HighStep) -> Result<()>,
) -> Result<EpisodeOutcome> {
    let mut obs = env.reset()?;
    policy.reset();
    let radius = env.object().radius;
    let mut total = 0.0;
    loop {
        let c = policy.command(env, &obs)?;
        let s = apply(env, &c)?;
        on_step(&c, &s)?;
        total += s.reward.total;
        obs = s.observation;
        if s.done() {
            return Ok(EpisodeOutcome {
                success: s.reward.success,
                steps: env.steps(),
                episode_return: total,
                radius,
                failure: env.failure_kind(&s),
            });
        }
    }
}

pub fn evaluate(env: &mut HighLevelEnv, policy: &mut dyn HighLevelPolicy, episodes: usize) -> Result<(EvalSummary, Vec<EpisodeOutcome>)> {
    let outcomes = (0..episodes)
        .map(|_| run_episode(env, policy, &mut |_, _| Ok(())))
        .collect::<Result<Vec<_>>>()?;
    Ok((EvalSummary::from_outcomes(&outcomes), outcomes))
}
