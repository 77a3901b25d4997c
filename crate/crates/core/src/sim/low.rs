//! Low-level environment: drive the tool's latent shape to a goal with the
//! fingers while the hand stays put.

use std::sync::Arc;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    project_onto_curve, randomize_episode, reward_low, DelayLine, DomainRandomization, EpisodeDraw, HandModel, HandState, JointVector,
    LowObservation, LowReward, Perception, RewardCoefficients, SerialArm, Smoother, ToolReading, DT, HAND_DOF, LOW_OBS_DIM,
};
use crate::cloud::RegistrationMode;
use crate::encoder::{observed_latent_curve, ShapeModel};
use crate::error::Result;
use crate::geometry::{HingeToolSpec, RigidTransform, ToolConfiguration};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct LowEnvConfig {
    pub episode_steps: usize,
    /// Latent distance that counts as reaching the goal.
    pub success_threshold: f64,
    /// Consecutive steps within the threshold needed for success.
    pub success_hold: usize,
    pub effort_reward: bool,
    pub registration: RegistrationMode,
    /// Hinge angles sampled along the reachable latent curve.
    pub goal_curve_samples: usize,
    /// Range of the initial flexion of each finger joint.
    pub initial_flexion: [f64; 2],
}

impl Default for LowEnvConfig {
    fn default() -> Self {
        Self {
            episode_steps: 100,
            success_threshold: 0.25,
            success_hold: 10,
            effort_reward: true,
            registration: RegistrationMode::Corresponded,
            goal_curve_samples: 101,
            initial_flexion: [0.2, 0.9],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowStep {
    pub observation: LowObservation,
    pub reward: LowReward,
    /// Whether the success predicate has held at some point this episode.
    pub success: bool,
    /// Episode reached its step limit.
    pub truncated: bool,
    pub reading: ToolReading,
}

/// Hand base pose shared by both environments at the start of an episode.
pub(crate) fn nominal_hand_pose(arm: &SerialArm) -> RigidTransform {
    RigidTransform::new(Vector3::new(0.45, 0.0, 0.33), arm.hand_orientation)
}

/// Assembles the raw observation vector before delay and smoothing.
pub(crate) fn raw_low_vector(state: &HandState, reading: &ToolReading) -> [f64; LOW_OBS_DIM] {
    let mut raw = [0.0; LOW_OBS_DIM];
    raw[0..9].copy_from_slice(state.q.as_slice());
    raw[9..18].copy_from_slice(state.q_dot.as_slice());
    raw[18..21].copy_from_slice(reading.kinematics.v.as_slice());
    raw[21..24].copy_from_slice(reading.kinematics.omega.as_slice());
    raw[24..26].copy_from_slice(reading.latent.0.as_slice());
    raw
}

/// Delay then EMA of the tool entries (indices 18..26).
#[derive(Debug, Clone)]
pub(crate) struct LowObserver {
    delay: DelayLine<[f64; LOW_OBS_DIM]>,
    smoother: Smoother,
}

impl LowObserver {
    pub(crate) fn new(delay: usize) -> Self {
        Self {
            delay: DelayLine::new(delay),
            smoother: Smoother::default(),
        }
    }

    pub(crate) fn push(&mut self, raw: [f64; LOW_OBS_DIM]) -> LowObservation {
        let mut obs = self.delay.push(raw);
        let tool = self.smoother.update(&obs[18..]);
        obs[18..].copy_from_slice(&tool);
        LowObservation(obs)
    }
}

pub struct LowLevelEnv {
    spec: HingeToolSpec,
    hand: HandModel,
    coeffs: RewardCoefficients,
    dr: DomainRandomization,
    config: LowEnvConfig,
    perception: Perception,
    curve: Vec<Vector2<f64>>,
    hand_pose: RigidTransform,
    rng: ChaCha8Rng,
    state: HandState,
    draw: Option<EpisodeDraw>,
    observer: LowObserver,
    goal: Vector2<f64>,
    steps: usize,
    streak: usize,
    succeeded: bool,
    last_obs: Option<LowObservation>,
}

impl LowLevelEnv {
    pub fn new(
        spec: HingeToolSpec,
        hand: HandModel,
        model: Arc<ShapeModel>,
        coeffs: RewardCoefficients,
        dr: DomainRandomization,
        config: LowEnvConfig,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        coeffs.validate()?;
        dr.validate()?;
        let curve = observed_latent_curve(&model, &spec, &dr.corruption, config.goal_curve_samples.max(2))
            .into_iter()
            .map(|(_, z)| z)
            .collect();
        let perception = Perception::new(spec.clone(), model, config.registration, dr.corruption, DT);
        let state = hand.settled(&spec, JointVector::from(hand.params.q_open));
        Ok(Self {
            hand_pose: nominal_hand_pose(&SerialArm::default()),
            spec,
            hand,
            coeffs,
            dr,
            config,
            perception,
            curve,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state,
            draw: None,
            observer: LowObserver::new(0),
            goal: Vector2::zeros(),
            steps: 0,
            streak: 0,
            succeeded: false,
            last_obs: None,
        })
    }

    pub fn config(&self) -> &LowEnvConfig {
        &self.config
    }

    pub fn coefficients(&self) -> &RewardCoefficients {
        &self.coeffs
    }

    pub fn spec(&self) -> &HingeToolSpec {
        &self.spec
    }

    pub fn hand(&self) -> &HandModel {
        &self.hand
    }

    pub fn state(&self) -> &HandState {
        &self.state
    }

    pub fn goal(&self) -> Vector2<f64> {
        self.goal
    }

    pub fn set_goal(&mut self, goal: Vector2<f64>) {
        self.goal = goal;
        self.streak = 0;
        self.succeeded = false;
    }

    pub fn draw(&self) -> Option<&EpisodeDraw> {
        self.draw.as_ref()
    }

    /// Mean observed latent over the hinge range.
    pub fn latent_curve(&self) -> &[Vector2<f64>] {
        &self.curve
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `z ~ N(0, I)` projected onto the reachable latent curve.
    pub fn sample_goal(&mut self) -> Vector2<f64> {
        let z = Vector2::new(self.rng.sample(StandardNormal), self.rng.sample(StandardNormal));
        project_onto_curve(&z, &self.curve)
    }

    fn world_tool(&self) -> ToolConfiguration {
        let local = self.hand.tool_configuration(&self.state);
        ToolConfiguration {
            pose: self.hand_pose.compose(&local.pose),
            opening_angle: local.opening_angle,
        }
    }

    fn observe(&mut self) -> Result<(LowObservation, ToolReading)> {
        let tool = self.world_tool();
        let to_hand = self.hand_pose.inverse();
        let reading = self.perception.observe(&tool, &to_hand, &mut self.rng)?;
        let obs = self.observer.push(raw_low_vector(&self.state, &reading));
        Ok((obs, reading))
    }

    /// Starts an episode from a random finger posture with a fresh goal.
    pub fn reset(&mut self) -> Result<LowObservation> {
        let draw = randomize_episode(&self.dr, &mut self.rng);
        let [lo, hi] = self.config.initial_flexion;
        let mut q = JointVector::zeros();
        for i in 0..HAND_DOF {
            q[i] = if self.hand.params.lower[i] < 0.0 {
                self.rng.gen_range(-0.1..=0.1)
            } else {
                self.rng.gen_range(lo..=hi)
            };
        }
        self.state = self.hand.settled(&self.spec, q);
        self.perception.reset(draw.calibration);
        self.observer = LowObserver::new(draw.obs_delay);
        self.draw = Some(draw);
        self.goal = self.sample_goal();
        self.steps = 0;
        self.streak = 0;
        self.succeeded = false;
        let (obs, _) = self.observe()?;
        self.last_obs = Some(obs);
        Ok(obs)
    }

    /// Applies a relative joint command (rad) for one control period.
    pub fn step(&mut self, action: &[f64]) -> Result<LowStep> {
        let draw = *self.draw.as_ref().expect("reset before step");
        self.state = self.hand.step(&self.spec, &self.state, action, &draw.hand, None, DT)?;
        let (obs, reading) = self.observe()?;
        let reward = reward_low(&obs, &self.goal, &self.coeffs, self.perception.canonical(), DT, self.config.effort_reward);
        if (obs.z_bar() - self.goal).norm() < self.config.success_threshold {
            self.streak += 1;
        } else {
            self.streak = 0;
        }
        if self.streak >= self.config.success_hold {
            self.succeeded = true;
        }
        self.steps += 1;
        self.last_obs = Some(obs);
        Ok(LowStep {
            observation: obs,
            reward,
            success: self.succeeded,
            truncated: self.steps >= self.config.episode_steps,
            reading,
        })
    }

    pub fn last_observation(&self) -> Option<&LowObservation> {
        self.last_obs.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderArch;
    use crate::sim::HandParams;

    fn env(dr: DomainRandomization, seed: u64) -> LowLevelEnv {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = ShapeModel::init(
            &EncoderArch {
                point_layers: vec![8, 8],
                decoder_hidden: vec![8],
                output_points: 8,
            },
            &mut rng,
        );
        LowLevelEnv::new(
            HingeToolSpec::default(),
            HandModel::new(HandParams::default()).unwrap(),
            Arc::new(model),
            RewardCoefficients::default(),
            dr,
            LowEnvConfig::default(),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn observation_tool_entries_are_ema_of_raw() {
        let mut e = env(DomainRandomization::noise_free(), 1);
        let first = e.reset().unwrap();
        let mut prev: Vec<f64> = first.0[18..].to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let a: Vec<f64> = (0..HAND_DOF).map(|_| rng.gen_range(-0.05..0.05)).collect();
            let s = e.step(&a).unwrap();
            let raw = raw_low_vector(e.state(), &s.reading);
            for k in 0..8 {
                let expect = 0.9 * raw[18 + k] + 0.1 * prev[k];
                assert!((s.observation.0[18 + k] - expect).abs() < 1e-12);
            }
            assert_eq!(&s.observation.0[..18], &raw[..18]);
            prev = s.observation.0[18..].to_vec();
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let run = |seed| {
            let mut e = env(DomainRandomization::default(), seed);
            let mut out = vec![e.reset().unwrap().0.to_vec()];
            for i in 0..30 {
                let a = [0.01 * ((i % 5) as f64 - 2.0); HAND_DOF];
                let s = e.step(&a).unwrap();
                out.push(s.observation.0.to_vec());
                out.push(vec![s.reward.total]);
            }
            out
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn episode_length_and_dimensions() {
        let mut e = env(DomainRandomization::default(), 3);
        let obs = e.reset().unwrap();
        assert_eq!(obs.as_slice().len(), 26);
        let mut n = 0;
        loop {
            let s = e.step(&[0.0; HAND_DOF]).unwrap();
            n += 1;
            assert!(s.reward.total <= 1.0);
            if s.truncated {
                break;
            }
        }
        assert_eq!(n, 100);
        assert!(e.step(&[f64::NAN; HAND_DOF]).is_err());
    }

    #[test]
    fn goals_lie_on_the_curve() {
        let mut e = env(DomainRandomization::default(), 4);
        e.reset().unwrap();
        for _ in 0..50 {
            let g = e.sample_goal();
            let p = project_onto_curve(&g, e.latent_curve());
            assert!((p - g).norm() < 1e-12);
        }
    }
}
