//! High-level environment: move the arm and set latent goals for a frozen
//! low-level controller so the tweezer picks the object up and carries it
//! to the target.

use std::sync::Arc;

use nalgebra::{Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::low::{nominal_hand_pose, raw_low_vector, LowObserver};
use super::{
    jacobian_pseudoinverse, randomize_episode, reward_high, DelayLine, DomainRandomization, EpisodeDraw, HandModel, HandState,
    HighObservation, HighReward, JointVector, LowObservation, Perception, RewardCoefficients, SerialArm, Smoother, ToolReading, DT,
    HAND_DOF, HIGH_ACTION_DIM, HIGH_OBS_DIM,
};
use crate::cloud::RegistrationMode;
use crate::encoder::ShapeModel;
use crate::error::{Error, Result};
use crate::geometry::{HingeToolSpec, RigidTransform, ToolConfiguration, TooltipPair};

/// Frozen policy that maps a low-level observation and latent goal to a
/// relative joint command.
pub trait LowLevelController: Send + Sync {
    fn act(&self, observation: &LowObservation, goal: &Vector2<f64>) -> [f64; HAND_DOF];
}

/// `[z_goal(2), a_arm(3)]` in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HighAction {
    pub z_goal: Vector2<f64>,
    /// Hand frame linear velocity in the arm base frame, m/s.
    pub a_arm: Vector3<f64>,
}

impl HighAction {
    pub fn from_slice(a: &[f64]) -> Result<Self> {
        if a.len() != HIGH_ACTION_DIM || a.iter().any(|x| !x.is_finite()) {
            return Err(Error::input(format!("high-level action must be {HIGH_ACTION_DIM} finite values, got {a:?}")));
        }
        Ok(Self {
            z_goal: Vector2::new(a[0], a[1]),
            a_arm: Vector3::new(a[2], a[3], a[4]),
        })
    }

    pub fn to_array(&self) -> [f64; HIGH_ACTION_DIM] {
        [self.z_goal.x, self.z_goal.y, self.a_arm.x, self.a_arm.y, self.a_arm.z]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct HighEnvConfig {
    pub episode_steps: usize,
    /// Grasp holds while the aperture is within this much of the diameter.
    pub attach_tolerance: f64,
    /// Largest tip-midpoint to object distance at which the tips straddle it.
    pub midpoint_tolerance: f64,
    /// Per-step slip probability at zero friction.
    pub slip_rate: f64,
    /// Friction at which slipping stops.
    pub friction_ceiling: f64,
    pub max_arm_speed: f64,
    /// Initial tip height above the object.
    pub start_height: [f64; 2],
    /// Half-range of the initial horizontal tip offset.
    pub start_lateral: f64,
    pub initial_angle: f64,
    pub registration: RegistrationMode,
    /// Applies the episode's tool-cloud pose perturbation to the high-level
    /// camera as well. Off by default: the perturbation is a low-level
    /// randomization and would hide the tip-object offset.
    pub calibration_error: bool,
}

impl Default for HighEnvConfig {
    fn default() -> Self {
        Self {
            episode_steps: 200,
            attach_tolerance: 0.004,
            midpoint_tolerance: 0.010,
            slip_rate: 0.02,
            friction_ceiling: 5.0,
            max_arm_speed: 0.2,
            start_height: [0.03, 0.06],
            start_lateral: 0.02,
            initial_angle: 0.35,
            registration: RegistrationMode::Corresponded,
            calibration_error: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub p_obj: Vector3<f64>,
    pub radius: f64,
    pub grasped: bool,
    pub p_tgt: Vector3<f64>,
    /// Height the object falls back to when released.
    pub rest_height: f64,
}

/// Ground truth the heuristic controller may read.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivilegedObservation {
    pub tooltips: TooltipPair,
    pub phi: f64,
    pub p_obj: Vector3<f64>,
    pub p_tgt: Vector3<f64>,
    pub radius: f64,
    pub grasped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Timeout,
    Penalty,
    Detach,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HighStep {
    pub observation: HighObservation,
    pub reward: HighReward,
    /// Success or safety penalty ended the episode.
    pub terminal: bool,
    /// Step limit reached without a terminal event.
    pub truncated: bool,
    /// The Jacobian was singular and the arm held still.
    pub singular: bool,
    pub low_observation: LowObservation,
    pub reading: ToolReading,
    /// True tool translation in the world.
    pub t_tool: Vector3<f64>,
    pub end_effector_z: f64,
    pub object: ObjectState,
    pub phi: f64,
}

impl HighStep {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

enum HingeDrive {
    Controller(Vector2<f64>),
    Direct(f64),
}

pub struct HighLevelEnv {
    spec: HingeToolSpec,
    hand: HandModel,
    arm: SerialArm,
    coeffs: RewardCoefficients,
    dr: DomainRandomization,
    config: HighEnvConfig,
    perception: Perception,
    controller: Option<Arc<dyn LowLevelController>>,
    rng: ChaCha8Rng,
    radius_override: Option<f64>,
    q_arm: Vector6<f64>,
    hand_state: HandState,
    object: ObjectState,
    draw: Option<EpisodeDraw>,
    low_observer: LowObserver,
    high_delay: DelayLine<[f64; HIGH_OBS_DIM]>,
    high_smoother: Smoother,
    steps: usize,
    detached: bool,
    last_low: Option<LowObservation>,
    last_high: Option<HighObservation>,
}

impl HighLevelEnv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        spec: HingeToolSpec,
        hand: HandModel,
        arm: SerialArm,
        model: Arc<ShapeModel>,
        controller: Option<Arc<dyn LowLevelController>>,
        coeffs: RewardCoefficients,
        dr: DomainRandomization,
        config: HighEnvConfig,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        coeffs.validate()?;
        dr.validate()?;
        let perception = Perception::new(spec.clone(), model, config.registration, dr.corruption, DT);
        let hand_state = hand.settled(&spec, JointVector::from(hand.params.q_open));
        Ok(Self {
            q_arm: arm.home(),
            spec,
            hand,
            arm,
            coeffs,
            dr,
            config,
            perception,
            controller,
            rng: ChaCha8Rng::seed_from_u64(seed),
            radius_override: None,
            hand_state,
            object: ObjectState {
                p_obj: Vector3::zeros(),
                radius: 0.01,
                grasped: false,
                p_tgt: Vector3::zeros(),
                rest_height: 0.0,
            },
            draw: None,
            low_observer: LowObserver::new(0),
            high_delay: DelayLine::new(0),
            high_smoother: Smoother::default(),
            steps: 0,
            detached: false,
            last_low: None,
            last_high: None,
        })
    }

    pub fn set_controller(&mut self, controller: Arc<dyn LowLevelController>) {
        self.controller = Some(controller);
    }

    /// Forces the object radius of subsequent episodes.
    pub fn set_radius_override(&mut self, radius: Option<f64>) {
        self.radius_override = radius;
    }

    pub fn config(&self) -> &HighEnvConfig {
        &self.config
    }

    pub fn coefficients(&self) -> &RewardCoefficients {
        &self.coeffs
    }

    pub fn spec(&self) -> &HingeToolSpec {
        &self.spec
    }

    pub fn arm(&self) -> &SerialArm {
        &self.arm
    }

    pub fn arm_joints(&self) -> &Vector6<f64> {
        &self.q_arm
    }

    pub fn hand_state(&self) -> &HandState {
        &self.hand_state
    }

    pub fn object(&self) -> &ObjectState {
        &self.object
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn draw(&self) -> Option<&EpisodeDraw> {
        self.draw.as_ref()
    }

    /// Whether the object was released after being grasped this episode.
    pub fn detached(&self) -> bool {
        self.detached
    }

    pub fn last_observation(&self) -> Option<&HighObservation> {
        self.last_high.as_ref()
    }

    pub fn hand_pose(&self) -> RigidTransform {
        self.arm.end_effector_pose(&self.q_arm)
    }

    pub fn world_tool(&self) -> ToolConfiguration {
        let local = self.hand.tool_configuration(&self.hand_state);
        ToolConfiguration {
            pose: self.hand_pose().compose(&local.pose),
            opening_angle: local.opening_angle,
        }
    }

    pub fn privileged(&self) -> PrivilegedObservation {
        PrivilegedObservation {
            tooltips: self.spec.tooltips(&self.world_tool()),
            phi: self.hand_state.phi,
            p_obj: self.object.p_obj,
            p_tgt: self.object.p_tgt,
            radius: self.object.radius,
            grasped: self.object.grasped,
        }
    }

    pub fn reset(&mut self) -> Result<HighObservation> {
        let mut draw = randomize_episode(&self.dr, &mut self.rng);
        if let Some(r) = self.radius_override {
            draw.object_radius = r;
        }
        if !self.config.calibration_error {
            draw.calibration = RigidTransform::identity();
        }
        self.object = ObjectState {
            p_obj: draw.object_position,
            radius: draw.object_radius,
            grasped: false,
            p_tgt: draw.target_position(&self.dr),
            rest_height: draw.object_position.z,
        };
        let p = &self.hand.params;
        let s0 = (self.spec.hinge_angle_range[1] - self.config.initial_angle) / p.k_phi;
        self.hand_state = self
            .hand
            .settled(&self.spec, JointVector::from(p.q_open) + self.hand.synergy() * s0);

        let lat = self.config.start_lateral;
        let [h0, h1] = self.config.start_height;
        let offset = Vector3::new(
            self.rng.gen_range(-lat..=lat),
            self.rng.gen_range(-lat..=lat),
            self.rng.gen_range(h0..=h1),
        );
        let local = self.hand.tool_configuration(&self.hand_state);
        let mid_in_hand = self.spec.tooltips(&local).midpoint();
        let nominal = nominal_hand_pose(&self.arm);
        let hand_target = self.object.p_obj + offset - nominal.rotation * mid_in_hand;
        self.q_arm = self.arm.solve_position(&self.arm.home(), &hand_target, 100);

        self.perception.reset(draw.calibration);
        self.low_observer = LowObserver::new(draw.obs_delay);
        self.high_delay = DelayLine::new(draw.obs_delay);
        self.high_smoother.reset();
        self.draw = Some(draw);
        self.steps = 0;
        self.detached = false;
        let (low, high, _) = self.observe()?;
        self.last_low = Some(low);
        self.last_high = Some(high);
        Ok(high)
    }

    fn observe(&mut self) -> Result<(LowObservation, HighObservation, ToolReading)> {
        let hand_pose = self.hand_pose();
        let to_hand = hand_pose.inverse();
        let tool = self.world_tool();
        let reading = self.perception.observe(&tool, &to_hand, &mut self.rng)?;
        let low = self.low_observer.push(raw_low_vector(&self.hand_state, &reading));

        let draw = self.draw.as_ref().expect("episode drawn");
        let noise = Normal::new(0.0, self.dr.object_pos_noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
        let mut jitter = || Vector3::new(noise.sample(&mut self.rng), noise.sample(&mut self.rng), noise.sample(&mut self.rng));
        let seen_obj = to_hand.apply(&(draw.calibration.apply(&self.object.p_obj) + jitter()));
        let seen_tgt = to_hand.apply(&draw.calibration.apply(&self.object.p_tgt));
        let mut raw = [0.0; HIGH_OBS_DIM];
        raw[0..3].copy_from_slice(reading.pose.translation.as_slice());
        raw[3..6].copy_from_slice(reading.pose.euler_xyz().as_slice());
        raw[6..8].copy_from_slice(reading.latent.0.as_slice());
        raw[8..11].copy_from_slice(seen_obj.as_slice());
        raw[11..14].copy_from_slice(seen_tgt.as_slice());
        let mut obs = self.high_delay.push(raw);
        let smooth = self.high_smoother.update(&obs[0..6]);
        obs[0..6].copy_from_slice(&smooth);
        Ok((low, HighObservation(obs), reading))
    }

    /// Steps with a learned high-level action through the frozen controller.
    pub fn step(&mut self, action: &HighAction) -> Result<HighStep> {
        if self.controller.is_none() {
            return Err(Error::Config("high-level step needs a low-level controller".into()));
        }
        self.advance(&action.a_arm, HingeDrive::Controller(action.z_goal))
    }

    /// Steps with a direct hinge angle command, bypassing the fingers.
    pub fn step_privileged(&mut self, a_arm: &Vector3<f64>, hinge_angle: f64) -> Result<HighStep> {
        if !hinge_angle.is_finite() {
            return Err(Error::input("hinge command must be finite"));
        }
        self.advance(a_arm, HingeDrive::Direct(hinge_angle))
    }

    fn advance(&mut self, a_arm: &Vector3<f64>, drive: HingeDrive) -> Result<HighStep> {
        if a_arm.iter().any(|x| !x.is_finite()) {
            return Err(Error::input("arm velocity must be finite"));
        }
        if let HingeDrive::Controller(z) = &drive {
            if z.iter().any(|x| !x.is_finite()) {
                return Err(Error::input("latent goal must be finite"));
            }
        }
        let draw = *self.draw.as_ref().expect("reset before step");
        let speed = a_arm.norm();
        let a_arm = if speed > self.config.max_arm_speed {
            a_arm * (self.config.max_arm_speed / speed)
        } else {
            *a_arm
        };
        let singular = match jacobian_pseudoinverse(&self.arm.position_jacobian(&self.q_arm)) {
            Ok(p) => {
                self.q_arm = self.arm.clamp(&(self.q_arm + p.matrix * a_arm * DT));
                false
            }
            Err(_) => true,
        };

        let two_r = 2.0 * self.object.radius;
        let eps = self.config.attach_tolerance;
        let tips = self.spec.tooltips(&self.world_tool());
        let straddling = (tips.midpoint() - self.object.p_obj).norm() < self.config.midpoint_tolerance && tips.distance() >= two_r - 1e-9;
        let floor = (self.object.grasped || straddling).then(|| self.spec.angle_for_aperture(two_r));

        match drive {
            HingeDrive::Controller(z_goal) => {
                let controller = self.controller.as_ref().expect("checked above");
                let obs = self.last_low.as_ref().expect("reset before step");
                let a_low = controller.act(obs, &z_goal);
                self.hand_state = self.hand.step(&self.spec, &self.hand_state, &a_low, &draw.hand, floor, DT)?;
            }
            HingeDrive::Direct(target) => {
                let mut phi = self.spec.clamp_angle(target);
                if let Some(f) = floor {
                    phi = phi.max(f);
                }
                self.hand_state.phi = phi;
                self.hand_state.q_dot = JointVector::zeros();
            }
        }

        let tips = self.spec.tooltips(&self.world_tool());
        let aperture = tips.distance();
        let mid = tips.midpoint();
        if self.object.grasped {
            let slip_p = (1.0 - draw.high_friction / self.config.friction_ceiling).max(0.0) * self.config.slip_rate;
            let slipped = self.rng.gen::<f64>() < slip_p;
            if aperture > two_r + eps + 1e-9 || slipped {
                self.object.grasped = false;
                self.object.p_obj.z = self.object.rest_height;
                self.detached = true;
            } else {
                self.object.p_obj = mid;
            }
        } else if (mid - self.object.p_obj).norm() < self.config.midpoint_tolerance
            && aperture >= two_r - 1e-9
            && aperture <= two_r + eps + 1e-9
        {
            self.object.grasped = true;
            self.object.p_obj = mid;
        }

        let (low, high, reading) = self.observe()?;
        self.last_low = Some(low);
        self.last_high = Some(high);
        let t_tool = self.world_tool().pose.translation;
        let end_effector_z = self.hand_pose().translation.z;
        let reward = reward_high(&t_tool, &self.object.p_obj, &self.object.p_tgt, end_effector_z, &self.coeffs);
        self.steps += 1;
        let terminal = reward.success || reward.penalized;
        Ok(HighStep {
            observation: high,
            reward,
            terminal,
            truncated: !terminal && self.steps >= self.config.episode_steps,
            singular,
            low_observation: low,
            reading,
            t_tool,
            end_effector_z,
            object: self.object,
            phi: self.hand_state.phi,
        })
    }

    /// How a finished, unsuccessful episode failed.
    pub fn failure_kind(&self, last: &HighStep) -> Option<FailureKind> {
        if last.reward.success {
            None
        } else if last.reward.penalized {
            Some(FailureKind::Penalty)
        } else if self.detached {
            Some(FailureKind::Detach)
        } else {
            Some(FailureKind::Timeout)
        }
    }
}
