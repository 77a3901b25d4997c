//! Kinematic surrogate of nine finger joints coupled to the tweezer hinge.
//!
//! Joint targets are tracked by a first-order servo. The hinge follows the
//! finger posture along a fixed closing synergy `ŵ` and relaxes toward the
//! posture equilibrium through a spring:
//!
//! `φ̇ = −k_φ·c·(ŵ·q̇) − k_spring·(φ − φ_rest(q))`, with
//! `φ_rest(q) = φ_max − c·k_φ·ŵ·(q − q_open)`.
//!
//! Finger motion outside the synergy pushes the tool off its seat in the
//! hand (less so with high finger friction). The seat offset lowers the
//! coupling `c = exp(−m)` and slowly re-seats.

use nalgebra::{SMatrix, SVector, UnitQuaternion, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{HingeToolSpec, RigidTransform, ToolConfiguration};

pub const HAND_DOF: usize = 9;

pub type JointVector = SVector<f64, HAND_DOF>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HandParams {
    pub lower: [f64; HAND_DOF],
    pub upper: [f64; HAND_DOF],
    /// Posture at which the hinge rests fully open.
    pub q_open: [f64; HAND_DOF],
    /// Closing synergy (normalized before use).
    pub closing_synergy: [f64; HAND_DOF],
    /// Per-joint bound on a relative position command, rad.
    pub action_clamp: f64,
    /// Fraction of the commanded change realized per step at gain scale 1.
    pub servo_gain: f64,
    /// Hinge radians per unit of synergy motion.
    pub k_phi: f64,
    /// Hinge spring rate, 1/s.
    pub k_spring: f64,
    /// Seat drift per rad of off-synergy finger motion: meters, radians.
    pub drift_translation: f64,
    pub drift_rotation: f64,
    /// Fraction of the seat offset recovered per step.
    pub reseat_rate: f64,
    /// Offsets that cost one e-fold of coupling.
    pub seat_translation_scale: f64,
    pub seat_rotation_scale: f64,
    pub max_seat_translation: f64,
    pub max_seat_rotation: f64,
    /// Nominal tool pose in the hand base frame.
    pub tool_seat: RigidTransform,
}

impl Default for HandParams {
    fn default() -> Self {
        let mut q_open = [0.2; HAND_DOF];
        q_open[8] = 0.0;
        let mut lower = [0.0; HAND_DOF];
        lower[8] = -0.4;
        let mut upper = [1.4; HAND_DOF];
        upper[8] = 0.4;
        Self {
            lower,
            upper,
            q_open,
            closing_synergy: [0.5, 0.4, 0.5, 0.3, 0.4, 0.2, 0.1, 0.1, 0.0],
            action_clamp: 0.05,
            servo_gain: 0.8,
            k_phi: 0.3,
            k_spring: 2.0,
            drift_translation: 0.03,
            drift_rotation: 0.6,
            reseat_rate: 0.1,
            seat_translation_scale: 0.005,
            seat_rotation_scale: 0.1,
            max_seat_translation: 0.02,
            max_seat_rotation: 0.5,
            tool_seat: RigidTransform::from_translation(Vector3::new(0.10, 0.0, 0.0)),
        }
    }
}

/// Finger joints, hinge angle and the tool's offset from its seat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandState {
    pub q: JointVector,
    pub q_dot: JointVector,
    pub phi: f64,
    /// `[Δt, Δθ]` of the tool relative to its seat (tool frame).
    pub seat_offset: Vector6<f64>,
}

/// Per-episode physical draws that affect the hand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandConditions {
    pub gain_scale: f64,
    pub finger_friction: [f64; HAND_DOF],
}

impl Default for HandConditions {
    fn default() -> Self {
        Self {
            gain_scale: 1.0,
            finger_friction: [0.6; HAND_DOF],
        }
    }
}

/// Hand surrogate with its fixed synergy and drift matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HandModel {
    pub params: HandParams,
    synergy: JointVector,
    drift: SMatrix<f64, 6, HAND_DOF>,
}

impl HandModel {
    pub fn new(params: HandParams) -> Result<Self> {
        let w = JointVector::from(params.closing_synergy);
        if !(w.norm() > 0.0) {
            return Err(Error::Config("closing synergy must be non-zero".into()));
        }
        if params.lower.iter().zip(&params.upper).any(|(l, u)| !(l < u)) {
            return Err(Error::Config("joint limits must satisfy lower < upper".into()));
        }
        let synergy = w.normalize();
        // Fixed off-synergy drift directions; the stream seed is part of the model.
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EA7);
        let mut drift = SMatrix::<f64, 6, HAND_DOF>::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let projector = SMatrix::<f64, HAND_DOF, HAND_DOF>::identity() - synergy * synergy.transpose();
        drift *= projector;
        for r in 0..6 {
            let n = drift.row(r).norm();
            let scale = if r < 3 { params.drift_translation } else { params.drift_rotation };
            drift.row_mut(r).scale_mut(scale / n);
        }
        Ok(Self {
            params,
            synergy,
            drift,
        })
    }

    pub fn synergy(&self) -> &JointVector {
        &self.synergy
    }

    fn q_open(&self) -> JointVector {
        JointVector::from(self.params.q_open)
    }

    pub fn clamp_joints(&self, q: &JointVector) -> JointVector {
        JointVector::from_fn(|i, _| q[i].clamp(self.params.lower[i], self.params.upper[i]))
    }

    /// `exp(−m)` for the normalized seat offset magnitude `m`.
    pub fn coupling(&self, offset: &Vector6<f64>) -> f64 {
        let t = offset.fixed_rows::<3>(0).norm() / self.params.seat_translation_scale;
        let r = offset.fixed_rows::<3>(3).norm() / self.params.seat_rotation_scale;
        (-(t + r)).exp()
    }

    pub fn rest_angle(&self, spec: &HingeToolSpec, q: &JointVector, coupling: f64) -> f64 {
        let s = self.synergy.dot(&(q - self.q_open()));
        spec.clamp_angle(spec.hinge_angle_range[1] - coupling * self.params.k_phi * s)
    }

    /// Resting state at posture `q` with the tool seated.
    pub fn settled(&self, spec: &HingeToolSpec, q: JointVector) -> HandState {
        let q = self.clamp_joints(&q);
        HandState {
            q,
            q_dot: JointVector::zeros(),
            phi: self.rest_angle(spec, &q, 1.0),
            seat_offset: Vector6::zeros(),
        }
    }

    /// Tool pose in the hand base frame.
    pub fn tool_pose(&self, state: &HandState) -> RigidTransform {
        let o = &state.seat_offset;
        let offset = RigidTransform::new(
            Vector3::new(o[0], o[1], o[2]),
            UnitQuaternion::from_scaled_axis(Vector3::new(o[3], o[4], o[5])),
        );
        self.params.tool_seat.compose(&offset)
    }

    pub fn tool_configuration(&self, state: &HandState) -> ToolConfiguration {
        ToolConfiguration {
            pose: self.tool_pose(state),
            opening_angle: state.phi,
        }
    }

    /// Advances one control step. `phi_floor` is the smallest hinge angle an
    /// object between the tips allows.
    pub fn step(
        &self,
        spec: &HingeToolSpec,
        state: &HandState,
        action: &[f64],
        conditions: &HandConditions,
        phi_floor: Option<f64>,
        dt: f64,
    ) -> Result<HandState> {
        if action.len() != HAND_DOF || action.iter().any(|a| !a.is_finite()) {
            return Err(Error::input(format!("hand action must be {HAND_DOF} finite values")));
        }
        let p = &self.params;
        let a = JointVector::from_fn(|i, _| action[i].clamp(-p.action_clamp, p.action_clamp));
        let target = self.clamp_joints(&(state.q + a));
        let kappa = p.servo_gain * conditions.gain_scale;
        let q = self.clamp_joints(&(state.q + (target - state.q) * kappa));
        let q_dot = (q - state.q) / dt;

        let c = self.coupling(&state.seat_offset);
        let phi_rest = self.rest_angle(spec, &q, c);
        let phi_dot = -p.k_phi * c * self.synergy.dot(&q_dot) - p.k_spring * (state.phi - phi_rest);
        let mut phi = spec.clamp_angle(state.phi + phi_dot * dt);
        if let Some(floor) = phi_floor {
            phi = phi.max(floor);
        }

        let slip = JointVector::from_fn(|i, _| q_dot[i] * (1.0 - conditions.finger_friction[i]));
        let mut offset = state.seat_offset * (1.0 - p.reseat_rate) + self.drift * slip * dt;
        let t = offset.fixed_rows::<3>(0).norm();
        if t > p.max_seat_translation {
            offset.fixed_rows_mut::<3>(0).scale_mut(p.max_seat_translation / t);
        }
        let r = offset.fixed_rows::<3>(3).norm();
        if r > p.max_seat_rotation {
            offset.fixed_rows_mut::<3>(3).scale_mut(p.max_seat_rotation / r);
        }
        Ok(HandState {
            q,
            q_dot,
            phi,
            seat_offset: offset,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (HingeToolSpec, HandModel) {
        (HingeToolSpec::default(), HandModel::new(HandParams::default()).unwrap())
    }

    #[test]
    fn zero_action_at_rest_is_a_fixed_point() {
        let (spec, hand) = setup();
        let s = hand.settled(&spec, JointVector::from_element(0.5));
        let next = hand
            .step(&spec, &s, &[0.0; HAND_DOF], &HandConditions::default(), None, 0.05)
            .unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn closing_action_closes_monotonically() {
        let (spec, hand) = setup();
        let mut s = hand.settled(&spec, JointVector::from(hand.params.q_open));
        assert_eq!(s.phi, spec.hinge_angle_range[1]);
        let a: Vec<f64> = hand.synergy().iter().map(|w| 0.05 * w / 0.51).collect();
        for _ in 0..12 {
            let next = hand.step(&spec, &s, &a, &HandConditions::default(), None, 0.05).unwrap();
            assert!(next.phi < s.phi, "{} !< {}", next.phi, s.phi);
            s = next;
        }
        // Pure synergy motion never unseats the tool.
        assert!(s.seat_offset.norm() < 1e-12);
        for _ in 0..20 {
            s = hand.step(&spec, &s, &a, &HandConditions::default(), None, 0.05).unwrap();
        }
        assert_eq!(s.phi, spec.hinge_angle_range[0]);
    }

    #[test]
    fn off_synergy_motion_drifts_and_reseats() {
        let (spec, hand) = setup();
        let mut s = hand.settled(&spec, JointVector::from_element(0.5));
        let mut a = [0.0; HAND_DOF];
        a[6] = 0.05;
        a[7] = -0.05;
        let cond = HandConditions::default();
        for _ in 0..5 {
            s = hand.step(&spec, &s, &a, &cond, None, 0.05).unwrap();
        }
        assert!(s.seat_offset.norm() > 1e-4);
        assert!(hand.coupling(&s.seat_offset) < 1.0);
        let sticky = HandConditions {
            finger_friction: [1.0; HAND_DOF],
            ..cond
        };
        let before = s.seat_offset.norm();
        let held = hand.step(&spec, &s, &a, &sticky, None, 0.05).unwrap();
        assert!((held.seat_offset.norm() - before * (1.0 - hand.params.reseat_rate)).abs() < 1e-12);
    }

    #[test]
    fn floor_blocks_closure_and_limits_hold() {
        let (spec, hand) = setup();
        let mut s = hand.settled(&spec, JointVector::from(hand.params.q_open));
        let a = [0.05; HAND_DOF];
        for _ in 0..60 {
            s = hand.step(&spec, &s, &a, &HandConditions::default(), Some(0.2), 0.05).unwrap();
            assert!(s.phi >= 0.2);
            for i in 0..HAND_DOF {
                assert!(s.q[i] >= hand.params.lower[i] && s.q[i] <= hand.params.upper[i]);
            }
        }
        assert!(hand.step(&spec, &s, &[f64::NAN; HAND_DOF], &HandConditions::default(), None, 0.05).is_err());
    }
}
