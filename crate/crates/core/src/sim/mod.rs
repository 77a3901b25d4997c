//! Kinematic surrogate of the hand, tool, object and arm, with the low-level
//! and high-level goal-conditioned environments built on top of it.

mod arm;
mod hand;
mod high;
mod low;
mod perception;
mod randomization;
mod rewards;
pub mod trace;

pub use arm::{hand_pointing_down, jacobian_pseudoinverse, PseudoInverse, RevoluteJoint, SerialArm, SINGULAR_THRESHOLD};
pub use hand::{HandConditions, HandModel, HandParams, HandState, JointVector, HAND_DOF};
pub use high::{
    FailureKind, HighAction, HighEnvConfig, HighLevelEnv, HighStep, LowLevelController, ObjectState, PrivilegedObservation,
};
pub use low::{LowEnvConfig, LowLevelEnv, LowStep};
pub use perception::{Perception, ToolReading};
pub use randomization::{randomize_episode, DelayLine, DomainRandomization, EpisodeDraw};
pub use rewards::{
    reward_effort, reward_goal, reward_high, reward_low, HighReward, LowReward, RewardCoefficients, PENALTY_DISTANCE,
    SUCCESS_DISTANCE, TABLE_Z,
};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::cloud::{ema, EMA_ALPHA};

/// Control period, seconds (20 Hz).
pub const DT: f64 = 0.05;
pub const LOW_OBS_DIM: usize = 26;
pub const HIGH_OBS_DIM: usize = 14;
pub const HIGH_ACTION_DIM: usize = 5;

/// `[q(9), q̇(9), v̄(3), ω̄(3), z̄(2)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowObservation(pub [f64; LOW_OBS_DIM]);

impl LowObservation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn q(&self) -> &[f64] {
        &self.0[0..9]
    }

    pub fn q_dot(&self) -> &[f64] {
        &self.0[9..18]
    }

    pub fn v_bar(&self) -> Vector3<f64> {
        Vector3::new(self.0[18], self.0[19], self.0[20])
    }

    pub fn omega_bar(&self) -> Vector3<f64> {
        Vector3::new(self.0[21], self.0[22], self.0[23])
    }

    pub fn z_bar(&self) -> Vector2<f64> {
        Vector2::new(self.0[24], self.0[25])
    }
}

/// `[t̄(3), θ̄(3), z(2), p_obj(3), p_tgt(3)]`, positions in the hand base frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HighObservation(pub [f64; HIGH_OBS_DIM]);

impl HighObservation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn t_bar(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn theta_bar(&self) -> Vector3<f64> {
        Vector3::new(self.0[3], self.0[4], self.0[5])
    }

    pub fn z(&self) -> Vector2<f64> {
        Vector2::new(self.0[6], self.0[7])
    }

    pub fn p_obj(&self) -> Vector3<f64> {
        Vector3::new(self.0[8], self.0[9], self.0[10])
    }

    pub fn p_tgt(&self) -> Vector3<f64> {
        Vector3::new(self.0[11], self.0[12], self.0[13])
    }
}

/// Per-entry scales that bring observations to roughly unit range before
/// they enter a network, after the matching offset is subtracted.
pub const LOW_OBS_SCALE: [f64; LOW_OBS_DIM] = [
    1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, // q
    1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, // q̇
    20.0, 20.0, 20.0, // v̄
    2.0, 2.0, 2.0, // ω̄
    1.0, 1.0, // z̄
];

/// Positions are centred on where the tool, object and target sit in the
/// hand frame during a nominal grasp, so centimetre offsets stay visible.
pub const HIGH_OBS_OFFSET: [f64; HIGH_OBS_DIM] = [
    0.105, 0.0, 0.0, // t̄
    0.0, 0.0, 0.0, // θ̄
    0.0, 0.0, // z
    0.105, 0.0, 0.0, // p_obj
    0.08, 0.0, 0.0, // p_tgt
];

pub const HIGH_OBS_SCALE: [f64; HIGH_OBS_DIM] = [
    50.0, 50.0, 50.0, // t̄
    1.0, 1.0, 1.0, // θ̄
    1.0, 1.0, // z
    50.0, 50.0, 50.0, // p_obj
    50.0, 50.0, 50.0, // p_tgt
];

/// Recursive EMA of a fixed-length stream; the first sample initializes it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Smoother {
    state: Option<Vec<f64>>,
}

impl Smoother {
    pub fn reset(&mut self) {
        self.state = None;
    }

    pub fn update(&mut self, raw: &[f64]) -> Vec<f64> {
        let next = match &self.state {
            Some(prev) => ema(prev, raw, EMA_ALPHA).expect("fixed-length stream"),
            None => raw.to_vec(),
        };
        self.state = Some(next.clone());
        next
    }
}

/// Projects `z` onto the polyline through `curve`.
pub fn project_onto_curve(z: &Vector2<f64>, curve: &[Vector2<f64>]) -> Vector2<f64> {
    match curve {
        [] => *z,
        [only] => *only,
        _ => curve
            .windows(2)
            .map(|seg| {
                let (a, b) = (seg[0], seg[1]);
                let d = b - a;
                let len2 = d.norm_squared();
                let s = if len2 > 0.0 { ((z - a).dot(&d) / len2).clamp(0.0, 1.0) } else { 0.0 };
                a + d * s
            })
            .min_by(|p, q| (p - z).norm_squared().total_cmp(&(q - z).norm_squared()))
            .expect("at least one segment"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoother_matches_ema() {
        let mut s = Smoother::default();
        assert_eq!(s.update(&[1.0, 2.0]), vec![1.0, 2.0]);
        let out = s.update(&[3.0, 0.0]);
        assert!((out[0] - (0.9 * 3.0 + 0.1 * 1.0)).abs() < 1e-12);
        assert!((out[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn curve_projection() {
        let curve = [Vector2::new(0.0, 0.0), Vector2::new(1.0, 0.0), Vector2::new(1.0, 1.0)];
        assert_eq!(project_onto_curve(&Vector2::new(0.5, -2.0), &curve), Vector2::new(0.5, 0.0));
        assert_eq!(project_onto_curve(&Vector2::new(3.0, 0.5), &curve), Vector2::new(1.0, 0.5));
        assert_eq!(project_onto_curve(&Vector2::new(-1.0, -1.0), &curve), Vector2::new(0.0, 0.0));
    }
}
