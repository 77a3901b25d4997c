//! Low-level and high-level reward terms.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::displacement_transform;

/// Distance at which the object counts as delivered, meters.
pub const SUCCESS_DISTANCE: f64 = 0.01;
/// Tool–object or object–goal distance past which the safety penalty fires, meters.
pub const PENALTY_DISTANCE: f64 = 0.20;
/// Height of the table plane.
pub const TABLE_Z: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct RewardCoefficients {
    pub c_l1: f64,
    pub c_l2: f64,
    pub c_l3: f64,
    pub c_h1: f64,
    pub c_h2: f64,
    pub c_h3: f64,
    pub c_h4: f64,
    pub c_h5: f64,
}

impl Default for RewardCoefficients {
    fn default() -> Self {
        Self {
            c_l1: 5.0,
            c_l2: 1.0,
            c_l3: 0.1,
            c_h1: 300.0,
            c_h2: 20.0,
            c_h3: 1.0,
            c_h4: 20.0,
            c_h5: 5.0,
        }
    }
}

impl RewardCoefficients {
    pub fn validate(&self) -> Result<()> {
        let all = [self.c_l1, self.c_l2, self.c_l3, self.c_h1, self.c_h2, self.c_h3, self.c_h4, self.c_h5];
        if all.iter().all(|c| c.is_finite() && *c > 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("reward coefficients must be positive: {self:?}")))
        }
    }
}

/// `exp(−c_l1·‖z̄ − z_goal‖)`.
pub fn reward_goal(z_bar: &Vector2<f64>, z_goal: &Vector2<f64>, c_l1: f64) -> f64 {
    (-c_l1 * (z_bar - z_goal).norm()).exp()
}

/// `−c_l2·Σ_p ‖T(v̄, ω̄)p − p‖ − c_l3·‖q̇‖` over the canonical cloud.
pub fn reward_effort(
    v: &Vector3<f64>,
    omega: &Vector3<f64>,
    q_dot: &[f64],
    canonical: &PointCloud,
    c_l2: f64,
    c_l3: f64,
    dt: f64,
) -> f64 {
    let t = displacement_transform(v, omega, dt);
    let motion: f64 = canonical.points().iter().map(|p| (t.apply(p) - p).norm()).sum();
    let speed = q_dot.iter().map(|x| x * x).sum::<f64>().sqrt();
    -c_l2 * motion - c_l3 * speed
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowReward {
    pub goal: f64,
    pub effort: f64,
    /// `goal + effort`, or `goal` alone when the effort term is disabled.
    pub total: f64,
}

/// Low-level reward from the smoothed tool entries of an observation.
pub fn reward_low(
    obs: &super::LowObservation,
    z_goal: &Vector2<f64>,
    coeffs: &RewardCoefficients,
    canonical: &PointCloud,
    dt: f64,
    effort_enabled: bool,
) -> LowReward {
    let goal = reward_goal(&obs.z_bar(), z_goal, coeffs.c_l1);
    let effort = reward_effort(&obs.v_bar(), &obs.omega_bar(), obs.q_dot(), canonical, coeffs.c_l2, coeffs.c_l3, dt);
    LowReward {
        goal,
        effort,
        total: if effort_enabled { goal + effort } else { goal },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HighReward {
    pub sparse: f64,
    pub dense: f64,
    pub penalty: f64,
    pub total: f64,
    pub success: bool,
    pub penalized: bool,
}

/// Sparse, dense and penalty terms for tool position `t_tool`, object,
/// target and end-effector height, all in world coordinates.
pub fn reward_high(
    t_tool: &Vector3<f64>,
    p_obj: &Vector3<f64>,
    p_tgt: &Vector3<f64>,
    end_effector_z: f64,
    coeffs: &RewardCoefficients,
) -> HighReward {
    let d_tool = (t_tool - p_obj).norm();
    let d_goal = (p_obj - p_tgt).norm();
    let success = d_goal < SUCCESS_DISTANCE;
    let penalized = d_tool > PENALTY_DISTANCE || d_goal > PENALTY_DISTANCE || end_effector_z < TABLE_Z;
    let sparse = if success { coeffs.c_h1 } else { 0.0 };
    let dense = (-coeffs.c_h2 * d_tool).exp() + coeffs.c_h3 * (-coeffs.c_h4 * d_goal).exp();
    let penalty = if penalized { -coeffs.c_h5 } else { 0.0 };
    HighReward {
        sparse,
        dense,
        penalty,
        total: sparse + dense + penalty,
        success,
        penalized,
    }
}
