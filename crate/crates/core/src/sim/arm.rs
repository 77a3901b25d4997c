//! Synthetic six-joint serial arm with a position-only Jacobian.

use nalgebra::{Matrix3, Matrix3x6, Matrix6x3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

/// Threshold on the smallest singular value of `J·Jᵀ`.
pub const SINGULAR_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoInverse {
    /// `Jᵀ(J·Jᵀ)⁻¹`.
    pub matrix: Matrix6x3<f64>,
    /// Condition number of `J·Jᵀ`.
    pub condition: f64,
}

/// Right pseudoinverse of a full-row-rank 3×6 Jacobian.
pub fn jacobian_pseudoinverse(j: &Matrix3x6<f64>) -> Result<PseudoInverse> {
    let jjt: Matrix3<f64> = j * j.transpose();
    let sv = jjt.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let condition = smax / smin;
    if !(smin >= SINGULAR_THRESHOLD) {
        return Err(Error::Singular {
            sigma_min: smin,
            condition,
        });
    }
    let inv = jjt.try_inverse().ok_or(Error::Singular {
        sigma_min: smin,
        condition,
    })?;
    Ok(PseudoInverse {
        matrix: j.transpose() * inv,
        condition,
    })
}

/// One revolute joint: fixed offset from the previous frame, then rotation
/// about `axis` (in the joint frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RevoluteJoint {
    pub offset: [f64; 3],
    pub axis: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerialArm {
    pub joints: [RevoluteJoint; 6],
    /// Flange offset after the last joint.
    pub flange: [f64; 3],
    pub lower: [f64; 6],
    pub upper: [f64; 6],
    /// Fixed world orientation of the hand base frame; only positions are
    /// controlled.
    pub hand_orientation: UnitQuaternion<f64>,
}

impl Default for SerialArm {
    fn default() -> Self {
        let z = [0.0, 0.0, 1.0];
        let y = [0.0, 1.0, 0.0];
        let j = |offset: [f64; 3], axis: [f64; 3]| RevoluteJoint { offset, axis };
        Self {
            joints: [
                j([0.0, 0.0, 0.12], z),
                j([0.0, 0.0, 0.0], y),
                j([0.0, 0.0, 0.36], y),
                j([0.0, 0.0, 0.30], z),
                j([0.0, 0.0, 0.0], y),
                j([0.0, 0.0, 0.08], z),
            ],
            flange: [0.0, 0.0, 0.06],
            lower: [-3.0, -2.0, -2.6, -3.0, -2.2, -3.0],
            upper: [3.0, 2.0, 2.6, 3.0, 2.2, 3.0],
            hand_orientation: hand_pointing_down(),
        }
    }
}

/// Hand base frame with its x axis along world −z and y along world +y.
pub fn hand_pointing_down() -> UnitQuaternion<f64> {
    let m = Matrix3::from_columns(&[-Vector3::z(), Vector3::y(), Vector3::x()]);
    UnitQuaternion::from_matrix(&m)
}

impl SerialArm {
    /// A bent, elbow-up posture above the workspace.
    pub fn home(&self) -> Vector6<f64> {
        Vector6::new(0.0, 0.3, 1.5, 0.0, 0.72, 0.0)
    }

    /// Joint origins and world axes, plus the flange position.
    fn chain(&self, q: &Vector6<f64>) -> ([Vector3<f64>; 6], [Vector3<f64>; 6], Vector3<f64>) {
        let mut rot = UnitQuaternion::identity();
        let mut pos = Vector3::zeros();
        let mut origins = [Vector3::zeros(); 6];
        let mut axes = [Vector3::zeros(); 6];
        for (i, joint) in self.joints.iter().enumerate() {
            pos += rot * Vector3::from(joint.offset);
            let axis = Vector3::from(joint.axis);
            origins[i] = pos;
            axes[i] = rot * axis;
            rot *= UnitQuaternion::from_scaled_axis(axis * q[i]);
        }
        pos += rot * Vector3::from(self.flange);
        (origins, axes, pos)
    }

    pub fn position(&self, q: &Vector6<f64>) -> Vector3<f64> {
        self.chain(q).2
    }

    /// Hand base pose: forward-kinematics position with the fixed orientation.
    pub fn end_effector_pose(&self, q: &Vector6<f64>) -> RigidTransform {
        RigidTransform::new(self.position(q), self.hand_orientation)
    }

    /// Linear-velocity rows of the geometric Jacobian, `a_i × (p − o_i)`.
    pub fn position_jacobian(&self, q: &Vector6<f64>) -> Matrix3x6<f64> {
        let (origins, axes, p) = self.chain(q);
        let mut j = Matrix3x6::zeros();
        for i in 0..6 {
            j.set_column(i, &axes[i].cross(&(p - origins[i])));
        }
        j
    }

    pub fn clamp(&self, q: &Vector6<f64>) -> Vector6<f64> {
        Vector6::from_fn(|i, _| q[i].clamp(self.lower[i], self.upper[i]))
    }

    /// Iterates damped pseudoinverse steps from `start` toward `target`.
    pub fn solve_position(&self, start: &Vector6<f64>, target: &Vector3<f64>, iters: usize) -> Vector6<f64> {
        let mut q = *start;
        for _ in 0..iters {
            let err = target - self.position(&q);
            if err.norm() < 1e-10 {
                break;
            }
            match jacobian_pseudoinverse(&self.position_jacobian(&q)) {
                Ok(p) => q = self.clamp(&(q + p.matrix * err)),
                Err(_) => break,
            }
        }
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn block_identity_pseudoinverse() {
        let mut j = Matrix3x6::zeros();
        j.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        let p = jacobian_pseudoinverse(&j).unwrap();
        let mut expect = Matrix6x3::zeros();
        expect.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        assert_eq!(p.matrix, expect);
        assert_eq!(p.condition, 1.0);
        let a = Vector3::new(0.1, -0.2, 0.05);
        let qd = p.matrix * a;
        assert_eq!(qd.fixed_rows::<3>(0).into_owned(), a);
    }

    #[test]
    fn random_full_rank_right_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let j = Matrix3x6::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let p = jacobian_pseudoinverse(&j).unwrap();
            assert!((j * p.matrix - Matrix3::identity()).abs().max() < 1e-9);
        }
    }

    #[test]
    fn rank_deficient_is_singular() {
        let mut j = Matrix3x6::from_fn(|r, c| (r * 6 + c) as f64 + 1.0);
        j.set_row(2, &nalgebra::RowVector6::zeros());
        assert!(matches!(jacobian_pseudoinverse(&j), Err(Error::Singular { .. })));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let arm = SerialArm::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let q = arm.home() + Vector6::from_fn(|_, _| rng.gen_range(-0.3..0.3));
            let j = arm.position_jacobian(&q);
            for i in 0..6 {
                let mut qp = q;
                let mut qm = q;
                qp[i] += 1e-6;
                qm[i] -= 1e-6;
                let fd = (arm.position(&qp) - arm.position(&qm)) / 2e-6;
                assert!((fd - j.column(i)).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn resolved_rate_tracks_commanded_velocity() {
        let arm = SerialArm::default();
        let q = arm.home();
        let a = Vector3::new(0.05, -0.02, 0.01);
        let p = jacobian_pseudoinverse(&arm.position_jacobian(&q)).unwrap();
        let dt = 1e-4;
        let moved = arm.position(&(q + p.matrix * a * dt)) - arm.position(&q);
        assert!((moved / dt - a).norm() < 1e-4);
    }

    #[test]
    fn home_reaches_workspace_and_hand_points_down() {
        let arm = SerialArm::default();
        let p = arm.position(&arm.home());
        assert!(p.z > 0.25 && p.x > 0.3, "{p:?}");
        let target = Vector3::new(0.45, 0.03, 0.33);
        let q = arm.solve_position(&arm.home(), &target, 50);
        assert!((arm.position(&q) - target).norm() < 1e-9);
        let hx = arm.hand_orientation * Vector3::x();
        assert!((hx + Vector3::z()).norm() < 1e-12);
        let pose = arm.end_effector_pose(&q);
        assert!((pose.translation - arm.position(&q)).norm() < 1e-9);
    }
}
