//! Rigid transforms and the hinged-tweezer tool model.
//!
//! The tool frame has its origin at the tip midpoint of the tool at the
//! canonical hinge angle, `+x` along the closed tool axis towards the tips,
//! and the two arms opening symmetrically in the `xy` plane. Arm width runs
//! along `z`. The hinge pivot sits at `(−L·cos(φ_c/2), 0, 0)`.

use nalgebra::{Matrix3, Point3, Rotation3, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// SE(3) element: `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self {
            translation,
            rotation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(translation, UnitQuaternion::identity())
    }

    pub fn from_rotation_matrix(translation: Vector3<f64>, rotation: &Matrix3<f64>) -> Self {
        let rot = Rotation3::from_matrix_unchecked(*rotation);
        Self::new(translation, UnitQuaternion::from_rotation_matrix(&rot))
    }

    /// Extrinsic X-Y-Z Euler angles (roll about x, then pitch about y, then yaw about z).
    pub fn from_euler_xyz(translation: Vector3<f64>, euler: Vector3<f64>) -> Self {
        Self::new(
            translation,
            UnitQuaternion::from_euler_angles(euler.x, euler.y, euler.z),
        )
    }

    /// Euler angles with pitch in `[−π/2, π/2]`. Near gimbal lock roll and yaw
    /// are not individually meaningful; only their combination is.
    pub fn euler_xyz(&self) -> Vector3<f64> {
        let (r, p, y) = self.rotation.euler_angles();
        Vector3::new(r, p, y)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            translation: self.rotation * other.translation + self.translation,
            rotation: self.rotation * other.rotation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv = self.rotation.inverse();
        RigidTransform {
            translation: -(inv * self.translation),
            rotation: inv,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.apply(&p.coords))
    }

    pub fn apply_cloud(&self, cloud: &PointCloud) -> PointCloud {
        let m = self.rotation_matrix();
        PointCloud::from_points_unchecked(
            cloud
                .points()
                .iter()
                .map(|p| m * p + self.translation)
                .collect(),
        )
    }

    /// Pose after moving for `dt` with linear velocity `v` and angular
    /// velocity `ω`, both expressed in the parent frame.
    pub fn displaced(&self, v: &Vector3<f64>, omega: &Vector3<f64>, dt: f64) -> RigidTransform {
        RigidTransform {
            translation: self.translation + v * dt,
            rotation: UnitQuaternion::from_scaled_axis(omega * dt) * self.rotation,
        }
    }

    /// Rotation Frobenius distance and translation distance.
    pub fn distance(&self, other: &RigidTransform) -> (f64, f64) {
        (
            (self.rotation_matrix() - other.rotation_matrix()).norm(),
            (self.translation - other.translation).norm(),
        )
    }
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    translation: [f64; 3],
    euler_xyz: [f64; 3],
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let e = self.euler_xyz();
        TransformRepr {
            translation: self.translation.into(),
            euler_xyz: [e.x, e.y, e.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = TransformRepr::deserialize(d)?;
        Ok(RigidTransform::from_euler_xyz(
            r.translation.into(),
            r.euler_xyz.into(),
        ))
    }
}

/// Transform for moving with `(v, ω)` over `dt`: translation `v·dt`, rotation `exp(ω·dt)`.
pub fn displacement_transform(v: &Vector3<f64>, omega: &Vector3<f64>, dt: f64) -> RigidTransform {
    RigidTransform::identity().displaced(v, omega, dt)
}

/// Dimensions of a two-arm hinged tweezer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HingeToolSpec {
    pub arm_length: f64,
    pub arm_half_width: f64,
    pub hinge_angle_range: [f64; 2],
    pub canonical_angle: f64,
    pub points_per_arm: usize,
    /// Length of bare arm near the pivot that carries no sampled points.
    pub thumb_slot_offset: f64,
}

impl Default for HingeToolSpec {
    fn default() -> Self {
        Self {
            arm_length: 0.12,
            arm_half_width: 0.004,
            hinge_angle_range: [0.1, 0.5],
            canonical_angle: 0.25,
            points_per_arm: 128,
            thumb_slot_offset: 0.02,
        }
    }
}

/// Arm-local lattice is `ACROSS_ROWS` points across the width, the rest along the length.
const ACROSS_ROWS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArmSampling {
    /// Fixed material points; index `i` is the same point in every cloud.
    Lattice,
    /// Independent uniform samples over each arm surface.
    Uniform,
}

impl HingeToolSpec {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.hinge_angle_range;
        let ok = self.arm_length > 0.0
            && self.arm_half_width >= 0.0
            && lo >= 0.0
            && lo < hi
            && hi < std::f64::consts::FRAC_PI_2
            && (lo..=hi).contains(&self.canonical_angle)
            && self.points_per_arm >= 8
            && (0.0..self.arm_length).contains(&self.thumb_slot_offset);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("{self:?}")))
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tool spec serializes")
    }

    pub fn num_points(&self) -> usize {
        2 * self.points_per_arm
    }

    pub fn clamp_angle(&self, phi: f64) -> f64 {
        phi.clamp(self.hinge_angle_range[0], self.hinge_angle_range[1])
    }

    fn pivot(&self) -> Vector3<f64> {
        Vector3::new(-self.arm_length * (self.canonical_angle / 2.0).cos(), 0.0, 0.0)
    }

    /// Unit direction of arm `side` (+1 or −1) at hinge angle `phi`.
    fn arm_dir(phi: f64, side: f64) -> Vector3<f64> {
        Vector3::new((phi / 2.0).cos(), side * (phi / 2.0).sin(), 0.0)
    }

    /// Point on an arm at fractional length `s ∈ [0,1]` and fractional width `u ∈ [−1,1]`.
    fn arm_point(&self, phi: f64, side: f64, s: f64, u: f64) -> Vector3<f64> {
        let along = self.thumb_slot_offset + s * (self.arm_length - self.thumb_slot_offset);
        self.pivot() + Self::arm_dir(phi, side) * along + Vector3::new(0.0, 0.0, u * self.arm_half_width)
    }

    /// Lattice coordinates `(s, u)` of point `k` on one arm.
    fn lattice_coords(&self, k: usize) -> (f64, f64) {
        let rows = ACROSS_ROWS;
        let along_count = self.points_per_arm.div_ceil(rows);
        let (a, c) = (k / rows, k % rows);
        let s = if along_count > 1 {
            a as f64 / (along_count - 1) as f64
        } else {
            1.0
        };
        let u = -1.0 + 2.0 * c as f64 / (rows - 1) as f64;
        (s, u)
    }

    /// Tool-frame points at hinge angle `phi`, arm `+y` first, then arm `−y`.
    pub fn local_points<R: Rng + ?Sized>(
        &self,
        phi: f64,
        sampling: ArmSampling,
        rng: &mut R,
    ) -> Vec<Vector3<f64>> {
        let mut pts = Vec::with_capacity(self.num_points());
        for side in [1.0, -1.0] {
            for k in 0..self.points_per_arm {
                let (s, u) = match sampling {
                    ArmSampling::Lattice => self.lattice_coords(k),
                    ArmSampling::Uniform => (rng.gen_range(0.0..=1.0), rng.gen_range(-1.0..=1.0)),
                };
                pts.push(self.arm_point(phi, side, s, u));
            }
        }
        pts
    }

    /// Identity-pose lattice cloud at the canonical angle.
    pub fn canonical_cloud(&self) -> PointCloud {
        let pts = self.local_points(self.canonical_angle, ArmSampling::Lattice, &mut NoRng);
        PointCloud::from_points_unchecked(pts)
    }

    /// Cloud of the tool in configuration `config`, expressed in the parent frame.
    pub fn sample_cloud<R: Rng + ?Sized>(
        &self,
        config: &ToolConfiguration,
        sampling: ArmSampling,
        rng: &mut R,
    ) -> PointCloud {
        let local = PointCloud::from_points_unchecked(self.local_points(config.opening_angle, sampling, rng));
        config.pose.apply_cloud(&local)
    }

    /// Tip-to-tip distance: `2·L·sin(φ/2)`.
    pub fn aperture(&self, phi: f64) -> Result<f64> {
        let [lo, hi] = self.hinge_angle_range;
        if !(lo..=hi).contains(&phi) {
            return Err(Error::OutOfRange {
                what: "hinge angle",
                value: phi,
                lo,
                hi,
            });
        }
        Ok(2.0 * self.arm_length * (phi / 2.0).sin())
    }

    /// Hinge angle that produces aperture `a` (clamped to the hinge range).
    pub fn angle_for_aperture(&self, a: f64) -> f64 {
        let s = (a / (2.0 * self.arm_length)).clamp(0.0, 1.0);
        self.clamp_angle(2.0 * s.asin())
    }

    pub fn tooltips(&self, config: &ToolConfiguration) -> TooltipPair {
        let phi = config.opening_angle;
        let tip = |side: f64| self.pivot() + Self::arm_dir(phi, side) * self.arm_length;
        TooltipPair {
            tip_a: config.pose.apply(&tip(1.0)),
            tip_b: config.pose.apply(&tip(-1.0)),
        }
    }
}

/// Rng stand-in for lattice sampling, which never draws.
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("lattice sampling draws no randomness")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("lattice sampling draws no randomness")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("lattice sampling draws no randomness")
    }
    fn try_fill_bytes(&mut self, _: &mut [u8]) -> std::result::Result<(), rand::Error> {
        unreachable!("lattice sampling draws no randomness")
    }
}

/// Pose of the tool in the hand base frame plus its hinge opening.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolConfiguration {
    pub pose: RigidTransform,
    pub opening_angle: f64,
}

impl ToolConfiguration {
    pub fn new(spec: &HingeToolSpec, pose: RigidTransform, opening_angle: f64) -> Self {
        Self {
            pose,
            opening_angle: spec.clamp_angle(opening_angle),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TooltipPair {
    pub tip_a: Vector3<f64>,
    pub tip_b: Vector3<f64>,
}

impl TooltipPair {
    pub fn midpoint(&self) -> Vector3<f64> {
        (self.tip_a + self.tip_b) * 0.5
    }

    pub fn distance(&self) -> f64 {
        (self.tip_a - self.tip_b).norm()
    }
}
