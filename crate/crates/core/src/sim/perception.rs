//! Point-cloud perception loop shared by both environments: synthesize the
//! tool cloud, corrupt it, register it against the canonical cloud,
//! difference poses for velocities and encode the canonicalized cloud.

use std::sync::Arc;

use rand::Rng;

use crate::cloud::{corrupt_indexed, differentiate_pose, icp_register, svd_register, CorruptionParams, PointCloud, RegistrationMode, RegistrationResult, ToolKinematicState};
use crate::encoder::{LatentState, ShapeModel};
use crate::error::Result;
use crate::geometry::{ArmSampling, HingeToolSpec, RigidTransform, ToolConfiguration};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToolReading {
    pub kinematics: ToolKinematicState,
    pub registration: RegistrationResult,
    pub latent: LatentState,
    /// Observed tool pose in the reporting frame.
    pub pose: RigidTransform,
}

#[derive(Debug, Clone)]
pub struct Perception {
    spec: HingeToolSpec,
    canonical: PointCloud,
    model: Arc<ShapeModel>,
    mode: RegistrationMode,
    frame_corruption: CorruptionParams,
    calibration: RigidTransform,
    prev_pose: Option<RigidTransform>,
    dt: f64,
}

impl Perception {
    /// `corruption` supplies per-frame noise and drop; its pose jitter is
    /// ignored here and enters through [`Perception::reset`] instead.
    pub fn new(spec: HingeToolSpec, model: Arc<ShapeModel>, mode: RegistrationMode, corruption: CorruptionParams, dt: f64) -> Self {
        Self {
            canonical: spec.canonical_cloud(),
            spec,
            model,
            mode,
            frame_corruption: corruption.without_pose_jitter(),
            calibration: RigidTransform::identity(),
            prev_pose: None,
            dt,
        }
    }

    pub fn canonical(&self) -> &PointCloud {
        &self.canonical
    }

    pub fn model(&self) -> &Arc<ShapeModel> {
        &self.model
    }

    /// Starts a new episode with camera calibration error `calibration`.
    pub fn reset(&mut self, calibration: RigidTransform) {
        self.calibration = calibration;
        self.prev_pose = None;
    }

    /// Observes the tool at world configuration `tool`; the pose and
    /// velocities are reported after mapping through `to_report`.
    pub fn observe<R: Rng + ?Sized>(&mut self, tool: &ToolConfiguration, to_report: &RigidTransform, rng: &mut R) -> Result<ToolReading> {
        let clean = self.spec.sample_cloud(tool, ArmSampling::Lattice, rng);
        let seen = self.calibration.apply_cloud(&clean);
        let (raw, kept) = corrupt_indexed(&seen, &self.frame_corruption, rng)?;
        let registration = match self.mode {
            RegistrationMode::Corresponded => svd_register(&self.canonical.select(&kept), &raw, RegistrationMode::Corresponded)?,
            RegistrationMode::NearestNeighbor => icp_register(&self.canonical, &raw, 30, 1e-12)?,
        };
        let latent = self.model.latent_of(&registration, &raw);
        let pose = to_report.compose(&registration.transform);
        let kinematics = match &self.prev_pose {
            Some(prev) => differentiate_pose(prev, &pose, self.dt)?,
            None => ToolKinematicState::default(),
        };
        self.prev_pose = Some(pose);
        Ok(ToolReading {
            kinematics,
            registration,
            latent,
            pose,
        })
    }
}
