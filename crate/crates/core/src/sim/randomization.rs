//! Per-episode domain randomization and observation latency.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::hand::{HandConditions, HAND_DOF};
use crate::cloud::{pose_jitter, CorruptionParams};
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct DomainRandomization {
    /// Observation latency is drawn from `0..=obs_delay_max` steps.
    pub obs_delay_max: usize,
    pub control_gain_range: [f64; 2],
    pub finger_friction_range: [f64; 2],
    pub high_friction_range: [f64; 2],
    pub object_pos_noise_sigma: f64,
    /// Per-frame noise and drop; the pose jitter is drawn once per episode
    /// as a camera calibration error.
    pub corruption: CorruptionParams,
    /// Center of the object spawn area on the platform, world meters.
    pub spawn_center: [f64; 3],
    /// Side lengths of the spawn rectangle in x and y.
    pub spawn_area: [f64; 2],
    pub goal_height: f64,
    pub object_radius_range: [f64; 2],
}

impl Default for DomainRandomization {
    fn default() -> Self {
        Self {
            obs_delay_max: 3,
            control_gain_range: [0.6, 1.5],
            finger_friction_range: [0.2, 1.0],
            high_friction_range: [1.0, 5.0],
            object_pos_noise_sigma: 0.002,
            corruption: CorruptionParams::simulation(),
            spawn_center: [0.45, 0.0, 0.20],
            spawn_area: [0.10, 0.10],
            goal_height: 0.05,
            object_radius_range: [0.0075, 0.0125],
        }
    }
}

impl DomainRandomization {
    /// No noise, no latency and nominal physics; spawn positions and object
    /// radii still vary.
    pub fn noise_free() -> Self {
        Self {
            obs_delay_max: 0,
            control_gain_range: [1.0, 1.0],
            finger_friction_range: [0.6, 0.6],
            high_friction_range: [3.0, 3.0],
            object_pos_noise_sigma: 0.0,
            corruption: CorruptionParams::NONE,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let range_ok = |r: &[f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        let ok = range_ok(&self.control_gain_range)
            && self.control_gain_range[0] > 0.0
            && range_ok(&self.finger_friction_range)
            && self.finger_friction_range[0] >= 0.0
            && self.finger_friction_range[1] <= 1.0
            && range_ok(&self.high_friction_range)
            && self.high_friction_range[0] >= 0.0
            && range_ok(&self.object_radius_range)
            && self.object_radius_range[0] > 0.0
            && self.object_pos_noise_sigma >= 0.0
            && self.spawn_area.iter().all(|s| *s >= 0.0)
            && self.goal_height.is_finite();
        if !ok {
            return Err(Error::Config(format!("invalid domain randomization {self:?}")));
        }
        self.corruption.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let dr: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        dr.validate()?;
        Ok(dr)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Everything drawn at the start of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDraw {
    pub obs_delay: usize,
    pub hand: HandConditions,
    pub high_friction: f64,
    /// Camera calibration error applied to everything the camera sees.
    pub calibration: RigidTransform,
    pub object_position: Vector3<f64>,
    pub object_radius: f64,
}

impl EpisodeDraw {
    pub fn target_position(&self, dr: &DomainRandomization) -> Vector3<f64> {
        self.object_position + Vector3::new(0.0, 0.0, dr.goal_height)
    }
}

fn draw<R: Rng + ?Sized>(r: &[f64; 2], rng: &mut R) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..=r[1])
    }
}

/// Draws one episode. The calibration jitter pivots about the spawn center.
pub fn randomize_episode<R: Rng + ?Sized>(dr: &DomainRandomization, rng: &mut R) -> EpisodeDraw {
    let obs_delay = if dr.obs_delay_max == 0 {
        0
    } else {
        rng.gen_range(0..=dr.obs_delay_max)
    };
    let gain_scale = draw(&dr.control_gain_range, rng);
    let mut finger_friction = [0.0; HAND_DOF];
    for f in &mut finger_friction {
        *f = draw(&dr.finger_friction_range, rng);
    }
    let high_friction = draw(&dr.high_friction_range, rng);
    let center = Vector3::from(dr.spawn_center);
    let calibration = pose_jitter(&dr.corruption, &center, rng);
    let half = [dr.spawn_area[0] / 2.0, dr.spawn_area[1] / 2.0];
    let object_position = center + Vector3::new(draw(&[-half[0], half[0]], rng), draw(&[-half[1], half[1]], rng), 0.0);
    let object_radius = draw(&dr.object_radius_range, rng);
    EpisodeDraw {
        obs_delay,
        hand: HandConditions {
            gain_scale,
            finger_friction,
        },
        high_friction,
        calibration,
        object_position,
        object_radius,
    }
}

/// Fixed-latency buffer: `push` returns the value from `delay` pushes ago,
/// or the oldest value while the buffer is still filling.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayLine<T> {
    delay: usize,
    buf: VecDeque<T>,
}

impl<T: Clone> DelayLine<T> {
    pub fn new(delay: usize) -> Self {
        Self {
            delay,
            buf: VecDeque::with_capacity(delay + 1),
        }
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn push(&mut self, value: T) -> T {
        self.buf.push_back(value);
        if self.buf.len() > self.delay + 1 {
            self.buf.pop_front();
        }
        self.buf.front().cloned().expect("just pushed")
    }

    pub fn clear(&mut self) {
        self.buf.clear();
    }
}
