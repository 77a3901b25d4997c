//! Phase-based controller with privileged access (true tooltips, direct
//! hinge command), and generation of relabeled high-level transitions.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcrl::{apply, Command, HighActionMap, HighLevelPolicy, Source, Transition};
use crate::geometry::HingeToolSpec;
use crate::sim::{HighAction, HighLevelEnv, HighObservation, PrivilegedObservation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Approach,
    Close,
    Transport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct HeuristicConfig {
    /// Proportional gain on the tip-midpoint error, 1/s.
    pub approach_gain: f64,
    /// Midpoint error below which the approach ends, m.
    pub approach_threshold: f64,
    /// Height above the object the midpoint visits before descending, m.
    pub hover_offset: f64,
    /// Hinge decrement per step while closing, rad.
    pub close_rate: f64,
    /// Closing past the diameter by more than this counts as a missed grasp, m.
    pub grasp_aperture_tolerance: f64,
    /// Aperture beyond the diameter restored before a new approach, m.
    pub reopen_margin: f64,
    /// Proportional gain while carrying the object, 1/s.
    pub lift_gain: f64,
    pub max_speed: f64,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            approach_gain: 2.0,
            approach_threshold: 0.002,
            hover_offset: 0.01,
            close_rate: 0.02,
            grasp_aperture_tolerance: 0.001,
            reopen_margin: 0.006,
            lift_gain: 2.0,
            max_speed: 0.2,
        }
    }
}

impl HeuristicConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.approach_gain,
            self.approach_threshold,
            self.close_rate,
            self.grasp_aperture_tolerance,
            self.reopen_margin,
            self.lift_gain,
            self.max_speed,
        ];
        if positive.iter().all(|v| v.is_finite() && *v > 0.0) && self.hover_offset >= 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("heuristic gains and thresholds must be positive: {self:?}")))
        }
    }
}

fn clamp_speed(v: Vector3<f64>, max: f64) -> Vector3<f64> {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

/// One control decision. Returns `(a_arm, hinge_command, next_phase)`.
///
/// The hinge only closes while the tips are centred on the object. A grasp
/// that misses or slips sends the controller back to the approach with the
/// tweezer reopened.
pub fn heuristic_step(
    world: &PrivilegedObservation,
    spec: &HingeToolSpec,
    phase: Phase,
    config: &HeuristicConfig,
) -> (Vector3<f64>, f64, Phase) {
    let mid = world.tooltips.midpoint();
    let aperture = world.tooltips.distance();
    let diameter = 2.0 * world.radius;
    match phase {
        Phase::Approach => {
            let error = world.p_obj - mid;
            let open = world.phi.max(spec.angle_for_aperture(diameter + config.reopen_margin));
            if error.norm() < config.approach_threshold && aperture > diameter {
                return heuristic_step(world, spec, Phase::Close, config);
            }
            let horizontal = Vector3::new(error.x, error.y, 0.0).norm();
            let target = if horizontal > config.approach_threshold {
                world.p_obj + Vector3::new(0.0, 0.0, config.hover_offset)
            } else {
                world.p_obj
            };
            let a = clamp_speed((target - mid) * config.approach_gain, config.max_speed);
            (a, open, Phase::Approach)
        }
        Phase::Close => {
            if world.grasped {
                return heuristic_step(world, spec, Phase::Transport, config);
            }
            if aperture < diameter - config.grasp_aperture_tolerance {
                return heuristic_step(world, spec, Phase::Approach, config);
            }
            let error = world.p_obj - mid;
            let a = clamp_speed(error * config.approach_gain, config.max_speed);
            let hinge = if error.norm() < config.approach_threshold {
                world.phi - config.close_rate
            } else {
                world.phi
            };
            (a, hinge, Phase::Close)
        }
        Phase::Transport => {
            if !world.grasped {
                return heuristic_step(world, spec, Phase::Approach, config);
            }
            let a = clamp_speed((world.p_tgt - world.p_obj) * config.lift_gain, config.max_speed);
            (a, spec.angle_for_aperture(diameter) - config.close_rate, Phase::Transport)
        }
    }
}

/// The heuristic as a [`HighLevelPolicy`] driving the hinge directly.
#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicController {
    pub config: HeuristicConfig,
    pub phase: Phase,
}

impl HeuristicController {
    pub fn new(config: HeuristicConfig) -> Self {
        Self {
            config,
            phase: Phase::Approach,
        }
    }
}

impl HighLevelPolicy for HeuristicController {
    fn reset(&mut self) {
        self.phase = Phase::Approach;
    }

    fn command(&mut self, env: &HighLevelEnv, _: &HighObservation) -> Result<Command> {
        let (a_arm, hinge_angle, next) = heuristic_step(&env.privileged(), env.spec(), self.phase, &self.config);
        self.phase = next;
        Ok(Command::Privileged { a_arm, hinge_angle })
    }
}

/// Rolls the heuristic out through the normal observation pipeline and
/// relabels each step: the action stored for state `o_t` is the latent seen
/// in `o_{t+1}` together with the arm command that led there. An episode of
/// `T` steps yields `T − 1` transitions because the reset observation carries
/// no arm history and is skipped.
pub fn generate_privileged_buffer(
    env: &mut HighLevelEnv,
    map: &HighActionMap,
    config: &HeuristicConfig,
    episodes: usize,
) -> Result<Vec<Transition>> {
    config.validate()?;
    let mut out = Vec::new();
    let mut controller = HeuristicController::new(config.clone());
    for _ in 0..episodes {
        let mut obs = env.reset()?;
        controller.reset();
        let mut prev: Option<HighObservation> = None;
        loop {
            let command = controller.command(env, &obs)?;
            let s = apply(env, &command)?;
            let Command::Privileged { a_arm, .. } = command else {
                unreachable!("the heuristic drives the hinge directly")
            };
            if let Some(p) = prev {
                let action = HighAction {
                    z_goal: s.observation.z(),
                    a_arm,
                };
                out.push(Transition {
                    state: p.as_slice().to_vec(),
                    action: map.normalize(&action),
                    reward: s.reward.total,
                    next_state: s.observation.as_slice().to_vec(),
                    goal: None,
                    done: s.terminal,
                    source: Source::Privileged,
                });
            }
            prev = Some(s.observation);
            obs = s.observation;
            if s.done() {
                break;
            }
        }
    }
    Ok(out)
}


#[cfg(test)]
mod rollout_tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::encoder::{EncoderArch, ShapeModel};
    use crate::gcrl::evaluate;
    use crate::sim::{DomainRandomization, HandModel, HandParams, HighEnvConfig, RewardCoefficients, SerialArm};

    fn env(dr: DomainRandomization, seed: u64) -> (HighLevelEnv, HighActionMap) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let arch = EncoderArch {
            point_layers: vec![8, 8],
            decoder_hidden: vec![8],
            output_points: 8,
        };
        let spec = HingeToolSpec::default();
        let model = Arc::new(ShapeModel::init_for_tool(&arch, &spec, &mut rng));
        let map = HighActionMap::new(&model, &spec, &dr.corruption, 11);
        let e = HighLevelEnv::new(
            spec,
            HandModel::new(HandParams::default()).unwrap(),
            SerialArm::default(),
            model,
            None,
            RewardCoefficients::default(),
            dr,
            HighEnvConfig::default(),
            seed,
        )
        .unwrap();
        (e, map)
    }

    #[test]
    fn noise_free_heuristic_succeeds() {
        let (mut e, _) = env(DomainRandomization::noise_free(), 1);
        let mut h = HeuristicController::new(HeuristicConfig::default());
        let (summary, outcomes) = evaluate(&mut e, &mut h, 10).unwrap();
        assert!(summary.success_rate >= 0.9, "{summary:?} {outcomes:?}");
        assert!(outcomes.iter().all(|o| o.steps <= 200));
    }

    #[test]
    fn relabeled_buffer() {
        let (mut e, map) = env(DomainRandomization::default(), 2);
        let steps_before = {
            let mut h = HeuristicController::new(HeuristicConfig::default());
            let (s, _) = evaluate(&mut e, &mut h, 1).unwrap();
            s.mean_steps as usize
        };
        let (mut e, map2) = env(DomainRandomization::default(), 2);
        assert_eq!(map, map2);
        let buf = generate_privileged_buffer(&mut e, &map, &HeuristicConfig::default(), 1).unwrap();
        assert_eq!(buf.len(), steps_before - 1);
        for w in buf.windows(2) {
            let z = HighObservation(w[0].next_state.clone().try_into().unwrap()).z();
            assert_eq!(w[0].action[..2], map.normalize(&HighAction { z_goal: z, a_arm: Vector3::zeros() })[..2]);
            assert_eq!(w[0].next_state, w[1].state);
        }
        assert!(buf.iter().all(|t| t.source == Source::Privileged));
        assert!(buf.iter().map(|t| t.reward).sum::<f64>() > 0.0);
    }
}
