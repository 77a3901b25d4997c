//! The privileged heuristic on the high-level environment, with and without
//! domain randomization.

use std::sync::Arc;

use hingegrasp::encoder::{EncoderArch, ShapeModel};
use hingegrasp::gcrl::evaluate;
use hingegrasp::geometry::HingeToolSpec;
use hingegrasp::heuristic::{HeuristicConfig, HeuristicController};
use hingegrasp::sim::{DomainRandomization, HandModel, HandParams, HighEnvConfig, HighLevelEnv, RewardCoefficients, SerialArm};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hingegrasp::Result<()> {
    let spec = HingeToolSpec::default();
    let model = Arc::new(ShapeModel::init_for_tool(&EncoderArch::default(), &spec, &mut ChaCha8Rng::seed_from_u64(0)));
    for (name, dr) in [("noise-free", DomainRandomization::noise_free()), ("randomized", DomainRandomization::default())] {
        let mut env = HighLevelEnv::new(
            spec.clone(),
            HandModel::new(HandParams::default())?,
            SerialArm::default(),
            model.clone(),
            None,
            RewardCoefficients::default(),
            dr,
            HighEnvConfig::default(),
            11,
        )?;
        let mut h = HeuristicController::new(HeuristicConfig::default());
        let (summary, _) = evaluate(&mut env, &mut h, 30)?;
        println!(
            "{name:<11} success {:.0}%  mean steps {:.1}  failures {:?}",
            100.0 * summary.success_rate,
            summary.mean_steps,
            summary.failures
        );
    }
    Ok(())
}
