//! Rolls out the low-level hand environment with random finger commands and
//! prints the reward decomposition.

use std::sync::Arc;

use hingegrasp::encoder::{EncoderArch, ShapeModel};
use hingegrasp::geometry::HingeToolSpec;
use hingegrasp::sim::{DomainRandomization, HandModel, HandParams, LowEnvConfig, LowLevelEnv, RewardCoefficients};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> hingegrasp::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = HingeToolSpec::default();
    let model = Arc::new(ShapeModel::init_for_tool(&EncoderArch::default(), &spec, &mut rng));
    let hand = HandModel::new(HandParams::default())?;
    let clamp = hand.params.action_clamp;
    let mut env = LowLevelEnv::new(spec, hand, model, RewardCoefficients::default(), DomainRandomization::default(), LowEnvConfig::default(), 7)?;
    env.reset()?;
    println!("goal {:?}", env.goal().as_slice());
    for t in 0..20 {
        let action: Vec<f64> = (0..9).map(|_| rng.gen_range(-clamp..clamp)).collect();
        let s = env.step(&action)?;
        let z = s.observation.z_bar();
        println!(
            "{t:>2}  phi {:.3}  z [{:+.3}, {:+.3}]  goal {:+.3}  effort {:+.3}  total {:+.3}",
            env.state().phi,
            z.x,
            z.y,
            s.reward.goal,
            s.reward.effort,
            s.reward.total
        );
    }
    Ok(())
}
