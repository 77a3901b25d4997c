//! Short soft actor-critic run on the low-level environment.
//! `cargo run --release --example sac_low -- 20000`

use std::sync::Arc;

use hingegrasp::encoder::{EncoderArch, ShapeModel};
use hingegrasp::gcrl::{train_low, SacConfig};
use hingegrasp::geometry::HingeToolSpec;
use hingegrasp::sim::{DomainRandomization, HandModel, HandParams, LowEnvConfig, LowLevelEnv, RewardCoefficients};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hingegrasp::Result<()> {
    let steps = std::env::args().nth(1).map_or(3000, |s| s.parse().expect("step count"));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = HingeToolSpec::default();
    let model = Arc::new(ShapeModel::init_for_tool(&EncoderArch::default(), &spec, &mut rng));
    let mut env = LowLevelEnv::new(
        spec,
        HandModel::new(HandParams::default())?,
        model,
        RewardCoefficients::default(),
        DomainRandomization::default(),
        LowEnvConfig::default(),
        5,
    )?;
    let config = SacConfig {
        steps,
        warmup_steps: steps / 10,
        batch_size: 64,
        hidden: vec![64, 64],
        log_interval: (steps / 10).max(1),
        ..SacConfig::default()
    };
    let trained = train_low(&mut env, &config, &mut rng, |r| {
        println!(
            "step {:>6}  episodes {:>4}  success {:.2}  goal {:+.3}  effort {:+.3}  alpha {:.3}",
            r.step, r.episodes, r.success_rate, r.goal_reward, r.effort_reward, r.alpha
        );
    })?;
    println!("{} updates", trained.agent.updates());
    Ok(())
}
