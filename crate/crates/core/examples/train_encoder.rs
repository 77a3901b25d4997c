//! Trains a small shape encoder and prints the latent curve over the hinge
//! range. `cargo run --release --example train_encoder -- 2000 20`

use hingegrasp::encoder::{latent_curve, train_encoder, EncoderArch, EncoderTrainConfig};
use hingegrasp::geometry::HingeToolSpec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hingegrasp::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("numeric argument"));
    let config = EncoderTrainConfig {
        dataset_size: args.next().unwrap_or(500),
        epochs: args.next().unwrap_or(5),
        arch: EncoderArch {
            point_layers: vec![32, 64],
            decoder_hidden: vec![64, 128],
            output_points: 128,
        },
        ..EncoderTrainConfig::default()
    };
    let spec = HingeToolSpec::default();
    let (model, records) = train_encoder(&spec, &config, &mut ChaCha8Rng::seed_from_u64(0))?;
    for r in &records {
        println!("epoch {:>3}  reconstruction {:.3e}  kl {:.3}", r.epoch + 1, r.reconstruction, r.kl);
    }
    println!("\n  phi     aperture   z0       z1");
    for (phi, z) in latent_curve(&model, &spec, 11) {
        println!("{phi:.3}  {:.4}     {:+.3}  {:+.3}", spec.aperture(phi)?, z.x, z.y);
    }
    Ok(())
}
