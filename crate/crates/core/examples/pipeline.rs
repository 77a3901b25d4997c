//! A miniature run of every pipeline stage in a temporary directory, followed
//! by reward replay of the evaluation trace.

use hingegrasp::encoder::EncoderArch;
use hingegrasp::pipeline::{cmd_eval, cmd_gen_data, cmd_replay, cmd_train_encoder, cmd_train_high, cmd_train_low, Experiment, ExperimentConfig, Variant};

fn main() -> hingegrasp::Result<()> {
    let out = std::env::temp_dir().join("hingegrasp-pipeline-example");
    let mut c = ExperimentConfig {
        seeds: vec![0],
        output_dir: out.clone(),
        privileged_episodes: 3,
        ..ExperimentConfig::default()
    };
    c.encoder.dataset_size = 200;
    c.encoder.epochs = 2;
    c.encoder.arch = EncoderArch {
        point_layers: vec![16, 16],
        decoder_hidden: vec![16],
        output_points: 32,
    };
    for sac in [&mut c.low, &mut c.high] {
        sac.steps = 400;
        sac.warmup_steps = 100;
        sac.batch_size = 32;
        sac.hidden = vec![32, 32];
        sac.log_interval = 100;
    }
    let run = Experiment::from_config(c, &out)?.run(0)?;
    let quiet = |_: &str| {};
    let data = cmd_gen_data(&run)?;
    println!("data: {} pairs, measured drop {:.3}", data.count, data.measured.drop_fraction);
    cmd_train_encoder(&run, quiet)?;
    cmd_train_low(&run, Variant::default(), quiet)?;
    cmd_train_high(&run, Variant::default(), quiet)?;
    let report = cmd_eval(&run, Variant::default(), 3, true)?;
    println!("eval: success {:.2}, random {:.2}", report.policy.success_rate, report.baseline.success_rate);
    let replayed = cmd_replay(run.path("eval/trace.jsonl"))?;
    println!("replay: {} steps, {} mismatches", replayed.rows.len(), replayed.mismatches());
    println!("artifacts in {}", run.dir.display());
    for (path, sha) in run.manifest()?.artifacts {
        println!("  {path:<28} {}", &sha[..16]);
    }
    Ok(())
}
