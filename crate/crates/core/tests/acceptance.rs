//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! The fast criteria always run. The training criteria (encoder affordance,
//! effort and privileged-buffer ablations, end-to-end success) need about an
//! hour on one core and only run with `HINGEGRASP_ACCEPTANCE=full`; budgets
//! can be overridden with `HINGEGRASP_LOW_STEPS` and `HINGEGRASP_HIGH_STEPS`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hingegrasp::cloud::{ema, pose_jitter, svd_register, CorruptionParams, PointCloud, RegistrationMode, EMA_ALPHA};
use hingegrasp::encoder::{observe_cloud, EncoderArch, ShapeModel};
use hingegrasp::gcrl::{actor_loss_and_grad, critic_loss_and_grad, evaluate, GaussianPolicy, HighCurveRow, LowCurveRow};
use hingegrasp::geometry::{displacement_transform, ArmSampling, HingeToolSpec, RigidTransform, ToolConfiguration};
use hingegrasp::heuristic::{HeuristicConfig, HeuristicController};
use hingegrasp::nn::{numeric_gradient, relative_error, Mlp, ParamSet};
use hingegrasp::pipeline::*;
use hingegrasp::sim::{
    reward_effort, reward_goal, reward_high, reward_low, DomainRandomization, HandModel, HandParams, HighEnvConfig, HighLevelEnv,
    LowObservation, RewardCoefficients, SerialArm, Smoother, LOW_OBS_DIM,
};
use hingegrasp::stats::{mean, spearman};

struct Report {
    failed: Vec<&'static str>,
}

impl Report {
    fn line(&mut self, name: &'static str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(name);
        }
    }

    fn skip(&self, name: &str) {
        println!("SKIP {name}: set HINGEGRASP_ACCEPTANCE=full");
    }
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::new((0..n).map(|_| Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1))).collect()).unwrap()
}

fn random_transform(rng: &mut ChaCha8Rng) -> RigidTransform {
    let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let angle = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let rot = nalgebra::UnitQuaternion::from_scaled_axis(axis.normalize() * angle);
    RigidTransform::new(Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)), rot)
}

fn registration(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let (mut worst_r, mut worst_t, mut slowest) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let src = random_cloud(&mut rng, 256);
        let t0 = random_transform(&mut rng);
        let tgt = t0.apply_cloud(&src);
        let start = Instant::now();
        let got = svd_register(&src, &tgt, RegistrationMode::Corresponded).unwrap().transform;
        slowest = slowest.max(start.elapsed().as_secs_f64());
        let dr: Matrix3<f64> = got.rotation_matrix() - t0.rotation_matrix();
        worst_r = worst_r.max(dr.norm());
        worst_t = worst_t.max((got.translation - t0.translation).norm());
    }
    let pass = worst_r <= 1e-9 && worst_t <= 1e-9 && slowest <= 1e-3;
    r.line(
        "registration exactness",
        pass,
        format!("1000 pairs, rotation err {worst_r:.2e}, translation err {worst_t:.2e} m, slowest {:.3} ms", slowest * 1e3),
    );
}

fn gradients(r: &mut Report) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);

    let arch = EncoderArch {
        point_layers: vec![4, 5],
        decoder_hidden: vec![4],
        output_points: 4,
    };
    let model = ShapeModel::init(&arch, &mut rng);
    let clouds: Vec<Vec<Vector3<f64>>> = (0..2).map(|_| random_cloud(&mut rng, 6).into_points()).collect();
    let targets: Vec<Vec<Vector3<f64>>> = (0..2).map(|_| random_cloud(&mut rng, 5).into_points()).collect();
    let inputs: Vec<&[Vector3<f64>]> = clouds.iter().map(|c| c.as_slice()).collect();
    let target_refs: Vec<&[Vector3<f64>]> = targets.iter().map(|c| c.as_slice()).collect();
    let eps = [Vector2::new(0.4, -0.7), Vector2::new(-1.1, 0.2)];
    let (_, g) = model.loss_and_grad(&inputs, &target_refs, &eps, 0.5);
    let num = numeric_gradient(&model, 1e-6, |m| m.loss(&inputs, &target_refs, &eps, 0.5).total);
    let enc = (relative_error(&g.flat(), &num), num.len());

    let policy = GaussianPolicy::init(3, &[6], 2, &mut rng);
    let q1 = Mlp::init(&[5, 6, 1], false, &mut rng);
    let q2 = Mlp::init(&[5, 6, 1], false, &mut rng);
    let x = DMatrix::from_fn(6, 3, |_, _| rng.gen_range(-1.0..1.0));
    let noise = policy.sample_noise(6, &mut rng);
    let (_, g, _) = actor_loss_and_grad(&policy, &q1, &q2, &x, &noise, 0.3);
    let num = numeric_gradient(&policy.net, 1e-6, |n| actor_loss_and_grad(&GaussianPolicy { net: n.clone() }, &q1, &q2, &x, &noise, 0.3).0);
    let actor = (relative_error(&g.flat(), &num), num.len());

    let q = Mlp::init(&[5, 8, 6, 1], false, &mut rng);
    let x = DMatrix::from_fn(7, 5, |_, _| rng.gen_range(-1.0..1.0));
    let y = DVector::from_fn(7, |_, _| rng.gen_range(-1.0..1.0));
    let (_, g) = critic_loss_and_grad(&q, &x, &y);
    let num = numeric_gradient(&q, 1e-6, |p| critic_loss_and_grad(p, &x, &y).0);
    let critic = (relative_error(&g.flat(), &num), num.len());

    let secs = start.elapsed().as_secs_f64();
    let all = [enc, actor, critic];
    let pass = all.iter().all(|(e, n)| *e <= 1e-4 && *n <= 200) && secs < 10.0;
    r.line(
        "gradient correctness",
        pass,
        format!(
            "encoder {:.1e} ({} params), actor {:.1e} ({}), critic {:.1e} ({}), {secs:.2} s",
            enc.0, enc.1, actor.0, actor.1, critic.0, critic.1
        ),
    );
}

fn heuristic(r: &mut Report) {
    let spec = HingeToolSpec::default();
    let model = Arc::new(ShapeModel::init_for_tool(&EncoderArch::default(), &spec, &mut ChaCha8Rng::seed_from_u64(0)));
    let mut env = HighLevelEnv::new(
        spec,
        HandModel::new(HandParams::default()).unwrap(),
        SerialArm::default(),
        model,
        None,
        RewardCoefficients::default(),
        DomainRandomization::noise_free(),
        HighEnvConfig::default(),
        102,
    )
    .unwrap();
    let mut h = HeuristicController::new(HeuristicConfig::default());
    let (summary, outcomes) = evaluate(&mut env, &mut h, 100).unwrap();
    let longest = outcomes.iter().filter(|o| o.success).map(|o| o.steps).max().unwrap_or(0);
    let pass = summary.success_rate >= 0.9 && longest <= 200;
    r.line(
        "heuristic oracle",
        pass,
        format!("noise-free, 100 episodes, success {:.0}%, longest success {longest} steps", 100.0 * summary.success_rate),
    );
}

fn rewards(r: &mut Report) {
    let c = RewardCoefficients::default();
    let spec = HingeToolSpec::default();
    let canonical = spec.canonical_cloud();
    let dt = 0.05;
    let mut worst = 0.0f64;
    let mut check = |got: f64, want: f64| worst = worst.max((got - want).abs());

    check(ema(&[0.0], &[1.0], EMA_ALPHA).unwrap()[0], 0.9);
    check(ema(&[0.3, -2.0], &[0.3, -2.0], EMA_ALPHA).unwrap()[1], -2.0);
    let mut s = Smoother::default();
    s.update(&[0.0]);
    let mut last = 0.0;
    for _ in 0..5 {
        last = s.update(&[1.0])[0];
    }
    check(last, 1.0 - 0.1f64.powi(5));

    check(reward_goal(&Vector2::new(0.2, -0.1), &Vector2::new(0.2, -0.1), c.c_l1), 1.0);
    check(reward_goal(&Vector2::new(1.0, 0.0), &Vector2::new(0.0, 0.0), 1.0), (-1.0f64).exp());
    check(reward_goal(&Vector2::new(0.3, 0.4), &Vector2::zeros(), 2.0), (-1.0f64).exp());

    check(reward_effort(&Vector3::zeros(), &Vector3::zeros(), &[0.0; 9], &canonical, c.c_l2, c.c_l3, dt), 0.0);
    let v = Vector3::new(0.03, -0.04, 0.0);
    let n = canonical.len() as f64;
    check(reward_effort(&v, &Vector3::zeros(), &[0.0; 9], &canonical, 2.0, 0.1, dt), -2.0 * n * 0.05 * dt);
    let mut q_dot = [0.0; 9];
    q_dot[0] = 3.0;
    q_dot[4] = 4.0;
    check(reward_effort(&Vector3::zeros(), &Vector3::zeros(), &q_dot, &canonical, 2.0, 0.1, dt), -0.5);
    let omega = Vector3::new(0.0, 0.0, 1.5);
    let t = displacement_transform(&v, &omega, dt);
    let brute: f64 = canonical.points().iter().map(|p| (t.apply(p) - p).norm()).sum();
    check(reward_effort(&v, &omega, &q_dot, &canonical, 2.0, 0.1, dt), -2.0 * brute - 0.5);

    let mut obs = [0.0; LOW_OBS_DIM];
    obs[9] = 3.0;
    obs[13] = 4.0;
    obs[18] = 0.03;
    obs[19] = -0.04;
    obs[24] = 0.6;
    obs[25] = 0.8;
    let goal = Vector2::new(0.6, 0.8 - 0.2);
    let low = reward_low(&LowObservation(obs), &goal, &c, &canonical, dt, true);
    let want_goal = (-c.c_l1 * 0.2f64).exp();
    let want_effort = -c.c_l2 * n * 0.05 * dt - c.c_l3 * 5.0;
    check(low.goal, want_goal);
    check(low.effort, want_effort);
    check(low.total, want_goal + want_effort);
    check(reward_low(&LowObservation(obs), &goal, &c, &canonical, dt, false).total, want_goal);

    let p = Vector3::new(0.45, 0.0, 0.2);
    let at = reward_high(&Vector3::new(0.45, 0.0, 0.23), &p, &p, 0.3, &c);
    check(at.sparse, c.c_h1);
    check(at.dense, (-c.c_h2 * 0.03).exp() + c.c_h3);
    check(at.penalty, 0.0);
    check(at.total, c.c_h1 + (-c.c_h2 * 0.03).exp() + c.c_h3);
    let far = reward_high(&(p + Vector3::new(0.2 + 1e-6, 0.0, 0.0)), &p, &(p + Vector3::new(0.0, 0.0, 0.05)), 0.3, &c);
    check(far.sparse, 0.0);
    check(far.penalty, -c.c_h5);
    check(far.dense, (-c.c_h2 * (0.2 + 1e-6)).exp() + c.c_h3 * (-c.c_h4 * 0.05).exp());
    check(far.total, far.dense - c.c_h5);
    let table = reward_high(&p, &p, &(p + Vector3::new(0.0, 0.0, 0.05)), -0.001, &c);
    check(table.penalty, -c.c_h5);

    let flags = at.success && !at.penalized && far.penalized && !far.success && table.penalized;
    r.line("reward formulas", worst <= 1e-12 && flags, format!("largest deviation {worst:.1e}"));
}

fn tiny_config(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        seeds: vec![7],
        output_dir: out.to_path_buf(),
        privileged_episodes: 2,
        ..ExperimentConfig::default()
    };
    c.encoder.dataset_size = 120;
    c.encoder.epochs = 2;
    c.encoder.batch_size = 32;
    c.encoder.arch = EncoderArch {
        point_layers: vec![8, 8],
        decoder_hidden: vec![8],
        output_points: 16,
    };
    c.low_env.goal_curve_samples = 11;
    for sac in [&mut c.low, &mut c.high] {
        sac.steps = 400;
        sac.warmup_steps = 100;
        sac.batch_size = 16;
        sac.hidden = vec![16, 16];
        sac.log_interval = 100;
    }
    c
}

fn quiet(_: &str) {}

fn scratch(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn determinism(r: &mut Report) {
    const CURVES: [&str; 3] = ["encoder/encoder_train.csv", "low/low_train.csv", "high/high_train.csv"];
    let once = |name: &str| -> Vec<Vec<u8>> {
        let dir = scratch(name);
        let run = Experiment::from_config(tiny_config(&dir), &dir).unwrap().run(7).unwrap();
        cmd_train_encoder(&run, quiet).unwrap();
        cmd_train_low(&run, Variant::default(), quiet).unwrap();
        cmd_train_high(&run, Variant::default(), quiet).unwrap();
        CURVES.iter().map(|c| fs::read(run.path(c)).unwrap()).collect()
    };
    let (a, b) = (once("determinism-a"), once("determinism-b"));
    let rows: usize = a.iter().map(|f| f.iter().filter(|&&c| c == b'\n').count()).sum();
    r.line("determinism", a == b, format!("{} curve files, {rows} rows, bitwise equal: {}", CURVES.len(), a == b));
}

fn env_steps(key: &str, default: usize) -> usize {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

const SEEDS: [u64; 3] = [0, 1, 2];
const EVAL_EPISODES: usize = 100;

fn full_config(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        seeds: SEEDS.to_vec(),
        output_dir: out.to_path_buf(),
        privileged_episodes: 100,
        ..ExperimentConfig::default()
    };
    c.encoder.dataset_size = 10_000;
    c.encoder.epochs = 6;
    c.low.steps = env_steps("HINGEGRASP_LOW_STEPS", 100_000);
    c.low.warmup_steps = 2000;
    c.low.log_interval = 2000;
    c.high.steps = env_steps("HINGEGRASP_HIGH_STEPS", 100_000);
    c.high.warmup_steps = 1000;
    c.high.log_interval = 5000;
    for sac in [&mut c.low, &mut c.high] {
        sac.batch_size = 64;
        sac.hidden = vec![64, 64];
    }
    c
}

fn read_curve<T: serde::de::DeserializeOwned>(path: &Path) -> Vec<T> {
    csv::Reader::from_path(path).unwrap().deserialize().collect::<Result<_, _>>().unwrap()
}

fn affordance(r: &mut Report, run: &Run) {
    let model = run.load_encoder().unwrap();
    let spec = &run.experiment().spec;
    let canonical = spec.canonical_cloud();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let jitter = CorruptionParams {
        drop_fraction: 0.0,
        point_noise_sigma: 0.0,
        ..CorruptionParams::pretraining()
    };
    let [lo, hi] = spec.hinge_angle_range;
    let (mut apertures, mut z0, mut z1, mut shift) = (Vec::new(), Vec::new(), Vec::new(), 0.0f64);
    for _ in 0..200 {
        let phi = rng.gen_range(lo..=hi);
        let cfg = ToolConfiguration::new(spec, RigidTransform::identity(), phi);
        let (reg, raw, _) = observe_cloud(spec, &canonical, &cfg, &CorruptionParams::NONE, &mut rng).unwrap();
        let mu = model.latent_of(&reg, &raw).0;
        let clean = spec.sample_cloud(&cfg, ArmSampling::Lattice, &mut rng);
        let moved = pose_jitter(&jitter, &clean.centroid(), &mut rng).apply_cloud(&clean);
        let reg_j = svd_register(&canonical, &moved, RegistrationMode::Corresponded).unwrap();
        shift = shift.max((model.latent_of(&reg_j, &moved).0 - mu).norm());
        apertures.push(spec.aperture(phi).unwrap());
        z0.push(mu.x);
        z1.push(mu.y);
    }
    let rho = spearman(&z0, &apertures).abs().max(spearman(&z1, &apertures).abs());
    r.line(
        "encoder affordance",
        rho >= 0.9 && shift <= 0.2,
        format!("200 held-out clouds, Spearman |rho| {rho:.3}, jittered shift {shift:.2e}"),
    );
}

fn first_reaching(curve: &[(usize, f64)], level: f64) -> Option<usize> {
    curve.iter().find(|(_, s)| *s >= level).map(|(step, _)| *step)
}

fn mean_curve(curves: &[Vec<(usize, f64)>]) -> Vec<(usize, f64)> {
    let n = curves.iter().map(Vec::len).min().unwrap_or(0);
    (0..n).map(|i| (curves[0][i].0, mean(&curves.iter().map(|c| c[i].1).collect::<Vec<_>>()))).collect()
}

fn effort_ablation(r: &mut Report, runs: &[Run]) {
    let load = |run: &Run, dir: &str| -> Vec<(usize, f64)> {
        read_curve::<LowCurveRow>(&run.path(&format!("{dir}/low_train.csv"))).iter().map(|row| (row.step, row.success_rate)).collect()
    };
    let with: Vec<_> = runs.iter().map(|run| load(run, "low")).collect();
    let without: Vec<_> = runs.iter().map(|run| load(run, "low-no-effort")).collect();
    let (a, b) = (first_reaching(&mean_curve(&with), 0.5), first_reaching(&mean_curve(&without), 0.5));
    let faster = match (a, b) {
        (Some(a), Some(b)) => a < b,
        (Some(_), None) => true,
        _ => false,
    };
    let finals: Vec<(f64, f64)> = with.iter().zip(&without).map(|(w, o)| (w.last().unwrap().1, o.last().unwrap().1)).collect();
    let final_ok = finals.iter().all(|(w, o)| w >= o);
    let show = |s: Option<usize>| s.map_or("never".to_string(), |s| s.to_string());
    r.line(
        "effort reward ablation",
        faster && final_ok,
        format!(
            "mean curve reaches 50% at {} with effort vs {} without; final per seed {:?}",
            show(a),
            show(b),
            finals.iter().map(|(w, o)| format!("{w:.2}/{o:.2}")).collect::<Vec<_>>()
        ),
    );
}

fn privileged_ablation(r: &mut Report, runs: &[Run], budget: usize) {
    let load = |run: &Run, dir: &str| -> Vec<(usize, f64)> {
        read_curve::<HighCurveRow>(&run.path(&format!("{dir}/high_train.csv"))).iter().map(|row| (row.step, row.mean_return)).collect()
    };
    let with = mean_curve(&runs.iter().map(|run| load(run, "high")).collect::<Vec<_>>());
    let without = mean_curve(&runs.iter().map(|run| load(run, "high-no-priv")).collect::<Vec<_>>());
    let late: Vec<(usize, f64, f64)> = with
        .iter()
        .zip(&without)
        .filter(|((step, _), _)| *step as f64 > 0.2 * budget as f64)
        .map(|((step, w), (_, o))| (*step, *w, *o))
        .collect();
    let worst = late.iter().map(|(_, w, o)| w - o).fold(f64::INFINITY, f64::min);
    r.line(
        "privileged buffer ablation",
        !late.is_empty() && worst > 0.0,
        format!(
            "{} checkpoints past 20%, smallest margin {worst:.1}, final mean return {:.1} vs {:.1}",
            late.len(),
            late.last().map_or(f64::NAN, |l| l.1),
            late.last().map_or(f64::NAN, |l| l.2)
        ),
    );
}

fn end_to_end(r: &mut Report, runs: &[Run]) {
    let reports: Vec<EvalReport> = runs.iter().map(|run| cmd_eval(run, Variant::default(), EVAL_EPISODES, false).unwrap()).collect();
    let rates: Vec<f64> = reports.iter().map(|e| e.policy.success_rate).collect();
    let per_radius: Vec<String> = reports[0]
        .per_radius
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let m = mean(&reports.iter().map(|e| e.per_radius[i].summary.success_rate).collect::<Vec<_>>());
            format!("r={:.4}: {:.0}%", p.radius, 100.0 * m)
        })
        .collect();
    let m = mean(&rates);
    r.line(
        "end-to-end success",
        m >= 0.6,
        format!(
            "{EVAL_EPISODES} randomized episodes per seed, mean {:.1}%, per seed {:?}, per radius [{}], random baseline {:.1}%",
            100.0 * m,
            rates.iter().map(|s| format!("{:.0}%", 100.0 * s)).collect::<Vec<_>>(),
            per_radius.join(", "),
            100.0 * mean(&reports.iter().map(|e| e.baseline.success_rate).collect::<Vec<_>>())
        ),
    );
}

fn training(r: &mut Report) {
    let dir = scratch("full");
    let config = full_config(&dir);
    let high_budget = config.high.steps;
    let experiment = Experiment::from_config(config, &dir).unwrap();
    let start = Instant::now();
    let log = |s: &str| eprintln!("  [{:>6.0} s] {s}", start.elapsed().as_secs_f64());
    let mut runs = Vec::new();
    for seed in SEEDS {
        let run = experiment.run(seed).unwrap();
        let t = Instant::now();
        cmd_train_encoder(&run, |s| log(&format!("seed {seed} {s}"))).unwrap();
        if seed == SEEDS[0] {
            println!("     encoder training took {:.0} s", t.elapsed().as_secs_f64());
            affordance(r, &run);
        }
        let every = |s: &str| {
            if s.contains("000 ") {
                log(&format!("seed {seed} {s}"));
            }
        };
        cmd_train_low(&run, Variant::default(), every).unwrap();
        cmd_train_low(&run, Variant { no_effort_reward: true, ..Variant::default() }, every).unwrap();
        cmd_train_high(&run, Variant::default(), every).unwrap();
        cmd_train_high(&run, Variant { no_priv_buffer: true, ..Variant::default() }, every).unwrap();
        runs.push(run);
    }
    effort_ablation(r, &runs);
    privileged_ablation(r, &runs, high_budget);
    end_to_end(r, &runs);
    println!("     training criteria took {:.0} min", start.elapsed().as_secs_f64() / 60.0);
}

fn main() {
    let full = std::env::var("HINGEGRASP_ACCEPTANCE").is_ok_and(|v| v == "full");
    let mut r = Report { failed: Vec::new() };
    registration(&mut r);
    gradients(&mut r);
    rewards(&mut r);
    heuristic(&mut r);
    determinism(&mut r);
    if full {
        training(&mut r);
    } else {
        for name in ["encoder affordance", "effort reward ablation", "privileged buffer ablation", "end-to-end success"] {
            r.skip(name);
        }
    }
    if !r.failed.is_empty() {
        println!("{} criteria failed: {}", r.failed.len(), r.failed.join(", "));
        std::process::exit(1);
    }
}
