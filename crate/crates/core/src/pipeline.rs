//! Stage orchestration: experiment configuration, seed splitting, run
//! directories with checksummed artifacts, and learning-curve files.
//!
//! Every run lives in `<output_dir>/seed-<root seed>/`:
//!
//! ```text
//! experiment.json      resolved configuration snapshot
//! run.json             version, seed and SHA-256 of every artifact
//! metrics.csv          append-only (stage, seed, step, metric, value, wall clock)
//! data/                pairs.bin + manifest.json          (gen-data)
//! encoder/             encoder.bin + encoder_train.csv    (train-encoder)
//! low[-no-effort]/     policy.bin + low_train.csv         (train-low)
//! privileged/          priv_buffer.bin                    (train-high)
//! high[-no-priv]/      policy.bin + high_train.csv        (train-high)
//! eval[-no-priv]/      summary.json [+ trace.jsonl]       (eval)
//! ```
//!
//! Stage seeds are the first eight bytes (little-endian) of
//! `SHA-256(root_seed_le ‖ stage_name)`, so each stage is reproducible on its
//! own and independent of which other stages ran.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cloud::{CorruptionParams, PointCloud};
use crate::encoder::{generate_dataset, train_on, EncoderTrainConfig, ShapeModel, ShapeSample};
use crate::error::{Error, Result};
use crate::gcrl::{
    load_policy, load_transitions, run_episode, save_transitions, train_high, train_low, Command, EpisodeOutcome, EvalSummary,
    HighActionMap, HighLevelPolicy, LearnedHighPolicy, LowPolicyController, Mixing, RandomHighPolicy, SacConfig,
};
use crate::geometry::HingeToolSpec;
use crate::heuristic::{generate_privileged_buffer, HeuristicConfig};
use crate::sim::trace::{replay, HighRecord, ReplayReport, TraceHeader, TraceLine, TraceWriter};
use crate::sim::{
    DomainRandomization, HandModel, HandParams, HighEnvConfig, HighLevelEnv, LowEnvConfig, LowLevelEnv, RewardCoefficients, SerialArm, DT,
};

pub const VERSION: &str = concat!("hingegrasp v", env!("CARGO_PKG_VERSION"));
/// Overrides the configured seeds with a single root seed.
pub const SEED_ENV: &str = "HINGEGRASP_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Episode `i` uses radius `radii[i % radii.len()]`.
    pub radii: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            radii: vec![0.0075, 0.01, 0.0125],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// JSON tool spec; the default tweezer when absent.
    pub tool_spec: Option<PathBuf>,
    /// JSON domain randomization; the defaults when absent.
    pub domain_randomization: Option<PathBuf>,
    pub encoder: EncoderTrainConfig,
    pub low: SacConfig,
    pub high: SacConfig,
    pub low_env: LowEnvConfig,
    pub high_env: HighEnvConfig,
    pub heuristic: HeuristicConfig,
    /// Heuristic episodes recorded into the privileged buffer.
    pub privileged_episodes: usize,
    pub mixing: Mixing,
    pub rewards: RewardCoefficients,
    pub hand: HandParams,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub eval: EvalConfig,
    /// Threads for data generation.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            tool_spec: None,
            domain_randomization: None,
            encoder: EncoderTrainConfig::default(),
            low: SacConfig::default(),
            high: SacConfig {
                steps: 200_000,
                ..SacConfig::default()
            },
            low_env: LowEnvConfig::default(),
            high_env: HighEnvConfig::default(),
            heuristic: HeuristicConfig::default(),
            privileged_episodes: 200,
            mixing: Mixing::default(),
            rewards: RewardCoefficients::default(),
            hand: HandParams::default(),
            seeds: vec![0, 1, 2],
            output_dir: PathBuf::from("runs"),
            eval: EvalConfig::default(),
            workers: 1,
        }
    }
}

/// A validated configuration with its referenced files loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub spec: HingeToolSpec,
    pub dr: DomainRandomization,
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) | Error::Dependency { .. } => e,
        other => Error::Config(other.to_string()),
    }
}

impl Experiment {
    /// Reads `experiment.json`; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_config(config, base)
    }

    pub fn from_config(mut config: ExperimentConfig, base: &Path) -> Result<Self> {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        config.tool_spec = config.tool_spec.as_deref().map(resolve);
        config.domain_randomization = config.domain_randomization.as_deref().map(resolve);
        config.output_dir = resolve(&config.output_dir);
        for p in config.tool_spec.iter().chain(&config.domain_randomization) {
            if !p.exists() {
                return Err(Error::Config(format!("referenced file {} does not exist", p.display())));
            }
        }
        if let Ok(s) = std::env::var(SEED_ENV) {
            let seed = s.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}={s} is not an unsigned integer")))?;
            config.seeds = vec![seed];
        }
        if config.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let spec = match &config.tool_spec {
            Some(p) => HingeToolSpec::from_json(&fs::read_to_string(p)?).map_err(config_err)?,
            None => HingeToolSpec::default(),
        };
        let dr = match &config.domain_randomization {
            Some(p) => DomainRandomization::load(p).map_err(config_err)?,
            None => DomainRandomization::default(),
        };
        config.encoder.validate().map_err(config_err)?;
        config.low.validate()?;
        config.high.validate()?;
        config.rewards.validate()?;
        config.heuristic.validate()?;
        HandModel::new(config.hand.clone()).map_err(config_err)?;
        if config.eval.radii.is_empty() || config.eval.radii.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Config("evaluation radii must be positive and non-empty".into()));
        }
        Ok(Self { config, spec, dr })
    }

    pub fn run(&self, seed: u64) -> Result<Run> {
        Run::open(self, seed)
    }
}

pub fn stage_seed(root: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(stage.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("digest is 32 bytes"))
}

pub fn stage_rng(root: u64, stage: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stage_seed(root, stage))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    let mut f = File::open(path)?;
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    /// Relative path → SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

/// Flags that select ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Variant {
    pub no_effort_reward: bool,
    pub no_priv_buffer: bool,
}

impl Variant {
    pub fn low_dir(&self) -> &'static str {
        if self.no_effort_reward {
            "low-no-effort"
        } else {
            "low"
        }
    }

    pub fn high_dir(&self) -> &'static str {
        if self.no_priv_buffer {
            "high-no-priv"
        } else {
            "high"
        }
    }

    pub fn eval_dir(&self) -> &'static str {
        if self.no_priv_buffer {
            "eval-no-priv"
        } else {
            "eval"
        }
    }
}

/// One seeded run directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub dir: PathBuf,
    pub seed: u64,
    experiment: Experiment,
    started: Instant,
    invocation: u64,
}

pub const ENCODER_CHECKPOINT: &str = "encoder/encoder.bin";
pub const PRIVILEGED_BUFFER: &str = "privileged/priv_buffer.bin";

impl Run {
    fn open(experiment: &Experiment, seed: u64) -> Result<Self> {
        let dir = experiment.config.output_dir.join(format!("seed-{seed}"));
        fs::create_dir_all(&dir)?;
        let run = Self {
            dir,
            seed,
            experiment: experiment.clone(),
            started: Instant::now(),
            invocation: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        };
        fs::write(run.dir.join("experiment.json"), serde_json::to_string_pretty(&experiment.config)?)?;
        if !run.dir.join("run.json").exists() {
            run.write_manifest(&RunManifest {
                version: VERSION.into(),
                seed,
                artifacts: BTreeMap::new(),
            })?;
        }
        Ok(run)
    }

    pub fn experiment(&self) -> &Experiment {
        &self.experiment
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn manifest(&self) -> Result<RunManifest> {
        Ok(serde_json::from_str(&fs::read_to_string(self.dir.join("run.json"))?)?)
    }

    fn write_manifest(&self, m: &RunManifest) -> Result<()> {
        fs::write(self.dir.join("run.json"), serde_json::to_string_pretty(m)?)?;
        Ok(())
    }

    /// Records the checksum of an artifact that was just written.
    fn register(&self, rel: &str) -> Result<()> {
        let mut m = self.manifest()?;
        m.version = VERSION.into();
        m.artifacts.insert(rel.into(), sha256_file(&self.path(rel))?);
        self.write_manifest(&m)
    }

    /// Fails with a dependency error naming `stage` unless `rel` exists and
    /// matches its recorded checksum.
    pub fn require(&self, stage: &'static str, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if !p.exists() {
            return Err(Error::Dependency {
                stage,
                path: p.display().to_string(),
            });
        }
        if let Some(expected) = self.manifest()?.artifacts.get(rel) {
            if &sha256_file(&p)? != expected {
                return Err(Error::Format(format!("checksum mismatch for {}", p.display())));
            }
        }
        Ok(p)
    }

    fn stage_dir(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        fs::create_dir_all(&p)?;
        Ok(p)
    }

    fn metric(&self, run: &str, step: usize, values: &[(&str, f64)]) -> Result<()> {
        let path = self.path("metrics.csv");
        let fresh = !path.exists();
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(f, "run,seed,step,metric,value,wall_clock_s")?;
        }
        let wall = self.started.elapsed().as_secs_f64();
        // Re-running a stage starts a new run id so steps stay monotone per id.
        let id = format!("{run}@{}", self.invocation);
        for (name, v) in values {
            writeln!(f, "{id},{},{step},{name},{v},{wall:.3}", self.seed)?;
        }
        Ok(())
    }

    fn hand(&self) -> HandModel {
        HandModel::new(self.experiment.config.hand.clone()).expect("validated at load")
    }

    pub fn load_encoder(&self) -> Result<ShapeModel> {
        ShapeModel::load(self.require("train-encoder", ENCODER_CHECKPOINT)?)
    }

    pub fn low_env(&self, model: Arc<ShapeModel>, effort_reward: bool, stage: &str) -> Result<LowLevelEnv> {
        let c = &self.experiment.config;
        LowLevelEnv::new(
            self.experiment.spec.clone(),
            self.hand(),
            model,
            c.rewards,
            self.experiment.dr.clone(),
            LowEnvConfig {
                effort_reward,
                ..c.low_env.clone()
            },
            stage_seed(self.seed, stage),
        )
    }

    pub fn high_env(&self, model: Arc<ShapeModel>, controller: Option<LowPolicyController>, stage: &str) -> Result<HighLevelEnv> {
        let c = &self.experiment.config;
        HighLevelEnv::new(
            self.experiment.spec.clone(),
            self.hand(),
            SerialArm::default(),
            model,
            controller.map(|c| Arc::new(c) as Arc<dyn crate::sim::LowLevelController>),
            c.rewards,
            self.experiment.dr.clone(),
            c.high_env.clone(),
            stage_seed(self.seed, stage),
        )
    }

    pub fn low_controller(&self, variant: Variant) -> Result<LowPolicyController> {
        let rel = format!("{}/policy.bin", variant.low_dir());
        let policy = load_policy(self.require("train-low", &rel)?)?;
        LowPolicyController::new(policy, self.hand().params.action_clamp)
    }
}

const DATA_MAGIC: &[u8; 4] = b"HGDS";
const DATA_VERSION: u32 = 1;

/// Measured corruption statistics of a generated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionAudit {
    pub drop_fraction: f64,
    /// RMS per-axis residual between surviving inputs and their clean points.
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub format_version: u32,
    pub count: usize,
    pub seed: u64,
    pub corruption: CorruptionParams,
    pub spec: HingeToolSpec,
    pub pairs_sha256: String,
    pub measured: CorruptionAudit,
}

/// Dataset file: magic `HGDS`, `u32` version, `u32` count, then per sample
/// `f64` hinge angle, `u32` kept count and kept indices, and the input and
/// target clouds in [`PointCloud::write_binary`] layout.
pub fn write_dataset<W: Write>(mut w: W, data: &[ShapeSample]) -> Result<()> {
    w.write_all(DATA_MAGIC)?;
    w.write_all(&DATA_VERSION.to_le_bytes())?;
    w.write_all(&(data.len() as u32).to_le_bytes())?;
    for s in data {
        w.write_all(&s.opening_angle.to_le_bytes())?;
        w.write_all(&(s.kept.len() as u32).to_le_bytes())?;
        for &k in &s.kept {
            w.write_all(&(k as u32).to_le_bytes())?;
        }
        s.input.write_binary(&mut w)?;
        s.target.write_binary(&mut w)?;
    }
    Ok(())
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Vec<ShapeSample>> {
    let mut word = [0u8; 4];
    let mut u32_of = |r: &mut R| -> Result<u32> {
        r.read_exact(&mut word).map_err(|_| Error::Format("truncated dataset".into()))?;
        Ok(u32::from_le_bytes(word))
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Format("missing dataset magic".into()))?;
    if &magic != DATA_MAGIC {
        return Err(Error::Format("not a dataset file".into()));
    }
    if u32_of(&mut r)? != DATA_VERSION {
        return Err(Error::Format("unsupported dataset version".into()));
    }
    let n = u32_of(&mut r)? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let mut phi = [0u8; 8];
        r.read_exact(&mut phi).map_err(|_| Error::Format("truncated dataset".into()))?;
        let k = u32_of(&mut r)? as usize;
        let kept = (0..k).map(|_| u32_of(&mut r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let input = PointCloud::read_binary(&mut r).map_err(|e| Error::Format(e.to_string()))?;
        let target = PointCloud::read_binary(&mut r).map_err(|e| Error::Format(e.to_string()))?;
        if kept.len() != input.len() || kept.iter().any(|&i| i >= target.len()) {
            return Err(Error::Format("kept indices do not match the clouds".into()));
        }
        out.push(ShapeSample {
            opening_angle: f64::from_le_bytes(phi),
            input,
            target,
            kept,
        });
    }
    Ok(out)
}

pub fn audit_corruption(data: &[ShapeSample]) -> CorruptionAudit {
    let (mut kept, mut total, mut sq, mut axes) = (0usize, 0usize, 0.0, 0usize);
    for s in data {
        kept += s.kept.len();
        total += s.target.len();
        for (p, &i) in s.input.points().iter().zip(&s.kept) {
            sq += (p - s.target.points()[i]).norm_squared();
            axes += 3;
        }
    }
    CorruptionAudit {
        drop_fraction: 1.0 - kept as f64 / total.max(1) as f64,
        noise_sigma: (sq / axes.max(1) as f64).sqrt(),
    }
}

/// Samples per independently seeded data-generation chunk.
pub const DATA_CHUNK: usize = 500;

/// Generates the dataset in chunks seeded from `data/<chunk>`, spread over
/// `workers` threads. The result does not depend on the worker count.
pub fn generate_pairs(run: &Run) -> Result<Vec<ShapeSample>> {
    let c = &run.experiment.config.encoder;
    let spec = &run.experiment.spec;
    let chunks: Vec<(usize, usize)> = (0..c.dataset_size.div_ceil(DATA_CHUNK))
        .map(|k| (k, DATA_CHUNK.min(c.dataset_size - k * DATA_CHUNK)))
        .collect();
    let workers = run.experiment.config.workers.max(1).min(chunks.len().max(1));
    let gen = |&(k, n): &(usize, usize)| generate_dataset(spec, &c.corruption, n, &mut stage_rng(run.seed, &format!("data/{k}")));
    let parts: Vec<Result<Vec<ShapeSample>>> = if workers == 1 {
        chunks.iter().map(gen).collect()
    } else {
        let per = chunks.len().div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = chunks.chunks(per).map(|group| s.spawn(move || group.iter().map(gen).collect::<Vec<_>>())).collect();
            handles.into_iter().flat_map(|h| h.join().expect("data worker panicked")).collect()
        })
    };
    let mut out = Vec::with_capacity(c.dataset_size);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn cmd_gen_data(run: &Run) -> Result<DataManifest> {
    let data = generate_pairs(run)?;
    let dir = run.stage_dir("data")?;
    let mut bytes = Vec::new();
    write_dataset(&mut bytes, &data)?;
    fs::write(dir.join("pairs.bin"), &bytes)?;
    let c = &run.experiment.config.encoder;
    let manifest = DataManifest {
        format_version: DATA_VERSION,
        count: data.len(),
        seed: run.seed,
        corruption: c.corruption,
        spec: run.experiment.spec.clone(),
        pairs_sha256: sha256_hex(&bytes),
        measured: audit_corruption(&data),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    run.register("data/pairs.bin")?;
    run.register("data/manifest.json")?;
    Ok(manifest)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct EncoderRow {
    step: usize,
    reconstruction: f64,
    kl: f64,
    total: f64,
}

/// Uses `data/pairs.bin` when present, otherwise generates the same pairs.
pub fn cmd_train_encoder(run: &Run, mut progress: impl FnMut(&str)) -> Result<PathBuf> {
    let c = &run.experiment.config.encoder;
    let data = match run.require("gen-data", "data/pairs.bin") {
        Ok(p) => read_dataset(BufReader::new(File::open(p)?))?,
        Err(Error::Dependency { .. }) => generate_pairs(run)?,
        Err(e) => return Err(e),
    };
    let mut rng = stage_rng(run.seed, "encoder");
    let mut model = ShapeModel::init_for_tool(&c.arch, &run.experiment.spec, &mut rng);
    let mut rows = Vec::new();
    train_on(&mut model, &data, c, &mut rng, |r| {
        let row = EncoderRow {
            step: r.epoch + 1,
            reconstruction: r.reconstruction,
            kl: r.kl,
            total: r.total,
        };
        progress(&format!("encoder epoch {} reconstruction {:.3e} kl {:.3}", row.step, row.reconstruction, row.kl));
        rows.push(row);
    })?;
    for r in &rows {
        run.metric("encoder", r.step, &[("reconstruction", r.reconstruction), ("kl", r.kl)])?;
    }
    run.stage_dir("encoder")?;
    model.save(run.path(ENCODER_CHECKPOINT))?;
    write_csv(&run.path("encoder/encoder_train.csv"), &rows)?;
    run.register(ENCODER_CHECKPOINT)?;
    run.register("encoder/encoder_train.csv")?;
    Ok(run.path(ENCODER_CHECKPOINT))
}

pub fn cmd_train_low(run: &Run, variant: Variant, mut progress: impl FnMut(&str)) -> Result<PathBuf> {
    let model = Arc::new(run.load_encoder()?);
    let mut env = run.low_env(model, !variant.no_effort_reward, "low-env")?;
    let config: &SacConfig = &run.experiment.config.low;
    let trained = train_low(&mut env, config, &mut stage_rng(run.seed, "low"), |r| {
        progress(&format!("low step {} success {:.2} goal {:.3}", r.step, r.success_rate, r.goal_reward));
    })?;
    let dir = variant.low_dir();
    run.stage_dir(dir)?;
    for r in &trained.curve {
        run.metric(dir, r.step, &[("success_rate", r.success_rate), ("total_reward", r.total_reward)])?;
    }
    let policy = format!("{dir}/policy.bin");
    let csv = format!("{dir}/low_train.csv");
    trained.agent.save_policy(run.path(&policy))?;
    write_csv(&run.path(&csv), &trained.curve)?;
    run.register(&policy)?;
    run.register(&csv)?;
    Ok(run.path(&policy))
}

fn action_map(run: &Run, model: &ShapeModel) -> HighActionMap {
    HighActionMap::new(model, &run.experiment.spec, &run.experiment.dr.corruption, run.experiment.config.low_env.goal_curve_samples)
}

/// Loads the privileged buffer, generating it on first use.
pub fn privileged_buffer(run: &Run, model: &Arc<ShapeModel>) -> Result<Vec<crate::gcrl::Transition>> {
    if let Ok(p) = run.require("privileged", PRIVILEGED_BUFFER) {
        return load_transitions(p);
    }
    let mut env = run.high_env(model.clone(), None, "privileged-env")?;
    let c = &run.experiment.config;
    let buf = generate_privileged_buffer(&mut env, &action_map(run, model), &c.heuristic, c.privileged_episodes)?;
    run.stage_dir("privileged")?;
    save_transitions(run.path(PRIVILEGED_BUFFER), &buf)?;
    run.register(PRIVILEGED_BUFFER)?;
    Ok(buf)
}

pub fn cmd_train_high(run: &Run, variant: Variant, mut progress: impl FnMut(&str)) -> Result<PathBuf> {
    let model = Arc::new(run.load_encoder()?);
    let controller = run.low_controller(Variant::default())?;
    let privileged = if variant.no_priv_buffer { Vec::new() } else { privileged_buffer(run, &model)? };
    let map = action_map(run, &model);
    let mut env = run.high_env(model, Some(controller), "high-env")?;
    let c = &run.experiment.config;
    let trained = train_high(&mut env, &map, &privileged, c.mixing, &c.high, &mut stage_rng(run.seed, "high"), |r| {
        progress(&format!("high step {} return {:.2} success {:.2}", r.step, r.mean_return, r.success_rate));
    })?;
    let dir = variant.high_dir();
    run.stage_dir(dir)?;
    for r in &trained.curve {
        run.metric(dir, r.step, &[("return", r.mean_return), ("success_rate", r.success_rate)])?;
    }
    let policy = format!("{dir}/policy.bin");
    let csv = format!("{dir}/high_train.csv");
    trained.agent.save_policy(run.path(&policy))?;
    write_csv(&run.path(&csv), &trained.curve)?;
    run.register(&policy)?;
    run.register(&csv)?;
    Ok(run.path(&policy))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusSummary {
    pub radius: f64,
    pub summary: EvalSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: String,
    pub seed: u64,
    pub episodes: usize,
    pub policy: EvalSummary,
    pub per_radius: Vec<RadiusSummary>,
    /// Uniform random high-level actions on the same episode seeds.
    pub baseline: EvalSummary,
    /// Policy minus baseline success rate, percentage points.
    pub improvement_pp: f64,
}

fn sweep(
    env: &mut HighLevelEnv,
    policy: &mut dyn HighLevelPolicy,
    radii: &[f64],
    episodes: usize,
    mut trace: Option<&mut TraceWriter<BufWriter<File>>>,
) -> Result<Vec<EpisodeOutcome>> {
    let mut out = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        env.set_radius_override(Some(radii[ep % radii.len()]));
        let mut step = 0;
        let outcome = run_episode(env, policy, &mut |c, s| {
            if let Some(w) = trace.as_deref_mut() {
                let action = match c {
                    Command::Learned(a) => a.to_array().to_vec(),
                    Command::Privileged { a_arm, hinge_angle } => vec![0.0, *hinge_angle, a_arm.x, a_arm.y, a_arm.z],
                };
                w.write(&TraceLine::High(HighRecord::from_step(ep, step, &action, s)))?;
            }
            step += 1;
            Ok(())
        })?;
        out.push(outcome);
    }
    Ok(out)
}

/// Deterministic evaluation across the radius sweep, paired with a random
/// baseline on identical episode seeds.
pub fn cmd_eval(run: &Run, variant: Variant, episodes: usize, write_trace: bool) -> Result<EvalReport> {
    let model = Arc::new(run.load_encoder()?);
    let controller = run.low_controller(Variant::default())?;
    let rel = format!("{}/policy.bin", variant.high_dir());
    let policy = load_policy(run.require("train-high", &rel)?)?;
    let map = action_map(run, &model);
    let radii = run.experiment.config.eval.radii.clone();
    let dir = variant.eval_dir();
    run.stage_dir(dir)?;

    let mut trace = if write_trace {
        let f = BufWriter::new(File::create(run.path(&format!("{dir}/trace.jsonl")))?);
        Some(TraceWriter::new(
            f,
            TraceHeader {
                spec: run.experiment.spec.clone(),
                coefficients: run.experiment.config.rewards,
                dt: DT,
                effort_reward: true,
            },
        )?)
    } else {
        None
    };
    let mut env = run.high_env(model.clone(), Some(controller.clone()), "eval-env")?;
    let mut learned = LearnedHighPolicy { policy, map: map.clone() };
    let outcomes = sweep(&mut env, &mut learned, &radii, episodes, trace.as_mut())?;
    if let Some(t) = trace {
        t.into_inner().flush()?;
    }

    let mut env = run.high_env(model, Some(controller), "eval-env")?;
    let mut random = RandomHighPolicy {
        map,
        rng: stage_rng(run.seed, "baseline"),
    };
    let baseline = EvalSummary::from_outcomes(&sweep(&mut env, &mut random, &radii, episodes, None)?);

    let per_radius = radii
        .iter()
        .map(|&r| RadiusSummary {
            radius: r,
            summary: EvalSummary::from_outcomes(&outcomes.iter().filter(|o| o.radius == r).cloned().collect::<Vec<_>>()),
        })
        .collect();
    let summary = EvalSummary::from_outcomes(&outcomes);
    let report = EvalReport {
        version: VERSION.into(),
        seed: run.seed,
        episodes,
        improvement_pp: 100.0 * (summary.success_rate - baseline.success_rate),
        policy: summary,
        per_radius,
        baseline,
    };
    let rel = format!("{dir}/summary.json");
    fs::write(run.path(&rel), serde_json::to_string_pretty(&report)?)?;
    run.register(&rel)?;
    Ok(report)
}

pub fn cmd_replay(path: impl AsRef<Path>) -> Result<ReplayReport> {
    replay(BufReader::new(File::open(path)?))
}

/// Exit status for a failed command: 2 configuration, 3 missing stage,
/// 4 divergence, 1 anything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Input(_) | Error::InvalidSpec(_) | Error::Json(_) => 2,
        Error::Dependency { .. } => 3,
        Error::Divergence { .. } => 4,
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_seeds_are_distinct_and_stable() {
        assert_eq!(stage_seed(7, "low"), stage_seed(7, "low"));
        assert_ne!(stage_seed(7, "low"), stage_seed(7, "high"));
        assert_ne!(stage_seed(7, "low"), stage_seed(8, "low"));
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(
            exit_code(&Error::Dependency {
                stage: "train-encoder",
                path: "p".into()
            }),
            3
        );
        assert_eq!(exit_code(&Error::Divergence { epoch: 1, detail: "d".into() }), 4);
        assert_eq!(exit_code(&Error::Format("f".into())), 1);
    }

    #[test]
    fn config_round_trip_and_partial_files() {
        let c = ExperimentConfig::default();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"seeds": [4], "low": {"steps": 10}}"#).unwrap();
        assert_eq!(partial.seeds, vec![4]);
        assert_eq!(partial.low.steps, 10);
        assert_eq!(partial.low.gamma, 0.98);
    }
}
