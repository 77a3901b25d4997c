//! PointNet-style variational encoder and MLP decoder for tool clouds.
//!
//! The encoder runs a shared per-point MLP, max-pools over points and maps
//! the pooled feature to the mean and log-variance of a 2-D latent. The
//! decoder maps a latent back to a fixed number of points. Training
//! minimizes `L = L_R + β·L_KL` with hand-written backpropagation.

use std::path::Path;

use nalgebra::{DMatrix, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Tensor};
use crate::cloud::{chamfer_points, chamfer_with_grad, corrupt_indexed, svd_register, CorruptionParams, PointCloud, RegistrationMode, RegistrationResult};
use crate::error::{Error, Result};
use crate::geometry::{ArmSampling, HingeToolSpec, RigidTransform, ToolConfiguration};
use crate::nn::{Adam, Linear, LinearGrad, Mlp, MlpGrad, MlpTrace, ParamSet};

pub const LATENT_DIM: usize = 2;

/// Scale of the decoder's last-layer weights at tool-aware initialization.
const OUTPUT_INIT_GAIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct EncoderArch {
    /// Widths of the shared per-point layers after the 3-D input.
    pub point_layers: Vec<usize>,
    /// Hidden widths of the decoder between the latent and the output.
    pub decoder_hidden: Vec<usize>,
    pub output_points: usize,
}

impl Default for EncoderArch {
    fn default() -> Self {
        Self {
            point_layers: vec![64, 128],
            decoder_hidden: vec![128, 256],
            output_points: 256,
        }
    }
}

/// Latent shape state `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentState(pub Vector2<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub point_mlp: Mlp,
    pub mu_head: Linear,
    pub logvar_head: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub mlp: Mlp,
}

/// Encoder and decoder trained together.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeModel {
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeModelGrad {
    pub point_mlp: MlpGrad,
    pub mu_head: LinearGrad,
    pub logvar_head: LinearGrad,
    pub decoder: MlpGrad,
}

macro_rules! shape_param_set {
    ($ty:ty, |$s:ident| $point:expr, $mu:expr, $lv:expr, $dec:expr) => {
        impl ParamSet for $ty {
            fn tensors(&self) -> Vec<&[f64]> {
                let $s = self;
                let mut t = $point.tensors();
                t.extend([$mu.weight.as_slice(), $mu.bias.as_slice()]);
                t.extend([$lv.weight.as_slice(), $lv.bias.as_slice()]);
                t.extend($dec.tensors());
                t
            }

            fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
                let $s = self;
                let mut t = $point.tensors_mut();
                t.extend([$mu.weight.as_mut_slice(), $mu.bias.as_mut_slice()]);
                t.extend([$lv.weight.as_mut_slice(), $lv.bias.as_mut_slice()]);
                t.extend($dec.tensors_mut());
                t
            }

            fn shapes(&self) -> Vec<(usize, usize)> {
                let $s = self;
                let mut t = $point.shapes();
                t.extend([($mu.weight.nrows(), $mu.weight.ncols()), ($mu.bias.len(), 1)]);
                t.extend([($lv.weight.nrows(), $lv.weight.ncols()), ($lv.bias.len(), 1)]);
                t.extend($dec.shapes());
                t
            }
        }
    };
}

shape_param_set!(ShapeModel, |s| s.encoder.point_mlp, s.encoder.mu_head, s.encoder.logvar_head, s.decoder.mlp);
shape_param_set!(ShapeModelGrad, |s| s.point_mlp, s.mu_head, s.logvar_head, s.decoder);

/// Loss components averaged over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

/// `KL(N(μ, σ²) ‖ N(0, I)) = ½ Σ (μ² + σ² − log σ² − 1)`.
pub fn kl_divergence(mu: &Vector2<f64>, logvar: &Vector2<f64>) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar.iter())
        .map(|(m, lv)| m * m + lv.exp() - lv - 1.0)
        .sum::<f64>()
}

struct EncodeTrace {
    point: MlpTrace,
    /// Row offsets of each cloud in the stacked point matrix.
    offsets: Vec<usize>,
    pooled: DMatrix<f64>,
    /// Row index (into the stacked matrix) of the max for each (cloud, feature).
    argmax: Vec<Vec<usize>>,
    mu: DMatrix<f64>,
    logvar: DMatrix<f64>,
}

fn stack_points(clouds: &[&[Vector3<f64>]]) -> (DMatrix<f64>, Vec<usize>) {
    let total: usize = clouds.iter().map(|c| c.len()).sum();
    let mut x = DMatrix::zeros(total, 3);
    let mut offsets = Vec::with_capacity(clouds.len() + 1);
    let mut row = 0;
    for c in clouds {
        offsets.push(row);
        for p in c.iter() {
            x[(row, 0)] = p.x;
            x[(row, 1)] = p.y;
            x[(row, 2)] = p.z;
            row += 1;
        }
    }
    offsets.push(row);
    (x, offsets)
}

impl ShapeModel {
    pub fn init<R: Rng + ?Sized>(arch: &EncoderArch, rng: &mut R) -> Self {
        let mut sizes = vec![3];
        sizes.extend(&arch.point_layers);
        let feat = *sizes.last().unwrap();
        let point_mlp = Mlp::init(&sizes, true, rng);
        let mu_head = Linear::init(feat, LATENT_DIM, rng);
        let logvar_head = Linear::init(feat, LATENT_DIM, rng);
        let mut dsizes = vec![LATENT_DIM];
        dsizes.extend(&arch.decoder_hidden);
        dsizes.push(3 * arch.output_points);
        Self {
            encoder: EncoderParams {
                point_mlp,
                mu_head,
                logvar_head,
            },
            decoder: DecoderParams {
                mlp: Mlp::init(&dsizes, false, rng),
            },
        }
    }

    /// [`ShapeModel::init`] rescaled for clouds of `spec`: the first layer
    /// sees coordinates in units of half an arm length, and the decoder
    /// starts out emitting the canonical cloud.
    pub fn init_for_tool<R: Rng + ?Sized>(arch: &EncoderArch, spec: &HingeToolSpec, rng: &mut R) -> Self {
        let mut model = Self::init(arch, rng);
        let first = &mut model.encoder.point_mlp.layers[0];
        first.weight *= 2.0 / spec.arm_length;
        let template = HingeToolSpec {
            points_per_arm: (arch.output_points / 2).max(1),
            ..spec.clone()
        }
        .canonical_cloud();
        let last = model.decoder.mlp.layers.last_mut().expect("decoder has layers");
        last.weight *= OUTPUT_INIT_GAIN;
        for (i, b) in last.bias.iter_mut().enumerate() {
            let p = template.points()[(i / 3) % template.len()];
            *b = p[i % 3];
        }
        model
    }

    pub fn arch(&self) -> EncoderArch {
        let p = self.encoder.point_mlp.sizes();
        let d = self.decoder.mlp.sizes();
        EncoderArch {
            point_layers: p[1..].to_vec(),
            decoder_hidden: d[1..d.len() - 1].to_vec(),
            output_points: d[d.len() - 1] / 3,
        }
    }

    pub fn output_points(&self) -> usize {
        self.decoder.mlp.output_dim() / 3
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensors(&checkpoint::load_tensors(path)?)
    }

    /// Splits a flat tensor list into point MLP, heads and decoder. The point
    /// MLP is the shortest prefix followed by two `feat × 2` heads and a
    /// decoder whose input is 2-D.
    pub fn from_tensors(t: &[Tensor]) -> Result<Self> {
        let head = |i: usize, feat: usize| t.get(i).is_some_and(|w| w.rows == feat && w.cols == LATENT_DIM);
        let split = (1..)
            .map(|p| 2 * p)
            .take_while(|&i| i + 6 <= t.len())
            .find(|&i| {
                let feat = t[i - 2].cols;
                head(i, feat) && head(i + 2, feat) && t[i + 4].rows == LATENT_DIM
            })
            .ok_or_else(|| Error::Format("cannot locate encoder heads in checkpoint".into()))?;
        if t[0].rows != 3 || t[t.len() - 2].cols % 3 != 0 {
            return Err(Error::Format("not a shape model checkpoint".into()));
        }
        Ok(Self {
            encoder: EncoderParams {
                point_mlp: checkpoint::mlp_from(&t[..split], true)?,
                mu_head: checkpoint::linear_from(&t[split], &t[split + 1])?,
                logvar_head: checkpoint::linear_from(&t[split + 2], &t[split + 3])?,
            },
            decoder: DecoderParams {
                mlp: checkpoint::mlp_from(&t[split + 4..], false)?,
            },
        })
    }

    fn encode_trace(&self, clouds: &[&[Vector3<f64>]]) -> EncodeTrace {
        let (x, offsets) = stack_points(clouds);
        let point = self.encoder.point_mlp.forward_trace(&x);
        let h = &point.output;
        let feat = h.ncols();
        let mut pooled = DMatrix::zeros(clouds.len(), feat);
        let mut argmax = vec![vec![0; feat]; clouds.len()];
        for b in 0..clouds.len() {
            let (lo, hi) = (offsets[b], offsets[b + 1]);
            for f in 0..feat {
                let col = h.column(f);
                let mut best = lo;
                for r in lo + 1..hi {
                    if col[r] > col[best] {
                        best = r;
                    }
                }
                pooled[(b, f)] = col[best];
                argmax[b][f] = best;
            }
        }
        let mu = self.encoder.mu_head.forward(&pooled);
        let logvar = self.encoder.logvar_head.forward(&pooled);
        EncodeTrace {
            point,
            offsets,
            pooled,
            argmax,
            mu,
            logvar,
        }
    }

    /// Posterior mean and standard deviation for one canonicalized cloud.
    pub fn encode(&self, cloud: &PointCloud) -> (Vector2<f64>, Vector2<f64>) {
        let t = self.encode_trace(&[cloud.points()]);
        let mu = Vector2::new(t.mu[(0, 0)], t.mu[(0, 1)]);
        let sigma = Vector2::new((0.5 * t.logvar[(0, 0)]).exp(), (0.5 * t.logvar[(0, 1)]).exp());
        (mu, sigma)
    }

    pub fn decode(&self, z: &LatentState) -> PointCloud {
        let out = self.decoder.mlp.forward_one(z.0.as_slice());
        PointCloud::from_points_unchecked(out.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect())
    }

    /// Canonicalizes `raw` with the inverse registration transform and returns
    /// the posterior mean.
    pub fn latent_of(&self, registration: &RegistrationResult, raw: &PointCloud) -> LatentState {
        let canonical = registration.transform.inverse().apply_cloud(raw);
        LatentState(self.encode(&canonical).0)
    }

    /// Batch loss with explicit reparameterization noise (`eps[b]` per sample).
    pub fn loss(&self, inputs: &[&[Vector3<f64>]], targets: &[&[Vector3<f64>]], eps: &[Vector2<f64>], beta: f64) -> LossParts {
        self.loss_inner(inputs, targets, eps, beta, false).0
    }

    pub fn loss_and_grad(
        &self,
        inputs: &[&[Vector3<f64>]],
        targets: &[&[Vector3<f64>]],
        eps: &[Vector2<f64>],
        beta: f64,
    ) -> (LossParts, ShapeModelGrad) {
        let (parts, grad) = self.loss_inner(inputs, targets, eps, beta, true);
        (parts, grad.expect("gradient requested"))
    }

    fn loss_inner(
        &self,
        inputs: &[&[Vector3<f64>]],
        targets: &[&[Vector3<f64>]],
        eps: &[Vector2<f64>],
        beta: f64,
        want_grad: bool,
    ) -> (LossParts, Option<ShapeModelGrad>) {
        let b = inputs.len();
        assert!(b > 0 && targets.len() == b && eps.len() == b);
        let enc = self.encode_trace(inputs);
        let mut z = DMatrix::zeros(b, LATENT_DIM);
        let mut kl = 0.0;
        for i in 0..b {
            for k in 0..LATENT_DIM {
                let sigma = (0.5 * enc.logvar[(i, k)]).exp();
                z[(i, k)] = enc.mu[(i, k)] + sigma * eps[i][k];
            }
            let mu = Vector2::new(enc.mu[(i, 0)], enc.mu[(i, 1)]);
            let lv = Vector2::new(enc.logvar[(i, 0)], enc.logvar[(i, 1)]);
            kl += kl_divergence(&mu, &lv);
        }
        kl /= b as f64;
        let dec = self.decoder.mlp.forward_trace(&z);
        let mut recon = 0.0;
        let mut d_out = DMatrix::zeros(b, dec.output.ncols());
        for i in 0..b {
            let pred: Vec<Vector3<f64>> = dec
                .output
                .row(i)
                .iter()
                .copied()
                .collect::<Vec<_>>()
                .chunks_exact(3)
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect();
            if want_grad {
                let (v, g) = chamfer_with_grad(&pred, targets[i]);
                recon += v;
                for (j, gj) in g.iter().enumerate() {
                    for k in 0..3 {
                        d_out[(i, 3 * j + k)] = gj[k] / b as f64;
                    }
                }
            } else {
                recon += chamfer_points(&pred, targets[i]);
            }
        }
        recon /= b as f64;
        let parts = LossParts {
            total: recon + beta * kl,
            reconstruction: recon,
            kl,
        };
        if !want_grad {
            return (parts, None);
        }

        let (decoder, dz) = self.decoder.mlp.backward(&dec, &d_out);
        let mut d_mu = DMatrix::zeros(b, LATENT_DIM);
        let mut d_lv = DMatrix::zeros(b, LATENT_DIM);
        for i in 0..b {
            for k in 0..LATENT_DIM {
                let (mu, lv) = (enc.mu[(i, k)], enc.logvar[(i, k)]);
                let sigma = (0.5 * lv).exp();
                d_mu[(i, k)] = dz[(i, k)] + beta * mu / b as f64;
                d_lv[(i, k)] = dz[(i, k)] * eps[i][k] * sigma * 0.5 + beta * 0.5 * (lv.exp() - 1.0) / b as f64;
            }
        }
        let (mu_head, dp1) = self.encoder.mu_head.backward(&enc.pooled, &d_mu);
        let (logvar_head, dp2) = self.encoder.logvar_head.backward(&enc.pooled, &d_lv);
        let d_pooled = dp1 + dp2;
        let mut d_h = DMatrix::zeros(enc.point.output.nrows(), enc.point.output.ncols());
        for (i, rows) in enc.argmax.iter().enumerate() {
            for (f, &r) in rows.iter().enumerate() {
                d_h[(r, f)] += d_pooled[(i, f)];
            }
        }
        debug_assert_eq!(enc.offsets.len(), b + 1);
        let (point_mlp, _) = self.encoder.point_mlp.backward(&enc.point, &d_h);
        (
            parts,
            Some(ShapeModelGrad {
                point_mlp,
                mu_head,
                logvar_head,
                decoder,
            }),
        )
    }
}

/// `z = μ + σ ⊙ ε`, `ε ~ N(0, I)`.
pub fn reparameterize<R: Rng + ?Sized>(mu: &Vector2<f64>, sigma: &Vector2<f64>, rng: &mut R) -> LatentState {
    let eps = Vector2::new(StandardNormal.sample(rng), StandardNormal.sample(rng));
    LatentState(mu + sigma.component_mul(&eps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct EncoderTrainConfig {
    pub dataset_size: usize,
    pub beta: f64,
    /// Fraction of epochs over which β ramps linearly from 0; 0 disables warm-up.
    pub beta_warmup_fraction: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub corruption: CorruptionParams,
    pub arch: EncoderArch,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        Self {
            dataset_size: 10_000,
            beta: 1e-7,
            beta_warmup_fraction: 0.0,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 200,
            corruption: CorruptionParams::pretraining(),
            arch: EncoderArch::default(),
        }
    }
}

impl EncoderTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || self.batch_size == 0 || self.dataset_size == 0 || !(self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("invalid encoder training config {self:?}")));
        }
        self.corruption.validate()
    }

    pub fn beta_at(&self, epoch: usize) -> f64 {
        let warm = (self.beta_warmup_fraction * self.epochs as f64).round() as usize;
        if warm == 0 || epoch >= warm {
            self.beta
        } else {
            self.beta * (epoch + 1) as f64 / warm as f64
        }
    }
}

/// One `(corrupted canonicalized input, clean ground truth)` training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSample {
    pub opening_angle: f64,
    pub input: PointCloud,
    pub target: PointCloud,
    /// Target indices of the points that survived the drop, in input order.
    pub kept: Vec<usize>,
}

/// Observes the tool at `config` through the corruption model, registers the
/// surviving points against the canonical cloud and returns
/// `(registration, raw corrupted cloud, surviving indices)`.
pub fn observe_cloud<R: Rng + ?Sized>(
    spec: &HingeToolSpec,
    canonical: &PointCloud,
    config: &ToolConfiguration,
    corruption: &CorruptionParams,
    rng: &mut R,
) -> Result<(RegistrationResult, PointCloud, Vec<usize>)> {
    let clean = spec.sample_cloud(config, ArmSampling::Lattice, rng);
    let (raw, kept) = corrupt_indexed(&clean, corruption, rng)?;
    let reg = svd_register(&canonical.select(&kept), &raw, RegistrationMode::Corresponded)?;
    Ok((reg, raw, kept))
}

pub fn generate_sample<R: Rng + ?Sized>(
    spec: &HingeToolSpec,
    canonical: &PointCloud,
    corruption: &CorruptionParams,
    rng: &mut R,
) -> Result<ShapeSample> {
    let [lo, hi] = spec.hinge_angle_range;
    let phi = rng.gen_range(lo..=hi);
    let config = ToolConfiguration::new(spec, RigidTransform::identity(), phi);
    let target = spec.sample_cloud(&config, ArmSampling::Lattice, rng);
    let (reg, raw, kept) = observe_cloud(spec, canonical, &config, corruption, rng)?;
    Ok(ShapeSample {
        opening_angle: phi,
        input: reg.transform.inverse().apply_cloud(&raw),
        target,
        kept,
    })
}

pub fn generate_dataset<R: Rng + ?Sized>(
    spec: &HingeToolSpec,
    corruption: &CorruptionParams,
    count: usize,
    rng: &mut R,
) -> Result<Vec<ShapeSample>> {
    let canonical = spec.canonical_cloud();
    (0..count).map(|_| generate_sample(spec, &canonical, corruption, rng)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub reconstruction: f64,
    pub kl: f64,
    pub total: f64,
}

/// Pre-trains the shape model on a freshly generated dataset.
pub fn train_encoder<R: Rng + ?Sized>(
    spec: &HingeToolSpec,
    config: &EncoderTrainConfig,
    rng: &mut R,
) -> Result<(ShapeModel, Vec<EpochRecord>)> {
    config.validate()?;
    let data = generate_dataset(spec, &config.corruption, config.dataset_size, rng)?;
    let mut model = ShapeModel::init_for_tool(&config.arch, spec, rng);
    let records = train_on(&mut model, &data, config, rng, |_| {})?;
    Ok((model, records))
}

/// Mini-batch Adam over `data`; `on_epoch` sees each record as it is produced.
pub fn train_on<R: Rng + ?Sized>(
    model: &mut ShapeModel,
    data: &[ShapeSample],
    config: &EncoderTrainConfig,
    rng: &mut R,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    let mut opt = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let beta = config.beta_at(epoch);
        order.shuffle(rng);
        let mut sums = LossParts {
            total: 0.0,
            reconstruction: 0.0,
            kl: 0.0,
        };
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let inputs: Vec<&[Vector3<f64>]> = chunk.iter().map(|&i| data[i].input.points()).collect();
            let targets: Vec<&[Vector3<f64>]> = chunk.iter().map(|&i| data[i].target.points()).collect();
            let eps: Vec<Vector2<f64>> = chunk
                .iter()
                .map(|_| Vector2::new(StandardNormal.sample(rng), StandardNormal.sample(rng)))
                .collect();
            let (parts, grad) = model.loss_and_grad(&inputs, &targets, &eps, beta);
            if !parts.total.is_finite() || !grad.all_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("loss {parts:?}"),
                });
            }
            opt.step(model, &grad);
            sums.total += parts.total;
            sums.reconstruction += parts.reconstruction;
            sums.kl += parts.kl;
            batches += 1;
        }
        let n = batches as f64;
        let rec = EpochRecord {
            epoch,
            reconstruction: sums.reconstruction / n,
            kl: sums.kl / n,
            total: sums.total / n,
        };
        on_epoch(&rec);
        records.push(rec);
    }
    Ok(records)
}

/// Posterior means of clean canonical clouds on an even grid of hinge angles.
pub fn latent_curve(model: &ShapeModel, spec: &HingeToolSpec, samples: usize) -> Vec<(f64, Vector2<f64>)> {
    let [lo, hi] = spec.hinge_angle_range;
    (0..samples)
        .map(|i| {
            let phi = lo + (hi - lo) * i as f64 / (samples.max(2) - 1) as f64;
            let cfg = ToolConfiguration::new(spec, RigidTransform::identity(), phi);
            let cloud = spec.sample_cloud(&cfg, ArmSampling::Lattice, &mut rand::rngs::mock::StepRng::new(0, 0));
            (phi, model.encode(&cloud).0)
        })
        .collect()
}

/// Draws averaged per hinge angle in [`observed_latent_curve`].
pub const CURVE_DRAWS: usize = 8;

/// Mean latent of clouds seen through the per-frame `corruption` at evenly
/// spaced hinge angles. This is the curve a perception loop with that noise
/// can actually reach; without noise or drop it equals [`latent_curve`].
pub fn observed_latent_curve(model: &ShapeModel, spec: &HingeToolSpec, corruption: &CorruptionParams, samples: usize) -> Vec<(f64, Vector2<f64>)> {
    let frame = corruption.without_pose_jitter();
    if frame == CorruptionParams::NONE {
        return latent_curve(model, spec, samples);
    }
    let canonical = spec.canonical_cloud();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let [lo, hi] = spec.hinge_angle_range;
    (0..samples.max(2))
        .map(|i| {
            let phi = lo + (hi - lo) * i as f64 / (samples.max(2) - 1) as f64;
            let cfg = ToolConfiguration::new(spec, RigidTransform::identity(), phi);
            let mut sum = Vector2::zeros();
            for _ in 0..CURVE_DRAWS {
                let (reg, raw, _) = observe_cloud(spec, &canonical, &cfg, &frame, &mut rng).expect("tool clouds are non-empty");
                sum += model.latent_of(&reg, &raw).0;
            }
            (phi, sum / CURVE_DRAWS as f64)
        })
        .collect()
}
