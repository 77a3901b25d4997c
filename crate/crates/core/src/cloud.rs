//! Point-cloud operations: Chamfer distance, Kabsch/ICP registration,
//! sensor corruption, downsampling, pose differencing and EMA smoothing.

use std::collections::HashMap;
use std::io::{Read, Write};

use nalgebra::{Matrix3, Vector3};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

/// Ordered, non-empty set of finite 3D points in meters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::input("point cloud is empty"));
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::input("point cloud has non-finite coordinates"));
        }
        Ok(Self { points })
    }

    pub(crate) fn from_points_unchecked(points: Vec<Vector3<f64>>) -> Self {
        Self { points }
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vector3<f64>> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud::from_points_unchecked(indices.iter().map(|&i| self.points[i]).collect())
    }

    /// Little-endian `u32` count followed by `count × 3` `f64` coordinates.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.points.len() as u32).to_le_bytes())?;
        for p in &self.points {
            for c in p.iter() {
                w.write_all(&c.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let n = u32::from_le_bytes(word) as usize;
        let mut buf = vec![0u8; n * 24];
        r.read_exact(&mut buf)?;
        let pts = buf
            .chunks_exact(24)
            .map(|c| {
                let f = |k: usize| f64::from_le_bytes(c[k * 8..k * 8 + 8].try_into().unwrap());
                Vector3::new(f(0), f(1), f(2))
            })
            .collect();
        PointCloud::new(pts)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.len() * 24);
        self.write_binary(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Debug form, one `x,y,z` line per point.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for p in &self.points {
            s.push_str(&format!("{},{},{}\n", p.x, p.y, p.z));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(text.as_bytes());
        let mut pts = Vec::new();
        for rec in reader.deserialize::<(f64, f64, f64)>() {
            let (x, y, z) = rec.map_err(|e| Error::input(format!("bad CSV point: {e}")))?;
            pts.push(Vector3::new(x, y, z));
        }
        PointCloud::new(pts)
    }
}

fn require_non_empty(c: &PointCloud, name: &str) -> Result<()> {
    if c.is_empty() {
        Err(Error::input(format!("{name} cloud is empty")))
    } else {
        Ok(())
    }
}

/// Index of the nearest point in `target` (first minimizer on ties) and its squared distance.
fn nearest(p: &Vector3<f64>, target: &[Vector3<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, q) in target.iter().enumerate() {
        let d = (p - q).norm_squared();
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Symmetric Chamfer distance in m²: the average of the mean nearest squared
/// distance from `a` to `b` and the same from `b` to `a`.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    require_non_empty(a, "first")?;
    require_non_empty(b, "second")?;
    Ok(chamfer_points(a.points(), b.points()))
}

pub(crate) fn chamfer_points(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    let ab: f64 = a.iter().map(|p| nearest(p, b).1).sum::<f64>() / a.len() as f64;
    let ba: f64 = b.iter().map(|p| nearest(p, a).1).sum::<f64>() / b.len() as f64;
    0.5 * (ab + ba)
}

/// Chamfer distance and its gradient w.r.t. every point of `pred`.
pub(crate) fn chamfer_with_grad(pred: &[Vector3<f64>], target: &[Vector3<f64>]) -> (f64, Vec<Vector3<f64>>) {
    let (np, nt) = (2.0 * pred.len() as f64, 2.0 * target.len() as f64);
    let mut grad = vec![Vector3::zeros(); pred.len()];
    let mut value = 0.0;
    for (i, p) in pred.iter().enumerate() {
        let (j, d) = nearest(p, target);
        value += d / np;
        grad[i] += (p - target[j]) * (2.0 / np);
    }
    for t in target {
        let (i, d) = nearest(t, pred);
        value += d / nt;
        grad[i] += (pred[i] - t) * (2.0 / nt);
    }
    (value, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistrationMode {
    /// Point `i` of the source corresponds to point `i` of the target.
    Corresponded,
    /// Single pass of nearest-neighbour matching followed by a Kabsch fit.
    NearestNeighbor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationResult {
    /// Maps source onto target.
    pub transform: RigidTransform,
    pub rms_residual: f64,
    pub iterations: usize,
}

/// Least-squares rigid fit of corresponding point lists (Kabsch).
pub fn kabsch(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<RigidTransform> {
    if source.len() != target.len() {
        return Err(Error::input(format!(
            "correspondence length mismatch: {} vs {}",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(Error::DegenerateGeometry(format!("{} points", source.len())));
    }
    let n = source.len() as f64;
    let cs = source.iter().sum::<Vector3<f64>>() / n;
    let ct = target.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (s - cs) * (t - ct).transpose();
    }
    let svd = h.svd(true, true);
    let sv = svd.singular_values;
    let (s_max, s_mid) = (sv.max(), {
        let mut v = [sv[0], sv[1], sv[2]];
        v.sort_by(|a, b| b.total_cmp(a));
        v[1]
    });
    if !(s_max > 0.0) || s_mid <= 1e-12 * s_max {
        return Err(Error::DegenerateGeometry(format!(
            "cross-covariance rank < 2 (singular values {:?})",
            sv.as_slice()
        )));
    }
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested Vᵀ").transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let r = v * correction * u.transpose();
    Ok(RigidTransform::from_rotation_matrix(ct - r * cs, &r))
}

fn rms_pairs(t: &RigidTransform, source: &[Vector3<f64>], target: &[Vector3<f64>]) -> f64 {
    let m = t.rotation_matrix();
    let s: f64 = source
        .iter()
        .zip(target)
        .map(|(p, q)| (m * p + t.translation - q).norm_squared())
        .sum();
    (s / source.len() as f64).sqrt()
}

/// Symmetric nearest-neighbour RMS: every moved source point against the
/// target and every target point against the moved source.
fn rms_symmetric(moved: &[Vector3<f64>], target: &[Vector3<f64>]) -> f64 {
    let fwd: f64 = moved.iter().map(|p| nearest(p, target).1).sum();
    let bwd: f64 = target.iter().map(|q| nearest(q, moved).1).sum();
    ((fwd + bwd) / (moved.len() + target.len()) as f64).sqrt()
}

fn moved_points(t: &RigidTransform, pts: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let m = t.rotation_matrix();
    pts.iter().map(|p| m * p + t.translation).collect()
}

/// Rigid transform taking `source` onto `target`.
pub fn svd_register(source: &PointCloud, target: &PointCloud, mode: RegistrationMode) -> Result<RegistrationResult> {
    require_non_empty(source, "source")?;
    require_non_empty(target, "target")?;
    let (src, tgt) = (source.points(), target.points());
    match mode {
        RegistrationMode::Corresponded => {
            let transform = kabsch(src, tgt)?;
            Ok(RegistrationResult {
                transform,
                rms_residual: rms_pairs(&transform, src, tgt),
                iterations: 1,
            })
        }
        RegistrationMode::NearestNeighbor => {
            let matched: Vec<_> = src.iter().map(|p| tgt[nearest(p, tgt).0]).collect();
            let transform = kabsch(src, &matched)?;
            Ok(RegistrationResult {
                transform,
                rms_residual: rms_pairs(&transform, src, &matched),
                iterations: 1,
            })
        }
    }
}

/// Iterative closest point, started from centroid alignment.
///
/// Each iteration matches source→target and target→source nearest
/// neighbours and fits one Kabsch transform to the union of the pairs, so the
/// symmetric residual never increases. Returns the result and the residual
/// after every iteration.
pub fn icp_register_traced(
    source: &PointCloud,
    target: &PointCloud,
    max_iters: usize,
    tol: f64,
) -> Result<(RegistrationResult, Vec<f64>)> {
    require_non_empty(source, "source")?;
    require_non_empty(target, "target")?;
    let (src, tgt) = (source.points(), target.points());
    let mut current = RigidTransform::from_translation(target.centroid() - source.centroid());
    let mut prev = rms_symmetric(&moved_points(&current, src), tgt);
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let moved = moved_points(&current, src);
        let mut from = Vec::with_capacity(src.len() + tgt.len());
        let mut to = Vec::with_capacity(src.len() + tgt.len());
        for p in &moved {
            from.push(*p);
            to.push(tgt[nearest(p, tgt).0]);
        }
        for q in tgt {
            from.push(moved[nearest(q, &moved).0]);
            to.push(*q);
        }
        let step = kabsch(&from, &to)?;
        current = step.compose(&current);
        let r = rms_symmetric(&moved_points(&current, src), tgt);
        history.push(r);
        let improvement = prev - r;
        prev = r;
        if improvement < tol {
            break;
        }
    }
    Ok((
        RegistrationResult {
            transform: current,
            rms_residual: prev,
            iterations,
        },
        history,
    ))
}

pub fn icp_register(source: &PointCloud, target: &PointCloud, max_iters: usize, tol: f64) -> Result<RegistrationResult> {
    icp_register_traced(source, target, max_iters, tol).map(|(r, _)| r)
}

/// Synthetic sensor corruption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionParams {
    pub drop_fraction: f64,
    pub point_noise_sigma: f64,
    /// Half-range of the uniform per-axis translation jitter, meters.
    pub pose_jitter_translation: f64,
    /// Half-range of the uniform per-axis Euler jitter, radians.
    pub pose_jitter_euler: f64,
}

impl CorruptionParams {
    pub const NONE: CorruptionParams = CorruptionParams {
        drop_fraction: 0.0,
        point_noise_sigma: 0.0,
        pose_jitter_translation: 0.0,
        pose_jitter_euler: 0.0,
    };

    /// Simulator perception corruption: ±2 cm, ±30°, 3 mm noise, 20 % drop.
    pub fn simulation() -> Self {
        Self {
            drop_fraction: 0.2,
            point_noise_sigma: 0.003,
            pose_jitter_translation: 0.02,
            pose_jitter_euler: 30f64.to_radians(),
        }
    }

    /// Encoder pre-training corruption: 5 mm noise, 20 % drop, pose jitter.
    pub fn pretraining() -> Self {
        Self {
            point_noise_sigma: 0.005,
            ..Self::simulation()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.drop_fraction)
            && self.point_noise_sigma >= 0.0
            && self.pose_jitter_translation >= 0.0
            && self.pose_jitter_euler >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::input(format!("invalid corruption params {self:?}")))
        }
    }

    pub fn without_pose_jitter(&self) -> Self {
        Self {
            pose_jitter_translation: 0.0,
            pose_jitter_euler: 0.0,
            ..*self
        }
    }

    pub fn kept_count(&self, n: usize) -> usize {
        n - (self.drop_fraction * n as f64).floor() as usize
    }
}

/// Uniform pose jitter about `pivot`: `p ↦ R(p − pivot) + pivot + t`.
pub fn pose_jitter<R: Rng + ?Sized>(params: &CorruptionParams, pivot: &Vector3<f64>, rng: &mut R) -> RigidTransform {
    let (dt, de) = (params.pose_jitter_translation, params.pose_jitter_euler);
    let mut draw = |h: f64| rng.gen_range(-h..=h);
    let t = Vector3::new(draw(dt), draw(dt), draw(dt));
    let e = Vector3::new(draw(de), draw(de), draw(de));
    let rot = RigidTransform::from_euler_xyz(Vector3::zeros(), e);
    RigidTransform::new(pivot + t - rot.rotation * pivot, rot.rotation)
}

/// Applies pose jitter about the centroid, Gaussian point noise, then drops
/// `⌊drop_fraction·n⌋` points. Returns the surviving original indices too.
pub fn corrupt_indexed<R: Rng + ?Sized>(
    cloud: &PointCloud,
    params: &CorruptionParams,
    rng: &mut R,
) -> Result<(PointCloud, Vec<usize>)> {
    params.validate()?;
    require_non_empty(cloud, "input")?;
    let n = cloud.len();
    let keep = params.kept_count(n);
    if keep < 3 {
        return Err(Error::input(format!("only {keep} points would survive the drop")));
    }
    let jitter = pose_jitter(params, &cloud.centroid(), rng);
    let m = jitter.rotation_matrix();
    let noise = Normal::new(0.0, params.point_noise_sigma).map_err(|e| Error::input(e.to_string()))?;
    let mut pts: Vec<Vector3<f64>> = cloud
        .points()
        .iter()
        .map(|p| {
            let q = m * p + jitter.translation;
            q + Vector3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng))
        })
        .collect();
    let mut dropped = vec![false; n];
    for i in index::sample(rng, n, n - keep).into_iter() {
        dropped[i] = true;
    }
    let kept: Vec<usize> = (0..n).filter(|&i| !dropped[i]).collect();
    pts = kept.iter().map(|&i| pts[i]).collect();
    Ok((PointCloud::from_points_unchecked(pts), kept))
}

pub fn corrupt<R: Rng + ?Sized>(cloud: &PointCloud, params: &CorruptionParams, rng: &mut R) -> Result<PointCloud> {
    corrupt_indexed(cloud, params, rng).map(|(c, _)| c)
}

/// One centroid per occupied voxel, in order of first occupancy.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud> {
    if !(voxel > 0.0) {
        return Err(Error::input(format!("voxel size must be positive, got {voxel}")));
    }
    let mut slots: HashMap<(i64, i64, i64), usize> = HashMap::new();
    let mut sums: Vec<(Vector3<f64>, usize)> = Vec::new();
    for p in cloud.points() {
        let key = (
            (p.x / voxel).floor() as i64,
            (p.y / voxel).floor() as i64,
            (p.z / voxel).floor() as i64,
        );
        let slot = *slots.entry(key).or_insert_with(|| {
            sums.push((Vector3::zeros(), 0));
            sums.len() - 1
        });
        sums[slot].0 += p;
        sums[slot].1 += 1;
    }
    Ok(PointCloud::from_points_unchecked(
        sums.into_iter()
            .map(|(s, c)| if c == 1 { s } else { s / c as f64 })
            .collect(),
    ))
}

/// Exactly `n` points: without replacement (order preserved) when the cloud
/// is large enough, with replacement otherwise.
pub fn resample_fixed<R: Rng + ?Sized>(cloud: &PointCloud, n: usize, rng: &mut R) -> Result<PointCloud> {
    require_non_empty(cloud, "input")?;
    let len = cloud.len();
    let idx: Vec<usize> = if len >= n {
        let mut v = index::sample(rng, len, n).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..n).map(|_| rng.gen_range(0..len)).collect()
    };
    Ok(cloud.select(&idx))
}

/// Linear and angular velocity of the tool frame, hand base frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ToolKinematicState {
    pub v: Vector3<f64>,
    pub omega: Vector3<f64>,
}

/// Finite-difference velocities between two poses `dt` apart.
///
/// `ω` comes from the matrix logarithm of the relative rotation, expressed in
/// the parent frame. For relative angles near π the branch with the smaller
/// `|ω|` is taken, so the result jumps as the angle crosses π.
pub fn differentiate_pose(prev: &RigidTransform, curr: &RigidTransform, dt: f64) -> Result<ToolKinematicState> {
    if !(dt > 0.0) {
        return Err(Error::input(format!("dt must be positive, got {dt}")));
    }
    let v = (curr.translation - prev.translation) / dt;
    let rel = curr.rotation * prev.rotation.inverse();
    Ok(ToolKinematicState {
        v,
        omega: rel.scaled_axis() / dt,
    })
}

/// `α·current + (1−α)·prev_smoothed`.
pub fn ema(prev_smoothed: &[f64], current: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if prev_smoothed.len() != current.len() {
        return Err(Error::input(format!(
            "EMA length mismatch: {} vs {}",
            prev_smoothed.len(),
            current.len()
        )));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::input(format!("EMA alpha must be in (0, 1], got {alpha}")));
    }
    Ok(prev_smoothed
        .iter()
        .zip(current)
        .map(|(p, c)| alpha * c + (1.0 - alpha) * p)
        .collect())
}

pub const EMA_ALPHA: f64 = 0.9;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ArmSampling, HingeToolSpec, ToolConfiguration};
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn pc(v: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(v.iter().map(|p| Vector3::from(*p)).collect()).unwrap()
    }

    fn random_cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)))
                .collect(),
        )
        .unwrap()
    }

    fn random_transform(rng: &mut impl Rng, max_angle: f64, max_t: f64) -> RigidTransform {
        let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
        RigidTransform::new(
            Vector3::new(rng.gen_range(-max_t..max_t), rng.gen_range(-max_t..max_t), rng.gen_range(-max_t..max_t)),
            UnitQuaternion::from_scaled_axis(axis * rng.gen_range(0.0..max_angle)),
        )
    }

    /// Independent Chamfer: exhaustive pair enumeration.
    fn brute_chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
        let d = |p: &[f64; 3], q: &[f64; 3]| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>();
        let side = |x: &[[f64; 3]], y: &[[f64; 3]]| {
            x.iter().map(|p| y.iter().map(|q| d(p, q)).fold(f64::INFINITY, f64::min)).sum::<f64>() / x.len() as f64
        };
        0.5 * (side(a, b) + side(b, a))
    }

    #[test]
    fn chamfer_examples() {
        let a = pc(&[[0.0, 0.0, 0.0], [0.3, 0.1, 0.0]]);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert_eq!(chamfer(&pc(&[[0.0; 3]]), &pc(&[[1.0, 0.0, 0.0]])).unwrap(), 1.0);
        let x = [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let y = [[1.0, 0.0, 0.0]];
        // Oracle gives ((1 + 1)/2 + 1)/2 = 1.
        assert_eq!(brute_chamfer(&x, &y), 1.0);
        assert_eq!(chamfer(&pc(&x), &pc(&y)).unwrap(), 1.0);
        assert!(chamfer(&PointCloud::default(), &a).is_err());
    }

    #[test]
    fn chamfer_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pred = random_cloud(&mut rng, 7).into_points();
        let target = random_cloud(&mut rng, 5).into_points();
        let (v, g) = chamfer_with_grad(&pred, &target);
        assert!((v - chamfer_points(&pred, &target)).abs() < 1e-15);
        for i in 0..pred.len() {
            for k in 0..3 {
                let mut up = pred.clone();
                let mut dn = pred.clone();
                up[i][k] += 1e-7;
                dn[i][k] -= 1e-7;
                let num = (chamfer_points(&up, &target) - chamfer_points(&dn, &target)) / 2e-7;
                assert!((num - g[i][k]).abs() < 1e-6, "{num} vs {}", g[i][k]);
            }
        }
    }

    #[test]
    fn registration_recovers_random_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let src = random_cloud(&mut rng, 64);
            let t0 = random_transform(&mut rng, PI, 1.0);
            let tgt = t0.apply_cloud(&src);
            let r = svd_register(&src, &tgt, RegistrationMode::Corresponded).unwrap();
            let (dr, dt) = r.transform.distance(&t0);
            assert!(dr <= 1e-9 && dt <= 1e-9, "{dr} {dt}");
            assert!(r.rms_residual <= 1e-9);
        }
    }

    #[test]
    fn registration_identity_and_coplanar() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let src = random_cloud(&mut rng, 30);
        let r = svd_register(&src, &src, RegistrationMode::Corresponded).unwrap();
        assert!(r.transform.distance(&RigidTransform::identity()).0 < 1e-12);
        assert!(r.rms_residual < 1e-12);

        // Planar cloud rotated in-plane: Σ has a zero singular value, the sign fix matters.
        let planar = PointCloud::new((0..20).map(|i| Vector3::new((i % 5) as f64 * 0.01, (i / 5) as f64 * 0.02, 0.0)).collect()).unwrap();
        let t0 = RigidTransform::from_euler_xyz(Vector3::new(0.01, -0.02, 0.0), Vector3::new(0.0, 0.0, 0.7));
        let r = svd_register(&planar, &t0.apply_cloud(&planar), RegistrationMode::Corresponded).unwrap();
        let (dr, dt) = r.transform.distance(&t0);
        assert!(dr < 1e-6 && dt < 1e-6);
        assert!((r.transform.rotation_matrix().determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn registration_rejects_degenerate_and_mismatched() {
        let line = pc(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        assert!(matches!(
            svd_register(&line, &line, RegistrationMode::Corresponded),
            Err(Error::DegenerateGeometry(_))
        ));
        let tri = pc(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        assert!(svd_register(&tri, &line, RegistrationMode::Corresponded).is_err());
    }

    #[test]
    fn icp_aligned_and_perturbed() {
        let spec = HingeToolSpec::default();
        let cloud = spec.canonical_cloud();
        let (r, hist) = icp_register_traced(&cloud, &cloud, 50, 1e-9).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(hist.len(), 1);
        assert!(r.transform.distance(&RigidTransform::identity()).1 < 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let t0 = random_transform(&mut rng, 5f64.to_radians(), 0.005 / 3f64.sqrt());
            let tgt = t0.apply_cloud(&cloud);
            let (r, hist) = icp_register_traced(&cloud, &tgt, 100, 1e-12).unwrap();
            assert!((r.transform.translation - t0.translation).norm() < 1e-3);
            let ang = (r.transform.rotation.inverse() * t0.rotation).angle();
            assert!(ang < 1f64.to_radians());
            for w in hist.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
        }
    }

    #[test]
    fn corrupt_zero_params_is_identity() {
        let spec = HingeToolSpec::default();
        let cloud = spec.canonical_cloud();
        let out = corrupt(&cloud, &CorruptionParams::NONE, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(out, cloud);
    }

    #[test]
    fn corrupt_drops_floor_fraction() {
        let spec = HingeToolSpec::default();
        let cloud = spec.canonical_cloud();
        let p = CorruptionParams {
            drop_fraction: 0.2,
            ..CorruptionParams::NONE
        };
        let (out, kept) = corrupt_indexed(&cloud, &p, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(out.len(), 205);
        assert!(kept.windows(2).all(|w| w[0] < w[1]));
        for (k, p) in kept.iter().zip(out.points()) {
            assert_eq!(cloud.points()[*k], *p);
        }
        let tiny = pc(&[[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        assert!(corrupt(&tiny, &CorruptionParams { drop_fraction: 0.5, ..CorruptionParams::NONE }, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn corrupt_noise_std_matches_sigma() {
        let base = PointCloud::new(vec![Vector3::zeros(); 10_000]).unwrap();
        let p = CorruptionParams {
            point_noise_sigma: 0.005,
            ..CorruptionParams::NONE
        };
        let out = corrupt(&base, &p, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for k in 0..3 {
            let xs: Vec<f64> = out.points().iter().map(|q| q[k]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
            assert!((var.sqrt() - 0.005).abs() < 0.0005, "axis {k}: {}", var.sqrt());
        }
    }

    #[test]
    fn corrupt_pose_jitter_is_bounded_and_seeded() {
        let spec = HingeToolSpec::default();
        let cloud = spec.canonical_cloud();
        let p = CorruptionParams::simulation().without_pose_jitter();
        let p = CorruptionParams { pose_jitter_translation: 0.02, pose_jitter_euler: 0.5, ..p };
        let a = corrupt(&cloud, &p, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = corrupt(&cloud, &p, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        let p = CorruptionParams { point_noise_sigma: 0.0, drop_fraction: 0.0, ..p };
        let j = corrupt(&cloud, &p, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let shift = j.centroid() - cloud.centroid();
        assert!(shift.iter().all(|c| c.abs() <= 0.02 + 1e-12));
    }

    #[test]
    fn voxel_cases() {
        let one = pc(&[[0.0001, 0.0002, 0.0003], [0.0011, 0.0012, 0.0013]]);
        let v = voxel_downsample(&one, 0.002).unwrap();
        assert_eq!(v.len(), 1);
        assert!((v.points()[0] - Vector3::new(0.0006, 0.0007, 0.0008)).norm() < 1e-15);

        let grid: Vec<[f64; 3]> = (0..27).map(|i| [(i % 3) as f64 * 0.004 + 0.001, ((i / 3) % 3) as f64 * 0.004 + 0.001, (i / 9) as f64 * 0.004 + 0.001]).collect();
        let g = pc(&grid);
        assert_eq!(voxel_downsample(&g, 0.002).unwrap(), g);
        assert!(voxel_downsample(&g, 0.0).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cloud = random_cloud(&mut rng, 1000);
        let voxel = 0.02;
        let mut distinct: Vec<[i64; 3]> = cloud
            .points()
            .iter()
            .map(|p| [(p.x / voxel).floor() as i64, (p.y / voxel).floor() as i64, (p.z / voxel).floor() as i64])
            .collect();
        distinct.sort();
        distinct.dedup();
        assert_eq!(voxel_downsample(&cloud, voxel).unwrap().len(), distinct.len());
    }

    #[test]
    fn resample_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cloud = random_cloud(&mut rng, 300);
        let same = resample_fixed(&cloud, 300, &mut rng).unwrap();
        assert_eq!(same, cloud);
        let sub = resample_fixed(&cloud, 256, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(sub.len(), 256);
        assert!(sub.points().iter().all(|p| cloud.points().contains(p)));
        assert_eq!(sub, resample_fixed(&cloud, 256, &mut ChaCha8Rng::seed_from_u64(1)).unwrap());
        let up = resample_fixed(&sub, 400, &mut rng).unwrap();
        assert_eq!(up.len(), 400);
        assert!(up.points().iter().all(|p| sub.points().contains(p)));
    }

    #[test]
    fn differentiate_pose_cases() {
        let id = RigidTransform::identity();
        let s = differentiate_pose(&id, &id, 0.05).unwrap();
        assert_eq!(s.v, Vector3::zeros());
        assert_eq!(s.omega, Vector3::zeros());
        let step = RigidTransform::from_translation(Vector3::new(0.005, 0.0, 0.0));
        assert!((differentiate_pose(&id, &step, 0.05).unwrap().v.norm() - 0.1).abs() < 1e-12);

        // Matrix-log oracle: for a z rotation, log(R) = θ·ẑ with θ = atan2(R10, R00).
        let rz = RigidTransform::from_euler_xyz(Vector3::zeros(), Vector3::new(0.0, 0.0, PI / 40.0));
        let m = rz.rotation_matrix();
        let theta = m[(1, 0)].atan2(m[(0, 0)]);
        let s = differentiate_pose(&id, &rz, 0.05).unwrap();
        assert!((s.omega - Vector3::new(0.0, 0.0, theta / 0.05)).norm() < 1e-9);
        assert!((s.omega - Vector3::new(0.0, 0.0, PI / 2.0)).norm() < 1e-9);
        assert!(differentiate_pose(&id, &id, 0.0).is_err());
    }

    #[test]
    fn ema_cases() {
        assert_eq!(ema(&[0.3, 0.4], &[0.3, 0.4], 0.9).unwrap(), vec![0.3, 0.4]);
        assert!((ema(&[0.0], &[1.0], 0.9).unwrap()[0] - 0.9).abs() < 1e-15);
        let mut s = vec![0.0];
        for k in 1..=20 {
            s = ema(&s, &[1.0], 0.9).unwrap();
            assert!(((1.0 - s[0]) - 0.1f64.powi(k)).abs() < 1e-12);
        }
        assert!(ema(&[0.0], &[1.0, 2.0], 0.9).is_err());
        assert!(ema(&[0.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn binary_and_csv_forms() {
        let spec = HingeToolSpec::default();
        let cfg = ToolConfiguration::new(&spec, RigidTransform::identity(), 0.3);
        let cloud = spec.sample_cloud(&cfg, ArmSampling::Uniform, &mut ChaCha8Rng::seed_from_u64(3));
        let bytes = cloud.to_bytes();
        assert_eq!(&bytes[..4], &256u32.to_le_bytes());
        assert_eq!(bytes.len(), 4 + 256 * 24);
        assert_eq!(PointCloud::read_binary(&bytes[..]).unwrap(), cloud);
        assert_eq!(PointCloud::from_csv(&cloud.to_csv()).unwrap(), cloud);
    }

    proptest! {
        #[test]
        fn chamfer_symmetric_and_order_invariant(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_cloud(&mut rng, 12);
            let b = random_cloud(&mut rng, 9);
            let ab = chamfer(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - chamfer(&b, &a).unwrap()).abs() < 1e-15);
            let mut rev = a.clone().into_points();
            rev.reverse();
            prop_assert!((ab - chamfer(&PointCloud::new(rev).unwrap(), &b).unwrap()).abs() < 1e-15);
        }

        #[test]
        fn differentiation_inverts_displacement(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_transform(&mut rng, PI, 1.0);
            let v: Vector3<f64> = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let w: Vector3<f64> = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let w: Vector3<f64> = w * (1.9 / w.norm().max(1e-9)) * rng.gen_range(0.0..1.0);
            let dt = 0.05;
            let s = differentiate_pose(&t, &t.displaced(&v, &w, dt), dt).unwrap();
            prop_assert!((s.v - v).norm() < 1e-6);
            prop_assert!((s.omega - w).norm() < 1e-6);
        }
    }
}
