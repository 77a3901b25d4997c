//! Recovers a random rigid transform from a posed tool cloud, first with
//! known correspondences and then with ICP on a corrupted copy.

use hingegrasp::cloud::{corrupt, icp_register, svd_register, CorruptionParams, RegistrationMode};
use hingegrasp::geometry::{HingeToolSpec, RigidTransform};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hingegrasp::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = HingeToolSpec::default();
    let canonical = spec.canonical_cloud();
    let truth = RigidTransform::from_euler_xyz(Vector3::new(0.02, -0.01, 0.3), Vector3::new(0.3, -0.2, 0.5));
    let observed = truth.apply_cloud(&canonical);

    let exact = svd_register(&canonical, &observed, RegistrationMode::Corresponded)?;
    let (rot, trans) = exact.transform.distance(&truth);
    println!("corresponded: rotation error {rot:.2e} rad, translation error {trans:.2e} m");

    let noisy = corrupt(&observed, &CorruptionParams::simulation().without_pose_jitter(), &mut rng)?;
    let icp = icp_register(&canonical, &noisy, 50, 1e-10)?;
    let (rot, trans) = icp.transform.distance(&truth);
    println!(
        "icp on {} of {} points: {} iterations, rms {:.4} m, rotation error {rot:.3} rad, translation error {trans:.4} m",
        noisy.len(),
        canonical.len(),
        icp.iterations,
        icp.rms_residual
    );
    Ok(())
}
