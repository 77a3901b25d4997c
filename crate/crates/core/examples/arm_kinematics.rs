//! Drives the 6-joint arm along a straight line with the position Jacobian
//! pseudoinverse.

use hingegrasp::sim::{jacobian_pseudoinverse, SerialArm, DT};
use nalgebra::Vector3;

fn main() -> hingegrasp::Result<()> {
    let arm = SerialArm::default();
    let mut q = arm.home();
    let start = arm.position(&q);
    let velocity = Vector3::new(0.0, 0.05, -0.02);
    for step in 0..=40 {
        if step % 10 == 0 {
            let expected = start + velocity * (step as f64 * DT);
            println!("t={:.2}s  position {:?}  drift {:.2e} m", step as f64 * DT, arm.position(&q).as_slice(), (arm.position(&q) - expected).norm());
        }
        let pinv = jacobian_pseudoinverse(&arm.position_jacobian(&q))?;
        q = arm.clamp(&(q + pinv.matrix * velocity * DT));
    }
    Ok(())
}
