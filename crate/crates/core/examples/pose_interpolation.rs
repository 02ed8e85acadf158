//! Constant-twist interpolation between two poses: the camera trajectory
//! model used inside one exposure.

use blurtrack::lie::{se3_exp, se3_log, LocalTrajectory, Pose, Twist};
use nalgebra::{UnitQuaternion, Vector3};

fn main() {
    let start = Pose::identity();
    let end = Pose::new(
        UnitQuaternion::from_euler_angles(0.0, 0.0, 30f64.to_radians()),
        Vector3::new(0.10, 0.02, 0.0),
    );
    let exposure = 0.02; // seconds
    let traj = LocalTrajectory::new(start, end, exposure).expect("valid trajectory");

    println!("relative twist: {:?}", traj.rel_twist());
    for i in 0..=4 {
        let t = exposure * i as f64 / 4.0;
        let pose = traj.pose_at(t).expect("t within exposure");
        let p = pose.translation();
        println!(
            "t = {:.4}s  angle = {:6.2} deg  translation = ({:+.4}, {:+.4}, {:+.4})",
            t,
            pose.rotation().angle().to_degrees(),
            p.x,
            p.y,
            p.z
        );
    }

    // exp/log round trip.
    let xi = Twist::new(Vector3::new(0.2, -0.1, 0.4), Vector3::new(0.5, 0.0, -0.3));
    let back = se3_log(&se3_exp(&xi)).expect("angle below pi");
    println!(
        "exp/log round-trip error: {:.3e}",
        (back.as_vector() - xi.as_vector()).norm()
    );
}
