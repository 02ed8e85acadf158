//! Trajectory metrics: timestamp association, rigid/similarity alignment and
//! RMSE ATE on hand-built trajectories.

use blurtrack::eval::{associate, compute_ate, AlignMode, Trajectory};
use blurtrack::lie::Pose;
use nalgebra::{UnitQuaternion, Vector3};

fn spiral(n: usize, scale: f64, offset: Vector3<f64>) -> Trajectory {
    Trajectory::new(
        (0..n)
            .map(|k| {
                let t = k as f64 * 0.1;
                let p = Vector3::new((t * 1.3).sin(), 0.5 * t, (t * 1.3).cos()) * scale + offset;
                (t, Pose::new(UnitQuaternion::identity(), p))
            })
            .collect(),
    )
    .expect("monotonic timestamps")
}

fn main() {
    let gt = spiral(30, 1.0, Vector3::zeros());
    // A scaled, shifted copy of the same path: monocular scale ambiguity.
    let est = spiral(30, 0.4, Vector3::new(2.0, -1.0, 0.5));

    let pairs = associate(&est, &gt, 0.01).expect("association");
    println!("associated {} pose pairs", pairs.len());

    let rigid = compute_ate(&est, &gt, 0.01, AlignMode::Rigid).expect("rigid ATE");
    let sim = compute_ate(&est, &gt, 0.01, AlignMode::Similarity).expect("similarity ATE");
    println!(
        "rigid alignment:      rmse {:.6} m (scale fixed at 1)",
        rigid.rmse
    );
    println!(
        "similarity alignment: rmse {:.6} m (recovered scale {:.3})",
        sim.rmse, sim.transform.scale
    );
}
