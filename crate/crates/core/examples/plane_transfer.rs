//! Transfer a pixel from a virtual camera frame into the reference view
//! through a fronto-parallel plane, and compare the analytic pose Jacobian
//! against finite differences.

use blurtrack::camera::{transfer_with_jacobian, PinholeCamera, PlaneTransferQuery};
use blurtrack::lie::{se3_exp, Twist};
use nalgebra::{Vector2, Vector3, Vector6};

fn main() {
    let cam = PinholeCamera::new(500.0, 500.0, 319.5, 239.5, 640, 480);
    let pose = se3_exp(&Twist::new(
        Vector3::new(0.01, -0.02, 0.005),
        Vector3::new(0.03, 0.01, -0.02),
    ));
    let query = PlaneTransferQuery {
        pixel: Vector2::new(400.0, 180.0),
        plane_depth: 2.0,
        pose: &pose,
    };

    let (pixel, jac) = transfer_with_jacobian(&cam, &query).expect("valid transfer");
    println!("input pixel  ({:.2}, {:.2})", query.pixel.x, query.pixel.y);
    println!("output pixel ({:.4}, {:.4})", pixel.x, pixel.y);

    // First-order prediction against an actual perturbation.
    let mut delta = Vector6::zeros();
    delta[1] = 2e-4; // rotation about y
    delta[3] = -3e-4; // translation along x
    let perturbed = se3_exp(&Twist::from_vector(&delta)).compose(&pose);
    let moved = blurtrack::camera::transfer_via_plane(
        &cam,
        &PlaneTransferQuery {
            pixel: query.pixel,
            plane_depth: query.plane_depth,
            pose: &perturbed,
        },
    )
    .expect("valid transfer");
    let predicted = pixel + jac * delta;
    println!(
        "perturbed    ({:.4}, {:.4}), first-order prediction ({:.4}, {:.4})",
        moved.x, moved.y, predicted.x, predicted.y
    );
    println!("prediction error: {:.3e} px", (moved - predicted).norm());
}
