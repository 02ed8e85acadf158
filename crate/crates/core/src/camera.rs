//! Pinhole projection and fronto-parallel-plane pixel transfer.
//!
//! `transfer_via_plane` maps a pixel of a virtual camera frame onto the
//! reference image through the plane `z = d` defined in the reference frame:
//! the pixel's unit ray is scaled so that, once mapped through the
//! virtual-to-reference transform `T_i`, the point lands on the plane, and the
//! result is projected into the reference view. The scale factor comes
//! directly from quaternion components of `T_i` (`q0, q1, q2` below are half
//! of, respectively twice of, the third row of the rotation matrix).

use nalgebra::{Matrix2x3, Matrix2x6, Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::imgproc::ImgError;
use crate::lie::{skew, Pose};

const MIN_PROJECT_Z: f64 = 1e-6;
const MIN_LAMBDA: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("point z = {0} is behind the camera")]
    BehindCamera(f64),
    #[error("depth {0} is not positive")]
    NonPositiveDepth(f64),
    #[error("ray is parallel to the transfer plane (lambda = {0})")]
    RayParallelToPlane(f64),
    #[error("plane intersection at scale {0} lies behind the virtual camera")]
    IntersectionBehindCamera(f64),
    #[error("bad calibration file: {0}")]
    BadCalib(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl PinholeCamera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        PinholeCamera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        }
    }

    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>, CameraError> {
        if p.z <= MIN_PROJECT_Z {
            return Err(CameraError::BehindCamera(p.z));
        }
        Ok(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    pub fn backproject_depth(&self, x: &Vector2<f64>, d: f64) -> Result<Vector3<f64>, CameraError> {
        if d <= 0.0 {
            return Err(CameraError::NonPositiveDepth(d));
        }
        Ok(Vector3::new(
            (x.x - self.cx) / self.fx * d,
            (x.y - self.cy) / self.fy * d,
            d,
        ))
    }

    /// Unit-norm ray through pixel `x`.
    pub fn backproject_unit(&self, x: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((x.x - self.cx) / self.fx, (x.y - self.cy) / self.fy, 1.0).normalize()
    }

    /// Intrinsics of pyramid level `l` under 2x2 box downsampling.
    ///
    /// Pixel centers sit on the integer lattice, so the principal point maps
    /// as `(c + 0.5) / 2 - 0.5` per level while focal lengths halve.
    pub fn level(&self, l: usize) -> PinholeCamera {
        let scale = (1usize << l) as f64;
        PinholeCamera {
            fx: self.fx / scale,
            fy: self.fy / scale,
            cx: (self.cx + 0.5) / scale - 0.5,
            cy: (self.cy + 0.5) / scale - 0.5,
            width: self.width >> l,
            height: self.height >> l,
        }
    }

    /// True if `x` lies at least `margin` pixels inside the image bounds.
    pub fn contains_with_margin(&self, x: &Vector2<f64>, margin: f64) -> bool {
        x.x >= margin
            && x.y >= margin
            && x.x <= self.width as f64 - 1.0 - margin
            && x.y <= self.height as f64 - 1.0 - margin
    }
}

/// Plain-text calibration file: one line `fx fy cx cy width height`.
pub fn save_calib(cam: &PinholeCamera, path: &std::path::Path) -> Result<(), CameraError> {
    let line = format!(
        "{} {} {} {} {} {}\n",
        cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height
    );
    std::fs::write(path, line)?;
    Ok(())
}

pub fn load_calib(path: &std::path::Path) -> Result<PinholeCamera, CameraError> {
    let text = std::fs::read_to_string(path)?;
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() != 6 {
        return Err(CameraError::BadCalib(format!(
            "expected 6 fields, got {}",
            fields.len()
        )));
    }
    let num = |i: usize| -> Result<f64, CameraError> {
        fields[i]
            .parse()
            .map_err(|_| CameraError::BadCalib(format!("bad field {:?}", fields[i])))
    };
    let cam = PinholeCamera::new(
        num(0)?,
        num(1)?,
        num(2)?,
        num(3)?,
        num(4)? as usize,
        num(5)? as usize,
    );
    if cam.fx <= 0.0 || cam.fy <= 0.0 {
        return Err(CameraError::BadCalib(
            "focal lengths must be positive".into(),
        ));
    }
    Ok(cam)
}

/// Pixel transfer query through the fronto-parallel plane `z = plane_depth`
/// (expressed in the reference frame). `pose` maps virtual-camera points into
/// the reference frame.
#[derive(Debug, Clone, Copy)]
pub struct PlaneTransferQuery<'a> {
    pub pixel: Vector2<f64>,
    pub plane_depth: f64,
    pub pose: &'a Pose,
}

/// Transfer a virtual-frame pixel into the reference image through the plane.
pub fn transfer_via_plane(
    cam: &PinholeCamera,
    q: &PlaneTransferQuery,
) -> Result<Vector2<f64>, CameraError> {
    if q.plane_depth <= 0.0 {
        return Err(CameraError::NonPositiveDepth(q.plane_depth));
    }
    let dir = cam.backproject_unit(&q.pixel);
    let (qw, qx, qy, qz) = q.pose.quaternion_wxyz();
    let q0 = qx * qz - qw * qy;
    let q1 = qx * qw + qy * qz;
    let q2 = qw * qw - qx * qx - qy * qy + qz * qz;
    let lambda = 2.0 * dir.x * q0 + 2.0 * dir.y * q1 + dir.z * q2;
    if lambda.abs() <= MIN_LAMBDA {
        return Err(CameraError::RayParallelToPlane(lambda));
    }
    let s = (q.plane_depth - q.pose.translation().z) / lambda;
    if s <= 0.0 {
        return Err(CameraError::IntersectionBehindCamera(s));
    }
    let p_ref = q.pose.transform(&(dir * s));
    cam.project(&p_ref)
}

/// Transfer plus the 2x6 derivative of the output pixel with respect to a
/// left-twist perturbation of the pose (`[omega; v]` column order).
///
/// Both the ray scale `s = (d - t_z) / lambda` and the mapped point depend on
/// the pose, so the chain rule carries the perturbation through `lambda`,
/// `t_z` and the final projection.
pub fn transfer_with_jacobian(
    cam: &PinholeCamera,
    q: &PlaneTransferQuery,
) -> Result<(Vector2<f64>, Matrix2x6<f64>), CameraError> {
    if q.plane_depth <= 0.0 {
        return Err(CameraError::NonPositiveDepth(q.plane_depth));
    }
    let dir = cam.backproject_unit(&q.pixel);
    let r = q.pose.rotation_matrix();
    let t = q.pose.translation();
    let w = r * dir;
    let lambda = w.z;
    if lambda.abs() <= MIN_LAMBDA {
        return Err(CameraError::RayParallelToPlane(lambda));
    }
    let s = (q.plane_depth - t.z) / lambda;
    if s <= 0.0 {
        return Err(CameraError::IntersectionBehindCamera(s));
    }
    let p_ref = w * s + t;
    let pixel = cam.project(&p_ref)?;

    // d(lambda)/d(omega) and d(t_z)/d perturbation, as row vectors.
    let dlam_dw = Vector3::new(w.y, -w.x, 0.0); // (w x e3)^T
    let dtz_dw = Vector3::new(t.y, -t.x, 0.0); // (t x e3)^T
    let ds_dw = -(dtz_dw + dlam_dw * s) / lambda;
    let ds_dv = Vector3::new(0.0, 0.0, -1.0 / lambda);

    // dp_ref/d(omega) = w * ds_dw^T - s [w]x - [t]x
    let dp_dw = w * ds_dw.transpose() - skew(&w) * s - skew(t);
    // dp_ref/dv = I + w * ds_dv^T
    let dp_dv = Matrix3::identity() + w * ds_dv.transpose();

    let z = p_ref.z;
    let jproj = Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * p_ref.x / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * p_ref.y / (z * z),
    );

    let mut jac = Matrix2x6::zeros();
    jac.fixed_view_mut::<2, 3>(0, 0).copy_from(&(jproj * dp_dw));
    jac.fixed_view_mut::<2, 3>(0, 3).copy_from(&(jproj * dp_dv));
    Ok((pixel, jac))
}

/// Derivative-only convenience wrapper around [`transfer_with_jacobian`].
pub fn transfer_jacobian(
    cam: &PinholeCamera,
    q: &PlaneTransferQuery,
) -> Result<Matrix2x6<f64>, CameraError> {
    transfer_with_jacobian(cam, q).map(|(_, j)| j)
}

impl From<CameraError> for ImgError {
    fn from(e: CameraError) -> Self {
        ImgError::BadFormat(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{se3_exp, Twist};
    use approx::assert_relative_eq;
    use nalgebra::Vector6;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_cam() -> PinholeCamera {
        PinholeCamera::new(500.0, 510.0, 320.0, 240.0, 640, 480)
    }

    pub(crate) fn random_interior_pixel(rng: &mut ChaCha8Rng, cam: &PinholeCamera) -> Vector2<f64> {
        Vector2::new(
            rng.random_range(20.0..cam.width as f64 - 20.0),
            rng.random_range(20.0..cam.height as f64 - 20.0),
        )
    }

    /// Brute-force oracle: parameterize the virtual ray in the reference
    /// frame via the rotation matrix, solve for the plane hit, and project.
    pub(crate) fn transfer_oracle(
        cam: &PinholeCamera,
        q: &PlaneTransferQuery,
    ) -> Option<Vector2<f64>> {
        let dir = cam.backproject_unit(&q.pixel);
        let rotated = q.pose.rotation_matrix() * dir;
        if rotated.z.abs() <= 1e-9 {
            return None;
        }
        let s = (q.plane_depth - q.pose.translation().z) / rotated.z;
        if s <= 0.0 {
            return None;
        }
        let p = rotated * s + q.pose.translation();
        cam.project(&p).ok()
    }

    #[test]
    fn project_optical_axis_and_offsets() {
        let cam = test_cam();
        let px = cam.project(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(px, Vector2::new(320.0, 240.0));
        let px = cam.project(&Vector3::new(1.0, 0.0, 1.0)).unwrap();
        assert_eq!(px, Vector2::new(820.0, 240.0));
        assert!(cam.project(&Vector3::new(0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn backproject_examples() {
        let cam = test_cam();
        let p = cam
            .backproject_depth(&Vector2::new(320.0, 240.0), 3.0)
            .unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 3.0));
        let p = cam
            .backproject_depth(&Vector2::new(320.0 + 500.0, 240.0), 1.0)
            .unwrap();
        assert_relative_eq!(p.x, 1.0, epsilon = 1e-12);
        assert!(cam.backproject_depth(&Vector2::new(1.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn project_backproject_round_trip() {
        let cam = test_cam();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..1000 {
            let x = random_interior_pixel(&mut rng, &cam);
            let d = rng.random_range(0.2..10.0);
            let back = cam.project(&cam.backproject_depth(&x, d).unwrap()).unwrap();
            assert!((back - x).norm() < 1e-9);
            // z component is exactly the requested depth.
            assert_eq!(cam.backproject_depth(&x, d).unwrap().z, d);
        }
    }

    #[test]
    fn backproject_unit_properties() {
        let cam = test_cam();
        assert_relative_eq!(
            cam.backproject_unit(&Vector2::new(320.0, 240.0)).z,
            1.0,
            epsilon = 1e-12
        );
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..200 {
            let x = random_interior_pixel(&mut rng, &cam);
            let u = cam.backproject_unit(&x);
            assert!((u.norm() - 1.0).abs() < 1e-12);
            let d = rng.random_range(0.5..5.0);
            let p = cam.backproject_depth(&x, d).unwrap();
            assert!(u.cross(&p.normalize()).norm() < 1e-9);
        }
    }

    #[test]
    fn level_intrinsics_keep_pixel_centers_aligned() {
        let cam = test_cam();
        let l1 = cam.level(1);
        assert_eq!(l1.width, 320);
        assert_relative_eq!(l1.fx, 250.0);
        assert_relative_eq!(l1.cx, (320.0 + 0.5) / 2.0 - 0.5);
        // A 3D point projects to corresponding coordinates at both levels.
        let p = Vector3::new(0.3, -0.2, 2.0);
        let px0 = cam.project(&p).unwrap();
        let px1 = l1.project(&p).unwrap();
        assert_relative_eq!(px1.x, (px0.x + 0.5) / 2.0 - 0.5, epsilon = 1e-12);
        assert_relative_eq!(px1.y, (px0.y + 0.5) / 2.0 - 0.5, epsilon = 1e-12);
    }

    #[test]
    fn transfer_identity_pose_returns_input_pixel() {
        let cam = test_cam();
        let id = Pose::identity();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..100 {
            let pixel = random_interior_pixel(&mut rng, &cam);
            let d = rng.random_range(0.3..8.0);
            let out = transfer_via_plane(
                &cam,
                &PlaneTransferQuery {
                    pixel,
                    plane_depth: d,
                    pose: &id,
                },
            )
            .unwrap();
            assert!((out - pixel).norm() < 1e-9);
        }
    }

    #[test]
    fn transfer_axial_pullback_keeps_principal_point() {
        let cam = test_cam();
        let d = 2.0;
        let pose = Pose::new(
            nalgebra::UnitQuaternion::identity(),
            Vector3::new(0.0, 0.0, -d / 2.0),
        );
        let out = transfer_via_plane(
            &cam,
            &PlaneTransferQuery {
                pixel: Vector2::new(320.0, 240.0),
                plane_depth: d,
                pose: &pose,
            },
        )
        .unwrap();
        assert!((out - Vector2::new(320.0, 240.0)).norm() < 1e-12);
    }

    fn random_transfer_pose(rng: &mut ChaCha8Rng, max_angle: f64) -> Pose {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        let angle = rng.random_range(0.0..max_angle);
        let t = Vector3::new(
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
        );
        se3_exp(&Twist::new(axis * angle, Vector3::zeros()))
            .compose(&Pose::new(nalgebra::UnitQuaternion::identity(), t))
    }

    #[test]
    fn transfer_matches_ray_plane_oracle() {
        let cam = test_cam();
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let mut checked = 0;
        while checked < 2000 {
            let pose = random_transfer_pose(&mut rng, 10f64.to_radians());
            let pixel = random_interior_pixel(&mut rng, &cam);
            let q = PlaneTransferQuery {
                pixel,
                plane_depth: 2.0,
                pose: &pose,
            };
            let Some(expected) = transfer_oracle(&cam, &q) else {
                continue;
            };
            let got = transfer_via_plane(&cam, &q).unwrap();
            assert!(
                (got - expected).norm() < 1e-9,
                "oracle mismatch: {} px",
                (got - expected).norm()
            );
            checked += 1;
        }
    }

    #[test]
    fn transfer_plane_consistency() {
        let cam = test_cam();
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        for _ in 0..500 {
            let pose = random_transfer_pose(&mut rng, 15f64.to_radians());
            let pixel = random_interior_pixel(&mut rng, &cam);
            let d = rng.random_range(0.5..5.0);
            let q = PlaneTransferQuery {
                pixel,
                plane_depth: d,
                pose: &pose,
            };
            if transfer_via_plane(&cam, &q).is_err() {
                continue;
            }
            // Reconstruct the intersection and check its reference-frame z.
            let dir = cam.backproject_unit(&pixel);
            let w = pose.rotation_matrix() * dir;
            let s = (d - pose.translation().z) / w.z;
            let p_ref = pose.transform(&(dir * s));
            assert!((p_ref.z - d).abs() < 1e-9);
        }
    }

    #[test]
    fn transfer_composition_consistency() {
        let cam = test_cam();
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let mut checked = 0;
        while checked < 300 {
            let pose = random_transfer_pose(&mut rng, 8f64.to_radians());
            let pixel = random_interior_pixel(&mut rng, &cam);
            let d = 2.0;
            let forward = transfer_via_plane(
                &cam,
                &PlaneTransferQuery {
                    pixel,
                    plane_depth: d,
                    pose: &pose,
                },
            );
            let Ok(mid) = forward else { continue };
            // Reversing the roles swaps which frame the plane depth lives in:
            // the same 3D intersection point has depth s * dir.z in the
            // virtual frame, which becomes the reverse transfer's plane depth.
            let dir = cam.backproject_unit(&pixel);
            let w = pose.rotation_matrix() * dir;
            let s = (d - pose.translation().z) / w.z;
            let plane_depth_back = s * dir.z;
            if plane_depth_back <= 0.0 {
                continue;
            }
            let inv = pose.inverse();
            let back = transfer_via_plane(
                &cam,
                &PlaneTransferQuery {
                    pixel: mid,
                    plane_depth: plane_depth_back,
                    pose: &inv,
                },
            );
            let Ok(back) = back else { continue };
            assert!(
                (back - pixel).norm() < 1e-6,
                "round trip moved {} px",
                (back - pixel).norm()
            );
            checked += 1;
        }
    }

    fn transfer_jacobian_fd(
        cam: &PinholeCamera,
        q: &PlaneTransferQuery,
        step: f64,
    ) -> Matrix2x6<f64> {
        let mut jac = Matrix2x6::zeros();
        for j in 0..6 {
            let mut d = Vector6::zeros();
            d[j] = step;
            let plus = se3_exp(&Twist::from_vector(&d)).compose(q.pose);
            let minus = se3_exp(&Twist::from_vector(&(-d))).compose(q.pose);
            let fp = transfer_via_plane(
                cam,
                &PlaneTransferQuery {
                    pixel: q.pixel,
                    plane_depth: q.plane_depth,
                    pose: &plus,
                },
            )
            .unwrap();
            let fm = transfer_via_plane(
                cam,
                &PlaneTransferQuery {
                    pixel: q.pixel,
                    plane_depth: q.plane_depth,
                    pose: &minus,
                },
            )
            .unwrap();
            jac.set_column(j, &((fp - fm) / (2.0 * step)));
        }
        jac
    }

    #[test]
    fn transfer_jacobian_matches_finite_differences() {
        let cam = test_cam();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mut checked = 0;
        while checked < 500 {
            let pose = random_transfer_pose(&mut rng, 10f64.to_radians());
            let pixel = random_interior_pixel(&mut rng, &cam);
            let q = PlaneTransferQuery {
                pixel,
                plane_depth: rng.random_range(1.0..4.0),
                pose: &pose,
            };
            let Ok((_, analytic)) = transfer_with_jacobian(&cam, &q) else {
                continue;
            };
            let numeric = transfer_jacobian_fd(&cam, &q, 1e-6);
            for i in 0..2 {
                for j in 0..6 {
                    let denom = 1.0f64.max(numeric[(i, j)].abs());
                    assert!(
                        (analytic[(i, j)] - numeric[(i, j)]).abs() <= 1e-4 * denom,
                        "entry ({i},{j}): {} vs {}",
                        analytic[(i, j)],
                        numeric[(i, j)]
                    );
                }
            }
            checked += 1;
        }
    }

    #[test]
    fn transfer_jacobian_translation_column_anchor() {
        // Identity pose, pixel at the principal point, plane at depth d:
        // moving the virtual frame along +x moves the transferred pixel by
        // fx/d, confirmed against finite differences (which own the sign).
        let cam = test_cam();
        let id = Pose::identity();
        let d = 1.0;
        let q = PlaneTransferQuery {
            pixel: Vector2::new(320.0, 240.0),
            plane_depth: d,
            pose: &id,
        };
        let (_, jac) = transfer_with_jacobian(&cam, &q).unwrap();
        let numeric = transfer_jacobian_fd(&cam, &q, 1e-6);
        // Translation-x column (index 3 under the [omega; v] stacking).
        assert_relative_eq!(jac[(0, 3)], numeric[(0, 3)], epsilon = 1e-4);
        assert_relative_eq!(jac[(0, 3)].abs(), cam.fx / d, epsilon = 1e-6);
        assert!(jac[(1, 3)].abs() < 1e-9);
    }

    #[test]
    fn transfer_jacobian_plane_normal_translation() {
        let cam = test_cam();
        let id = Pose::identity();
        let q = PlaneTransferQuery {
            pixel: Vector2::new(400.0, 180.0),
            plane_depth: 2.0,
            pose: &id,
        };
        let (_, jac) = transfer_with_jacobian(&cam, &q).unwrap();
        let numeric = transfer_jacobian_fd(&cam, &q, 1e-6);
        for i in 0..2 {
            let denom = 1.0f64.max(numeric[(i, 5)].abs());
            assert!((jac[(i, 5)] - numeric[(i, 5)]).abs() <= 1e-4 * denom);
        }
    }

    #[test]
    fn transfer_first_order_prediction() {
        // The Jacobian predicts the pixel motion of a small perturbation to
        // first order: error shrinks quadratically with the step.
        let cam = test_cam();
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let pose = random_transfer_pose(&mut rng, 5f64.to_radians());
        let q = PlaneTransferQuery {
            pixel: Vector2::new(250.0, 300.0),
            plane_depth: 2.0,
            pose: &pose,
        };
        let (px0, jac) = transfer_with_jacobian(&cam, &q).unwrap();
        for &step in &[1e-3, 1e-4] {
            let mut d = Vector6::zeros();
            d[0] = step;
            d[4] = -step;
            let perturbed = se3_exp(&Twist::from_vector(&d)).compose(&pose);
            let px = transfer_via_plane(
                &cam,
                &PlaneTransferQuery {
                    pixel: q.pixel,
                    plane_depth: q.plane_depth,
                    pose: &perturbed,
                },
            )
            .unwrap();
            let predicted = px0 + jac * d;
            assert!(
                (px - predicted).norm() < 10.0 * step * step * cam.fx,
                "first-order error too large at step {step}"
            );
        }
    }

    #[test]
    fn calib_file_round_trip() {
        let cam = test_cam();
        let dir = std::env::temp_dir().join("blurtrack_calib_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("calib.txt");
        save_calib(&cam, &path).unwrap();
        let back = load_calib(&path).unwrap();
        assert_eq!(cam, back);
    }
}
