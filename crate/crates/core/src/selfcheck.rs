//! Seeded numerical self-checks over the geometric kernels.
//!
//! Each check reports its worst observed error against a fixed tolerance;
//! the report text is deterministic for a given seed. The optional fault
//! injection flips one sign in the interpolation-Jacobian check's analytic
//! side so the harness itself can be shown to catch regressions.

use nalgebra::{Matrix6, UnitQuaternion, Vector2, Vector3, Vector6};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blursim::{head_on_pose, render_blurred, render_sharp, FrameSpec, PlanarScene};
use crate::camera::{
    transfer_via_plane, transfer_with_jacobian, PinholeCamera, PlaneTransferQuery,
};
use crate::eval::{compute_ate, AlignMode, Trajectory};
use crate::imgproc::{GrayImage, ImagePyramid};
use crate::lie::{interp_jacobians, se3_exp, se3_log, LocalTrajectory, Pose, Twist};
use crate::tracker::{residual_and_jacobian, sample_keypoints, Keyframe, TrackerConfig};

#[derive(Debug, Clone)]
pub struct CheckLine {
    pub name: &'static str,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckLine {
    pub fn passed(&self) -> bool {
        self.max_error.is_finite() && self.max_error <= self.tolerance
    }
}

#[derive(Debug, Clone)]
pub struct SelfCheckReport {
    pub seed: u64,
    pub checks: Vec<CheckLine>,
}

impl SelfCheckReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed())
    }

    pub fn render(&self) -> String {
        let mut out = format!("selfcheck seed {}\n", self.seed);
        for c in &self.checks {
            out.push_str(&format!(
                "check {:<28} max_err {:>12.4e}  tol {:>8.1e}  {}\n",
                c.name,
                c.max_error,
                c.tolerance,
                if c.passed() { "PASS" } else { "FAIL" }
            ));
        }
        out.push_str(if self.all_passed() {
            "selfcheck: PASS\n"
        } else {
            "selfcheck: FAIL\n"
        });
        out
    }
}

fn random_twist(rng: &mut ChaCha8Rng, max_angle: f64) -> Twist {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    )
    .normalize();
    Twist::new(
        axis * rng.random_range(0.0..max_angle),
        Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ),
    )
}

fn random_pose(rng: &mut ChaCha8Rng, max_angle: f64) -> Pose {
    se3_exp(&random_twist(rng, max_angle))
}

fn check_exp_log_round_trip(rng: &mut ChaCha8Rng) -> CheckLine {
    let mut worst = 0.0f64;
    for _ in 0..2000 {
        let xi = random_twist(rng, 3.0);
        match se3_log(&se3_exp(&xi)) {
            Ok(back) => {
                worst = worst.max((back.as_vector() - xi.as_vector()).norm());
            }
            Err(_) => worst = f64::INFINITY,
        }
    }
    CheckLine {
        name: "exp_log_round_trip",
        max_error: worst,
        tolerance: 1e-8,
    }
}

fn check_interp_endpoints(rng: &mut ChaCha8Rng) -> CheckLine {
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let traj = match LocalTrajectory::new(random_pose(rng, 1.5), random_pose(rng, 1.5), 0.02) {
            Ok(t) => t,
            Err(_) => continue,
        };
        let at0 = traj.pose_at(0.0).unwrap();
        // t = 0 must be bit-identical to the start pose.
        if at0.translation() != traj.start().translation()
            || at0.rotation().quaternion() != traj.start().rotation().quaternion()
        {
            worst = f64::INFINITY;
        }
        let at_end = traj.pose_at(0.02).unwrap();
        worst = worst
            .max(at_end.rotation_angle_to(traj.end()))
            .max(at_end.translation_distance_to(traj.end()));
    }
    CheckLine {
        name: "interp_endpoint_identity",
        max_error: worst,
        tolerance: 1e-9,
    }
}

fn check_interp_left_invariance(rng: &mut ChaCha8Rng) -> CheckLine {
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let g = random_pose(rng, 2.0);
        let a = random_pose(rng, 1.0);
        let b = random_pose(rng, 1.0);
        let s = rng.random_range(0.0..1.0);
        let direct = crate::lie::interpolate_fraction(&a, &b, s).unwrap();
        let shifted = crate::lie::interpolate_fraction(&g.compose(&a), &g.compose(&b), s).unwrap();
        let expected = g.compose(&direct);
        worst = worst
            .max(shifted.rotation_angle_to(&expected))
            .max(shifted.translation_distance_to(&expected));
    }
    CheckLine {
        name: "interp_left_invariance",
        max_error: worst,
        tolerance: 1e-9,
    }
}

fn interp_jacobians_fd(traj: &LocalTrajectory, s: f64) -> (Matrix6<f64>, Matrix6<f64>) {
    let step = 1e-6;
    let base = traj.pose_at_fraction(s).unwrap();
    let mut j_start = Matrix6::zeros();
    let mut j_end = Matrix6::zeros();
    for col in 0..6 {
        let mut d = Vector6::zeros();
        d[col] = step;
        let dp = se3_exp(&Twist::from_vector(&d));
        let dm = se3_exp(&Twist::from_vector(&(-d)));
        let local = |start: &Pose, end: &Pose| -> Vector6<f64> {
            let t = LocalTrajectory::new(start.clone(), end.clone(), traj.exposure())
                .unwrap()
                .pose_at_fraction(s)
                .unwrap();
            se3_log(&t.compose(&base.inverse())).unwrap().as_vector()
        };
        j_start.set_column(
            col,
            &((local(&dp.compose(traj.start()), traj.end())
                - local(&dm.compose(traj.start()), traj.end()))
                / (2.0 * step)),
        );
        j_end.set_column(
            col,
            &((local(traj.start(), &dp.compose(traj.end()))
                - local(traj.start(), &dm.compose(traj.end())))
                / (2.0 * step)),
        );
    }
    (j_start, j_end)
}

fn matrix_rel_err(a: &Matrix6<f64>, b: &Matrix6<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..6 {
        for j in 0..6 {
            let denom = 1.0f64.max(b[(i, j)].abs());
            worst = worst.max((a[(i, j)] - b[(i, j)]).abs() / denom);
        }
    }
    worst
}

fn check_interp_jacobians(rng: &mut ChaCha8Rng, inject_sign_error: bool) -> CheckLine {
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let traj = match LocalTrajectory::new(random_pose(rng, 1.5), random_pose(rng, 1.5), 0.02) {
            Ok(t) => t,
            Err(_) => continue,
        };
        let s = rng.random_range(0.02..0.98);
        let (mut a_start, mut a_end) = interp_jacobians(&traj, s);
        if inject_sign_error {
            a_end = -a_end;
            a_start = Matrix6::identity() - a_end;
        }
        let (n_start, n_end) = interp_jacobians_fd(&traj, s);
        worst = worst
            .max(matrix_rel_err(&a_start, &n_start))
            .max(matrix_rel_err(&a_end, &n_end));
    }
    CheckLine {
        name: "interp_jacobians_vs_fd",
        max_error: worst,
        tolerance: 1e-4,
    }
}

fn selfcheck_camera() -> PinholeCamera {
    PinholeCamera::new(400.0, 410.0, 319.5, 239.5, 640, 480)
}

fn random_transfer_query(rng: &mut ChaCha8Rng, cam: &PinholeCamera) -> (Vector2<f64>, f64, Pose) {
    let pixel = Vector2::new(
        rng.random_range(20.0..cam.width as f64 - 20.0),
        rng.random_range(20.0..cam.height as f64 - 20.0),
    );
    let depth = rng.random_range(1.0..4.0);
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    )
    .normalize();
    let rot = se3_exp(&Twist::new(
        axis * rng.random_range(0.0..10f64.to_radians()),
        Vector3::zeros(),
    ));
    let pose = Pose::new(
        *rot.rotation(),
        Vector3::new(
            rng.random_range(-0.15..0.15),
            rng.random_range(-0.15..0.15),
            rng.random_range(-0.15..0.15),
        ),
    );
    (pixel, depth, pose)
}

fn check_transfer_oracle(rng: &mut ChaCha8Rng) -> CheckLine {
    let cam = selfcheck_camera();
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 2000 {
        let (pixel, depth, pose) = random_transfer_query(rng, &cam);
        let q = PlaneTransferQuery {
            pixel,
            plane_depth: depth,
            pose: &pose,
        };
        // Independent ray-plane route via the rotation matrix.
        let dir = cam.backproject_unit(&pixel);
        let w = pose.rotation_matrix() * dir;
        if w.z.abs() <= 1e-9 {
            continue;
        }
        let s = (depth - pose.translation().z) / w.z;
        if s <= 0.0 {
            continue;
        }
        let Ok(expected) = cam.project(&(w * s + pose.translation())) else {
            continue;
        };
        match transfer_via_plane(&cam, &q) {
            Ok(got) => worst = worst.max((got - expected).norm()),
            Err(_) => worst = f64::INFINITY,
        }
        checked += 1;
    }
    CheckLine {
        name: "plane_transfer_vs_oracle",
        max_error: worst,
        tolerance: 1e-9,
    }
}

fn check_transfer_jacobian(rng: &mut ChaCha8Rng) -> CheckLine {
    let cam = selfcheck_camera();
    let step = 1e-6;
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 200 {
        let (pixel, depth, pose) = random_transfer_query(rng, &cam);
        let q = PlaneTransferQuery {
            pixel,
            plane_depth: depth,
            pose: &pose,
        };
        let Ok((_, analytic)) = transfer_with_jacobian(&cam, &q) else {
            continue;
        };
        let mut ok = true;
        for col in 0..6 {
            let mut d = Vector6::zeros();
            d[col] = step;
            let plus = se3_exp(&Twist::from_vector(&d)).compose(&pose);
            let minus = se3_exp(&Twist::from_vector(&(-d))).compose(&pose);
            let qp = PlaneTransferQuery {
                pixel,
                plane_depth: depth,
                pose: &plus,
            };
            let qm = PlaneTransferQuery {
                pixel,
                plane_depth: depth,
                pose: &minus,
            };
            let (Ok(fp), Ok(fm)) = (transfer_via_plane(&cam, &qp), transfer_via_plane(&cam, &qm))
            else {
                ok = false;
                break;
            };
            let fd = (fp - fm) / (2.0 * step);
            for r in 0..2 {
                let denom = 1.0f64.max(fd[r].abs());
                worst = worst.max((analytic[(r, col)] - fd[r]).abs() / denom);
            }
        }
        if ok {
            checked += 1;
        }
    }
    CheckLine {
        name: "transfer_jacobian_vs_fd",
        max_error: worst,
        tolerance: 1e-4,
    }
}

fn check_blur_model(seed: u64) -> CheckLine {
    let tex = PlanarScene::noise_texture(256, 256, 2.0, seed ^ 0x5eed);
    let scene = PlanarScene::new(tex, 2.0, 0.012).unwrap();
    let cam = PinholeCamera::new(80.0, 80.0, 31.5, 31.5, 64, 64);
    let end = Pose::new(
        UnitQuaternion::from_euler_angles(0.0, 0.002, 0.0),
        Vector3::new(0.01, -0.004, 0.0),
    );
    let frame = FrameSpec {
        timestamp: 0.0,
        exposure: 0.02,
        gt_trajectory: LocalTrajectory::new(head_on_pose(), end, 0.02).unwrap(),
    };
    let mut worst = 0.0f64;
    for n in [1usize, 2, 8] {
        let blurred = render_blurred(&scene, &cam, &frame, n).unwrap();
        let mut sum = vec![0.0f64; 64 * 64];
        for i in 0..n {
            let s = if n == 1 {
                0.0
            } else {
                i as f64 / (n - 1) as f64
            };
            let pose = frame.gt_trajectory.pose_at_fraction(s).unwrap();
            let view = render_sharp(&scene, &cam, &pose).unwrap();
            for (acc, px) in sum.iter_mut().zip(view.image.data()) {
                *acc += px;
            }
        }
        for (a, b) in blurred.image.data().iter().zip(&sum) {
            let diff = (a - b / n as f64).abs();
            worst = worst.max(diff);
        }
    }
    CheckLine {
        name: "blur_model_vs_mean_oracle",
        max_error: worst,
        // Bit-identical: zero tolerance.
        tolerance: 0.0,
    }
}

fn check_bilinear_ramp() -> CheckLine {
    let w = 64;
    let img = GrayImage::from_fn(w, 32, |u, _| u as f64 / w as f64);
    let got = img.sample_bilinear(2.25, 4.75).unwrap();
    CheckLine {
        name: "bilinear_ramp_exactness",
        max_error: (got - 2.25 / w as f64).abs(),
        tolerance: 1e-9,
    }
}

fn check_pyramid_mean(rng: &mut ChaCha8Rng) -> CheckLine {
    let img = GrayImage::from_fn(64, 64, |_, _| rng.random_range(0.0..1.0));
    let pyr = ImagePyramid::build(&img, 2).unwrap();
    CheckLine {
        name: "pyramid_mean_preservation",
        max_error: (pyr.level(0).mean() - pyr.level(1).mean()).abs(),
        tolerance: 1e-6,
    }
}

fn check_residual_jacobian(seed: u64) -> CheckLine {
    let tex = PlanarScene::noise_texture(512, 512, 3.0, seed ^ 0xbeef);
    let scene = PlanarScene::new(tex, 2.0, 0.01).unwrap();
    let cam = PinholeCamera::new(150.0, 150.0, 79.5, 63.5, 160, 128);
    let cfg = TrackerConfig::default();
    let sharp = render_sharp(&scene, &cam, &head_on_pose()).unwrap();
    let depth = GrayImage::filled(160, 128, 2.0);
    let Ok(kps) = sample_keypoints(&sharp.image, &depth, 24, cfg.patch_radius()) else {
        return CheckLine {
            name: "residual_jacobian_vs_fd",
            max_error: f64::INFINITY,
            tolerance: 1e-3,
        };
    };
    let kf = Keyframe::new(sharp.image, cam, kps, head_on_pose(), 1, cfg.patch_radius()).unwrap();

    let exposure = 0.02;
    let traj = LocalTrajectory::new(
        Pose::new(
            UnitQuaternion::from_euler_angles(0.001, 0.0, -0.001),
            Vector3::new(0.002, 0.001, 0.0),
        ),
        Pose::new(
            UnitQuaternion::from_euler_angles(0.0, 0.002, 0.0),
            Vector3::new(0.008, -0.003, 0.002),
        ),
        exposure,
    )
    .unwrap();
    let n = 4;
    let step = 1e-6;
    let mut worst = 0.0f64;
    for &(ax, ay) in &[(70.0, 50.0), (90.0, 70.0), (60.0, 80.0)] {
        let anchor = Vector2::new(ax, ay);
        let Some((_, jac)) = residual_and_jacobian(&kf, &traj, anchor, 0, 2.0, n, 0.5) else {
            continue;
        };
        for col in 0..12 {
            let eval = |sign: f64| -> Option<f64> {
                let mut d = [0.0f64; 12];
                d[col] = step * sign;
                let ds = Twist::new(
                    Vector3::new(d[0], d[1], d[2]),
                    Vector3::new(d[3], d[4], d[5]),
                );
                let de = Twist::new(
                    Vector3::new(d[6], d[7], d[8]),
                    Vector3::new(d[9], d[10], d[11]),
                );
                let t = LocalTrajectory::new(
                    se3_exp(&ds).compose(traj.start()),
                    se3_exp(&de).compose(traj.end()),
                    exposure,
                )
                .ok()?;
                residual_and_jacobian(&kf, &t, anchor, 0, 2.0, n, 0.5).map(|(r, _)| r)
            };
            let (Some(rp), Some(rm)) = (eval(1.0), eval(-1.0)) else {
                continue;
            };
            let fd = (rp - rm) / (2.0 * step);
            let denom = 1.0f64.max(fd.abs());
            worst = worst.max((jac[col] - fd).abs() / denom);
        }
    }
    CheckLine {
        name: "residual_jacobian_vs_fd",
        max_error: worst,
        tolerance: 1e-3,
    }
}

fn check_metrics() -> CheckLine {
    // Similarity-aligned copy of a random-ish trajectory has zero ATE.
    let gt = Trajectory::new(
        (0..12)
            .map(|k| {
                let t = k as f64 * 0.1;
                (
                    t,
                    Pose::new(
                        UnitQuaternion::identity(),
                        Vector3::new((t * 2.0).sin(), t, (t * 3.0).cos()),
                    ),
                )
            })
            .collect(),
    )
    .unwrap();
    let rot = UnitQuaternion::from_euler_angles(0.3, -0.2, 0.6)
        .to_rotation_matrix()
        .into_inner();
    let est = Trajectory::new(
        gt.samples()
            .iter()
            .map(|(t, p)| {
                (
                    *t,
                    Pose::new(
                        UnitQuaternion::identity(),
                        rot * p.translation() * 0.4 + Vector3::new(1.0, -2.0, 0.5),
                    ),
                )
            })
            .collect(),
    )
    .unwrap();
    let sim = compute_ate(&est, &gt, 0.01, AlignMode::Similarity)
        .map(|r| r.rmse)
        .unwrap_or(f64::INFINITY);

    // Hand-computed 4-pose case with the gauge-orthogonal perturbation.
    let signs = [1.0, -1.0, -1.0, 1.0];
    let gt4 = Trajectory::new(
        (0..4)
            .map(|k| {
                (
                    k as f64,
                    Pose::new(UnitQuaternion::identity(), Vector3::new(0.0, k as f64, 0.0)),
                )
            })
            .collect(),
    )
    .unwrap();
    let est4 = Trajectory::new(
        (0..4)
            .map(|k| {
                (
                    k as f64,
                    Pose::new(
                        UnitQuaternion::identity(),
                        Vector3::new(0.1 * signs[k], k as f64, 0.0),
                    ),
                )
            })
            .collect(),
    )
    .unwrap();
    let hand = compute_ate(&est4, &gt4, 0.01, AlignMode::Rigid)
        .map(|r| (r.rmse - 0.1).abs())
        .unwrap_or(f64::INFINITY);

    CheckLine {
        name: "ate_metrics",
        max_error: sim.max(hand),
        tolerance: 1e-6,
    }
}

/// Run the whole suite with one seed. `inject_sign_error` is a negative
/// control: it corrupts the interpolation-Jacobian check, which must then
/// fail and name that block.
pub fn run_selfcheck(seed: u64, inject_sign_error: bool) -> SelfCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let checks = vec![
        check_exp_log_round_trip(&mut rng),
        check_interp_endpoints(&mut rng),
        check_interp_left_invariance(&mut rng),
        check_interp_jacobians(&mut rng, inject_sign_error),
        check_transfer_oracle(&mut rng),
        check_transfer_jacobian(&mut rng),
        check_blur_model(seed),
        check_bilinear_ramp(),
        check_pyramid_mean(&mut rng),
        check_residual_jacobian(seed),
        check_metrics(),
    ];
    SelfCheckReport { seed, checks }
}
