//! Synthetic blur-sequence generation on a textured plane.
//!
//! The scene is a fronto-parallel textured plane at `z = plane_depth` in the
//! world frame, so every sharp view is an exact homography of the texture and
//! the ground-truth depth of each pixel is known in closed form. A blurred
//! frame is the pixel-wise average of sharp renders taken at poses
//! interpolated along the frame's ground-truth trajectory.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::camera::{load_calib, save_calib, CameraError, PinholeCamera};
use crate::imgproc::io::{save_pfm, save_pgm};
use crate::imgproc::{GrayImage, ImgError};
use crate::lie::{se3_exp, LieError, LocalTrajectory, Pose, Twist};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("camera does not view the plane from the front")]
    CameraBehindPlane,
    #[error("invalid parameters: {0}")]
    BadParams(String),
    #[error("texture too flat for alignment: mean gradient magnitude {0}")]
    WeakTexture(f64),
    #[error("bad dataset: {0}")]
    BadDataset(String),
    #[error(transparent)]
    Img(#[from] ImgError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Textured plane at `z = plane_depth` (world frame), fronto-parallel to the
/// world axes. The texture is centered on the world z-axis.
#[derive(Debug, Clone)]
pub struct PlanarScene {
    texture: GrayImage,
    plane_depth: f64,
    texel_size: f64,
}

impl PlanarScene {
    pub fn new(texture: GrayImage, plane_depth: f64, texel_size: f64) -> Result<Self, SimError> {
        if plane_depth <= 0.0 || texel_size <= 0.0 {
            return Err(SimError::BadParams(
                "plane depth and texel size must be positive".into(),
            ));
        }
        let energy = texture.mean_gradient_magnitude();
        if energy <= 0.01 {
            return Err(SimError::WeakTexture(energy));
        }
        Ok(PlanarScene {
            texture,
            plane_depth,
            texel_size,
        })
    }

    pub fn texture(&self) -> &GrayImage {
        &self.texture
    }

    pub fn plane_depth(&self) -> f64 {
        self.plane_depth
    }

    pub fn texel_size(&self) -> f64 {
        self.texel_size
    }

    /// Band-limited seeded noise texture: white noise smoothed by a separable
    /// Gaussian, then contrast-stretched. Dense gradients everywhere, unlike
    /// checkerboards with flat regions.
    pub fn noise_texture(width: usize, height: usize, sigma: f64, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let white = GrayImage::from_fn(width, height, |_, _| rng.random_range(0.0..1.0));
        let radius = (3.0 * sigma).ceil() as i64;
        let kernel: Vec<f64> = (-radius..=radius)
            .map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp())
            .collect();
        let ksum: f64 = kernel.iter().sum();

        let blur_pass = |src: &GrayImage, horizontal: bool| -> GrayImage {
            GrayImage::from_fn(width, height, |u, v| {
                let mut acc = 0.0;
                for (i, kw) in kernel.iter().enumerate() {
                    let off = i as i64 - radius;
                    let (su, sv) = if horizontal {
                        ((u as i64 + off).clamp(0, width as i64 - 1), v as i64)
                    } else {
                        (u as i64, (v as i64 + off).clamp(0, height as i64 - 1))
                    };
                    acc += kw * src.at(su as usize, sv as usize);
                }
                acc / ksum
            })
        };
        let smooth = blur_pass(&blur_pass(&white, true), false);

        let lo = smooth.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = smooth
            .data()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-12);
        GrayImage::from_fn(width, height, |u, v| {
            0.02 + 0.96 * (smooth.at(u, v) - lo) / span
        })
    }
}

/// One frame of a generated sequence: exposure window plus the ground-truth
/// world-from-camera trajectory across it.
#[derive(Debug, Clone)]
pub struct FrameSpec {
    pub timestamp: f64,
    pub exposure: f64,
    pub gt_trajectory: LocalTrajectory,
}

/// A sharp render plus its per-pixel validity (rays that missed the texture).
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub image: GrayImage,
    pub valid: Vec<bool>,
}

impl RenderedView {
    pub fn valid_fraction(&self) -> f64 {
        self.valid.iter().filter(|&&b| b).count() as f64 / self.valid.len() as f64
    }
}

fn check_views_plane(
    scene: &PlanarScene,
    cam: &PinholeCamera,
    pose: &Pose,
) -> Result<(), SimError> {
    // dir_w.z is affine in pixel coordinates, so corner checks cover the
    // whole image.
    let corners = [
        (0.0, 0.0),
        (cam.width as f64 - 1.0, 0.0),
        (0.0, cam.height as f64 - 1.0),
        (cam.width as f64 - 1.0, cam.height as f64 - 1.0),
    ];
    let height_above = scene.plane_depth - pose.translation().z;
    for &(u, v) in &corners {
        let dir_c = Vector3::new((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
        let denom = (pose.rotation_matrix() * dir_c).z;
        if denom.abs() < 1e-12 || height_above / denom <= 0.0 {
            return Err(SimError::CameraBehindPlane);
        }
    }
    Ok(())
}

/// Render the plane as seen from `pose` (world-from-camera). Pixels whose
/// rays miss the texture extent are zero and flagged invalid.
pub fn render_sharp(
    scene: &PlanarScene,
    cam: &PinholeCamera,
    pose: &Pose,
) -> Result<RenderedView, SimError> {
    check_views_plane(scene, cam, pose)?;
    let r = pose.rotation_matrix();
    let t = pose.translation();
    let tex = &scene.texture;
    let tw = tex.width() as f64;
    let th = tex.height() as f64;
    let half_u = (tw - 1.0) / 2.0;
    let half_v = (th - 1.0) / 2.0;
    let height_above = scene.plane_depth - t.z;

    let mut data = Vec::with_capacity(cam.width * cam.height);
    let mut valid = Vec::with_capacity(cam.width * cam.height);
    for v in 0..cam.height {
        for u in 0..cam.width {
            let dir_c = Vector3::new(
                (u as f64 - cam.cx) / cam.fx,
                (v as f64 - cam.cy) / cam.fy,
                1.0,
            );
            let dir_w = r * dir_c;
            let s = height_above / dir_w.z;
            let x_world = t.x + s * dir_w.x;
            let y_world = t.y + s * dir_w.y;
            let tu = x_world / scene.texel_size + half_u;
            let tv = y_world / scene.texel_size + half_v;
            if tu >= 0.0 && tu <= tw - 1.0 && tv >= 0.0 && tv <= th - 1.0 {
                data.push(tex.sample_bilinear(tu, tv).expect("bounds checked"));
                valid.push(true);
            } else {
                data.push(0.0);
                valid.push(false);
            }
        }
    }
    Ok(RenderedView {
        image: GrayImage::new(cam.width, cam.height, data)?,
        valid,
    })
}

/// Ground-truth depth (camera-frame z of the plane intersection) per pixel.
pub fn render_depth(
    scene: &PlanarScene,
    cam: &PinholeCamera,
    pose: &Pose,
) -> Result<GrayImage, SimError> {
    check_views_plane(scene, cam, pose)?;
    let r = pose.rotation_matrix();
    let height_above = scene.plane_depth - pose.translation().z;
    Ok(GrayImage::from_fn(cam.width, cam.height, |u, v| {
        let dir_c = Vector3::new(
            (u as f64 - cam.cx) / cam.fx,
            (v as f64 - cam.cy) / cam.fy,
            1.0,
        );
        let dir_w = r * dir_c;
        height_above / dir_w.z
    }))
}

/// Discrete blur formation: average of `n` sharp renders at poses uniformly
/// interpolated along the frame's trajectory (single pose when `n == 1`).
pub fn render_blurred(
    scene: &PlanarScene,
    cam: &PinholeCamera,
    frame: &FrameSpec,
    n: usize,
) -> Result<RenderedView, SimError> {
    if n < 1 {
        return Err(SimError::BadParams(
            "sample count must be at least 1".into(),
        ));
    }
    let traj = &frame.gt_trajectory;
    if n == 1 || traj.rel_twist().norm() == 0.0 {
        return render_sharp(scene, cam, traj.start());
    }
    let mut sum = vec![0.0f64; cam.width * cam.height];
    let mut valid = vec![true; cam.width * cam.height];
    for i in 0..n {
        let s = i as f64 / (n - 1) as f64;
        let pose = traj.pose_at_fraction(s)?;
        let view = render_sharp(scene, cam, &pose)?;
        for (acc, px) in sum.iter_mut().zip(view.image.data()) {
            *acc += px;
        }
        for (ok, v) in valid.iter_mut().zip(&view.valid) {
            *ok &= v;
        }
    }
    let inv_n = 1.0 / n as f64;
    let data = sum.iter().map(|&x| x * inv_n).collect();
    Ok(RenderedView {
        image: GrayImage::new(cam.width, cam.height, data)?,
        valid,
    })
}

/// Common timing parameters of a generated sequence.
#[derive(Debug, Clone, Copy)]
pub struct SequenceTiming {
    pub frame_rate: f64,
    pub exposure: f64,
    pub n_frames: usize,
}

/// Trajectory families for the generator.
#[derive(Debug, Clone)]
pub enum TrajectoryKind {
    ConstantVelocity {
        /// m/s in the world frame.
        velocity: Vector3<f64>,
        /// rad/s, rotation-vector rate.
        angular_velocity: Vector3<f64>,
    },
    SinusoidalShake {
        /// Per-axis translation amplitude (m): `A_i sin(2 pi f t + phase_i)`.
        trans_amplitude: Vector3<f64>,
        trans_phase: Vector3<f64>,
        /// Per-axis rotation-vector amplitude (rad).
        rot_amplitude: Vector3<f64>,
        rot_phase: Vector3<f64>,
        frequency: f64,
    },
}

impl TrajectoryKind {
    fn validate(&self) -> Result<(), SimError> {
        match self {
            TrajectoryKind::ConstantVelocity {
                velocity,
                angular_velocity,
            } => {
                if !velocity
                    .iter()
                    .chain(angular_velocity.iter())
                    .all(|x| x.is_finite())
                {
                    return Err(SimError::BadParams("non-finite velocity".into()));
                }
            }
            TrajectoryKind::SinusoidalShake {
                trans_amplitude,
                rot_amplitude,
                frequency,
                ..
            } => {
                if *frequency <= 0.0 {
                    return Err(SimError::BadParams("frequency must be positive".into()));
                }
                if trans_amplitude.iter().any(|&a| a < 0.0)
                    || rot_amplitude.iter().any(|&a| a < 0.0)
                {
                    return Err(SimError::BadParams(
                        "amplitudes must be non-negative".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// World-from-camera pose of the underlying smooth trajectory at time `t`.
    pub fn pose_at_time(&self, t: f64) -> Pose {
        match self {
            TrajectoryKind::ConstantVelocity {
                velocity,
                angular_velocity,
            } => {
                let rot = se3_exp(&Twist::new(angular_velocity * t, Vector3::zeros()));
                Pose::new(*rot.rotation(), velocity * t)
            }
            TrajectoryKind::SinusoidalShake {
                trans_amplitude,
                trans_phase,
                rot_amplitude,
                rot_phase,
                frequency,
            } => {
                let w = 2.0 * std::f64::consts::PI * frequency;
                let trans = Vector3::new(
                    trans_amplitude.x * (w * t + trans_phase.x).sin(),
                    trans_amplitude.y * (w * t + trans_phase.y).sin(),
                    trans_amplitude.z * (w * t + trans_phase.z).sin(),
                );
                let rotvec = Vector3::new(
                    rot_amplitude.x * (w * t + rot_phase.x).sin(),
                    rot_amplitude.y * (w * t + rot_phase.y).sin(),
                    rot_amplitude.z * (w * t + rot_phase.z).sin(),
                );
                let rot = se3_exp(&Twist::new(rotvec, Vector3::zeros()));
                Pose::new(*rot.rotation(), trans)
            }
        }
    }
}

/// Sample frame specs along a smooth trajectory: each frame's start/end poses
/// come from the same underlying curve.
pub fn synth_trajectory(
    kind: &TrajectoryKind,
    timing: &SequenceTiming,
) -> Result<Vec<FrameSpec>, SimError> {
    kind.validate()?;
    if timing.frame_rate <= 0.0 || timing.n_frames == 0 {
        return Err(SimError::BadParams(
            "frame rate must be positive and at least one frame requested".into(),
        ));
    }
    let period = 1.0 / timing.frame_rate;
    if timing.exposure < 0.0 || timing.exposure >= period {
        return Err(SimError::BadParams(format!(
            "exposure {} must lie in [0, frame period {})",
            timing.exposure, period
        )));
    }
    let mut frames = Vec::with_capacity(timing.n_frames);
    for k in 0..timing.n_frames {
        let t0 = k as f64 * period;
        let start = kind.pose_at_time(t0);
        let end = kind.pose_at_time(t0 + timing.exposure);
        frames.push(FrameSpec {
            timestamp: t0,
            exposure: timing.exposure,
            gt_trajectory: LocalTrajectory::new(start, end, timing.exposure)?,
        });
    }
    Ok(frames)
}

/// Geometric blur-streak length of a frame in pixels: the world point hit by
/// the mid-exposure central ray, projected at the exposure start and end.
pub fn measure_streak(
    scene: &PlanarScene,
    cam: &PinholeCamera,
    frame: &FrameSpec,
) -> Result<f64, SimError> {
    let traj = &frame.gt_trajectory;
    let mid = traj.pose_at_fraction(0.5)?;
    let dir_c = Vector3::new(0.0, 0.0, 1.0);
    let dir_w = mid.rotation_matrix() * dir_c;
    let s = (scene.plane_depth - mid.translation().z) / dir_w.z;
    if s <= 0.0 {
        return Err(SimError::CameraBehindPlane);
    }
    let world_point = mid.translation() + dir_w * s;
    let project_at = |pose: &Pose| -> Result<Vector2<f64>, SimError> {
        let p_cam = pose.inverse().transform(&world_point);
        Ok(cam.project(&p_cam)?)
    };
    let a = project_at(traj.start())?;
    let b = project_at(traj.end())?;
    Ok((a - b).norm())
}

/// Per-frame streak lengths, for summaries and tests.
pub fn measure_streaks(
    scene: &PlanarScene,
    cam: &PinholeCamera,
    frames: &[FrameSpec],
) -> Result<Vec<f64>, SimError> {
    frames
        .iter()
        .map(|f| measure_streak(scene, cam, f))
        .collect()
}

/// Write one pose in TUM trajectory format.
pub fn format_tum_line(timestamp: f64, pose: &Pose) -> String {
    let t = pose.translation();
    let (qw, qx, qy, qz) = pose.quaternion_wxyz();
    format!(
        "{:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}\n",
        timestamp, t.x, t.y, t.z, qx, qy, qz, qw
    )
}

/// Everything `generate_sequence` wrote, plus streak statistics.
#[derive(Debug, Clone)]
pub struct SequenceSummary {
    pub n_frames: usize,
    pub streaks: Vec<f64>,
}

impl SequenceSummary {
    pub fn min_streak(&self) -> f64 {
        self.streaks.iter().cloned().fold(f64::INFINITY, f64::min)
    }
    pub fn max_streak(&self) -> f64 {
        self.streaks.iter().cloned().fold(0.0, f64::max)
    }
    pub fn mean_streak(&self) -> f64 {
        self.streaks.iter().sum::<f64>() / self.streaks.len().max(1) as f64
    }
}

/// Render a full dataset to disk.
///
/// Layout: `calib.txt`, `frames.txt` (one line per frame: `timestamp exposure
/// blurred sharp depth`), `groundtruth.txt` (TUM rows at exposure start, mid
/// and end), images as 8-bit PGM and depth as PFM. The sharp image and depth
/// map are taken at mid-exposure.
pub fn generate_sequence(
    scene: &PlanarScene,
    cam: &PinholeCamera,
    frames: &[FrameSpec],
    n_samples: usize,
    out_dir: &Path,
) -> Result<SequenceSummary, SimError> {
    for pair in frames.windows(2) {
        let end_of_first = pair[0].timestamp + pair[0].exposure;
        if pair[1].timestamp <= end_of_first {
            return Err(SimError::BadParams(
                "frames must be ordered with non-overlapping exposures".into(),
            ));
        }
    }
    std::fs::create_dir_all(out_dir)?;
    save_calib(cam, &out_dir.join("calib.txt"))?;

    let mut frames_txt = std::fs::File::create(out_dir.join("frames.txt"))?;
    let mut gt_txt = std::fs::File::create(out_dir.join("groundtruth.txt"))?;
    let mut streaks = Vec::with_capacity(frames.len());

    for (k, frame) in frames.iter().enumerate() {
        let blur_name = format!("frame_{k:06}_blur.pgm");
        let sharp_name = format!("frame_{k:06}_sharp.pgm");
        let depth_name = format!("frame_{k:06}_depth.pfm");

        let blurred = render_blurred(scene, cam, frame, n_samples)?;
        let mid_pose = frame.gt_trajectory.pose_at_fraction(0.5)?;
        let sharp = render_sharp(scene, cam, &mid_pose)?;
        let depth = render_depth(scene, cam, &mid_pose)?;

        save_pgm(&blurred.image, &out_dir.join(&blur_name))?;
        save_pgm(&sharp.image, &out_dir.join(&sharp_name))?;
        save_pfm(&depth, &out_dir.join(&depth_name))?;

        writeln!(
            frames_txt,
            "{:.9} {:.9} {} {} {}",
            frame.timestamp, frame.exposure, blur_name, sharp_name, depth_name
        )?;

        let traj = &frame.gt_trajectory;
        gt_txt.write_all(format_tum_line(frame.timestamp, traj.start()).as_bytes())?;
        if frame.exposure > 0.0 {
            gt_txt.write_all(
                format_tum_line(frame.timestamp + frame.exposure / 2.0, &mid_pose).as_bytes(),
            )?;
            gt_txt.write_all(
                format_tum_line(frame.timestamp + frame.exposure, traj.end()).as_bytes(),
            )?;
        }

        streaks.push(measure_streak(scene, cam, frame)?);
    }
    Ok(SequenceSummary {
        n_frames: frames.len(),
        streaks,
    })
}

/// A dataset on disk, as produced by [`generate_sequence`].
#[derive(Debug, Clone)]
pub struct Dataset {
    pub cam: PinholeCamera,
    pub frames: Vec<DatasetFrame>,
    pub dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct DatasetFrame {
    pub timestamp: f64,
    pub exposure: f64,
    pub blurred_path: PathBuf,
    pub sharp_path: PathBuf,
    pub depth_path: PathBuf,
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, SimError> {
    let cam = load_calib(&dir.join("calib.txt"))?;
    let frames_text = std::fs::read_to_string(dir.join("frames.txt"))?;
    let mut frames = Vec::new();
    for (lineno, line) in frames_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(SimError::BadDataset(format!(
                "frames.txt line {}: expected 5 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64, SimError> {
            s.parse()
                .map_err(|_| SimError::BadDataset(format!("bad number {s:?}")))
        };
        frames.push(DatasetFrame {
            timestamp: parse(fields[0])?,
            exposure: parse(fields[1])?,
            blurred_path: dir.join(fields[2]),
            sharp_path: dir.join(fields[3]),
            depth_path: dir.join(fields[4]),
        });
    }
    if frames.is_empty() {
        return Err(SimError::BadDataset("dataset has no frames".into()));
    }
    Ok(Dataset {
        cam,
        frames,
        dir: dir.to_path_buf(),
    })
}

/// A stationary world-from-camera pose on the plane normal, looking at the
/// plane from distance `plane_depth`: the natural viewpoint for tests.
pub fn head_on_pose() -> Pose {
    Pose::new(UnitQuaternion::identity(), Vector3::zeros())
}
