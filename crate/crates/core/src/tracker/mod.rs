//! Motion-blur-aware direct image alignment.
//!
//! The tracker estimates the camera trajectory within a blurry frame's
//! exposure time, relative to a sharp reference keyframe with known sparse
//! depth. Residuals compare observed blurry intensities against re-blurred
//! predictions: each patch pixel of the current frame is transferred into the
//! keyframe through its keypoint's fronto-parallel plane once per virtual
//! pose along the trajectory, sampled, and averaged. Both endpoint poses are
//! optimized jointly (12 DOF) with Levenberg-Marquardt, coarse to fine.
//!
//! With exposure forced to zero the machinery degenerates exactly to classic
//! sharp direct alignment: one virtual pose, a 6-DOF system, and the end pose
//! tied to the start.

pub mod sequence;

use nalgebra::{DMatrix, DVector, Matrix2x6, Matrix6, RowVector6, Vector2, Vector3};
use thiserror::Error;

use crate::camera::{
    transfer_via_plane, transfer_with_jacobian, PinholeCamera, PlaneTransferQuery,
};
use crate::imgproc::{GrayImage, ImagePyramid, ImgError};
use crate::lie::{interp_jacobians, se3_exp, LieError, LocalTrajectory, Pose, Twist};

const LM_LAMBDA_MAX: f64 = 1e8;
/// Accepted steps improving the mean cost by less than this relative amount
/// terminate the level: the optimizer is churning at the noise floor.
const MIN_RELATIVE_IMPROVEMENT: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("invalid tracker configuration: {0}")]
    ConfigInvalid(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("only {0} keypoints found (need at least 8)")]
    TooFewKeypoints(usize),
    #[error(transparent)]
    Img(#[from] ImgError),
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error(transparent)]
    Sim(#[from] crate::blursim::SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A reference-image pixel with the depth of its fronto-parallel plane.
#[derive(Debug, Clone, Copy)]
pub struct Keypoint {
    pub pixel: Vector2<f64>,
    pub depth: f64,
}

/// Sharp reference frame the tracker aligns against.
#[derive(Debug, Clone)]
pub struct Keyframe {
    pyramid: ImagePyramid,
    cameras: Vec<PinholeCamera>,
    keypoints: Vec<Keypoint>,
    pose: Pose,
}

impl Keyframe {
    /// `pose` is world-from-camera and serves only as the gauge anchor for
    /// sequence outputs; tracking itself is relative to the keyframe.
    pub fn new(
        image: GrayImage,
        cam: PinholeCamera,
        keypoints: Vec<Keypoint>,
        pose: Pose,
        pyramid_levels: usize,
        patch_radius: usize,
    ) -> Result<Self, TrackError> {
        if image.width() != cam.width || image.height() != cam.height {
            return Err(TrackError::DimensionMismatch(format!(
                "image {}x{} vs camera {}x{}",
                image.width(),
                image.height(),
                cam.width,
                cam.height
            )));
        }
        let margin = (patch_radius + 2) as f64;
        for kp in &keypoints {
            if kp.depth <= 0.0 {
                return Err(TrackError::ConfigInvalid(format!(
                    "keypoint depth {} not positive",
                    kp.depth
                )));
            }
            if !cam.contains_with_margin(&kp.pixel, margin) {
                return Err(TrackError::ConfigInvalid(format!(
                    "keypoint ({}, {}) closer than {} px to the border",
                    kp.pixel.x, kp.pixel.y, margin
                )));
            }
        }
        let pyramid = ImagePyramid::build(&image, pyramid_levels)?;
        let cameras = (0..pyramid_levels).map(|l| cam.level(l)).collect();
        Ok(Keyframe {
            pyramid,
            cameras,
            keypoints,
            pose,
        })
    }

    pub fn pyramid(&self) -> &ImagePyramid {
        &self.pyramid
    }

    pub fn camera(&self, level: usize) -> &PinholeCamera {
        &self.cameras[level]
    }

    pub fn keypoints(&self) -> &[Keypoint] {
        &self.keypoints
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    pub fn median_depth(&self) -> f64 {
        let mut depths: Vec<f64> = self.keypoints.iter().map(|k| k.depth).collect();
        depths.sort_by(|a, b| a.partial_cmp(b).unwrap());
        depths[depths.len() / 2]
    }
}

#[derive(Debug, Clone)]
pub struct TrackerConfig {
    /// Odd patch edge length in pixels.
    pub patch_size: usize,
    /// Virtual poses per re-blurred sample when exposure > 0.
    pub n_virtual: usize,
    pub pyramid_levels: usize,
    /// Huber threshold in [0, 1] intensity units.
    pub huber_delta: f64,
    pub max_iterations: usize,
    pub lm_lambda_init: f64,
    pub lm_lambda_factor: f64,
    /// Accepted-step twist norm below which a level is converged.
    pub convergence_eps: f64,
    /// Drop the frame when the valid residual fraction at the final state
    /// falls below this.
    pub min_valid_residual_fraction: f64,
    /// Residuals with magnitude beyond this count as invalid for the drop
    /// rule (they still enter the optimization, Huber-weighted).
    pub outlier_threshold: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            patch_size: 9,
            n_virtual: 8,
            pyramid_levels: 4,
            huber_delta: 0.03,
            max_iterations: 50,
            lm_lambda_init: 1e-4,
            lm_lambda_factor: 10.0,
            convergence_eps: 1e-7,
            min_valid_residual_fraction: 0.3,
            outlier_threshold: 0.3,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self, exposure: f64) -> Result<(), TrackError> {
        if self.patch_size.is_multiple_of(2) || self.patch_size == 0 {
            return Err(TrackError::ConfigInvalid(
                "patch_size must be odd and positive".into(),
            ));
        }
        if exposure > 0.0 && self.n_virtual < 2 {
            return Err(TrackError::ConfigInvalid(
                "n_virtual must be at least 2 when exposure > 0".into(),
            ));
        }
        if self.pyramid_levels == 0
            || self.huber_delta <= 0.0
            || self.max_iterations == 0
            || self.lm_lambda_init <= 0.0
            || self.lm_lambda_factor <= 1.0
            || self.convergence_eps <= 0.0
            || !(0.0..=1.0).contains(&self.min_valid_residual_fraction)
            || self.outlier_threshold <= 0.0
        {
            return Err(TrackError::ConfigInvalid(
                "non-positive or out-of-range numeric field".into(),
            ));
        }
        Ok(())
    }

    pub fn patch_radius(&self) -> usize {
        self.patch_size / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Converged,
    MaxIterations,
    Diverged,
    Dropped,
}

impl std::fmt::Display for TrackStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TrackStatus::Converged => "converged",
            TrackStatus::MaxIterations => "max_iterations",
            TrackStatus::Diverged => "diverged",
            TrackStatus::Dropped => "dropped",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct TrackResult {
    /// Keyframe-from-camera poses at the start and end of the exposure.
    pub trajectory: LocalTrajectory,
    /// Mean Huber cost per evaluated residual at the final state.
    pub final_cost: f64,
    /// Fraction of attempted residuals that were evaluable and inlying.
    pub valid_fraction: f64,
    pub iterations_per_level: Vec<usize>,
    pub status: TrackStatus,
    /// `(cost_before, cost_after)` of every accepted step, levels
    /// concatenated; `cost_after < cost_before` holds per entry since
    /// candidates are compared against the same anchor set.
    pub accepted_costs: Vec<(f64, f64)>,
}

/// Grid-uniform gradient-based keypoint sampling.
///
/// The interior of the image is divided into a `ceil(sqrt(target))^2` grid;
/// each cell contributes at most its strongest-gradient pixel, and only if
/// that pixel clears the cell's adaptive threshold (median gradient + 0.01)
/// and has valid positive depth.
pub fn sample_keypoints(
    img: &GrayImage,
    depth: &GrayImage,
    target_count: usize,
    patch_radius: usize,
) -> Result<Vec<Keypoint>, TrackError> {
    if img.width() != depth.width() || img.height() != depth.height() {
        return Err(TrackError::DimensionMismatch(format!(
            "image {}x{} vs depth {}x{}",
            img.width(),
            img.height(),
            depth.width(),
            depth.height()
        )));
    }
    let margin = patch_radius + 2;
    let (w, h) = (img.width(), img.height());
    if w <= 2 * margin + 2 || h <= 2 * margin + 2 || target_count == 0 {
        return Err(TrackError::TooFewKeypoints(0));
    }
    let grid = (target_count as f64).sqrt().ceil() as usize;
    let u_lo = margin;
    let u_hi = w - 1 - margin;
    let v_lo = margin;
    let v_hi = h - 1 - margin;

    let grad_mag = |u: usize, v: usize| -> f64 {
        let du = (img.at(u + 1, v) - img.at(u - 1, v)) / 2.0;
        let dv = (img.at(u, v + 1) - img.at(u, v - 1)) / 2.0;
        (du * du + dv * dv).sqrt()
    };

    let mut selected: Vec<(f64, Keypoint)> = Vec::new();
    for gv in 0..grid {
        for gu in 0..grid {
            let cu_lo = u_lo + gu * (u_hi - u_lo + 1) / grid;
            let cu_hi = u_lo + (gu + 1) * (u_hi - u_lo + 1) / grid;
            let cv_lo = v_lo + gv * (v_hi - v_lo + 1) / grid;
            let cv_hi = v_lo + (gv + 1) * (v_hi - v_lo + 1) / grid;
            if cu_hi <= cu_lo || cv_hi <= cv_lo {
                continue;
            }
            let mut mags = Vec::with_capacity((cu_hi - cu_lo) * (cv_hi - cv_lo));
            let mut best: Option<(f64, usize, usize)> = None;
            for v in cv_lo..cv_hi {
                for u in cu_lo..cu_hi {
                    let m = grad_mag(u, v);
                    mags.push(m);
                    if best.is_none_or(|(bm, _, _)| m > bm) {
                        best = Some((m, u, v));
                    }
                }
            }
            mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = mags[mags.len() / 2];
            if let Some((m, u, v)) = best {
                if m > median + 0.01 {
                    let d = depth.at(u, v);
                    if d > 0.0 && d.is_finite() {
                        selected.push((
                            m,
                            Keypoint {
                                pixel: Vector2::new(u as f64, v as f64),
                                depth: d,
                            },
                        ));
                    }
                }
            }
        }
    }
    // The grid can hold slightly more cells than requested; keep the
    // strongest ones, deterministically.
    if selected.len() > target_count {
        selected.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        selected.truncate(target_count);
        selected.sort_by(|a, b| {
            (a.1.pixel.y, a.1.pixel.x)
                .partial_cmp(&(b.1.pixel.y, b.1.pixel.x))
                .unwrap()
        });
    }
    if selected.len() < 8 {
        return Err(TrackError::TooFewKeypoints(selected.len()));
    }
    Ok(selected.into_iter().map(|(_, kp)| kp).collect())
}

/// Re-blurred intensity prediction for one current-image pixel (the
/// mean of reference-image samples along the trajectory). `None` when any of
/// the transfers or samples fails; the residual is then dropped.
pub fn synthesize_reblurred(
    kf: &Keyframe,
    traj: &LocalTrajectory,
    anchor: Vector2<f64>,
    level: usize,
    plane_depth: f64,
    n: usize,
) -> Option<f64> {
    let cam = &kf.cameras[level];
    let ref_img = kf.pyramid.level(level);
    let n = if traj.exposure() > 0.0 { n.max(2) } else { 1 };
    let mut sum = 0.0;
    for i in 0..n {
        let s = if n == 1 {
            0.0
        } else {
            i as f64 / (n - 1) as f64
        };
        let pose = traj.pose_at_fraction(s).ok()?;
        let q = PlaneTransferQuery {
            pixel: anchor,
            plane_depth,
            pose: &pose,
        };
        let x_ref = transfer_via_plane(cam, &q).ok()?;
        sum += ref_img.sample_bilinear(x_ref.x, x_ref.y).ok()?;
    }
    Some(sum / n as f64)
}

/// One interpolated pose with, when requested, the Jacobians of the
/// interpolation with respect to the endpoint poses.
type VirtualPose = (Pose, Option<(Matrix6<f64>, Matrix6<f64>)>);

/// Optimizer state: a full trajectory when exposure > 0, a single pose when
/// the blur model is switched off.
#[derive(Debug, Clone)]
enum State {
    Sharp(Pose),
    Blur(LocalTrajectory),
}

impl State {
    fn dims(&self) -> usize {
        match self {
            State::Sharp(_) => 6,
            State::Blur(_) => 12,
        }
    }

    fn mid_pose(&self) -> Pose {
        match self {
            State::Sharp(p) => p.clone(),
            State::Blur(t) => t.pose_at_fraction(0.5).expect("0.5 in range"),
        }
    }

    /// Left-multiplicative update; `None` when the updated endpoints are too
    /// far apart for the relative log (the step is then rejected).
    fn apply_step(&self, delta: &DVector<f64>) -> Option<State> {
        match self {
            State::Sharp(p) => {
                let d = Twist::new(
                    Vector3::new(delta[0], delta[1], delta[2]),
                    Vector3::new(delta[3], delta[4], delta[5]),
                );
                Some(State::Sharp(se3_exp(&d).compose(p)))
            }
            State::Blur(traj) => {
                let ds = Twist::new(
                    Vector3::new(delta[0], delta[1], delta[2]),
                    Vector3::new(delta[3], delta[4], delta[5]),
                );
                let de = Twist::new(
                    Vector3::new(delta[6], delta[7], delta[8]),
                    Vector3::new(delta[9], delta[10], delta[11]),
                );
                let start = se3_exp(&ds).compose(traj.start());
                let end = se3_exp(&de).compose(traj.end());
                LocalTrajectory::new(start, end, traj.exposure())
                    .ok()
                    .map(State::Blur)
            }
        }
    }

    fn into_trajectory(self) -> LocalTrajectory {
        match self {
            State::Sharp(p) => LocalTrajectory::stationary(p, 0.0).expect("zero exposure"),
            State::Blur(t) => t,
        }
    }

    /// Virtual poses and, optionally, interpolation Jacobians per pose.
    fn virtual_poses(&self, n: usize, with_jacobians: bool) -> Vec<VirtualPose> {
        match self {
            State::Sharp(p) => vec![(p.clone(), None)],
            State::Blur(traj) => (0..n)
                .map(|i| {
                    let s = i as f64 / (n - 1) as f64;
                    let pose = traj.pose_at_fraction(s).expect("fraction in range");
                    let jac = with_jacobians.then(|| interp_jacobians(traj, s));
                    (pose, jac)
                })
                .collect(),
        }
    }
}

fn huber_cost(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        r * r
    } else {
        delta * (2.0 * a - delta)
    }
}

fn huber_weight(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        1.0
    } else {
        delta / a
    }
}

struct LevelContext<'a> {
    ref_img: &'a GrayImage,
    cur_img: &'a GrayImage,
    cam: &'a PinholeCamera,
    /// Level-scaled keypoint pixels with metric plane depths.
    keypoints: Vec<(Vector2<f64>, f64)>,
    patch_radius: i64,
    n_virtual: usize,
    huber_delta: f64,
    outlier_threshold: f64,
}

struct Evaluation {
    /// Sum of Huber costs over evaluable residuals.
    cost_sum: f64,
    evaluable: usize,
    inliers: usize,
    attempted: usize,
    h: DMatrix<f64>,
    g: DVector<f64>,
}

impl Evaluation {
    fn mean_cost(&self) -> f64 {
        if self.evaluable == 0 {
            f64::INFINITY
        } else {
            self.cost_sum / self.evaluable as f64
        }
    }

    fn valid_fraction(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.inliers as f64 / self.attempted as f64
        }
    }
}

/// Project each keypoint into the current image at the mid-exposure pose and
/// round to the nearest integer pixel (ties away from zero).
fn select_anchors(ctx: &LevelContext, state: &State) -> Vec<Option<Vector2<f64>>> {
    let mid_inv = state.mid_pose().inverse();
    ctx.keypoints
        .iter()
        .map(|(pixel, depth)| {
            let p_ref = ctx.cam.backproject_depth(pixel, *depth).ok()?;
            let p_cur = mid_inv.transform(&p_ref);
            let projected = ctx.cam.project(&p_cur).ok()?;
            let anchor = Vector2::new(projected.x.round(), projected.y.round());
            ctx.cam.contains_with_margin(&anchor, 0.0).then_some(anchor)
        })
        .collect()
}

fn evaluate(
    ctx: &LevelContext,
    state: &State,
    anchors: &[Option<Vector2<f64>>],
    with_jacobian: bool,
) -> Evaluation {
    let dims = state.dims();
    let mut ev = Evaluation {
        cost_sum: 0.0,
        evaluable: 0,
        inliers: 0,
        attempted: 0,
        h: DMatrix::zeros(dims, dims),
        g: DVector::zeros(dims),
    };
    let patch = ctx.patch_radius;
    let virtuals = state.virtual_poses(ctx.n_virtual, with_jacobian);
    let n = virtuals.len();
    let inv_n = 1.0 / n as f64;
    let mut row = DVector::zeros(dims);

    for ((kp_pixel, depth), anchor) in ctx.keypoints.iter().zip(anchors) {
        let _ = kp_pixel;
        let Some(anchor) = anchor else {
            ev.attempted += ((2 * patch + 1) * (2 * patch + 1)) as usize;
            continue;
        };
        for dv in -patch..=patch {
            for du in -patch..=patch {
                ev.attempted += 1;
                let pu = anchor.x as i64 + du;
                let pv = anchor.y as i64 + dv;
                let Some(b_cur) = ctx.cur_img.get(pu, pv) else {
                    continue;
                };
                let pixel = Vector2::new(pu as f64, pv as f64);

                let mut synth_sum = 0.0;
                let mut ok = true;
                if with_jacobian {
                    row.fill(0.0);
                }
                for (pose, interp) in &virtuals {
                    let q = PlaneTransferQuery {
                        pixel,
                        plane_depth: *depth,
                        pose,
                    };
                    if with_jacobian {
                        let Ok((x_ref, j_transfer)) = transfer_with_jacobian(ctx.cam, &q) else {
                            ok = false;
                            break;
                        };
                        let Ok((val, gu, gv)) = ctx.ref_img.sample_with_gradient(x_ref.x, x_ref.y)
                        else {
                            ok = false;
                            break;
                        };
                        synth_sum += val;
                        // d(sample)/d(pose twist), 1x6.
                        let g_row: RowVector6<f64> = Vector2::new(gu, gv).transpose() * j_transfer;
                        match interp {
                            Some((j_start, j_end)) => {
                                let rs = g_row * j_start;
                                let re = g_row * j_end;
                                for c in 0..6 {
                                    row[c] += rs[c];
                                    row[6 + c] += re[c];
                                }
                            }
                            None => {
                                for c in 0..6 {
                                    row[c] += g_row[c];
                                }
                            }
                        }
                    } else {
                        let Ok(x_ref) = transfer_via_plane(ctx.cam, &q) else {
                            ok = false;
                            break;
                        };
                        let Ok(val) = ctx.ref_img.sample_bilinear(x_ref.x, x_ref.y) else {
                            ok = false;
                            break;
                        };
                        synth_sum += val;
                    }
                }
                if !ok {
                    continue;
                }
                let synthesized = synth_sum * inv_n;
                let r = b_cur - synthesized;
                ev.evaluable += 1;
                if r.abs() <= ctx.outlier_threshold {
                    ev.inliers += 1;
                }
                ev.cost_sum += huber_cost(r, ctx.huber_delta);
                if with_jacobian {
                    // dr/d(delta) = -d(synth)/d(delta).
                    let w = huber_weight(r, ctx.huber_delta);
                    let scale = -inv_n;
                    for i in 0..dims {
                        let ji = row[i] * scale;
                        ev.g[i] += w * ji * r;
                        for j in i..dims {
                            ev.h[(i, j)] += w * ji * (row[j] * scale);
                        }
                    }
                }
            }
        }
    }
    if with_jacobian {
        for i in 0..dims {
            for j in 0..i {
                ev.h[(i, j)] = ev.h[(j, i)];
            }
        }
    }
    ev
}

/// Scale a level-0 pixel coordinate to pyramid level `l`, consistent with the
/// camera's half-pixel-centered downsampling convention.
fn scale_pixel_to_level(p: &Vector2<f64>, l: usize) -> Vector2<f64> {
    let s = (1usize << l) as f64;
    Vector2::new((p.x + 0.5) / s - 0.5, (p.y + 0.5) / s - 0.5)
}

/// Track one frame against the keyframe.
///
/// `init` holds keyframe-from-camera poses; with `exposure == 0` only its
/// start pose is used and the result trajectory has both endpoints tied.
pub fn track(
    kf: &Keyframe,
    current: &ImagePyramid,
    exposure: f64,
    init: &LocalTrajectory,
    cfg: &TrackerConfig,
) -> Result<TrackResult, TrackError> {
    cfg.validate(exposure)?;
    if current.num_levels() != kf.pyramid.num_levels() {
        return Err(TrackError::DimensionMismatch(format!(
            "current pyramid has {} levels, keyframe {}",
            current.num_levels(),
            kf.pyramid.num_levels()
        )));
    }
    if cfg.pyramid_levels != kf.pyramid.num_levels() {
        return Err(TrackError::DimensionMismatch(format!(
            "config wants {} levels, keyframe has {}",
            cfg.pyramid_levels,
            kf.pyramid.num_levels()
        )));
    }

    let mut state = if exposure > 0.0 {
        State::Blur(LocalTrajectory::new(
            init.start().clone(),
            init.end().clone(),
            exposure,
        )?)
    } else {
        State::Sharp(init.start().clone())
    };

    let mut iterations_per_level = vec![0usize; cfg.pyramid_levels];
    let mut accepted_costs = Vec::new();
    let mut finest_converged = false;
    let mut finest_lambda_blown = false;
    let mut last_eval: Option<Evaluation> = None;

    for level in (0..cfg.pyramid_levels).rev() {
        let ctx = LevelContext {
            ref_img: kf.pyramid.level(level),
            cur_img: current.level(level),
            cam: &kf.cameras[level],
            keypoints: kf
                .keypoints
                .iter()
                .map(|kp| (scale_pixel_to_level(&kp.pixel, level), kp.depth))
                .collect(),
            patch_radius: cfg.patch_radius() as i64,
            n_virtual: cfg.n_virtual,
            huber_delta: cfg.huber_delta,
            outlier_threshold: cfg.outlier_threshold,
        };

        let mut lambda = cfg.lm_lambda_init;
        let mut anchors = select_anchors(&ctx, &state);
        let mut current_eval = evaluate(&ctx, &state, &anchors, true);
        let mut converged = false;
        let mut lambda_blown = false;

        for _ in 0..cfg.max_iterations {
            iterations_per_level[level] += 1;
            if !current_eval.mean_cost().is_finite() {
                break;
            }
            let dims = state.dims();
            // Clamp the Marquardt scaling relative to the strongest diagonal
            // entry: directions the data leaves unconstrained (e.g. the
            // start/end split when the streak is subpixel at a coarse level)
            // must stay damped or the step wanders along the null space.
            let max_diag = (0..dims)
                .map(|i| current_eval.h[(i, i)])
                .fold(0.0f64, f64::max);
            let diag_floor = (1e-3 * max_diag).max(1e-12);
            let mut damped = current_eval.h.clone();
            for i in 0..dims {
                damped[(i, i)] += lambda * current_eval.h[(i, i)].max(diag_floor);
            }
            let delta = match damped.cholesky() {
                Some(chol) => chol.solve(&(-&current_eval.g)),
                None => {
                    lambda *= cfg.lm_lambda_factor;
                    if lambda > LM_LAMBDA_MAX {
                        lambda_blown = true;
                        break;
                    }
                    continue;
                }
            };
            if delta.norm() < cfg.convergence_eps {
                converged = true;
                break;
            }
            let Some(trial) = state.apply_step(&delta) else {
                lambda *= cfg.lm_lambda_factor;
                if lambda > LM_LAMBDA_MAX {
                    lambda_blown = true;
                    break;
                }
                continue;
            };
            let trial_eval = evaluate(&ctx, &trial, &anchors, false);
            // Reject steps that shed a large share of the residual set; a
            // smaller set trivially lowers the mean.
            let enough_support = trial_eval.evaluable * 2 >= current_eval.evaluable;
            if std::env::var_os("BLURTRACK_TRACE").is_some() {
                let split = match &state {
                    State::Blur(t) => t.rel_twist().v.x,
                    State::Sharp(_) => 0.0,
                };
                eprintln!(
                    "L{level} it{} lam {:.1e} cost {:.6e} trial {:.6e} dnorm {:.2e} split.vx {:+.5}",
                    iterations_per_level[level],
                    lambda,
                    current_eval.mean_cost(),
                    trial_eval.mean_cost(),
                    delta.norm(),
                    split
                );
            }
            if enough_support && trial_eval.mean_cost() < current_eval.mean_cost() {
                let improvement = current_eval.mean_cost() - trial_eval.mean_cost();
                let floor_reached =
                    improvement < MIN_RELATIVE_IMPROVEMENT * current_eval.mean_cost();
                accepted_costs.push((current_eval.mean_cost(), trial_eval.mean_cost()));
                state = trial;
                lambda = (lambda / cfg.lm_lambda_factor).max(1e-7);
                anchors = select_anchors(&ctx, &state);
                current_eval = evaluate(&ctx, &state, &anchors, true);
                if delta.norm() < cfg.convergence_eps || floor_reached {
                    converged = true;
                    break;
                }
            } else {
                lambda *= cfg.lm_lambda_factor;
                if lambda > LM_LAMBDA_MAX {
                    lambda_blown = true;
                    break;
                }
            }
        }

        if level == 0 {
            finest_converged = converged;
            finest_lambda_blown = lambda_blown;
            last_eval = Some(current_eval);
        }
    }

    // The re-blurred image is invariant under reversing the trajectory (the
    // virtual-pose set is symmetric), so (start, end) and (end, start) are
    // exactly co-optimal. When the init carries a direction, resolve the tie
    // toward it; the cost and validity statistics are unaffected.
    if let State::Blur(traj) = &state {
        let init_rel = init.rel_twist();
        if init_rel.norm() > 0.0 && traj.rel_twist().as_vector().dot(&init_rel.as_vector()) < 0.0 {
            let swapped = LocalTrajectory::new(traj.end().clone(), traj.start().clone(), exposure)
                .expect("reversed log of a tracked trajectory");
            state = State::Blur(swapped);
        }
    }

    let final_eval = last_eval.expect("finest level always evaluated");
    let final_cost = final_eval.mean_cost();
    let valid_fraction = final_eval.valid_fraction();
    let status = if !final_cost.is_finite() || valid_fraction < cfg.min_valid_residual_fraction {
        TrackStatus::Dropped
    } else if finest_converged {
        TrackStatus::Converged
    } else if finest_lambda_blown {
        TrackStatus::Diverged
    } else {
        TrackStatus::MaxIterations
    };

    Ok(TrackResult {
        trajectory: state.into_trajectory(),
        final_cost,
        valid_fraction,
        iterations_per_level,
        status,
        accepted_costs,
    })
}

/// Full 12-column (or 6-column) residual Jacobian of one residual, exposed
/// for numerical verification.
#[doc(hidden)]
pub fn residual_and_jacobian(
    kf: &Keyframe,
    traj: &LocalTrajectory,
    anchor: Vector2<f64>,
    level: usize,
    plane_depth: f64,
    n: usize,
    b_cur: f64,
) -> Option<(f64, DVector<f64>)> {
    let cam = &kf.cameras[level];
    let ref_img = kf.pyramid.level(level);
    let blur = traj.exposure() > 0.0;
    let n = if blur { n.max(2) } else { 1 };
    let dims = if blur { 12 } else { 6 };
    let mut row: DVector<f64> = DVector::zeros(dims);
    let mut synth_sum = 0.0;
    for i in 0..n {
        let s = if n == 1 {
            0.0
        } else {
            i as f64 / (n - 1) as f64
        };
        let pose = traj.pose_at_fraction(s).ok()?;
        let q = PlaneTransferQuery {
            pixel: anchor,
            plane_depth,
            pose: &pose,
        };
        let (x_ref, j_transfer): (Vector2<f64>, Matrix2x6<f64>) =
            transfer_with_jacobian(cam, &q).ok()?;
        let (val, gu, gv) = ref_img.sample_with_gradient(x_ref.x, x_ref.y).ok()?;
        synth_sum += val;
        let g_row = Vector2::new(gu, gv).transpose() * j_transfer;
        if blur {
            let (j_start, j_end) = interp_jacobians(traj, s);
            let rs = g_row * j_start;
            let re = g_row * j_end;
            for c in 0..6 {
                row[c] += rs[c];
                row[6 + c] += re[c];
            }
        } else {
            for c in 0..6 {
                row[c] += g_row[c];
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    let r = b_cur - synth_sum * inv_n;
    Some((r, row * (-inv_n)))
}
