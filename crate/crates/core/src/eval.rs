//! Trajectory evaluation: timestamp association, absolute-orientation
//! alignment (rigid or similarity), RMSE ATE and frame-drop percentage.

use std::path::Path;

use nalgebra::{Matrix3, Vector3, SVD};
use thiserror::Error;

use crate::lie::Pose;
use crate::tracker::{TrackResult, TrackStatus};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no timestamp matches within the association window")]
    NoMatches,
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("trajectory timestamps not strictly increasing at line {0}")]
    NonMonotonicTimestamps(usize),
    #[error("bad trajectory file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Timestamped world-from-camera poses, strictly increasing in time.
#[derive(Debug, Clone)]
pub struct Trajectory {
    samples: Vec<(f64, Pose)>,
}

impl Trajectory {
    pub fn new(samples: Vec<(f64, Pose)>) -> Result<Self, EvalError> {
        for (i, pair) in samples.windows(2).enumerate() {
            if pair[1].0 <= pair[0].0 {
                return Err(EvalError::NonMonotonicTimestamps(i + 1));
            }
        }
        Ok(Trajectory { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[(f64, Pose)] {
        &self.samples
    }

    pub fn timestamp(&self, i: usize) -> f64 {
        self.samples[i].0
    }

    pub fn position(&self, i: usize) -> Vector3<f64> {
        *self.samples[i].1.translation()
    }

    /// Parse a TUM-format file: `timestamp tx ty tz qx qy qz qw` per line,
    /// `#` comments allowed.
    pub fn load_tum(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_tum(&text)
    }

    pub fn parse_tum(text: &str) -> Result<Self, EvalError> {
        let mut samples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 8 {
                return Err(EvalError::Parse(format!(
                    "line {}: expected 8 fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let mut nums = [0.0f64; 8];
            for (i, f) in fields.iter().enumerate() {
                nums[i] = f.parse().map_err(|_| {
                    EvalError::Parse(format!("line {}: bad number {f:?}", lineno + 1))
                })?;
            }
            let pose = Pose::from_parts(
                nums[7],
                nums[4],
                nums[5],
                nums[6],
                Vector3::new(nums[1], nums[2], nums[3]),
            );
            samples.push((nums[0], pose));
        }
        Trajectory::new(samples)
    }

    pub fn save_tum(&self, path: &Path) -> Result<(), EvalError> {
        let mut out = String::new();
        for (t, pose) in &self.samples {
            out.push_str(&crate::blursim::format_tum_line(*t, pose));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Greedy nearest-timestamp association: candidate pairs sorted by |dt|,
/// consumed greedily, each pose matched at most once, |dt| <= max_dt.
pub fn associate(
    est: &Trajectory,
    gt: &Trajectory,
    max_dt: f64,
) -> Result<Vec<(usize, usize)>, EvalError> {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, (te, _)) in est.samples.iter().enumerate() {
        for (j, (tg, _)) in gt.samples.iter().enumerate() {
            let dt = (te - tg).abs();
            if dt <= max_dt {
                candidates.push((dt, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut used_est = vec![false; est.len()];
    let mut used_gt = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_est[i] && !used_gt[j] {
            used_est[i] = true;
            used_gt[j] = true;
            pairs.push((i, j));
        }
    }
    if pairs.is_empty() {
        return Err(EvalError::NoMatches);
    }
    pairs.sort();
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignMode {
    Rigid,
    Similarity,
}

impl AlignMode {
    pub fn parse(s: &str) -> Option<AlignMode> {
        match s {
            "rigid" => Some(AlignMode::Rigid),
            "similarity" => Some(AlignMode::Similarity),
            _ => None,
        }
    }
}

/// Least-squares absolute-orientation transform `gt ~ scale * R * est + t`.
#[derive(Debug, Clone)]
pub struct AlignTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl AlignTransform {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }
}

/// Closed-form absolute orientation over matched positions (SVD of the
/// cross-covariance with the determinant correction; scale from the
/// covariance trace in similarity mode).
pub fn align(
    est: &Trajectory,
    gt: &Trajectory,
    pairs: &[(usize, usize)],
    mode: AlignMode,
) -> Result<AlignTransform, EvalError> {
    if pairs.len() < 3 {
        return Err(EvalError::DegenerateConfiguration(format!(
            "{} matched poses, need at least 3",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let mut mu_est = Vector3::zeros();
    let mut mu_gt = Vector3::zeros();
    for &(i, j) in pairs {
        mu_est += est.position(i);
        mu_gt += gt.position(j);
    }
    mu_est /= n;
    mu_gt /= n;

    let mut cov = Matrix3::zeros();
    let mut var_est = 0.0;
    for &(i, j) in pairs {
        let e = est.position(i) - mu_est;
        let g = gt.position(j) - mu_gt;
        cov += g * e.transpose();
        var_est += e.norm_squared();
    }
    cov /= n;
    var_est /= n;
    // Coincident estimates leave the rotation free but the rigid problem
    // still well-posed (any rotation is optimal); only the similarity scale
    // genuinely divides by the spread.
    if mode == AlignMode::Similarity && var_est < 1e-18 {
        return Err(EvalError::DegenerateConfiguration(
            "estimated positions are coincident; scale undefined".into(),
        ));
    }

    let svd = SVD::new(cov, true, true);
    let u = svd
        .u
        .ok_or_else(|| EvalError::DegenerateConfiguration("SVD failed".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| EvalError::DegenerateConfiguration("SVD failed".into()))?;
    let mut s_fix = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s_fix[(2, 2)] = -1.0;
    }
    let rotation = u * s_fix * v_t;
    let scale = match mode {
        AlignMode::Rigid => 1.0,
        AlignMode::Similarity => {
            let d = Vector3::new(
                svd.singular_values[0],
                svd.singular_values[1],
                svd.singular_values[2],
            );
            let trace_ds = d.x * s_fix[(0, 0)] + d.y * s_fix[(1, 1)] + d.z * s_fix[(2, 2)];
            trace_ds / var_est
        }
    };
    let translation = mu_gt - rotation * mu_est * scale;
    Ok(AlignTransform {
        rotation,
        translation,
        scale,
    })
}

#[derive(Debug, Clone)]
pub struct AteReport {
    pub rmse: f64,
    pub per_pose_errors: Vec<(f64, f64)>,
    pub matched: usize,
    pub transform: AlignTransform,
}

impl AteReport {
    /// Plain-text summary paired with the CLI output.
    pub fn summary(&self) -> String {
        format!(
            "rmse_ate_m {:.9}\nmatched_poses {}\nalign_scale {:.9}\n",
            self.rmse, self.matched, self.transform.scale
        )
    }

    /// Optional per-pose CSV: `timestamp,error_m`.
    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut out = String::from("timestamp,error_m\n");
        for (t, e) in &self.per_pose_errors {
            out.push_str(&format!("{:.9},{:.9}\n", t, e));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// RMSE of translational differences after optimal alignment.
pub fn compute_ate(
    est: &Trajectory,
    gt: &Trajectory,
    max_dt: f64,
    mode: AlignMode,
) -> Result<AteReport, EvalError> {
    let pairs = associate(est, gt, max_dt)?;
    let transform = align(est, gt, &pairs, mode)?;
    let mut per_pose_errors = Vec::with_capacity(pairs.len());
    let mut sq_sum = 0.0;
    for &(i, j) in &pairs {
        let err = (gt.position(j) - transform.apply(&est.position(i))).norm();
        sq_sum += err * err;
        per_pose_errors.push((est.timestamp(i), err));
    }
    let rmse = (sq_sum / pairs.len() as f64).sqrt();
    Ok(AteReport {
        rmse,
        per_pose_errors,
        matched: pairs.len(),
        transform,
    })
}

/// Percentage of dropped frames.
pub fn frame_drop_rate(results: &[TrackResult], total_frames: usize) -> f64 {
    let dropped = results
        .iter()
        .filter(|r| r.status == TrackStatus::Dropped)
        .count();
    100.0 * dropped as f64 / total_frames.max(1) as f64
}

/// Frame-drop percentage from a report file written by the tracker
/// (`timestamp status cost valid_fraction iterations` per line).
pub fn frame_drop_rate_from_report(path: &Path) -> Result<f64, EvalError> {
    let text = std::fs::read_to_string(path)?;
    let mut total = 0usize;
    let mut dropped = 0usize;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let _ts = fields.next();
        match fields.next() {
            Some(status) => {
                total += 1;
                if status == "dropped" {
                    dropped += 1;
                }
            }
            None => return Err(EvalError::Parse(format!("bad report line {line:?}"))),
        }
    }
    if total == 0 {
        return Err(EvalError::Parse("empty report".into()));
    }
    Ok(100.0 * dropped as f64 / total as f64)
}
