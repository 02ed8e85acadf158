//! Key=value run configuration for the tracking pipeline.
//!
//! Flat text format: one `key = value` per line, `#` comments. Unknown keys
//! are hard errors so typos cannot silently fall back to defaults. The
//! effective configuration (defaults, then file, then flag overrides) can be
//! echoed back out; re-running from the echo reproduces the run.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::eval::AlignMode;
use crate::tracker::sequence::{DepthSource, SequenceConfig, TrackMode};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {reason}")]
    BadValue { key: String, reason: String },
    #[error("line {0}: expected `key = value`")]
    BadLine(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything a tracking run needs, flattened for the config file.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub sequence: SequenceConfig,
    pub mode: TrackMode,
    pub force_zero_exposure: bool,
    pub align_mode: AlignMode,
    pub dataset_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Directory of externally provided depth maps; absent = ground truth.
    pub depth_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sequence: SequenceConfig::default(),
            mode: TrackMode::Mba,
            force_zero_exposure: false,
            align_mode: AlignMode::Rigid,
            dataset_dir: None,
            output_dir: None,
            depth_dir: None,
        }
    }
}

impl RunConfig {
    pub fn depth_source(&self) -> DepthSource {
        match &self.depth_dir {
            Some(dir) => DepthSource::Provided(dir.clone()),
            None => DepthSource::GroundTruth,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        cfg.merge_file(path)?;
        Ok(cfg)
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)?;
        self.merge_text(&text)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadLine(lineno + 1));
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::BadValue {
                key: key.into(),
                reason: format!("cannot parse {value:?}"),
            })
        }
        fn check(key: &str, ok: bool, reason: &str) -> Result<(), ConfigError> {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::BadValue {
                    key: key.into(),
                    reason: reason.into(),
                })
            }
        }

        let t = &mut self.sequence.tracker;
        match key {
            "patch_size" => {
                let v: usize = num(key, value)?;
                check(key, v % 2 == 1, "must be odd and positive")?;
                t.patch_size = v;
            }
            "n_virtual" => {
                let v: usize = num(key, value)?;
                check(key, v >= 1, "must be at least 1")?;
                t.n_virtual = v;
            }
            "pyramid_levels" => {
                let v: usize = num(key, value)?;
                check(key, (1..=8).contains(&v), "must be in 1..=8")?;
                t.pyramid_levels = v;
            }
            "huber_delta" => {
                let v: f64 = num(key, value)?;
                check(key, v > 0.0 && v <= 1.0, "must be in (0, 1]")?;
                t.huber_delta = v;
            }
            "max_iterations" => {
                let v: usize = num(key, value)?;
                check(key, v >= 1, "must be at least 1")?;
                t.max_iterations = v;
            }
            "lm_lambda_init" => {
                let v: f64 = num(key, value)?;
                check(key, v > 0.0, "must be positive")?;
                t.lm_lambda_init = v;
            }
            "lm_lambda_factor" => {
                let v: f64 = num(key, value)?;
                check(key, v > 1.0, "must exceed 1")?;
                t.lm_lambda_factor = v;
            }
            "convergence_eps" => {
                let v: f64 = num(key, value)?;
                check(key, v > 0.0, "must be positive")?;
                t.convergence_eps = v;
            }
            "min_valid_residual_fraction" => {
                let v: f64 = num(key, value)?;
                check(key, (0.0..=1.0).contains(&v), "must be in [0, 1]")?;
                t.min_valid_residual_fraction = v;
            }
            "outlier_threshold" => {
                let v: f64 = num(key, value)?;
                check(key, v > 0.0, "must be positive")?;
                t.outlier_threshold = v;
            }
            "keypoint_count" => {
                let v: usize = num(key, value)?;
                check(key, v >= 8, "must be at least 8")?;
                self.sequence.keypoint_count = v;
            }
            "keyframe_translation_frac" => {
                let v: f64 = num(key, value)?;
                check(key, v > 0.0, "must be positive")?;
                self.sequence.keyframe_translation_frac = v;
            }
            "keyframe_min_valid_fraction" => {
                let v: f64 = num(key, value)?;
                check(key, (0.0..=1.0).contains(&v), "must be in [0, 1]")?;
                self.sequence.keyframe_min_valid_fraction = v;
            }
            "depth_noise_sigma" => {
                let v: f64 = num(key, value)?;
                check(key, (0.0..1.0).contains(&v), "must be in [0, 1)")?;
                self.sequence.depth_noise_sigma = v;
            }
            "seed" => self.sequence.seed = num(key, value)?,
            "mode" => {
                self.mode = TrackMode::parse(value).ok_or_else(|| ConfigError::BadValue {
                    key: key.into(),
                    reason: format!("{value:?} is not sharp|blur-naive|mba"),
                })?;
            }
            "force_zero_exposure" => {
                self.force_zero_exposure = match value {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            reason: format!("{value:?} is not a bool"),
                        })
                    }
                };
            }
            "align_mode" => {
                self.align_mode = AlignMode::parse(value).ok_or_else(|| ConfigError::BadValue {
                    key: key.into(),
                    reason: format!("{value:?} is not rigid|similarity"),
                })?;
            }
            "dataset_dir" => self.dataset_dir = Some(PathBuf::from(value)),
            "output_dir" => self.output_dir = Some(PathBuf::from(value)),
            "depth_dir" => {
                self.depth_dir = if value.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(value))
                };
            }
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Render the effective configuration; parsing this text back yields an
    /// identical configuration.
    pub fn render(&self) -> String {
        let t = &self.sequence.tracker;
        let mut out = String::new();
        out.push_str(&format!("patch_size = {}\n", t.patch_size));
        out.push_str(&format!("n_virtual = {}\n", t.n_virtual));
        out.push_str(&format!("pyramid_levels = {}\n", t.pyramid_levels));
        out.push_str(&format!("huber_delta = {}\n", t.huber_delta));
        out.push_str(&format!("max_iterations = {}\n", t.max_iterations));
        out.push_str(&format!("lm_lambda_init = {}\n", t.lm_lambda_init));
        out.push_str(&format!("lm_lambda_factor = {}\n", t.lm_lambda_factor));
        out.push_str(&format!("convergence_eps = {}\n", t.convergence_eps));
        out.push_str(&format!(
            "min_valid_residual_fraction = {}\n",
            t.min_valid_residual_fraction
        ));
        out.push_str(&format!("outlier_threshold = {}\n", t.outlier_threshold));
        out.push_str(&format!(
            "keypoint_count = {}\n",
            self.sequence.keypoint_count
        ));
        out.push_str(&format!(
            "keyframe_translation_frac = {}\n",
            self.sequence.keyframe_translation_frac
        ));
        out.push_str(&format!(
            "keyframe_min_valid_fraction = {}\n",
            self.sequence.keyframe_min_valid_fraction
        ));
        out.push_str(&format!(
            "depth_noise_sigma = {}\n",
            self.sequence.depth_noise_sigma
        ));
        out.push_str(&format!("seed = {}\n", self.sequence.seed));
        out.push_str(&format!("mode = {}\n", self.mode.name()));
        out.push_str(&format!(
            "force_zero_exposure = {}\n",
            self.force_zero_exposure
        ));
        out.push_str(&format!(
            "align_mode = {}\n",
            match self.align_mode {
                AlignMode::Rigid => "rigid",
                AlignMode::Similarity => "similarity",
            }
        ));
        if let Some(p) = &self.dataset_dir {
            out.push_str(&format!("dataset_dir = {}\n", p.display()));
        }
        if let Some(p) = &self.output_dir {
            out.push_str(&format!("output_dir = {}\n", p.display()));
        }
        if let Some(p) = &self.depth_dir {
            out.push_str(&format!("depth_dir = {}\n", p.display()));
        }
        out
    }
}
