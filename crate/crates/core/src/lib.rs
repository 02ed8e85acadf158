//! Motion-blur-aware direct image alignment.
//!
//! A blurry frame is modelled as the average of virtual sharp frames taken
//! along the camera trajectory within the exposure time. The tracker recovers
//! that trajectory (poses at the start and end of the exposure) by re-blurring
//! a sharp reference keyframe and minimizing the photometric difference
//! against the observed blurry frame, coarse-to-fine with Levenberg-Marquardt.
//!
//! The crate also ships a planar-scene blur-sequence generator and a
//! trajectory evaluation harness (timestamp association, rigid/similarity
//! alignment, RMSE ATE, frame-drop rate) so the whole pipeline can be
//! exercised end to end on synthetic data. See the `examples/` directory for
//! one runnable example per capability and `src/main.rs` for the thin CLI.

pub mod blursim;
pub mod camera;
pub mod cli;
pub mod config;
pub mod eval;
pub mod imgproc;
pub mod lie;
pub mod selfcheck;
pub mod tracker;

pub use camera::PinholeCamera;
pub use imgproc::{GrayImage, ImagePyramid};
pub use lie::{LocalTrajectory, Pose, Twist};
