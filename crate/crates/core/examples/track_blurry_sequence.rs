//! End to end: synthesize a blurry sequence, track it with the blur-aware
//! aligner and with the naive sharp aligner, and compare trajectory errors.

use blurtrack::blursim::{
    generate_sequence, synth_trajectory, PlanarScene, SequenceTiming, TrajectoryKind,
};
use blurtrack::camera::PinholeCamera;
use blurtrack::eval::{compute_ate, AlignMode, Trajectory};
use blurtrack::tracker::sequence::{track_sequence, DepthSource, SequenceConfig, TrackMode};
use nalgebra::Vector3;

fn main() {
    let texture = PlanarScene::noise_texture(1024, 1024, 3.0, 7);
    let scene = PlanarScene::new(texture, 2.0, 0.008).expect("textured scene");
    let cam = PinholeCamera::new(300.0, 300.0, 159.5, 127.5, 320, 256);
    let frames = synth_trajectory(
        &TrajectoryKind::SinusoidalShake {
            trans_amplitude: Vector3::new(0.04, 0.16, 0.0),
            trans_phase: Vector3::new(0.0, std::f64::consts::FRAC_PI_2, 0.0),
            rot_amplitude: Vector3::zeros(),
            rot_phase: Vector3::zeros(),
            frequency: 2.0,
        },
        &SequenceTiming {
            frame_rate: 27.0,
            exposure: 0.02,
            n_frames: 8,
        },
    )
    .expect("valid parameters");

    let dir = std::env::temp_dir().join("blurtrack_example_tracking");
    let summary = generate_sequence(&scene, &cam, &frames, 32, &dir).expect("rendering");
    println!(
        "dataset: {} frames, mean streak {:.1} px",
        summary.n_frames,
        summary.mean_streak()
    );

    let mut cfg = SequenceConfig::default();
    cfg.tracker.n_virtual = 12;
    cfg.keyframe_translation_frac = 0.4;
    let gt = Trajectory::load_tum(&dir.join("groundtruth.txt")).expect("ground truth");

    for mode in [TrackMode::Mba, TrackMode::BlurNaive] {
        let result =
            track_sequence(&dir, mode, false, &DepthSource::GroundTruth, &cfg).expect("tracking");
        let est = Trajectory::new(result.trajectory.clone()).expect("monotonic timestamps");
        let ate = compute_ate(&est, &gt, 0.005, AlignMode::Rigid).expect("evaluation");
        println!(
            "mode {:<10}  dropped {}  rmse ate {:.6} m",
            mode.name(),
            result.dropped_count(),
            ate.rmse
        );
    }
}
