//! Render a small motion-blurred dataset of a textured plane under a
//! sinusoidal camera shake, then reload it from disk.

use blurtrack::blursim::{
    generate_sequence, load_dataset, synth_trajectory, PlanarScene, SequenceTiming, TrajectoryKind,
};
use blurtrack::camera::PinholeCamera;
use nalgebra::Vector3;

fn main() {
    let texture = PlanarScene::noise_texture(1024, 1024, 3.0, 42);
    let scene = PlanarScene::new(texture, 2.0, 0.008).expect("textured scene");
    let cam = PinholeCamera::new(300.0, 300.0, 159.5, 127.5, 320, 256);

    let frames = synth_trajectory(
        &TrajectoryKind::SinusoidalShake {
            trans_amplitude: Vector3::new(0.03, 0.12, 0.0),
            trans_phase: Vector3::new(0.0, std::f64::consts::FRAC_PI_2, 0.0),
            rot_amplitude: Vector3::zeros(),
            rot_phase: Vector3::zeros(),
            frequency: 2.0,
        },
        &SequenceTiming {
            frame_rate: 27.0,
            exposure: 0.02,
            n_frames: 6,
        },
    )
    .expect("valid trajectory parameters");

    let out = std::env::temp_dir().join("blurtrack_example_dataset");
    let summary = generate_sequence(&scene, &cam, &frames, 32, &out).expect("rendering");
    println!("wrote {} frames to {}", summary.n_frames, out.display());
    println!(
        "blur streaks: min {:.2} px, mean {:.2} px, max {:.2} px",
        summary.min_streak(),
        summary.mean_streak(),
        summary.max_streak()
    );

    let ds = load_dataset(&out).expect("reload");
    println!(
        "reloaded {} frames, camera {}x{} fx {:.1}",
        ds.frames.len(),
        ds.cam.width,
        ds.cam.height,
        ds.cam.fx
    );
}
