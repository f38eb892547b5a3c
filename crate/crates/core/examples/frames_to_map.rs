//! Renders RGB-D frames of a synthetic seafloor from a downward-looking
//! camera, turns them into visual words, and builds a scene map.
//!
//! The floor has three substrates: red sand, green weed stripes and grey
//! rock speckle. The printed map should show three bands.
//!
//! ```text
//! cargo run --release --example frames_to_map
//! ```

use scenemap::inference::{sweep, worker_rng};
use scenemap::mapping::{
    patch_descriptor, process_frame, snapshot_scene_map, CameraIntrinsics, Codebook, Frame, FramePose,
    DEFAULT_STRIDE,
};
use scenemap::{Hyperparameters, SceneModel};

const W: usize = 64;
const H: usize = 48;
const ALTITUDE: f32 = 2.0;

fn floor_color(x: f64, y: f64) -> [u8; 3] {
    let hash = ((x * 37.0).floor() as i64 * 73_856_093) ^ ((y * 37.0).floor() as i64 * 19_349_663);
    if x < 8.0 {
        let g = (hash.rem_euclid(40)) as u8;
        [200, 60 + g, 40]
    } else if x < 16.0 {
        if ((y * 6.0).floor() as i64) % 2 == 0 {
            [30, 160, 50]
        } else {
            [10, 80, 20]
        }
    } else {
        let v = 80 + (hash.rem_euclid(120)) as u8;
        [v, v, v]
    }
}

fn render(t: f64, pose: &FramePose, intr: &CameraIntrinsics) -> scenemap::Result<Frame> {
    let mut rgb = Vec::with_capacity(W * H);
    for v in 0..H {
        for u in 0..W {
            let d = ALTITUDE as f64;
            let x = (u as f64 - intr.cx) * d / intr.fx + pose.translation[0];
            let y = (v as f64 - intr.cy) * d / intr.fy + pose.translation[1];
            rgb.push(floor_color(x, y));
        }
    }
    Frame::new(t, W, H, rgb, vec![ALTITUDE; W * H])
}

fn main() -> scenemap::Result<()> {
    let intr = CameraIntrinsics::new(40.0, 40.0, W as f64 / 2.0, H as f64 / 2.0)?;
    let mut poses = Vec::new();
    for (track, y) in [1.5, 3.5, 5.5, 7.5].into_iter().enumerate() {
        let xs: Vec<f64> = (0..24).map(|n| 1.5 + n as f64 * 0.9).collect();
        let xs: Vec<f64> = if track % 2 == 0 { xs } else { xs.into_iter().rev().collect() };
        poses.extend(xs.into_iter().map(|x| FramePose::translation([x, y, 0.0])));
    }

    // Codebook: every 7th patch descriptor of a few sample frames.
    let mut descriptors = Vec::new();
    for pose in poses.iter().step_by(8) {
        let frame = render(0.0, pose, &intr)?;
        for y0 in (0..=H - DEFAULT_STRIDE).step_by(DEFAULT_STRIDE) {
            for x0 in (0..=W - DEFAULT_STRIDE).step_by(DEFAULT_STRIDE) {
                descriptors.push(patch_descriptor(&frame, x0, y0, DEFAULT_STRIDE));
            }
        }
    }
    let codebook = Codebook::new(descriptors.into_iter().step_by(7).take(24).collect())?;

    let params = Hyperparameters::new(0.1, 0.1, 1e-2, 1.0, codebook.len() as u32)?;
    let mut model = SceneModel::new(params)?;
    let mut rng = worker_rng(3, 0);
    let mut inserted = 0;
    for (n, pose) in poses.iter().enumerate() {
        let frame = render(n as f64, pose, &intr)?;
        inserted += process_frame(&mut model, &frame, pose, &intr, &codebook, DEFAULT_STRIDE, &mut rng)?.inserted;
    }
    for _ in 0..30 {
        sweep(&mut model, &mut rng);
    }
    let map = snapshot_scene_map(&model);
    println!(
        "{} frames, {inserted} words, {} topics, {}x{} map with {} labels",
        poses.len(),
        model.num_topics(),
        map.width,
        map.height,
        map.distinct_labels()
    );
    for row in map.labels.chunks(map.width) {
        let line: String = row
            .iter()
            .map(|&l| if l == 0 { '.' } else { char::from_digit(l % 36, 36).unwrap() })
            .collect();
        println!("{line}");
    }
    Ok(())
}
