//! Localizes individual frames against a map, including a teleport: every
//! frame is estimated from scratch, so a jump across the floor changes
//! nothing about the next estimate.
//!
//! Run with: `cargo run --example localization`

use floorloc::detector::PaletteSegmenter;
use floorloc::floorsim::{
    generate_floor, generate_mapping_run, render_view, CameraModel, FloorSpec, RenderProvider,
};
use floorloc::geometry::{pose_delta, Pose2D};
use floorloc::localizer::{estimate_position, LocalizationParams};
use floorloc::mapper::{build_map, MapBuildParams, MappingInput};
use floorloc::pipeline::FramePipeline;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let floor = generate_floor(&FloorSpec {
        width_m: 0.4,
        height_m: 0.4,
        rng_seed: 21,
        ..FloorSpec::default()
    })?;
    let cam = CameraModel::default();
    let segmenter = PaletteSegmenter::default();
    let pipeline = FramePipeline {
        segmenter: &segmenter,
        detector: Default::default(),
        camera: cam,
    };

    let log = generate_mapping_run(&floor, &cam, (0.0, 0.0), 0.4, 0.01, 0.2, 60.0)?;
    let provider = RenderProvider {
        floor: &floor,
        cam,
        noise_sigma: 3.0,
        noise_seed: 8,
    };
    let inputs = [MappingInput {
        frames: &provider,
        log: &log,
    }];
    let built = build_map(&inputs, &pipeline, &MapBuildParams::default())?;
    println!("map: {}", built.diagnostics);

    // Poses across the floor, including a deliberate teleport between
    // consecutive frames.
    let params = LocalizationParams::default();
    let poses = [
        Pose2D::new(0.12, 0.10, 0.3),
        Pose2D::new(0.13, 0.11, 0.35),
        Pose2D::new(0.31, 0.30, -2.4), // kidnapped: far jump, new heading
        Pose2D::new(0.32, 0.31, -2.35),
    ];
    for (i, &pose) in poses.iter().enumerate() {
        let mut frame = render_view(&floor, &cam, pose, 3.0, 1000 + i as u64);
        frame.frame_id = i as u64;
        let result = estimate_position(&frame, &built.db, &pipeline, &params)?;
        match result.pose() {
            Some(estimate) => {
                let (dist, angle) = pose_delta(&estimate, &pose);
                println!(
                    "frame {i}: estimated ({:.4}, {:.4}, {:+.3} rad) | true ({:.4}, {:.4}, {:+.3} rad) | err {:.2} mm / {:.3} deg | {} inliers",
                    estimate.x, estimate.y, estimate.theta,
                    pose.x, pose.y, pose.theta,
                    dist * 1000.0,
                    angle.to_degrees(),
                    result.diagnostics.n_inliers,
                );
            }
            None => println!("frame {i}: no estimate ({:?})", result.outcome),
        }
    }
    Ok(())
}
