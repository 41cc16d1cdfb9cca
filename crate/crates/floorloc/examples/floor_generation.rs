//! Generates a seeded synthetic floor, persists it, and renders one
//! calibrated camera view.
//!
//! Run with: `cargo run --example floor_generation`

use floorloc::floorsim::{generate_floor, render_view, save_floor, CameraModel, FloorSpec};
use floorloc::geometry::Pose2D;
use floorloc::image::write_ppm;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = FloorSpec {
        width_m: 0.5,
        height_m: 0.5,
        rng_seed: 7,
        ..FloorSpec::default()
    };
    let floor = generate_floor(&spec)?;
    println!(
        "floor: {} blobs over {} x {} m (density {}/cm^2)",
        floor.blobs.len(),
        spec.width_m,
        spec.height_m,
        spec.blob_density_per_cm2
    );

    let out = std::path::Path::new("target/floor_generation");
    std::fs::create_dir_all(out)?;
    let floor_path = out.join("floor.kflt");
    save_floor(&floor, &floor_path)?;
    println!("saved ground truth -> {}", floor_path.display());

    // One view from the floor center, with sensor noise.
    let cam = CameraModel::default();
    let pose = Pose2D::new(0.25, 0.25, 0.6);
    let frame = render_view(&floor, &cam, pose, 3.0, 1);
    let frame_path = out.join("view.ppm");
    write_ppm(&frame.image, &frame_path)?;
    println!(
        "rendered {}x{} view at ({:.2}, {:.2}, {:.2} rad) -> {}",
        cam.image_width,
        cam.image_height,
        pose.x,
        pose.y,
        pose.theta,
        frame_path.display()
    );
    Ok(())
}
