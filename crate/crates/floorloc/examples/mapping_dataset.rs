//! Generates a small zigzag mapping run and persists it as a dataset
//! directory (PPM frames plus a pose CSV).
//!
//! Run with: `cargo run --example mapping_dataset`

use floorloc::floorsim::{
    generate_floor, generate_mapping_run, persist_run, CameraModel, FloorSpec, FrameProvider,
    RenderProvider,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let floor = generate_floor(&FloorSpec {
        width_m: 0.3,
        height_m: 0.3,
        rng_seed: 11,
        ..FloorSpec::default()
    })?;
    let cam = CameraModel::default();

    // A coarse, quick pass: one small tile, low capture rate.
    let log = generate_mapping_run(&floor, &cam, (0.05, 0.05), 0.2, 0.012, 0.2, 15.0)?;
    println!(
        "mapping run: {} frames at {} Hz over a 0.2 m tile",
        log.len(),
        log.capture_rate_hz
    );

    let provider = RenderProvider {
        floor: &floor,
        cam,
        noise_sigma: 3.0,
        noise_seed: 99,
    };
    let frames: Result<Vec<_>, _> = log.samples.iter().map(|s| provider.frame(s)).collect();

    let out = std::path::Path::new("target/mapping_dataset/mapping_00");
    persist_run(&frames?, &log, out)?;
    println!("dataset -> {}", out.display());
    println!("  frames:    frame_NNNNNN.ppm");
    println!("  poses:     poses.csv (frame_id,t,x,y,theta)");
    println!("  metadata:  run.meta");
    Ok(())
}
