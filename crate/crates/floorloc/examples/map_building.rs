//! Builds a keypoint map from a mapping run and saves the sealed database.
//!
//! Run with: `cargo run --example map_building`

use floorloc::detector::PaletteSegmenter;
use floorloc::floorsim::{
    generate_floor, generate_mapping_run, CameraModel, FloorSpec, RenderProvider,
};
use floorloc::mapper::{build_map, MapBuildParams, MappingInput};
use floorloc::pipeline::FramePipeline;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let floor = generate_floor(&FloorSpec {
        width_m: 0.4,
        height_m: 0.4,
        rng_seed: 3,
        ..FloorSpec::default()
    })?;
    let cam = CameraModel::default();
    let log = generate_mapping_run(&floor, &cam, (0.0, 0.0), 0.4, 0.01, 0.2, 60.0)?;
    println!("mapping run: {} frames", log.len());

    let provider = RenderProvider {
        floor: &floor,
        cam,
        noise_sigma: 3.0,
        noise_seed: 5,
    };
    let segmenter = PaletteSegmenter::default();
    let pipeline = FramePipeline {
        segmenter: &segmenter,
        detector: Default::default(),
        camera: cam,
    };
    let inputs = [MappingInput {
        frames: &provider,
        log: &log,
    }];
    let built = build_map(&inputs, &pipeline, &MapBuildParams::default())?;
    println!("build: {}", built.diagnostics);
    println!(
        "index self-test recall@20: {:.3}",
        built.db.self_test_recall
    );

    let out = std::path::Path::new("target/map_building");
    std::fs::create_dir_all(out)?;
    let path = out.join("map.kmap");
    floorloc::mapdb::save(&built.db, &path)?;
    println!("{} entries -> {}", built.db.len(), path.display());

    // Round-trip sanity: load and compare.
    let back = floorloc::mapdb::load(&path)?;
    assert_eq!(back.entries(), built.db.entries());
    println!("reloaded database matches bit for bit");
    Ok(())
}
