//! Builds a map with retained patches and exports the per-cluster patch
//! samples used to train a learned descriptor.
//!
//! Run with: `cargo run --example patch_export`

use floorloc::descriptor::export_training_clusters;
use floorloc::detector::PaletteSegmenter;
use floorloc::floorsim::{
    generate_floor, generate_mapping_run, CameraModel, FloorSpec, RenderProvider,
};
use floorloc::mapper::{build_map, MapBuildParams, MappingInput};
use floorloc::pipeline::FramePipeline;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let floor = generate_floor(&FloorSpec {
        width_m: 0.3,
        height_m: 0.3,
        rng_seed: 31,
        ..FloorSpec::default()
    })?;
    let cam = CameraModel::default();
    let log = generate_mapping_run(&floor, &cam, (0.02, 0.02), 0.25, 0.012, 0.2, 30.0)?;

    let provider = RenderProvider {
        floor: &floor,
        cam,
        noise_sigma: 3.0,
        noise_seed: 17,
    };
    let segmenter = PaletteSegmenter::default();
    let pipeline = FramePipeline {
        segmenter: &segmenter,
        detector: Default::default(),
        camera: cam,
    };
    let params = MapBuildParams {
        keep_patches: true, // retain normalized patches for the export
        ..MapBuildParams::default()
    };
    let inputs = [MappingInput {
        frames: &provider,
        log: &log,
    }];
    let built = build_map(&inputs, &pipeline, &params)?;
    println!("map: {}", built.diagnostics);

    let out = std::path::Path::new("target/patch_export");
    let summary = export_training_clusters(&built.clusters, 4, out, 123)?;
    println!(
        "exported {} clusters, {} patches -> {}",
        summary.clusters_exported,
        summary.patches_written,
        summary.manifest_path.display()
    );
    println!("each cluster directory holds 4 PGM label patches of one floor feature");
    Ok(())
}
