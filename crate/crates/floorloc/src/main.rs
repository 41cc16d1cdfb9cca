//! Command-line front end. Every subcommand is a thin wrapper over the
//! library; see the crate examples for the same flows in code.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use floorloc::config::ExperimentConfig;
use floorloc::detector::PaletteSegmenter;
use floorloc::floorsim::{
    generate_eval_run, generate_floor, generate_mapping_run, load_floor, load_run_log,
    persist_run, save_floor, DiskProvider, RenderProvider,
};
use floorloc::harness::{emit_report, evaluate_run, run_experiment, write_summary_csv};
use floorloc::localizer::{localize_run, read_predictions_csv, write_predictions_csv};
use floorloc::mapdb::QueryMode;
use floorloc::mapper::{build_map, MapBuildParams, MappingInput};
use floorloc::pipeline::FramePipeline;

#[derive(Parser)]
#[command(
    name = "floorloc",
    about = "Ground-texture localization at desk scale: synthetic floors, keypoint maps, per-frame pose estimation"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (flat key = value; unknown keys are errors).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured top-level seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Force exact k-NN retrieval regardless of the configured mode.
    #[arg(long, global = true)]
    exact_knn: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generates a floor and writes it as a binary floor file.
    GenFloor,
    /// Generates mapping and evaluation datasets (frames + pose CSVs) on
    /// disk. Frame counts grow quickly; use small configs.
    GenRuns {
        /// Floor file produced by gen-floor.
        #[arg(long)]
        floor: PathBuf,
    },
    /// Builds a map database from mapping datasets under --data.
    BuildMap {
        /// Directory holding mapping_* dataset directories.
        #[arg(long)]
        data: PathBuf,
    },
    /// Localizes every frame of an evaluation dataset against a map.
    Localize {
        /// Map file produced by build-map.
        #[arg(long)]
        map: PathBuf,
        /// Evaluation dataset directory.
        #[arg(long)]
        data: PathBuf,
    },
    /// Scores a predictions CSV against a truth dataset and writes reports.
    Evaluate {
        /// Predictions CSV produced by localize.
        #[arg(long)]
        predictions: PathBuf,
        /// Dataset directory holding the ground-truth poses.
        #[arg(long)]
        truth: PathBuf,
    },
    /// Runs the full experiment (floor, mapping, map, evaluation, reports)
    /// in memory.
    Experiment,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = e.source();
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Box<dyn std::error::Error>> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
        config.floor.rng_seed = seed;
    }
    if common.exact_knn {
        config.localization.query_mode = QueryMode::Exact;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    let config = load_config(&cli.common)?;
    let out = &cli.common.out;
    let cam = floorloc::CameraModel::default();

    match cli.command {
        Command::GenFloor => {
            std::fs::create_dir_all(out)?;
            let floor = generate_floor(&config.floor)?;
            let path = out.join("floor.kflt");
            save_floor(&floor, &path)?;
            println!(
                "floor: {} blobs over {:.2} x {:.2} m -> {}",
                floor.blobs.len(),
                config.floor.width_m,
                config.floor.height_m,
                path.display()
            );
        }
        Command::GenRuns { floor } => {
            std::fs::create_dir_all(out)?;
            let floor = load_floor(&floor)?;
            let mut tile_idx = 0usize;
            let tile = config
                .mapping
                .tile
                .min(floor.spec.width_m)
                .min(floor.spec.height_m);
            let mut ty = 0.0;
            while ty < floor.spec.height_m - 1e-9 {
                let mut tx = 0.0;
                while tx < floor.spec.width_m - 1e-9 {
                    let side = tile
                        .min(floor.spec.width_m - tx)
                        .min(floor.spec.height_m - ty);
                    let log = generate_mapping_run(
                        &floor,
                        &cam,
                        (tx, ty),
                        side,
                        config.mapping.spacing,
                        config.mapping.speed,
                        config.mapping.rate,
                    )?;
                    let provider = RenderProvider {
                        floor: &floor,
                        cam,
                        noise_sigma: config.render_noise_sigma,
                        noise_seed: floorloc::mix_seed(config.seed, 0x6d61_7070),
                    };
                    let frames: Result<Vec<_>, _> =
                        log.samples.iter().map(|s| {
                            use floorloc::floorsim::FrameProvider;
                            provider.frame(s)
                        }).collect();
                    let dir = out.join(format!("mapping_{tile_idx:02}"));
                    persist_run(&frames?, &log, &dir)?;
                    println!("mapping run {tile_idx}: {} frames -> {}", log.len(), dir.display());
                    tile_idx += 1;
                    tx += tile;
                }
                ty += tile;
            }
            for (i, &area) in config.eval.areas.iter().enumerate() {
                let run = generate_eval_run(
                    &floor,
                    &cam,
                    area,
                    floorloc::mix_seed(config.seed, 0xe7a1 + i as u64),
                    config.eval.speed,
                    config.eval.rate,
                    config.eval.pose_noise_sigma,
                    config.eval.frames,
                )?;
                let provider = RenderProvider {
                    floor: &floor,
                    cam,
                    noise_sigma: config.render_noise_sigma,
                    noise_seed: floorloc::mix_seed(config.seed, 0xe7a1_0000 + i as u64),
                };
                let frames: Result<Vec<_>, _> = run
                    .actual
                    .samples
                    .iter()
                    .map(|s| {
                        use floorloc::floorsim::FrameProvider;
                        provider.frame(s)
                    })
                    .collect();
                let dir = out.join(format!("eval_{i:02}"));
                // The measured log is the ground truth the dataset carries.
                persist_run(&frames?, &run.measured, &dir)?;
                println!(
                    "eval run {i}: {} frames over {area} m^2 -> {}",
                    run.measured.len(),
                    dir.display()
                );
            }
        }
        Command::BuildMap { data } => {
            std::fs::create_dir_all(out)?;
            let mut dirs: Vec<PathBuf> = std::fs::read_dir(&data)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| {
                    p.is_dir()
                        && p.file_name()
                            .and_then(|n| n.to_str())
                            .is_some_and(|n| n.starts_with("mapping_"))
                })
                .collect();
            dirs.sort();
            if dirs.is_empty() {
                return Err(format!("no mapping_* directories under {}", data.display()).into());
            }
            let logs: Result<Vec<_>, _> = dirs.iter().map(|d| load_run_log(d)).collect();
            let logs = logs?;
            let providers: Vec<DiskProvider> = dirs
                .iter()
                .map(|d| DiskProvider { dir: d.clone() })
                .collect();
            let inputs: Vec<MappingInput> = providers
                .iter()
                .zip(&logs)
                .map(|(p, log)| MappingInput { frames: p, log })
                .collect();
            let segmenter = PaletteSegmenter::new(
                floorloc::Palette::default(),
                config.segment_max_distance,
            );
            let pipeline = FramePipeline {
                segmenter: &segmenter,
                detector: config.detector,
                camera: cam,
            };
            let params = MapBuildParams {
                detector: config.detector,
                outlier: config.outlier,
                cluster: config.cluster,
                keep_patches: false,
                index: Default::default(),
            };
            let built = build_map(&inputs, &pipeline, &params)?;
            let path = out.join("map.kmap");
            floorloc::mapdb::save(&built.db, &path)?;
            println!("map: {} -> {}", built.diagnostics, path.display());
        }
        Command::Localize { map, data } => {
            std::fs::create_dir_all(out)?;
            let db = floorloc::mapdb::load(&map)?;
            let log = load_run_log(&data)?;
            let provider = DiskProvider { dir: data.clone() };
            let segmenter = PaletteSegmenter::new(
                floorloc::Palette::default(),
                config.segment_max_distance,
            );
            let pipeline = FramePipeline {
                segmenter: &segmenter,
                detector: config.detector,
                camera: cam,
            };
            let mut params = config.localization;
            params.ransac.rng_seed = floorloc::mix_seed(config.seed, 0x7261_6e73);
            let results = localize_run(&provider, &log, &db, &pipeline, &params)?;
            let path = out.join("predictions.csv");
            write_predictions_csv(&results, &path)?;
            let produced = results.iter().filter(|r| r.pose().is_some()).count();
            println!(
                "localized {} frames ({} produced a pose) -> {}",
                results.len(),
                produced,
                path.display()
            );
        }
        Command::Evaluate { predictions, truth } => {
            std::fs::create_dir_all(out)?;
            let preds = read_predictions_csv(&predictions)?;
            let log = load_run_log(&truth)?;
            let metrics = evaluate_run(&preds, &log, &config.gates)?;
            emit_report(
                log.samples.len() as f64, // area unknown from a bare dataset
                &metrics,
                out,
            )?;
            println!(
                "PSR {:.3} TSR {:.3} mean position error (true) {} m",
                metrics.psr,
                metrics.tsr,
                metrics
                    .mean_position_error_true_m
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "n/a".into()),
            );
        }
        Command::Experiment => {
            std::fs::create_dir_all(out)?;
            let output = run_experiment(&config, Some(out))?;
            println!("map: {}", output.map_diagnostics);
            for (area, m) in &output.per_area {
                println!(
                    "area {area:6.2} m^2: PSR {:.3} TSR {:.3} mean pos err (true) {} m, {:.1} ms/frame",
                    m.psr,
                    m.tsr,
                    m.mean_position_error_true_m
                        .map(|v| format!("{v:.4}"))
                        .unwrap_or_else(|| "n/a".into()),
                    m.sec_per_frame * 1000.0,
                );
            }
            write_summary_csv(&output.per_area, &out.join("summary.csv"))?;
        }
    }
    Ok(())
}
