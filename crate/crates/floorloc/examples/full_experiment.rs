//! Runs the full pipeline (floor, mapping, map build, evaluation walk,
//! scoring, reports) at smoke scale and prints the metrics.
//!
//! Run with: `cargo run --example full_experiment`

use floorloc::config::ExperimentConfig;
use floorloc::harness::run_experiment;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ExperimentConfig::from_text(
        "\
seed = 5
floor.width = 0.4
floor.height = 0.4
mapping.tile = 0.4
eval.areas = 0.04
eval.frames = 120
",
    )?;

    let out = std::path::Path::new("target/full_experiment");
    let output = run_experiment(&config, Some(out))?;
    println!("map: {}", output.map_diagnostics);
    for (area, m) in &output.per_area {
        println!(
            "area {area} m^2: {} frames, PSR {:.3}, TSR {:.3}, gap {:.3}",
            m.n_frames, m.psr, m.tsr, m.psr_tsr_gap
        );
        if let Some(err) = m.mean_position_error_true_m {
            println!(
                "  mean error over true successes: {:.2} mm / {:.3} deg",
                err * 1000.0,
                m.mean_angle_error_true_rad.unwrap_or(0.0).to_degrees()
            );
        }
        println!("  {:.1} ms per frame", m.sec_per_frame * 1000.0);
    }
    println!("reports (summary.csv, per_frame.csv, trajectory.svg) -> {}", out.display());
    Ok(())
}
