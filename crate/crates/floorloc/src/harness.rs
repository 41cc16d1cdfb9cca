//! Experiment driver and metrics: runs mapping and evaluation end to end,
//! scores predictions against ground truth, and emits reports.
//!
//! Success is two-tiered: the prediction success rate (PSR) counts frames
//! that produced any pose, the true success rate (TSR) counts frames whose
//! pose lies within the position/heading gates of ground truth. A healthy
//! pipeline keeps PSR close to TSR; a wide gap means confidently wrong
//! poses.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::detector::PaletteSegmenter;
use crate::floorsim::{
    generate_eval_run, generate_floor, generate_mapping_run, PoseLog, RenderProvider,
};
use crate::geometry::{pose_delta, Pose2D};
use crate::localizer::{
    localize_run, FailureReason, LocalizationOutcome, LocalizationResult,
};
use crate::mapper::{build_map, MapBuildOutput, MapBuildParams, MappingInput};
use crate::pipeline::FramePipeline;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("predictions and truth do not align: {0}")]
    FrameIdMismatch(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn stage<E: std::error::Error + Send + Sync + 'static>(
    name: &'static str,
) -> impl FnOnce(E) -> HarnessError {
    move |e| HarnessError::Stage {
        stage: name,
        source: Box::new(e),
    }
}

/// Gates separating a true success from a merely produced pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuccessGates {
    pub max_position_error_m: f64,
    pub max_angle_error_rad: f64,
}

impl Default for SuccessGates {
    fn default() -> Self {
        SuccessGates {
            max_position_error_m: 0.10,
            max_angle_error_rad: 20f64.to_radians(),
        }
    }
}

/// One frame's evaluation record.
#[derive(Clone, Copy, Debug)]
pub struct FrameEvaluation {
    pub frame_id: u64,
    pub predicted: Option<Pose2D>,
    pub failure: Option<FailureReason>,
    pub truth: Pose2D,
    /// Position/angle error of a produced pose.
    pub position_error_m: Option<f64>,
    pub angle_error_rad: Option<f64>,
    pub true_success: bool,
}

/// Aggregated metrics of one evaluated run.
#[derive(Clone, Debug)]
pub struct RunMetrics {
    pub n_frames: usize,
    pub n_predicted: usize,
    pub n_true_success: usize,
    /// Fraction of frames with any prediction.
    pub psr: f64,
    /// Fraction of frames with a prediction inside the gates.
    pub tsr: f64,
    pub psr_tsr_gap: f64,
    /// Mean position error over true successes (the headline number), and
    /// over all predictions (diagnostic: inflated by confidently wrong
    /// poses).
    pub mean_position_error_true_m: Option<f64>,
    pub mean_position_error_predicted_m: Option<f64>,
    /// Mean heading error over true successes, radians.
    pub mean_angle_error_true_rad: Option<f64>,
    /// Wall-clock seconds per localized frame; recorded, never gated.
    pub sec_per_frame: f64,
    pub per_frame: Vec<FrameEvaluation>,
}

/// Scores predictions against ground truth.
///
/// Frame ids must match one-to-one. PSR counts produced poses over all
/// frames; TSR counts poses within the gates. Mean errors are reported over
/// true successes (and over all predictions as a diagnostic variant).
pub fn evaluate_run(
    predictions: &[LocalizationResult],
    truth: &PoseLog,
    gates: &SuccessGates,
) -> Result<RunMetrics, HarnessError> {
    if predictions.len() != truth.samples.len() {
        return Err(HarnessError::FrameIdMismatch(format!(
            "{} predictions vs {} truth samples",
            predictions.len(),
            truth.samples.len()
        )));
    }
    let by_id: std::collections::HashMap<u64, &crate::floorsim::PoseSample> =
        truth.samples.iter().map(|s| (s.frame_id, s)).collect();

    let mut per_frame = Vec::with_capacity(predictions.len());
    let mut n_predicted = 0usize;
    let mut n_true = 0usize;
    let (mut pos_sum_true, mut ang_sum_true, mut pos_sum_pred) = (0.0, 0.0, 0.0);

    for pred in predictions {
        let Some(sample) = by_id.get(&pred.frame_id) else {
            return Err(HarnessError::FrameIdMismatch(format!(
                "prediction for frame {} has no truth sample",
                pred.frame_id
            )));
        };
        let truth_pose = sample.pose;
        let record = match pred.outcome {
            LocalizationOutcome::Pose(pose) => {
                let (dist, angle) = pose_delta(&pose, &truth_pose);
                let ok = dist <= gates.max_position_error_m
                    && angle <= gates.max_angle_error_rad;
                n_predicted += 1;
                pos_sum_pred += dist;
                if ok {
                    n_true += 1;
                    pos_sum_true += dist;
                    ang_sum_true += angle;
                }
                FrameEvaluation {
                    frame_id: pred.frame_id,
                    predicted: Some(pose),
                    failure: None,
                    truth: truth_pose,
                    position_error_m: Some(dist),
                    angle_error_rad: Some(angle),
                    true_success: ok,
                }
            }
            LocalizationOutcome::Failure(reason) => FrameEvaluation {
                frame_id: pred.frame_id,
                predicted: None,
                failure: Some(reason),
                truth: truth_pose,
                position_error_m: None,
                angle_error_rad: None,
                true_success: false,
            },
        };
        per_frame.push(record);
    }

    let n = predictions.len();
    let psr = n_predicted as f64 / n.max(1) as f64;
    let tsr = n_true as f64 / n.max(1) as f64;
    Ok(RunMetrics {
        n_frames: n,
        n_predicted,
        n_true_success: n_true,
        psr,
        tsr,
        psr_tsr_gap: psr - tsr,
        mean_position_error_true_m: (n_true > 0).then(|| pos_sum_true / n_true as f64),
        mean_position_error_predicted_m: (n_predicted > 0)
            .then(|| pos_sum_pred / n_predicted as f64),
        mean_angle_error_true_rad: (n_true > 0).then(|| ang_sum_true / n_true as f64),
        sec_per_frame: 0.0,
        per_frame,
    })
}

/// Result of one experiment: per-area metrics in area order.
pub struct ExperimentOutput {
    pub per_area: Vec<(f64, RunMetrics)>,
    pub map_diagnostics: crate::mapper::BuildDiagnostics,
}

/// Runs the full pipeline for a configuration: floor, mapping grid, map
/// build, one evaluation run per configured area, scoring, and (when an
/// output directory is given) reports.
///
/// Everything derives from `config.seed`; two runs with the same config
/// produce identical metrics.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<ExperimentOutput, HarnessError> {
    let floor = generate_floor(&config.floor).map_err(stage("floor generation"))?;
    let cam = crate::floorsim::CameraModel::default();
    let segmenter =
        PaletteSegmenter::new(crate::color::Palette::default(), config.segment_max_distance);
    let pipeline = FramePipeline {
        segmenter: &segmenter,
        detector: config.detector,
        camera: cam,
    };

    // Mapping: a grid of square tiles covering the floor.
    let mut logs: Vec<PoseLog> = Vec::new();
    let tile = config.mapping.tile.min(config.floor.width_m).min(config.floor.height_m);
    let mut ty = 0.0;
    while ty < config.floor.height_m - 1e-9 {
        let side_y = tile.min(config.floor.height_m - ty);
        let mut tx = 0.0;
        while tx < config.floor.width_m - 1e-9 {
            let side = tile.min(config.floor.width_m - tx).min(side_y);
            logs.push(
                generate_mapping_run(
                    &floor,
                    &cam,
                    (tx, ty),
                    side,
                    config.mapping.spacing,
                    config.mapping.speed,
                    config.mapping.rate,
                )
                .map_err(stage("mapping run generation"))?,
            );
            tx += tile;
        }
        ty += tile;
    }

    let provider = RenderProvider {
        floor: &floor,
        cam,
        noise_sigma: config.render_noise_sigma,
        noise_seed: crate::mix_seed(config.seed, 0x6d61_7070),
    };
    let inputs: Vec<MappingInput> = logs
        .iter()
        .map(|log| MappingInput {
            frames: &provider,
            log,
        })
        .collect();
    let build_params = MapBuildParams {
        detector: config.detector,
        outlier: config.outlier,
        cluster: config.cluster,
        keep_patches: false,
        index: Default::default(),
    };
    let MapBuildOutput {
        db, diagnostics, ..
    } = build_map(&inputs, &pipeline, &build_params).map_err(stage("map build"))?;

    // Evaluation: one run per area.
    let mut per_area = Vec::new();
    for (area_idx, &area) in config.eval.areas.iter().enumerate() {
        let run = generate_eval_run(
            &floor,
            &cam,
            area,
            crate::mix_seed(config.seed, 0xe7a1 + area_idx as u64),
            config.eval.speed,
            config.eval.rate,
            config.eval.pose_noise_sigma,
            config.eval.frames,
        )
        .map_err(stage("evaluation run generation"))?;

        // Frames render from the actual track; the measured track is the
        // ground truth the pipeline is scored against.
        let eval_provider = RenderProvider {
            floor: &floor,
            cam,
            noise_sigma: config.render_noise_sigma,
            noise_seed: crate::mix_seed(config.seed, 0xe7a1_0000 + area_idx as u64),
        };
        let mut loc_params = config.localization;
        loc_params.ransac.rng_seed = crate::mix_seed(config.seed, 0x7261_6e73);

        let started = Instant::now();
        let predictions = localize_run(&eval_provider, &run.actual, &db, &pipeline, &loc_params)
            .map_err(stage("localization"))?;
        let elapsed = started.elapsed().as_secs_f64();

        let mut metrics = evaluate_run(&predictions, &run.measured, &config.gates)?;
        metrics.sec_per_frame = elapsed / predictions.len().max(1) as f64;

        if let Some(dir) = out_dir {
            let area_dir = dir.join(format!("area_{area_idx:02}"));
            emit_report(area, &metrics, &area_dir)?;
            crate::localizer::write_predictions_csv(
                &predictions,
                &area_dir.join("predictions.csv"),
            )
            .map_err(stage("prediction output"))?;
        }
        per_area.push((area, metrics));
    }

    if let Some(dir) = out_dir {
        write_summary_csv(&per_area, &dir.join("summary.csv"))?;
    }

    Ok(ExperimentOutput {
        per_area,
        map_diagnostics: diagnostics,
    })
}

/// Summary CSV schema, one row per area:
/// `area_m2,n_frames,psr,tsr,mean_pos_err_m,mean_angle_err_deg,mean_pos_err_true_m,psr_tsr_gap,sec_per_frame`.
///
/// `mean_pos_err_m` averages over all produced poses; the `_true` variant
/// and the angle error average over true successes. Undefined means (no
/// qualifying frames) are empty fields.
pub fn write_summary_csv(
    per_area: &[(f64, RunMetrics)],
    path: &Path,
) -> Result<(), HarnessError> {
    let mut text = String::from(
        "area_m2,n_frames,psr,tsr,mean_pos_err_m,mean_angle_err_deg,mean_pos_err_true_m,psr_tsr_gap,sec_per_frame\n",
    );
    for (area, m) in per_area {
        let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let _ = writeln!(
            text,
            "{:.4},{},{:.6},{:.6},{},{},{},{:.6},{:.6}",
            area,
            m.n_frames,
            m.psr,
            m.tsr,
            fmt_opt(m.mean_position_error_predicted_m),
            fmt_opt(m.mean_angle_error_true_rad.map(|r| r.to_degrees())),
            fmt_opt(m.mean_position_error_true_m),
            m.psr_tsr_gap,
            m.sec_per_frame,
        );
    }
    std::fs::write(path, text).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes the per-area report: per-frame CSV and a trajectory SVG.
///
/// Per-frame schema:
/// `frame_id,status,x,y,theta,truth_x,truth_y,truth_theta,pos_err_m,ang_err_deg,true_success`
/// with empty pose/error fields on failures.
pub fn emit_report(area_m2: f64, metrics: &RunMetrics, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;

    let mut text = String::from(
        "frame_id,status,x,y,theta,truth_x,truth_y,truth_theta,pos_err_m,ang_err_deg,true_success\n",
    );
    for f in &metrics.per_frame {
        let status = match (&f.predicted, &f.failure) {
            (Some(_), _) => "ok",
            (None, Some(reason)) => reason.as_str(),
            (None, None) => "ok",
        };
        let pose_fields = match f.predicted {
            Some(p) => format!("{:.6},{:.6},{:.6}", p.x, p.y, p.theta),
            None => ",,".to_string(),
        };
        let err_fields = match (f.position_error_m, f.angle_error_rad) {
            (Some(d), Some(a)) => format!("{:.6},{:.6}", d, a.to_degrees()),
            _ => ",".to_string(),
        };
        let _ = writeln!(
            text,
            "{},{},{},{:.6},{:.6},{:.6},{},{}",
            f.frame_id,
            status,
            pose_fields,
            f.truth.x,
            f.truth.y,
            f.truth.theta,
            err_fields,
            f.true_success as u8,
        );
    }
    let per_frame_path = dir.join("per_frame.csv");
    std::fs::write(&per_frame_path, text).map_err(|e| HarnessError::Io {
        path: per_frame_path.clone(),
        source: e,
    })?;

    write_summary_csv(
        &[(area_m2, metrics.clone())],
        &dir.join("summary.csv"),
    )?;

    let svg_path = dir.join("trajectory.svg");
    let svg = trajectory_svg(metrics);
    std::fs::write(&svg_path, svg).map_err(|e| HarnessError::Io {
        path: svg_path.clone(),
        source: e,
    })?;
    Ok(())
}

/// Ground-truth polyline (red) with predicted positions (blue dots, one
/// `<circle>` per produced pose) and failures (orange crosses at the truth
/// position).
fn trajectory_svg(metrics: &RunMetrics) -> String {
    let (mut min_x, mut min_y) = (f64::MAX, f64::MAX);
    let (mut max_x, mut max_y) = (f64::MIN, f64::MIN);
    for f in &metrics.per_frame {
        for p in [Some(f.truth), f.predicted].into_iter().flatten() {
            min_x = min_x.min(p.x);
            min_y = min_y.min(p.y);
            max_x = max_x.max(p.x);
            max_y = max_y.max(p.y);
        }
    }
    if metrics.per_frame.is_empty() {
        min_x = 0.0;
        min_y = 0.0;
        max_x = 1.0;
        max_y = 1.0;
    }
    let pad = 0.05 * ((max_x - min_x).max(max_y - min_y)).max(0.1);
    let (x0, y0) = (min_x - pad, min_y - pad);
    let (w, h) = (max_x - min_x + 2.0 * pad, max_y - min_y + 2.0 * pad);
    let scale = 800.0 / w.max(h);
    let px = |x: f64| (x - x0) * scale;
    // SVG y grows downward; flip so the floor's +y points up.
    let py = |y: f64| (h - (y - y0)) * scale;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {:.1} {:.1}\">",
        w * scale,
        h * scale
    );
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");

    let polyline: Vec<String> = metrics
        .per_frame
        .iter()
        .map(|f| format!("{:.2},{:.2}", px(f.truth.x), py(f.truth.y)))
        .collect();
    if !polyline.is_empty() {
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"red\" stroke-width=\"1.5\"/>",
            polyline.join(" ")
        );
    }

    for f in &metrics.per_frame {
        match f.predicted {
            Some(p) => {
                let _ = writeln!(
                    svg,
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"blue\" fill-opacity=\"0.6\"/>",
                    px(p.x),
                    py(p.y)
                );
            }
            None => {
                let (cx, cy) = (px(f.truth.x), py(f.truth.y));
                let _ = writeln!(
                    svg,
                    "<path d=\"M {:.2} {:.2} L {:.2} {:.2} M {:.2} {:.2} L {:.2} {:.2}\" stroke=\"orange\" stroke-width=\"1.5\"/>",
                    cx - 4.0, cy - 4.0, cx + 4.0, cy + 4.0,
                    cx - 4.0, cy + 4.0, cx + 4.0, cy - 4.0
                );
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}
