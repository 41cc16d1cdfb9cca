//! Memoryless per-frame pose estimation.
//!
//! Each frame is processed in isolation: keypoints and descriptors exactly
//! as in mapping, k-nearest retrieval per keypoint, spatial mode filtering
//! of the candidate matches, and a RANSAC rigid alignment of camera-frame
//! keypoint offsets against map positions. No temporal state exists, so a
//! frame sequence can be localized in any order (or in parallel) with
//! bit-identical results; the RANSAC seed is derived from the frame id.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::floorsim::{FloorError, FrameProvider, Frame, PoseLog};
use crate::geometry::{ransac_rigid, GeometryError, Pose2D, RansacParams};
use crate::mapdb::{MapDatabase, QueryMode};
use crate::pipeline::{FramePipeline, PipelineError};

#[derive(Debug, Error)]
pub enum LocalizerError {
    #[error("invalid localization parameters: {0}")]
    BadParams(&'static str),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Frame(#[from] FloorError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed prediction record: {reason}")]
    BadRecord { path: PathBuf, reason: String },
}

/// Localization configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalizationParams {
    /// Neighbors retrieved per query keypoint.
    pub k: usize,
    /// Radius of the match-density mode, meters. Matches beyond this radius
    /// of the densest location are discarded. Defaults to half the image
    /// footprint diagonal: matches belonging to the true view survive.
    pub mode_radius: f64,
    /// Minimum surviving matches to attempt an alignment.
    pub min_filtered_matches: usize,
    pub ransac: RansacParams,
    pub query_mode: QueryMode,
}

impl Default for LocalizationParams {
    fn default() -> Self {
        LocalizationParams {
            k: 20,
            mode_radius: 0.0285,
            min_filtered_matches: 3,
            ransac: RansacParams::default(),
            query_mode: QueryMode::Exact,
        }
    }
}

impl LocalizationParams {
    pub fn validate(&self) -> Result<(), LocalizerError> {
        if self.k < 1 {
            return Err(LocalizerError::BadParams("k must be >= 1"));
        }
        if !(self.mode_radius > 0.0) {
            return Err(LocalizerError::BadParams("mode_radius must be positive"));
        }
        if self.min_filtered_matches < self.ransac.min_samples {
            return Err(LocalizerError::BadParams(
                "min_filtered_matches must be >= ransac.min_samples",
            ));
        }
        Ok(())
    }
}

/// A retrieval hit annotated with everything the later stages need.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CandidateMatch {
    pub query_idx: usize,
    pub entry_id: u64,
    pub cosine_distance: f64,
    /// Matched map entry position, floor coordinates (meters).
    pub map_pos: (f64, f64),
    /// Query keypoint offset in the camera frame (meters).
    pub camera_offset: (f64, f64),
}

/// Why a frame produced no pose.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FailureReason {
    NoKeypoints,
    TooFewMatches,
    RansacFailed,
}

impl FailureReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            FailureReason::NoKeypoints => "no_keypoints",
            FailureReason::TooFewMatches => "too_few_matches",
            FailureReason::RansacFailed => "ransac_failed",
        }
    }
}

/// Pose or explicit failure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LocalizationOutcome {
    Pose(Pose2D),
    Failure(FailureReason),
}

/// Stage counts of one localization attempt.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LocalizationDiagnostics {
    pub n_keypoints: usize,
    pub n_matches: usize,
    pub n_matches_filtered: usize,
    pub n_inliers: usize,
}

/// Per-frame localization result.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalizationResult {
    pub frame_id: u64,
    pub outcome: LocalizationOutcome,
    pub diagnostics: LocalizationDiagnostics,
}

impl LocalizationResult {
    pub fn pose(&self) -> Option<Pose2D> {
        match self.outcome {
            LocalizationOutcome::Pose(p) => Some(p),
            LocalizationOutcome::Failure(_) => None,
        }
    }

    fn failure(frame_id: u64, reason: FailureReason, diagnostics: LocalizationDiagnostics) -> Self {
        LocalizationResult {
            frame_id,
            outcome: LocalizationOutcome::Failure(reason),
            diagnostics,
        }
    }
}

/// Keeps the spatially densest concentration of matches.
///
/// Every match counts the matches (from any query keypoint, itself included)
/// whose map positions lie within `mode_radius`; the match with the highest
/// count wins (ties: lower cosine distance, then entry id, then query
/// index). All matches within `mode_radius` of the winner survive, reduced
/// to at most one per query keypoint (the lowest-distance one). Output is
/// ordered by query index.
pub fn select_mode(matches: &[CandidateMatch], mode_radius: f64) -> Vec<CandidateMatch> {
    if matches.is_empty() {
        return Vec::new();
    }
    let r2 = mode_radius * mode_radius;
    let within = |a: &CandidateMatch, b: &CandidateMatch| {
        let dx = a.map_pos.0 - b.map_pos.0;
        let dy = a.map_pos.1 - b.map_pos.1;
        dx * dx + dy * dy <= r2
    };

    let mut winner = 0usize;
    let mut winner_count = 0usize;
    for (i, m) in matches.iter().enumerate() {
        let count = matches.iter().filter(|other| within(m, other)).count();
        let better = count > winner_count
            || (count == winner_count && {
                let w = &matches[winner];
                (m.cosine_distance, m.entry_id, m.query_idx)
                    < (w.cosine_distance, w.entry_id, w.query_idx)
            });
        if better || i == 0 {
            winner = i;
            winner_count = count;
        }
    }

    let winner_match = matches[winner];
    // Lowest-distance survivor per query keypoint.
    let mut per_query: std::collections::BTreeMap<usize, CandidateMatch> =
        std::collections::BTreeMap::new();
    for m in matches {
        if !within(m, &winner_match) {
            continue;
        }
        match per_query.get(&m.query_idx) {
            Some(best)
                if (best.cosine_distance, best.entry_id) <= (m.cosine_distance, m.entry_id) => {}
            _ => {
                per_query.insert(m.query_idx, *m);
            }
        }
    }
    per_query.into_values().collect()
}

/// Estimates the pose of a single frame against the map.
///
/// Pipeline: keypoints and descriptors as in mapping; k-NN retrieval per
/// keypoint; mode filtering; rigid RANSAC from camera-frame offsets to map
/// positions. The recovered transform maps the camera origin to the pose
/// position and its rotation is the heading. Reads no state besides the
/// sealed map; the RANSAC seed is `ransac.rng_seed XOR frame_id`.
pub fn estimate_position(
    frame: &Frame,
    db: &MapDatabase,
    pipeline: &FramePipeline<'_>,
    params: &LocalizationParams,
) -> Result<LocalizationResult, LocalizerError> {
    params.validate()?;
    let mut diagnostics = LocalizationDiagnostics::default();
    let frame_id = frame.frame_id;

    let extracted = pipeline.extract(frame, false)?;
    diagnostics.n_keypoints = extracted.len();
    if extracted.is_empty() {
        return Ok(LocalizationResult::failure(
            frame_id,
            FailureReason::NoKeypoints,
            diagnostics,
        ));
    }

    let cam = &pipeline.camera;
    let mut matches = Vec::with_capacity(extracted.len() * params.k);
    for (query_idx, e) in extracted.iter().enumerate() {
        let offset = cam.pixel_to_camera(e.keypoint.center.0, e.keypoint.center.1);
        for m in db.query_knn(&e.descriptor, params.k, params.query_mode) {
            matches.push(CandidateMatch {
                query_idx,
                entry_id: m.entry_id,
                cosine_distance: m.cosine_distance,
                map_pos: db.entry(m.entry_id).world_pos,
                camera_offset: offset,
            });
        }
    }
    diagnostics.n_matches = matches.len();

    let filtered = select_mode(&matches, params.mode_radius);
    diagnostics.n_matches_filtered = filtered.len();
    if filtered.len() < params.min_filtered_matches {
        return Ok(LocalizationResult::failure(
            frame_id,
            FailureReason::TooFewMatches,
            diagnostics,
        ));
    }

    let src: Vec<(f64, f64)> = filtered.iter().map(|m| m.camera_offset).collect();
    let dst: Vec<(f64, f64)> = filtered.iter().map(|m| m.map_pos).collect();
    let ransac = RansacParams {
        rng_seed: params.ransac.rng_seed ^ frame_id,
        ..params.ransac
    };
    match ransac_rigid(&src, &dst, &ransac) {
        Ok(res) => {
            diagnostics.n_inliers = res.inlier_count;
            let pose = Pose2D::new(
                res.transform.translation.0,
                res.transform.translation.1,
                res.transform.rotation,
            );
            Ok(LocalizationResult {
                frame_id,
                outcome: LocalizationOutcome::Pose(pose),
                diagnostics,
            })
        }
        Err(GeometryError::TooFewMatches { .. }) => Ok(LocalizationResult::failure(
            frame_id,
            FailureReason::TooFewMatches,
            diagnostics,
        )),
        Err(_) => Ok(LocalizationResult::failure(
            frame_id,
            FailureReason::RansacFailed,
            diagnostics,
        )),
    }
}

/// Localizes every frame of a run, in parallel, ordered by the log.
pub fn localize_run(
    frames: &dyn FrameProvider,
    log: &PoseLog,
    db: &MapDatabase,
    pipeline: &FramePipeline<'_>,
    params: &LocalizationParams,
) -> Result<Vec<LocalizationResult>, LocalizerError> {
    params.validate()?;
    log.samples
        .par_iter()
        .map(|sample| {
            let frame = frames.frame(sample)?;
            estimate_position(&frame, db, pipeline, params)
        })
        .collect()
}

/// Writes per-frame predictions:
/// `frame_id,status,x,y,theta,inliers,n_keypoints,n_matches_filtered`
/// with empty pose fields on failure.
pub fn write_predictions_csv(
    results: &[LocalizationResult],
    path: &Path,
) -> Result<(), LocalizerError> {
    let file = File::create(path).map_err(|e| LocalizerError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(b"frame_id,status,x,y,theta,inliers,n_keypoints,n_matches_filtered\n")?;
        for r in results {
            match r.outcome {
                LocalizationOutcome::Pose(p) => writeln!(
                    w,
                    "{},ok,{:.6},{:.6},{:.6},{},{},{}",
                    r.frame_id,
                    p.x,
                    p.y,
                    p.theta,
                    r.diagnostics.n_inliers,
                    r.diagnostics.n_keypoints,
                    r.diagnostics.n_matches_filtered
                )?,
                LocalizationOutcome::Failure(reason) => writeln!(
                    w,
                    "{},{},,,,{},{},{}",
                    r.frame_id,
                    reason.as_str(),
                    r.diagnostics.n_inliers,
                    r.diagnostics.n_keypoints,
                    r.diagnostics.n_matches_filtered
                )?,
            }
        }
        w.flush()
    };
    write(&mut w).map_err(|e| LocalizerError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Reads a predictions file written by [`write_predictions_csv`].
pub fn read_predictions_csv(path: &Path) -> Result<Vec<LocalizationResult>, LocalizerError> {
    let text = std::fs::read_to_string(path).map_err(|e| LocalizerError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != "frame_id,status,x,y,theta,inliers,n_keypoints,n_matches_filtered" {
        return Err(LocalizerError::BadRecord {
            path: path.to_path_buf(),
            reason: format!("unexpected header {header:?}"),
        });
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = |reason: &str| LocalizerError::BadRecord {
            path: path.to_path_buf(),
            reason: format!("line {}: {reason}", lineno + 2),
        };
        if fields.len() != 8 {
            return Err(bad("expected 8 fields"));
        }
        let frame_id: u64 = fields[0].parse().map_err(|_| bad("bad frame_id"))?;
        let diagnostics = LocalizationDiagnostics {
            n_inliers: fields[5].parse().map_err(|_| bad("bad inliers"))?,
            n_keypoints: fields[6].parse().map_err(|_| bad("bad n_keypoints"))?,
            n_matches_filtered: fields[7]
                .parse()
                .map_err(|_| bad("bad n_matches_filtered"))?,
            n_matches: 0,
        };
        let outcome = match fields[1] {
            "ok" => {
                let x: f64 = fields[2].parse().map_err(|_| bad("bad x"))?;
                let y: f64 = fields[3].parse().map_err(|_| bad("bad y"))?;
                let theta: f64 = fields[4].parse().map_err(|_| bad("bad theta"))?;
                LocalizationOutcome::Pose(Pose2D::new(x, y, theta))
            }
            "no_keypoints" => LocalizationOutcome::Failure(FailureReason::NoKeypoints),
            "too_few_matches" => LocalizationOutcome::Failure(FailureReason::TooFewMatches),
            "ransac_failed" => LocalizationOutcome::Failure(FailureReason::RansacFailed),
            other => return Err(bad(&format!("unknown status {other:?}"))),
        };
        out.push(LocalizationResult {
            frame_id,
            outcome,
            diagnostics,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(
        query_idx: usize,
        entry_id: u64,
        distance: f64,
        map_pos: (f64, f64),
    ) -> CandidateMatch {
        CandidateMatch {
            query_idx,
            entry_id,
            cosine_distance: distance,
            map_pos,
            camera_offset: (0.0, 0.0),
        }
    }

    #[test]
    fn mode_keeps_the_dense_cluster() {
        let mut matches = Vec::new();
        // Five matches from distinct keypoints, within one centimeter.
        for i in 0..5usize {
            matches.push(cand(i, i as u64, 0.02, (1.0 + i as f64 * 0.002, 1.0)));
        }
        // Fifteen scattered matches at least a meter away.
        for i in 0..15usize {
            matches.push(cand(
                i % 5,
                (100 + i) as u64,
                0.01,
                (3.0 + i as f64, 5.0 + (i % 4) as f64),
            ));
        }
        let out = select_mode(&matches, 0.0285);
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|m| m.entry_id < 5));
    }

    #[test]
    fn degenerate_mode_returns_single_best() {
        // All matches mutually farther than the radius: density 1 each; the
        // tie-break picks the lowest cosine distance.
        let matches = vec![
            cand(0, 10, 0.30, (0.0, 0.0)),
            cand(1, 11, 0.05, (1.0, 0.0)),
            cand(2, 12, 0.20, (0.0, 1.0)),
        ];
        let out = select_mode(&matches, 0.0285);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].entry_id, 11);
    }

    #[test]
    fn one_match_per_query_keypoint() {
        // Two query keypoints match the same region; one of them has two
        // candidate entries there. Exactly one match per keypoint survives.
        let matches = vec![
            cand(0, 1, 0.04, (1.0, 1.0)),
            cand(0, 2, 0.02, (1.001, 1.0)),
            cand(1, 3, 0.03, (1.002, 1.0)),
        ];
        let out = select_mode(&matches, 0.0285);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].query_idx, 0);
        assert_eq!(out[0].entry_id, 2, "lower distance wins within a keypoint");
        assert_eq!(out[1].query_idx, 1);
    }

    #[test]
    fn empty_input_empty_output() {
        assert!(select_mode(&[], 0.0285).is_empty());
    }

    #[test]
    fn predictions_csv_round_trip() {
        let results = vec![
            LocalizationResult {
                frame_id: 0,
                outcome: LocalizationOutcome::Pose(Pose2D::new(1.25, 0.5, -0.75)),
                diagnostics: LocalizationDiagnostics {
                    n_keypoints: 9,
                    n_matches: 180,
                    n_matches_filtered: 7,
                    n_inliers: 6,
                },
            },
            LocalizationResult {
                frame_id: 1,
                outcome: LocalizationOutcome::Failure(FailureReason::TooFewMatches),
                diagnostics: LocalizationDiagnostics {
                    n_keypoints: 2,
                    n_matches: 40,
                    n_matches_filtered: 1,
                    n_inliers: 0,
                },
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.csv");
        write_predictions_csv(&results, &path).unwrap();
        let back = read_predictions_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].frame_id, 0);
        let p = back[0].pose().unwrap();
        assert!((p.x - 1.25).abs() < 1e-9);
        assert_eq!(
            back[1].outcome,
            LocalizationOutcome::Failure(FailureReason::TooFewMatches)
        );
        assert_eq!(back[1].diagnostics.n_keypoints, 2);
    }
}
