//! Map creation: pose-outlier removal, projection of keypoints into floor
//! coordinates, density clustering of re-observations, and merging into map
//! entries.
//!
//! Overlapping mapping frames observe the same floor blob many times. An
//! observation only becomes a map entry when enough co-located,
//! descriptor-coherent observations from distinct frames confirm it, which
//! suppresses both segmentation artifacts and pose glitches.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::descriptor::{Descriptor, Patch};
use crate::floorsim::{CameraModel, FloorError, FrameProvider, PoseLog, PoseSample};
use crate::geometry::Pose2D;
use crate::mapdb::{build_index_with, IndexParams, MapDatabase, MapDbError, MapEntry};
use crate::pipeline::{FramePipeline, PipelineError};

#[derive(Debug, Error)]
pub enum MapError {
    #[error("map is empty after clustering; stage counts: {diagnostics}")]
    EmptyMap { diagnostics: BuildDiagnostics },
    #[error("no mapping runs supplied")]
    NoRuns,
    #[error("mean descriptor of a cluster is a zero vector")]
    DegenerateMerge,
    #[error("frame source failed: {0}")]
    Frame(#[from] FloorError),
    #[error("frame pipeline failed: {0}")]
    Pipeline(#[from] PipelineError),
    #[error("index construction failed: {0}")]
    Index(#[from] MapDbError),
}

/// Sliding-window pose-outlier rejection parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutlierFilterParams {
    /// Number of samples in the window centered on the tested sample.
    pub window_size: usize,
    /// Rejection factor: a sample is dropped when it deviates from the
    /// window mean by more than `alpha * sigma` on either axis.
    pub alpha: f64,
    /// Per-axis floor on sigma, meters. Noise-free tracks would otherwise
    /// have sigma = 0 on the cross-track axis and reject everything.
    pub sigma_floor_m: f64,
}

impl Default for OutlierFilterParams {
    fn default() -> Self {
        OutlierFilterParams {
            window_size: 15,
            alpha: 0.8,
            sigma_floor_m: 0.001,
        }
    }
}

/// Outcome of pose-outlier filtering.
#[derive(Clone, Debug)]
pub struct FilteredLog {
    pub log: PoseLog,
    pub removed_frame_ids: Vec<u64>,
    /// Set when the input was shorter than one window and was passed
    /// through unfiltered.
    pub short_input: bool,
}

/// Removes pose outliers with a sliding window.
///
/// Each sample is compared against the per-axis mean and standard deviation
/// of the `window_size` surrounding samples (excluding the tested sample
/// itself) and dropped when it deviates from the mean by more than
/// `alpha * max(sigma, sigma_floor)` on either axis. Samples too close to
/// the track ends for a full window are kept untested. Logs shorter than one
/// window are returned unfiltered with `short_input` set.
pub fn filter_pose_outliers(log: &PoseLog, params: &OutlierFilterParams) -> FilteredLog {
    let n = log.samples.len();
    if n < params.window_size.max(3) {
        return FilteredLog {
            log: log.clone(),
            removed_frame_ids: Vec::new(),
            short_input: true,
        };
    }

    let half = params.window_size / 2;
    let mut keep = vec![true; n];
    for i in half..n.saturating_sub(half) {
        let lo = i - half;
        let hi = i + half;
        let mut count = 0.0;
        let (mut mx, mut my) = (0.0, 0.0);
        for (j, s) in log.samples[lo..=hi].iter().enumerate() {
            if lo + j == i {
                continue;
            }
            mx += s.pose.x;
            my += s.pose.y;
            count += 1.0;
        }
        mx /= count;
        my /= count;
        let (mut vx, mut vy) = (0.0, 0.0);
        for (j, s) in log.samples[lo..=hi].iter().enumerate() {
            if lo + j == i {
                continue;
            }
            vx += (s.pose.x - mx).powi(2);
            vy += (s.pose.y - my).powi(2);
        }
        let sx = (vx / count).sqrt().max(params.sigma_floor_m);
        let sy = (vy / count).sqrt().max(params.sigma_floor_m);
        let p = log.samples[i].pose;
        if (mx - p.x).abs() > params.alpha * sx || (my - p.y).abs() > params.alpha * sy {
            keep[i] = false;
        }
    }

    let mut samples = Vec::with_capacity(n);
    let mut removed = Vec::new();
    for (s, &k) in log.samples.iter().zip(&keep) {
        if k {
            samples.push(*s);
        } else {
            removed.push(s.frame_id);
        }
    }
    FilteredLog {
        log: PoseLog {
            samples,
            capture_rate_hz: log.capture_rate_hz,
        },
        removed_frame_ids: removed,
        short_input: false,
    }
}

/// Projects an image pixel observed at a pose into floor coordinates.
pub fn project_keypoint(pose: &Pose2D, cam: &CameraModel, pixel: (f64, f64)) -> (f64, f64) {
    pose.apply(cam.pixel_to_camera(pixel.0, pixel.1))
}

/// A keypoint observation lifted into floor coordinates.
#[derive(Clone, Debug)]
pub struct ObservedKeypoint {
    pub world_pos: (f64, f64),
    pub descriptor: Descriptor,
    pub frame_id: u64,
    /// Normalized patch, retained only when the build asks for it (patch
    /// export); `None` keeps long runs in constant memory.
    pub patch: Option<Arc<Patch>>,
}

/// Density-clustering parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterParams {
    /// Spatial gathering radius around the seed, meters.
    pub position_radius: f64,
    /// Maximum cosine distance of a member to the seed descriptor.
    pub cosine_threshold: f64,
    /// Minimum group size including the seed.
    pub min_members: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            position_radius: 0.005,
            cosine_threshold: 0.1,
            min_members: 4,
        }
    }
}

/// A confirmed group of observations of one floor feature.
#[derive(Clone, Debug)]
pub struct Cluster {
    pub members: Vec<ObservedKeypoint>,
    /// Seed observation position.
    pub representative_pos: (f64, f64),
    /// Seed observation descriptor.
    pub representative_descriptor: Descriptor,
}

impl Cluster {
    /// Re-checks the cluster invariants against the given parameters.
    pub fn check_invariants(&self, params: &ClusterParams) -> Result<(), String> {
        if self.members.len() < params.min_members {
            return Err(format!("cluster of {} members", self.members.len()));
        }
        let mut frames = std::collections::HashSet::new();
        for m in &self.members {
            if !frames.insert(m.frame_id) {
                return Err(format!("duplicate frame id {}", m.frame_id));
            }
            let d = ((m.world_pos.0 - self.representative_pos.0).powi(2)
                + (m.world_pos.1 - self.representative_pos.1).powi(2))
            .sqrt();
            if d > params.position_radius + 1e-12 {
                return Err(format!("member {d} m from the seed"));
            }
            let cd = m.descriptor.cosine_distance(&self.representative_descriptor);
            if !(cd < params.cosine_threshold) && cd != 0.0 {
                return Err(format!("member cosine distance {cd}"));
            }
        }
        Ok(())
    }
}

/// Groups re-observations of the same floor feature.
///
/// Observations are visited in input order (frames ascending, keypoints in
/// detection order). Each unlabeled seed gathers the unlabeled observations
/// within `position_radius`, excluding those from the seed's own frame,
/// keeps the ones whose descriptor is within `cosine_threshold` of the seed
/// (at most one per frame: the closest), and forms a cluster when seed plus
/// kept reach `min_members`. Members never re-enter later clusters; there is
/// no transitive expansion, every membership test is against the seed.
pub fn cluster_keypoints(obs: &[ObservedKeypoint], params: &ClusterParams) -> Vec<Cluster> {
    let cell = params.position_radius.max(1e-6);
    let key = |p: (f64, f64)| -> (i64, i64) {
        ((p.0 / cell).floor() as i64, (p.1 / cell).floor() as i64)
    };
    let mut grid: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
    for (i, o) in obs.iter().enumerate() {
        grid.entry(key(o.world_pos)).or_default().push(i as u32);
    }

    let mut labeled = vec![false; obs.len()];
    let mut clusters = Vec::new();
    let r2 = params.position_radius * params.position_radius;

    for seed_idx in 0..obs.len() {
        if labeled[seed_idx] {
            continue;
        }
        let seed = &obs[seed_idx];
        let (kx, ky) = key(seed.world_pos);

        // Best candidate per foreign frame: (cosine distance, index).
        let mut per_frame: HashMap<u64, (f64, u32)> = HashMap::new();
        for cx in (kx - 1)..=(kx + 1) {
            for cy in (ky - 1)..=(ky + 1) {
                let Some(cell_indices) = grid.get(&(cx, cy)) else {
                    continue;
                };
                for &ci in cell_indices {
                    let i = ci as usize;
                    if i == seed_idx || labeled[i] {
                        continue;
                    }
                    let cand = &obs[i];
                    if cand.frame_id == seed.frame_id {
                        continue;
                    }
                    let dx = cand.world_pos.0 - seed.world_pos.0;
                    let dy = cand.world_pos.1 - seed.world_pos.1;
                    if dx * dx + dy * dy > r2 {
                        continue;
                    }
                    let cd = cand.descriptor.cosine_distance(&seed.descriptor);
                    if cd >= params.cosine_threshold {
                        continue;
                    }
                    match per_frame.get(&cand.frame_id) {
                        Some(&(best_cd, best_i))
                            if (best_cd, best_i) <= (cd, ci) => {}
                        _ => {
                            per_frame.insert(cand.frame_id, (cd, ci));
                        }
                    }
                }
            }
        }

        if 1 + per_frame.len() < params.min_members {
            continue;
        }
        let mut member_indices: Vec<u32> = per_frame.values().map(|&(_, i)| i).collect();
        member_indices.sort_unstable();
        member_indices.insert(0, seed_idx as u32);

        let members: Vec<ObservedKeypoint> = member_indices
            .iter()
            .map(|&i| obs[i as usize].clone())
            .collect();
        for &i in &member_indices {
            labeled[i as usize] = true;
        }
        clusters.push(Cluster {
            members,
            representative_pos: seed.world_pos,
            representative_descriptor: seed.descriptor,
        });
    }
    clusters
}

/// Merges each cluster into a single map entry: centroid position and the
/// re-normalized component-wise mean descriptor.
pub fn merge_clusters(clusters: &[Cluster]) -> Result<Vec<MapEntry>, MapError> {
    let mut entries = Vec::with_capacity(clusters.len());
    for (i, cluster) in clusters.iter().enumerate() {
        let n = cluster.members.len() as f64;
        let (mut px, mut py) = (0.0, 0.0);
        let mut mean = [0.0f64; crate::descriptor::DESCRIPTOR_DIM];
        for m in &cluster.members {
            px += m.world_pos.0;
            py += m.world_pos.1;
            for (slot, &c) in mean.iter_mut().zip(m.descriptor.as_slice()) {
                *slot += c as f64;
            }
        }
        for slot in mean.iter_mut() {
            *slot /= n;
        }
        let descriptor =
            Descriptor::from_components(&mean).map_err(|_| MapError::DegenerateMerge)?;
        entries.push(MapEntry {
            entry_id: i as u64,
            world_pos: (px / n, py / n),
            descriptor,
            member_count: cluster.members.len() as u32,
        });
    }
    Ok(entries)
}

/// One mapping run: a pose log plus the frames behind it.
pub struct MappingInput<'a> {
    pub frames: &'a dyn FrameProvider,
    pub log: &'a PoseLog,
}

/// Map-build configuration.
#[derive(Clone, Debug)]
pub struct MapBuildParams {
    pub detector: crate::detector::DetectorParams,
    pub outlier: OutlierFilterParams,
    pub cluster: ClusterParams,
    /// Retain normalized patches on observations (needed only for the
    /// training-cluster export; costs ~17 KB per observation).
    pub keep_patches: bool,
    pub index: IndexParams,
}

impl Default for MapBuildParams {
    fn default() -> Self {
        MapBuildParams {
            detector: crate::detector::DetectorParams::default(),
            outlier: OutlierFilterParams::default(),
            cluster: ClusterParams::default(),
            keep_patches: false,
            index: IndexParams::default(),
        }
    }
}

/// Per-stage counts of a map build.
#[derive(Clone, Copy, Debug, Default)]
pub struct BuildDiagnostics {
    pub frames_in: usize,
    pub frames_used: usize,
    pub poses_removed: usize,
    pub keypoints: usize,
    pub observations: usize,
    pub clusters: usize,
    pub entries: usize,
}

impl std::fmt::Display for BuildDiagnostics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "frames {} (used {}, poses removed {}), keypoints {}, observations {}, clusters {}, entries {}",
            self.frames_in,
            self.frames_used,
            self.poses_removed,
            self.keypoints,
            self.observations,
            self.clusters,
            self.entries
        )
    }
}

/// Full output of a map build: the sealed database plus the material the
/// build was based on, for inspection, verification and patch export.
pub struct MapBuildOutput {
    pub db: MapDatabase,
    pub clusters: Vec<Cluster>,
    pub diagnostics: BuildDiagnostics,
}

/// Builds the map database from mapping runs.
///
/// Stages: pose-outlier filtering per run, parallel per-frame keypoint
/// detection / description / projection (frames stream through and are
/// dropped immediately), sequential clustering, merging, and index
/// construction. Fails with stage counts when no cluster survives.
pub fn build_map(
    inputs: &[MappingInput<'_>],
    pipeline: &FramePipeline<'_>,
    params: &MapBuildParams,
) -> Result<MapBuildOutput, MapError> {
    if inputs.is_empty() {
        return Err(MapError::NoRuns);
    }
    let mut diagnostics = BuildDiagnostics::default();

    // Stage 1+2: filter poses, then extract observations frame-parallel.
    // Frame ids are only unique within one run, so observations carry a
    // per-run offset: the same-image exclusion in clustering must tell two
    // runs' frames apart.
    let mut observations: Vec<ObservedKeypoint> = Vec::new();
    let mut frame_id_offset = 0u64;
    for input in inputs {
        diagnostics.frames_in += input.log.samples.len();
        let filtered = filter_pose_outliers(input.log, &params.outlier);
        diagnostics.poses_removed += filtered.removed_frame_ids.len();
        diagnostics.frames_used += filtered.log.samples.len();

        // Frames stream through in bounded batches; each batch is processed
        // in parallel, flattened in frame order and dropped.
        for batch in filtered.log.samples.chunks(4096) {
            let per_frame: Result<Vec<Vec<ObservedKeypoint>>, MapError> = batch
                .par_iter()
                .map(|sample| {
                    extract_observations(sample, frame_id_offset, input.frames, pipeline, params)
                })
                .collect();
            for obs in per_frame? {
                observations.extend(obs);
            }
        }
        let max_frame = input
            .log
            .samples
            .iter()
            .map(|s| s.frame_id)
            .max()
            .unwrap_or(0);
        frame_id_offset += max_frame + 1;
    }
    diagnostics.keypoints = observations.len();
    diagnostics.observations = observations.len();

    // Stage 3+4: cluster and merge.
    let clusters = cluster_keypoints(&observations, &params.cluster);
    drop(observations);
    diagnostics.clusters = clusters.len();
    let entries = merge_clusters(&clusters)?;
    diagnostics.entries = entries.len();
    if entries.is_empty() {
        return Err(MapError::EmptyMap { diagnostics });
    }

    // Stage 5: seal and index.
    let db = build_index_with(entries, &params.index)?;
    Ok(MapBuildOutput {
        db,
        clusters,
        diagnostics,
    })
}

fn extract_observations(
    sample: &PoseSample,
    frame_id_offset: u64,
    frames: &dyn FrameProvider,
    pipeline: &FramePipeline<'_>,
    params: &MapBuildParams,
) -> Result<Vec<ObservedKeypoint>, MapError> {
    let frame = frames.frame(sample)?;
    let extracted = pipeline.extract(&frame, params.keep_patches)?;
    let cam = &pipeline.camera;
    Ok(extracted
        .into_iter()
        .map(|e| ObservedKeypoint {
            world_pos: project_keypoint(&sample.pose, cam, e.keypoint.center),
            descriptor: e.descriptor,
            frame_id: frame_id_offset + sample.frame_id,
            patch: e.patch,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floorsim::{generate_mapping_run, PoseSample};

    fn straight_log(n: usize, step: f64) -> PoseLog {
        let samples = (0..n)
            .map(|i| PoseSample {
                frame_id: i as u64,
                t: i as f64 / 60.0,
                pose: Pose2D::new(i as f64 * step, 0.5, 0.0),
            })
            .collect();
        PoseLog {
            samples,
            capture_rate_hz: 60.0,
        }
    }

    #[test]
    fn straight_track_is_untouched() {
        let log = straight_log(100, 0.2 / 60.0);
        let out = filter_pose_outliers(&log, &OutlierFilterParams::default());
        assert!(!out.short_input);
        assert!(out.removed_frame_ids.is_empty());
        assert_eq!(out.log.samples.len(), 100);
    }

    #[test]
    fn spliced_jump_is_removed() {
        let mut log = straight_log(100, 0.2 / 60.0);
        log.samples[50].pose.y += 0.05; // 5 cm jump
        let out = filter_pose_outliers(&log, &OutlierFilterParams::default());
        assert_eq!(out.removed_frame_ids, vec![50]);
        assert_eq!(out.log.samples.len(), 99);
    }

    #[test]
    fn infinite_alpha_keeps_everything() {
        let mut log = straight_log(100, 0.2 / 60.0);
        log.samples[50].pose.y += 0.05;
        let params = OutlierFilterParams {
            alpha: f64::INFINITY,
            ..OutlierFilterParams::default()
        };
        let out = filter_pose_outliers(&log, &params);
        assert!(out.removed_frame_ids.is_empty());
    }

    #[test]
    fn short_log_passes_through_with_flag() {
        let log = straight_log(5, 0.01);
        let out = filter_pose_outliers(&log, &OutlierFilterParams::default());
        assert!(out.short_input);
        assert_eq!(out.log.samples.len(), 5);
    }

    #[test]
    fn stationary_track_is_untouched() {
        let log = straight_log(50, 0.0);
        let out = filter_pose_outliers(&log, &OutlierFilterParams::default());
        assert!(out.removed_frame_ids.is_empty());
    }

    #[test]
    fn principal_point_projects_to_pose_position() {
        let cam = CameraModel::default();
        let pose = Pose2D::new(1.25, 0.75, 2.1);
        let w = project_keypoint(&pose, &cam, (316.0, 240.0));
        assert!((w.0 - 1.25).abs() < 1e-12);
        assert!((w.1 - 0.75).abs() < 1e-12);
    }

    #[test]
    fn right_edge_pixel_offset() {
        let cam = CameraModel::default();
        let pose = Pose2D::new(0.0, 0.0, 0.0);
        let w = project_keypoint(&pose, &cam, (631.0, 240.0));
        // (631 - 316) pixels at 49.5/632 mm each.
        let expected = (631.0 - 316.0) * 49.5 / 632.0 / 1000.0;
        assert!((w.0 - expected).abs() < 1e-12, "x = {}", w.0);
        assert!(w.1.abs() < 1e-12);
        assert!((w.0 * 1000.0 - 24.67).abs() < 0.01);
    }

    #[test]
    fn projection_round_trips_through_pixel() {
        let cam = CameraModel::default();
        let pose = Pose2D::new(0.4, 0.9, -1.3);
        for &(u, v) in &[(12.0, 300.0), (316.0, 240.0), (600.0, 20.0)] {
            let world = project_keypoint(&pose, &cam, (u, v));
            let (u2, v2) = crate::floorsim::world_to_pixel(&cam, pose, world);
            assert!((u - u2).abs() < 1e-9);
            assert!((v - v2).abs() < 1e-9);
        }
    }

    fn unit_descriptor(axis: usize) -> Descriptor {
        let mut raw = [0.0f64; crate::descriptor::DESCRIPTOR_DIM];
        raw[axis] = 1.0;
        Descriptor::from_components(&raw).unwrap()
    }

    fn obs(
        frame_id: u64,
        pos: (f64, f64),
        descriptor: Descriptor,
    ) -> ObservedKeypoint {
        ObservedKeypoint {
            world_pos: pos,
            descriptor,
            frame_id,
            patch: None,
        }
    }

    #[test]
    fn four_coherent_observations_form_one_cluster() {
        let d = unit_descriptor(0);
        let obs: Vec<ObservedKeypoint> = (0..4)
            .map(|i| obs(i, (0.5 + i as f64 * 0.0005, 0.5), d))
            .collect();
        let clusters = cluster_keypoints(&obs, &ClusterParams::default());
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].members.len(), 4);
        clusters[0]
            .check_invariants(&ClusterParams::default())
            .unwrap();
    }

    #[test]
    fn shared_frame_blocks_clustering() {
        let d = unit_descriptor(0);
        // Four co-located observations, but two share frame 2: only three
        // eligible members, no cluster.
        let obs = vec![
            obs(0, (0.5, 0.5), d),
            obs(1, (0.5004, 0.5), d),
            obs(2, (0.5, 0.5004), d),
            obs(2, (0.5002, 0.5002), d),
        ];
        let clusters = cluster_keypoints(&obs, &ClusterParams::default());
        assert!(clusters.is_empty());
    }

    #[test]
    fn distant_descriptor_is_excluded() {
        let d = unit_descriptor(0);
        let far = unit_descriptor(1); // cosine distance 1.0
        let obs = vec![
            obs(0, (0.5, 0.5), d),
            obs(1, (0.5004, 0.5), d),
            obs(2, (0.5, 0.5004), d),
            obs(3, (0.5002, 0.5002), far),
        ];
        let clusters = cluster_keypoints(&obs, &ClusterParams::default());
        assert!(clusters.is_empty());
    }

    #[test]
    fn two_separate_features_give_two_clusters() {
        let d = unit_descriptor(0);
        let mut all = Vec::new();
        for i in 0..5 {
            all.push(obs(i, (0.5 + i as f64 * 1e-4, 0.5), d));
        }
        for i in 0..5 {
            all.push(obs(i, (0.53 + i as f64 * 1e-4, 0.5), d));
        }
        let clusters = cluster_keypoints(&all, &ClusterParams::default());
        assert_eq!(clusters.len(), 2);
        for c in &clusters {
            assert_eq!(c.members.len(), 5);
            // 3 cm separation: members of one cluster stay near its seed.
        }
    }

    #[test]
    fn clustering_is_deterministic() {
        let d = unit_descriptor(3);
        let mut all = Vec::new();
        for i in 0..12 {
            all.push(obs(i % 6, (0.5 + (i as f64) * 4e-4, 0.5), d));
        }
        let a = cluster_keypoints(&all, &ClusterParams::default());
        let b = cluster_keypoints(&all, &ClusterParams::default());
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.representative_pos, y.representative_pos);
            assert_eq!(x.members.len(), y.members.len());
        }
    }

    #[test]
    fn merge_of_identical_members_reproduces_member() {
        let d = unit_descriptor(2);
        let members: Vec<ObservedKeypoint> =
            (0..4).map(|i| obs(i, (0.25, 0.75), d)).collect();
        let cluster = Cluster {
            representative_pos: (0.25, 0.75),
            representative_descriptor: d,
            members,
        };
        let entries = merge_clusters(&[cluster]).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].world_pos, (0.25, 0.75));
        assert_eq!(entries[0].member_count, 4);
        assert!(entries[0].descriptor.cosine_distance(&d) < 1e-9);
    }

    #[test]
    fn merge_centroid_of_square_corners() {
        let d = unit_descriptor(2);
        let members = vec![
            obs(0, (0.499, 0.499), d),
            obs(1, (0.501, 0.499), d),
            obs(2, (0.499, 0.501), d),
            obs(3, (0.501, 0.501), d),
        ];
        let cluster = Cluster {
            representative_pos: (0.499, 0.499),
            representative_descriptor: d,
            members,
        };
        let entries = merge_clusters(&[cluster]).unwrap();
        assert!((entries[0].world_pos.0 - 0.5).abs() < 1e-12);
        assert!((entries[0].world_pos.1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn merged_descriptor_stays_close_to_members() {
        // Mean-then-normalize keeps every valid member within the cluster
        // threshold of the merged descriptor: sampled check over perturbed
        // member sets.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let params = ClusterParams::default();
        for _ in 0..200 {
            let mut base = [0.0f64; crate::descriptor::DESCRIPTOR_DIM];
            for slot in base.iter_mut() {
                *slot = rng.random::<f64>();
            }
            let seed_desc = Descriptor::from_components(&base).unwrap();
            let mut members = Vec::new();
            for i in 0..6 {
                // Random perturbation kept inside the cosine threshold.
                loop {
                    let mut comp = base;
                    for slot in comp.iter_mut() {
                        *slot += (rng.random::<f64>() - 0.5) * 0.2;
                    }
                    if let Ok(d) = Descriptor::from_components(&comp) {
                        if d.cosine_distance(&seed_desc) < params.cosine_threshold {
                            members.push(obs(i, (0.5, 0.5), d));
                            break;
                        }
                    }
                }
            }
            let cluster = Cluster {
                representative_pos: (0.5, 0.5),
                representative_descriptor: seed_desc,
                members,
            };
            let entry = &merge_clusters(&[cluster.clone()]).unwrap()[0];
            for m in &cluster.members {
                let d = entry.descriptor.cosine_distance(&m.descriptor);
                assert!(d < params.cosine_threshold, "member distance {d}");
            }
        }
    }

    #[test]
    fn mapping_log_mostly_survives_outlier_filter() {
        // The zigzag mapping pattern has sharp direction flips at lane ends
        // where the window mean lags the track; a small fraction of
        // turn-adjacent samples may drop, but lane interiors must survive
        // untouched.
        let floor = crate::floorsim::generate_floor(&crate::floorsim::FloorSpec {
            width_m: 0.3,
            height_m: 0.3,
            blob_density_per_cm2: 0.2,
            ..Default::default()
        })
        .unwrap();
        let cam = CameraModel::default();
        let log = generate_mapping_run(&floor, &cam, (0.0, 0.0), 0.25, 0.01, 0.2, 60.0).unwrap();
        let out = filter_pose_outliers(&log, &OutlierFilterParams::default());
        let removed = out.removed_frame_ids.len() as f64;
        assert!(
            removed < 0.08 * log.samples.len() as f64,
            "removed {} of {}",
            out.removed_frame_ids.len(),
            log.samples.len()
        );
        // Every removed sample sits within one window of a lane end.
        let lane_len = log
            .samples
            .iter()
            .filter(|s| (s.pose.y - log.samples[0].pose.y).abs() < 1e-9)
            .count() as u64;
        for id in &out.removed_frame_ids {
            let pos_in_lane = id % lane_len;
            let from_end = pos_in_lane.min(lane_len - 1 - pos_in_lane);
            assert!(from_end <= 8, "mid-lane sample {id} removed");
        }
    }
}
