//! Capture-run generation (mapping zigzags, evaluation walks) and the
//! on-disk dataset layout.
//!
//! A persisted run is a directory with one binary PPM per frame
//! (`frame_NNNNNN.ppm`), a `poses.csv` with the schema
//! `frame_id,t,x,y,theta` (fixed six-decimal fields, LF line endings), and a
//! small `run.meta` carrying the capture rate.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{CameraModel, FloorError, FloorTruth, Frame, FrameProvider};
use crate::geometry::{wrap_angle, Pose2D};
use crate::image::{read_ppm, write_ppm};

/// One timestamped ground-truth pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSample {
    pub frame_id: u64,
    /// Seconds from run start.
    pub t: f64,
    pub pose: Pose2D,
}

/// Ordered pose track of one capture run.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseLog {
    pub samples: Vec<PoseSample>,
    pub capture_rate_hz: f64,
}

impl PoseLog {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<(), FloorError> {
        if !(self.capture_rate_hz > 0.0) {
            return Err(FloorError::BadRun("capture rate must be positive".into()));
        }
        for pair in self.samples.windows(2) {
            if pair[1].t <= pair[0].t {
                return Err(FloorError::BadRun(format!(
                    "timestamps not strictly increasing at frame {}",
                    pair[1].frame_id
                )));
            }
        }
        Ok(())
    }
}

/// Generates a boustrophedon (zigzag) mapping pass over a square tile.
///
/// Lanes run along x at `spacing` intervals in y, covering `[0, side]` in
/// both axes relative to `origin`; the heading alternates between 0 and pi
/// so the camera travels forward on every lane. Consecutive samples are
/// `speed / rate` apart along the lane. The lane spacing must stay below the
/// footprint's short side or the pass would leave coverage gaps between
/// lanes.
pub fn generate_mapping_run(
    floor: &FloorTruth,
    cam: &CameraModel,
    origin: (f64, f64),
    side: f64,
    spacing: f64,
    speed: f64,
    rate: f64,
) -> Result<PoseLog, FloorError> {
    if !(side > 0.0 && speed > 0.0 && rate > 0.0) {
        return Err(FloorError::BadRun(
            "tile side, speed and rate must be positive".into(),
        ));
    }
    if !(spacing > 0.0) || spacing >= cam.footprint_short_side_m() {
        return Err(FloorError::BadRun(format!(
            "lane spacing {spacing} must be positive and below the footprint short side {}",
            cam.footprint_short_side_m()
        )));
    }
    if origin.0 < 0.0
        || origin.1 < 0.0
        || origin.0 + side > floor.spec.width_m + 1e-9
        || origin.1 + side > floor.spec.height_m + 1e-9
    {
        return Err(FloorError::BadRun("tile extends beyond the floor".into()));
    }

    let eps = 1e-9;
    let step = speed / rate;
    let lanes = (side / spacing + eps).floor() as usize + 1;
    let steps_per_lane = (side / step + eps).floor() as usize;

    let mut samples = Vec::new();
    let mut frame_id = 0u64;
    let mut t_base = 0.0;
    for lane in 0..lanes {
        let y = origin.1 + lane as f64 * spacing;
        let forward = lane % 2 == 0;
        let theta = if forward { 0.0 } else { std::f64::consts::PI };
        for k in 0..=steps_per_lane {
            let s = k as f64 * step;
            let x = if forward {
                origin.0 + s
            } else {
                origin.0 + side - s
            };
            samples.push(PoseSample {
                frame_id,
                t: t_base + s / speed,
                pose: Pose2D::new(x, y, theta),
            });
            frame_id += 1;
        }
        // Lane change: no frames are captured while shifting sideways, but
        // time keeps running so timestamps stay strictly increasing.
        t_base += steps_per_lane as f64 * step / speed + spacing / speed;
    }

    Ok(PoseLog {
        samples,
        capture_rate_hz: rate,
    })
}

/// An evaluation run: the measured (logged) track and the actual camera
/// track. They differ exactly by the injected pose noise; with zero noise
/// the two are identical.
///
/// Frames are rendered from `actual`, while `measured` plays the role of the
/// externally observed ground truth, the way a motion-capture system reports
/// a slightly noisy version of where the camera really was.
#[derive(Clone, Debug)]
pub struct EvalRun {
    pub measured: PoseLog,
    pub actual: PoseLog,
}

/// Generates a smooth seeded random walk confined to a centered square area.
///
/// `area_m2` selects the square region (side `sqrt(area)`) centered on the
/// floor; the walk keeps the whole camera footprint inside it. Heading
/// changes by a small Gaussian step each frame and steers back toward the
/// region center when the next position would leave it. Position noise of
/// `pose_noise_sigma` (meters, per axis) is added to the measured log only,
/// from an RNG stream independent of the path so the path is identical for
/// any sigma.
pub fn generate_eval_run(
    floor: &FloorTruth,
    cam: &CameraModel,
    area_m2: f64,
    path_seed: u64,
    speed: f64,
    rate: f64,
    pose_noise_sigma: f64,
    frames: usize,
) -> Result<EvalRun, FloorError> {
    if !(speed > 0.0 && rate > 0.0) {
        return Err(FloorError::BadRun("speed and rate must be positive".into()));
    }
    if frames == 0 {
        return Err(FloorError::BadRun("frame count must be positive".into()));
    }
    let side = area_m2.sqrt();
    if !(side > 0.0)
        || side > floor.spec.width_m + 1e-9
        || side > floor.spec.height_m + 1e-9
    {
        return Err(FloorError::BadRun(format!(
            "evaluation area {area_m2} m^2 does not fit the floor"
        )));
    }

    // Keep the footprint inside the region with a small extra margin.
    let inset = cam.footprint_half_diagonal_m() + 0.012;
    let cx = floor.spec.width_m / 2.0;
    let cy = floor.spec.height_m / 2.0;
    let half = (side / 2.0 - inset).max(side * 0.05);
    let (x_min, x_max) = (cx - half, cx + half);
    let (y_min, y_max) = (cy - half, cy + half);

    let mut path_rng = ChaCha8Rng::seed_from_u64(path_seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(crate::mix_seed(path_seed, 0x6e6f6973));
    let turn = Normal::new(0.0, 0.06).unwrap();
    let noise = if pose_noise_sigma > 0.0 {
        Some(Normal::new(0.0, pose_noise_sigma).unwrap())
    } else {
        None
    };

    let step = speed / rate;
    let mut x = cx;
    let mut y = cy;
    let mut heading = path_rng.random::<f64>() * std::f64::consts::TAU;

    let mut measured = Vec::with_capacity(frames);
    let mut actual = Vec::with_capacity(frames);
    for i in 0..frames {
        let t = i as f64 / rate;
        let pose = Pose2D::new(x, y, heading);
        let logged = match &noise {
            Some(n) => Pose2D::new(
                x + n.sample(&mut noise_rng),
                y + n.sample(&mut noise_rng),
                heading,
            ),
            None => pose,
        };
        actual.push(PoseSample {
            frame_id: i as u64,
            t,
            pose,
        });
        measured.push(PoseSample {
            frame_id: i as u64,
            t,
            pose: logged,
        });

        heading = wrap_angle(heading + turn.sample(&mut path_rng));
        let (mut nx, mut ny) = (x + step * heading.cos(), y + step * heading.sin());
        if nx < x_min || nx > x_max || ny < y_min || ny > y_max {
            // Steer toward the region center; a step inward always lands
            // inside for any step smaller than the region.
            heading = wrap_angle((cy - y).atan2(cx - x) + turn.sample(&mut path_rng) * 2.0);
            nx = x + step * heading.cos();
            ny = y + step * heading.sin();
        }
        x = nx.clamp(x_min, x_max);
        y = ny.clamp(y_min, y_max);
    }

    Ok(EvalRun {
        measured: PoseLog {
            samples: measured,
            capture_rate_hz: rate,
        },
        actual: PoseLog {
            samples: actual,
            capture_rate_hz: rate,
        },
    })
}

fn frame_file_name(frame_id: u64) -> String {
    format!("frame_{frame_id:06}.ppm")
}

/// Writes frames and the pose log as a dataset directory.
pub fn persist_run(frames: &[Frame], log: &PoseLog, dir: &Path) -> Result<(), FloorError> {
    if frames.len() != log.samples.len() {
        return Err(FloorError::BadRun(format!(
            "frame count {} does not match pose count {}",
            frames.len(),
            log.samples.len()
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| FloorError::io(dir, e))?;
    for frame in frames {
        write_ppm(&frame.image, &dir.join(frame_file_name(frame.frame_id)))?;
    }
    write_pose_csv(log, &dir.join("poses.csv"))?;
    let meta_path = dir.join("run.meta");
    let meta = format!("capture_rate_hz={:.6}\n", log.capture_rate_hz);
    std::fs::write(&meta_path, meta).map_err(|e| FloorError::io(&meta_path, e))?;
    Ok(())
}

/// Writes a pose log in the dataset CSV schema.
pub fn write_pose_csv(log: &PoseLog, path: &Path) -> Result<(), FloorError> {
    let file = File::create(path).map_err(|e| FloorError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(b"frame_id,t,x,y,theta\n")?;
        for s in &log.samples {
            writeln!(
                w,
                "{},{:.6},{:.6},{:.6},{:.6}",
                s.frame_id, s.t, s.pose.x, s.pose.y, s.pose.theta
            )?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| FloorError::io(path, e))
}

/// Reads a pose log from the dataset CSV schema.
pub fn read_pose_csv(path: &Path, capture_rate_hz: f64) -> Result<PoseLog, FloorError> {
    let text = std::fs::read_to_string(path).map_err(|e| FloorError::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("frame_id,t,x,y,theta") => {}
        other => {
            return Err(FloorError::BadRecord {
                path: path.to_path_buf(),
                reason: format!("unexpected header {other:?}"),
            })
        }
    }
    let mut samples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let parse_err = |what: &str| FloorError::BadRecord {
            path: path.to_path_buf(),
            reason: format!("line {}: bad {what}", lineno + 2),
        };
        let frame_id: u64 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| parse_err("frame_id"))?;
        let t: f64 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| parse_err("t"))?;
        let x: f64 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| parse_err("x"))?;
        let y: f64 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| parse_err("y"))?;
        let theta: f64 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| parse_err("theta"))?;
        samples.push(PoseSample {
            frame_id,
            t,
            pose: Pose2D::new(x, y, theta),
        });
    }
    Ok(PoseLog {
        samples,
        capture_rate_hz,
    })
}

/// Reads a dataset directory back into memory.
pub fn load_run(dir: &Path) -> Result<(Vec<Frame>, PoseLog), FloorError> {
    let log = load_run_log(dir)?;
    let mut frames = Vec::with_capacity(log.samples.len());
    for s in &log.samples {
        let image = read_ppm(&dir.join(frame_file_name(s.frame_id)))?;
        frames.push(Frame {
            image,
            truth_pose: s.pose,
            frame_id: s.frame_id,
        });
    }
    Ok((frames, log))
}

/// Reads only the pose log of a dataset directory.
pub fn load_run_log(dir: &Path) -> Result<PoseLog, FloorError> {
    let meta_path = dir.join("run.meta");
    let meta = std::fs::read_to_string(&meta_path).map_err(|e| FloorError::io(&meta_path, e))?;
    let mut rate = None;
    for line in meta.lines() {
        if let Some(v) = line.strip_prefix("capture_rate_hz=") {
            rate = v.parse::<f64>().ok();
        }
    }
    let rate = rate.ok_or_else(|| FloorError::BadRecord {
        path: meta_path.clone(),
        reason: "missing capture_rate_hz".to_string(),
    })?;
    read_pose_csv(&dir.join("poses.csv"), rate)
}

/// Frame provider over a persisted dataset directory; loads images lazily.
pub struct DiskProvider {
    pub dir: PathBuf,
}

impl FrameProvider for DiskProvider {
    fn frame(&self, sample: &PoseSample) -> Result<Frame, FloorError> {
        let image = read_ppm(&self.dir.join(frame_file_name(sample.frame_id)))?;
        Ok(Frame {
            image,
            truth_pose: sample.pose,
            frame_id: sample.frame_id,
        })
    }
}

/// Frame provider over frames already in memory, keyed by frame id.
pub struct MemoryProvider<'a> {
    pub frames: &'a [Frame],
}

impl FrameProvider for MemoryProvider<'_> {
    fn frame(&self, sample: &PoseSample) -> Result<Frame, FloorError> {
        self.frames
            .iter()
            .find(|f| f.frame_id == sample.frame_id)
            .cloned()
            .ok_or_else(|| FloorError::BadRun(format!("no frame with id {}", sample.frame_id)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floorsim::{generate_floor, FloorSpec};

    fn test_floor() -> FloorTruth {
        generate_floor(&FloorSpec {
            width_m: 0.4,
            height_m: 0.4,
            blob_density_per_cm2: 0.3,
            ..FloorSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn mapping_run_lane_count_matches_arithmetic() {
        let floor = test_floor();
        let cam = CameraModel::default();
        let log =
            generate_mapping_run(&floor, &cam, (0.05, 0.05), 0.2, 0.014, 0.2, 60.0).unwrap();
        // Lanes sit at 0, 0.014, ..., the last multiple of 0.014 within the
        // 0.2 m tile: 15 lanes in total.
        let mut ys: Vec<i64> = log
            .samples
            .iter()
            .map(|s| (s.pose.y * 1e7).round() as i64)
            .collect();
        ys.sort_unstable();
        ys.dedup();
        assert_eq!(ys.len(), 15);
        log.validate().unwrap();
    }

    #[test]
    fn mapping_run_step_spacing() {
        let floor = test_floor();
        let cam = CameraModel::default();
        let log = generate_mapping_run(&floor, &cam, (0.0, 0.0), 0.3, 0.01, 0.2, 60.0).unwrap();
        let a = log.samples[0].pose;
        let b = log.samples[1].pose;
        let d = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
        assert!((d - 0.2 / 60.0).abs() < 1e-12, "step {d}");
    }

    #[test]
    fn mapping_run_covers_every_tile_point() {
        let floor = test_floor();
        let cam = CameraModel::default();
        let origin = (0.05, 0.05);
        let side = 0.25;
        let log =
            generate_mapping_run(&floor, &cam, origin, side, 0.012, 0.2, 60.0).unwrap();
        let half_w = cam.footprint_width_mm / 2000.0;
        let half_h = cam.footprint_height_mm / 2000.0;
        // Sample a grid of tile points; each must fall inside at least one
        // footprint (headings are 0 or pi, so the footprint rectangle is
        // axis-aligned either way).
        for i in 0..=25 {
            for j in 0..=25 {
                let px = origin.0 + side * i as f64 / 25.0;
                let py = origin.1 + side * j as f64 / 25.0;
                let covered = log.samples.iter().any(|s| {
                    (px - s.pose.x).abs() <= half_w && (py - s.pose.y).abs() <= half_h
                });
                assert!(covered, "uncovered point ({px:.3}, {py:.3})");
            }
        }
    }

    #[test]
    fn mapping_run_rejects_wide_spacing() {
        let floor = test_floor();
        let cam = CameraModel::default();
        let err = generate_mapping_run(&floor, &cam, (0.0, 0.0), 0.2, 0.03, 0.2, 60.0);
        assert!(err.is_err());
    }

    #[test]
    fn eval_run_stays_in_area_and_is_deterministic() {
        let floor = test_floor();
        let cam = CameraModel::default();
        let run = generate_eval_run(&floor, &cam, 0.09, 7, 0.3, 60.0, 0.0, 400).unwrap();
        let run2 = generate_eval_run(&floor, &cam, 0.09, 7, 0.3, 60.0, 0.0, 400).unwrap();
        assert_eq!(run.measured, run2.measured);
        assert_eq!(run.measured, run.actual);
        let side = 0.3;
        let (cx, cy) = (0.2, 0.2);
        for s in &run.measured.samples {
            assert!((s.pose.x - cx).abs() <= side / 2.0 + 1e-9);
            assert!((s.pose.y - cy).abs() <= side / 2.0 + 1e-9);
        }
        run.measured.validate().unwrap();
    }

    #[test]
    fn eval_run_noise_statistics() {
        let floor = test_floor();
        let cam = CameraModel::default();
        let sigma = 0.0005;
        let noisy = generate_eval_run(&floor, &cam, 0.09, 11, 0.3, 60.0, sigma, 1200).unwrap();
        // The injected noise is the difference between measured and actual;
        // its sample standard deviation must track sigma.
        let mut deltas = Vec::new();
        for (m, a) in noisy.measured.samples.iter().zip(&noisy.actual.samples) {
            deltas.push(m.pose.x - a.pose.x);
            deltas.push(m.pose.y - a.pose.y);
        }
        let n = deltas.len() as f64;
        let mean = deltas.iter().sum::<f64>() / n;
        let var = deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!(
            (std - sigma).abs() < 0.2 * sigma,
            "noise std {std:.6} vs sigma {sigma:.6}"
        );
        // The path itself is untouched by the noise stream.
        let clean = generate_eval_run(&floor, &cam, 0.09, 11, 0.3, 60.0, 0.0, 1200).unwrap();
        assert_eq!(clean.actual, noisy.actual);
    }

    #[test]
    fn persist_and_load_round_trip() {
        let floor = test_floor();
        let cam = CameraModel::default();
        let log = generate_mapping_run(&floor, &cam, (0.1, 0.1), 0.05, 0.01, 0.2, 20.0).unwrap();
        let take = 10.min(log.samples.len());
        let log = PoseLog {
            samples: log.samples[..take].to_vec(),
            capture_rate_hz: log.capture_rate_hz,
        };
        let frames: Vec<Frame> = log
            .samples
            .iter()
            .map(|s| {
                let mut f =
                    crate::floorsim::render_view(&floor, &cam, s.pose, 2.0, 1000 + s.frame_id);
                f.frame_id = s.frame_id;
                f
            })
            .collect();

        let dir = tempfile::tempdir().unwrap();
        persist_run(&frames, &log, dir.path()).unwrap();
        let (frames2, log2) = load_run(dir.path()).unwrap();

        assert_eq!(frames.len(), frames2.len());
        for (a, b) in frames.iter().zip(&frames2) {
            assert_eq!(a.image, b.image, "images must round-trip bit-exactly");
            assert_eq!(a.frame_id, b.frame_id);
        }
        // Poses round-trip at the 6-decimal fixed-point precision. Heading
        // compares as a wrapped difference: a heading of pi rounds up to
        // 3.141593 in the file and wraps back to just below -pi.
        for (a, b) in log.samples.iter().zip(&log2.samples) {
            assert!((a.pose.x - b.pose.x).abs() < 5e-7);
            assert!((a.pose.y - b.pose.y).abs() < 5e-7);
            assert!(crate::geometry::wrap_angle(a.pose.theta - b.pose.theta).abs() < 5e-7);
            assert!((a.t - b.t).abs() < 5e-7);
        }
        assert_eq!(log2.capture_rate_hz, 20.0);

        // Row count contract.
        let csv = std::fs::read_to_string(dir.path().join("poses.csv")).unwrap();
        assert_eq!(csv.lines().count(), frames.len() + 1);
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn persist_rejects_count_mismatch() {
        let log = PoseLog {
            samples: vec![PoseSample {
                frame_id: 0,
                t: 0.0,
                pose: Pose2D::identity(),
            }],
            capture_rate_hz: 60.0,
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(persist_run(&[], &log, dir.path()).is_err());
    }
}
