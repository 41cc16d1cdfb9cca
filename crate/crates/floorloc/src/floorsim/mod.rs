//! Synthetic granulate-floor simulator: floor generation, a calibrated
//! close-up camera model, view rendering, and capture-run generation.
//!
//! The simulator stands in for a real capture rig. It produces a seeded
//! field of colored elliptical blobs with known identities, renders
//! calibrated camera views at arbitrary planar poses, and emits pose logs
//! for mapping and evaluation runs, so the whole localization pipeline can
//! be exercised against exact ground truth.

mod render;
mod runs;

pub use render::{render_view, true_class_at_pixel, world_to_pixel, FrameProvider, RenderProvider};
pub use runs::{
    generate_eval_run, generate_mapping_run, load_run, load_run_log, persist_run, read_pose_csv,
    write_pose_csv, DiskProvider, EvalRun, MemoryProvider, PoseLog, PoseSample,
};

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::color::BlobColor;
use crate::geometry::Pose2D;
use crate::image::RgbImage;

#[derive(Debug, Error)]
pub enum FloorError {
    #[error("invalid floor spec: {0}")]
    BadSpec(&'static str),
    #[error("invalid run parameters: {0}")]
    BadRun(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: expected magic {expected:?}")]
    BadMagic { path: PathBuf, expected: String },
    #[error("{path}: unsupported version {found} (supported: {supported})")]
    UnsupportedVersion {
        path: PathBuf,
        found: u32,
        supported: u32,
    },
    #[error("{path}: file truncated or malformed: {reason}")]
    Truncated { path: PathBuf, reason: String },
    #[error(transparent)]
    Image(#[from] crate::image::ImageIoError),
    #[error("{path}: malformed record: {reason}")]
    BadRecord { path: PathBuf, reason: String },
}

impl FloorError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        FloorError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Parameters of a synthetic granulate floor.
#[derive(Clone, Debug, PartialEq)]
pub struct FloorSpec {
    pub width_m: f64,
    pub height_m: f64,
    /// Expected blobs per square centimeter.
    pub blob_density_per_cm2: f64,
    /// Semi-axis range in millimeters (min, max).
    pub blob_radius_range_mm: (f64, f64),
    /// Relative sampling weights for red, green, blue, white.
    pub color_weights: [f64; 4],
    pub rng_seed: u64,
}

impl Default for FloorSpec {
    fn default() -> Self {
        FloorSpec {
            width_m: 2.0,
            height_m: 2.0,
            blob_density_per_cm2: 1.5,
            blob_radius_range_mm: (0.6, 3.2),
            color_weights: [1.0, 1.0, 1.0, 1.0],
            rng_seed: 42,
        }
    }
}

impl FloorSpec {
    pub fn validate(&self) -> Result<(), FloorError> {
        if !(self.width_m > 0.0 && self.height_m > 0.0) {
            return Err(FloorError::BadSpec("floor area must be positive"));
        }
        if !(self.blob_density_per_cm2 > 0.0) {
            return Err(FloorError::BadSpec("blob density must be positive"));
        }
        let (lo, hi) = self.blob_radius_range_mm;
        if !(lo > 0.0 && hi >= lo) {
            return Err(FloorError::BadSpec(
                "blob radius range must be positive and ordered",
            ));
        }
        if self.color_weights.iter().any(|&w| w < 0.0) {
            return Err(FloorError::BadSpec("color weights must be nonnegative"));
        }
        if self.color_weights.iter().sum::<f64>() <= 0.0 {
            return Err(FloorError::BadSpec("color weights must sum to > 0"));
        }
        Ok(())
    }

    pub fn area_cm2(&self) -> f64 {
        self.width_m * 100.0 * self.height_m * 100.0
    }
}

/// One granulate blob: an ellipse with known identity, position and color.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FloorBlob {
    pub id: u64,
    /// Center in floor coordinates, meters.
    pub center: (f64, f64),
    /// Semi-axes in millimeters, major first.
    pub semi_axes_mm: (f64, f64),
    /// Major-axis orientation in radians, counterclockwise in floor
    /// coordinates, in `[0, pi)`.
    pub orientation: f64,
    pub color: BlobColor,
}

impl FloorBlob {
    /// Whether a floor point (meters) lies inside the blob ellipse.
    #[inline]
    pub fn contains(&self, p: (f64, f64)) -> bool {
        let dx_mm = (p.0 - self.center.0) * 1000.0;
        let dy_mm = (p.1 - self.center.1) * 1000.0;
        let (s, c) = self.orientation.sin_cos();
        let u = c * dx_mm + s * dy_mm;
        let v = -s * dx_mm + c * dy_mm;
        let (a, b) = self.semi_axes_mm;
        (u / a).powi(2) + (v / b).powi(2) <= 1.0
    }
}

/// Ground-truth floor: the spec it was generated from plus every blob.
///
/// Blob ids are dense from zero. A uniform grid over blob centers accelerates
/// the spatial queries used by the renderer.
#[derive(Clone, Debug)]
pub struct FloorTruth {
    pub spec: FloorSpec,
    pub blobs: Vec<FloorBlob>,
    grid: BlobGrid,
}

impl FloorTruth {
    /// Builds a floor from explicit blobs (hand-made fixtures, loaded
    /// files). [`generate_floor`] is the seeded constructor.
    pub fn from_blobs(spec: FloorSpec, blobs: Vec<FloorBlob>) -> Self {
        let grid = BlobGrid::build(&spec, &blobs);
        FloorTruth { spec, blobs, grid }
    }

    fn new(spec: FloorSpec, blobs: Vec<FloorBlob>) -> Self {
        FloorTruth::from_blobs(spec, blobs)
    }

    /// Blobs whose center lies within `radius` (meters) of `center`,
    /// in ascending id order.
    pub fn blobs_near(&self, center: (f64, f64), radius: f64) -> Vec<&FloorBlob> {
        let mut ids = self.grid.candidates(center, radius);
        let r2 = radius * radius;
        ids.retain(|&i| {
            let c = self.blobs[i as usize].center;
            (c.0 - center.0).powi(2) + (c.1 - center.1).powi(2) <= r2
        });
        ids.sort_unstable();
        ids.iter().map(|&i| &self.blobs[i as usize]).collect()
    }

    /// The blob covering a floor point, if any. When blobs overlap, the
    /// highest id wins, matching the renderer's paint order.
    pub fn blob_at(&self, p: (f64, f64)) -> Option<&FloorBlob> {
        let max_r_m = self.spec.blob_radius_range_mm.1 / 1000.0;
        self.blobs_near(p, max_r_m + 1e-9)
            .into_iter()
            .rev()
            .find(|b| b.contains(p))
    }

    pub fn max_semi_axis_m(&self) -> f64 {
        self.spec.blob_radius_range_mm.1 / 1000.0
    }
}

#[derive(Clone, Debug)]
struct BlobGrid {
    cell_m: f64,
    cols: usize,
    rows: usize,
    cells: Vec<Vec<u32>>,
}

impl BlobGrid {
    fn build(spec: &FloorSpec, blobs: &[FloorBlob]) -> Self {
        let cell_m = 0.05;
        let cols = (spec.width_m / cell_m).ceil().max(1.0) as usize;
        let rows = (spec.height_m / cell_m).ceil().max(1.0) as usize;
        let mut cells = vec![Vec::new(); cols * rows];
        for blob in blobs {
            let cx = ((blob.center.0 / cell_m) as usize).min(cols - 1);
            let cy = ((blob.center.1 / cell_m) as usize).min(rows - 1);
            cells[cy * cols + cx].push(blob.id as u32);
        }
        BlobGrid {
            cell_m,
            cols,
            rows,
            cells,
        }
    }

    /// Ids from every cell overlapping the query square; callers apply the
    /// exact distance filter.
    fn candidates(&self, center: (f64, f64), radius: f64) -> Vec<u32> {
        let x0 = (((center.0 - radius) / self.cell_m).floor().max(0.0)) as usize;
        let y0 = (((center.1 - radius) / self.cell_m).floor().max(0.0)) as usize;
        let x1 = (((center.0 + radius) / self.cell_m).floor()).max(0.0) as usize;
        let y1 = (((center.1 + radius) / self.cell_m).floor()).max(0.0) as usize;
        let mut out = Vec::new();
        for cy in y0..=y1.min(self.rows - 1) {
            for cx in x0..=x1.min(self.cols - 1) {
                out.extend(self.cells[cy * self.cols + cx].iter().copied());
            }
        }
        out
    }
}

/// Calibrated close-up camera: fixed resolution and metric footprint.
///
/// The footprint is anisotropic: the horizontal and vertical millimeters per
/// pixel differ, and every pixel/metric conversion uses the per-axis scale.
/// Pixel axes follow image convention (`u` right, `v` down); camera axes are
/// metric with `x` right and `y` up, so `+v` maps to `-y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub image_width: u32,
    pub image_height: u32,
    pub footprint_width_mm: f64,
    pub footprint_height_mm: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            image_width: 632,
            image_height: 480,
            footprint_width_mm: 49.5,
            footprint_height_mm: 28.0,
        }
    }
}

impl CameraModel {
    /// Horizontal scale, millimeters per pixel.
    pub fn px_scale_x_mm(&self) -> f64 {
        self.footprint_width_mm / self.image_width as f64
    }

    /// Vertical scale, millimeters per pixel.
    pub fn px_scale_y_mm(&self) -> f64 {
        self.footprint_height_mm / self.image_height as f64
    }

    pub fn px_scale_x_m(&self) -> f64 {
        self.px_scale_x_mm() / 1000.0
    }

    pub fn px_scale_y_m(&self) -> f64 {
        self.px_scale_y_mm() / 1000.0
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (
            self.image_width as f64 / 2.0,
            self.image_height as f64 / 2.0,
        )
    }

    /// Metric camera-frame offset (meters, y up) of a pixel.
    #[inline]
    pub fn pixel_to_camera(&self, u: f64, v: f64) -> (f64, f64) {
        let (cx, cy) = self.principal_point();
        ((u - cx) * self.px_scale_x_m(), -(v - cy) * self.px_scale_y_m())
    }

    /// Pixel position of a metric camera-frame offset (meters, y up).
    #[inline]
    pub fn camera_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        let (cx, cy) = self.principal_point();
        (cx + x / self.px_scale_x_m(), cy - y / self.px_scale_y_m())
    }

    pub fn footprint_area_m2(&self) -> f64 {
        (self.footprint_width_mm / 1000.0) * (self.footprint_height_mm / 1000.0)
    }

    /// Half the footprint diagonal, meters.
    pub fn footprint_half_diagonal_m(&self) -> f64 {
        0.5 * ((self.footprint_width_mm / 1000.0).powi(2)
            + (self.footprint_height_mm / 1000.0).powi(2))
        .sqrt()
    }

    pub fn footprint_short_side_m(&self) -> f64 {
        self.footprint_width_mm.min(self.footprint_height_mm) / 1000.0
    }
}

/// One captured image with its ground-truth pose.
#[derive(Clone, Debug)]
pub struct Frame {
    pub image: RgbImage,
    pub truth_pose: Pose2D,
    pub frame_id: u64,
}

/// Generates a seeded floor from a spec.
///
/// The blob count is `round(density * area_cm2)`; centers are i.i.d. uniform
/// over the floor; each blob samples two semi-axes from the radius range
/// (major first), an orientation uniform in `[0, pi)`, and a color from the
/// weight distribution. The draw order per blob is fixed, so a seed fully
/// determines the floor.
pub fn generate_floor(spec: &FloorSpec) -> Result<FloorTruth, FloorError> {
    spec.validate()?;
    let count = (spec.blob_density_per_cm2 * spec.area_cm2()).round() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let (lo, hi) = spec.blob_radius_range_mm;
    let weight_sum: f64 = spec.color_weights.iter().sum();

    let mut blobs = Vec::with_capacity(count as usize);
    for id in 0..count {
        let cx = rng.random::<f64>() * spec.width_m;
        let cy = rng.random::<f64>() * spec.height_m;
        let r1 = lo + rng.random::<f64>() * (hi - lo);
        let r2 = lo + rng.random::<f64>() * (hi - lo);
        let orientation = rng.random::<f64>() * std::f64::consts::PI;
        let pick = rng.random::<f64>() * weight_sum;
        let mut acc = 0.0;
        let mut color = BlobColor::White;
        for (i, &w) in spec.color_weights.iter().enumerate() {
            acc += w;
            if pick < acc {
                color = BlobColor::ALL[i];
                break;
            }
        }
        blobs.push(FloorBlob {
            id,
            center: (cx, cy),
            semi_axes_mm: (r1.max(r2), r1.min(r2)),
            orientation,
            color,
        });
    }
    Ok(FloorTruth::new(spec.clone(), blobs))
}

const FLOOR_MAGIC: &[u8; 4] = b"KFLT";
const FLOOR_VERSION: u32 = 1;

/// Writes a floor to the versioned little-endian binary format.
///
/// Layout: magic `KFLT`, u32 version, f64 width/height (m), u64 blob count,
/// then per blob: u64 id, f64 center x/y (m), f64 semi-axes (mm), f64
/// orientation (rad), u8 color code.
pub fn save_floor(floor: &FloorTruth, path: &Path) -> Result<(), FloorError> {
    let file = File::create(path).map_err(|e| FloorError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(FLOOR_MAGIC)?;
        w.write_all(&FLOOR_VERSION.to_le_bytes())?;
        w.write_all(&floor.spec.width_m.to_le_bytes())?;
        w.write_all(&floor.spec.height_m.to_le_bytes())?;
        w.write_all(&(floor.blobs.len() as u64).to_le_bytes())?;
        for b in &floor.blobs {
            w.write_all(&b.id.to_le_bytes())?;
            w.write_all(&b.center.0.to_le_bytes())?;
            w.write_all(&b.center.1.to_le_bytes())?;
            w.write_all(&b.semi_axes_mm.0.to_le_bytes())?;
            w.write_all(&b.semi_axes_mm.1.to_le_bytes())?;
            w.write_all(&b.orientation.to_le_bytes())?;
            w.write_all(&[b.color.code()])?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| FloorError::io(path, e))
}

/// Reads a floor file written by [`save_floor`].
///
/// The spec stored alongside the blobs is reconstructed with default
/// generation parameters and the recorded dimensions; the blobs themselves
/// are authoritative.
pub fn load_floor(path: &Path) -> Result<FloorTruth, FloorError> {
    let file = File::open(path).map_err(|e| FloorError::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| FloorError::io(path, e))?;

    let mut cur = Cursor::new(path, &bytes);
    let magic = cur.take(4)?;
    if magic != FLOOR_MAGIC {
        return Err(FloorError::BadMagic {
            path: path.to_path_buf(),
            expected: "KFLT".to_string(),
        });
    }
    let version = cur.u32()?;
    if version != FLOOR_VERSION {
        return Err(FloorError::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
            supported: FLOOR_VERSION,
        });
    }
    let width = cur.f64()?;
    let height = cur.f64()?;
    let count = cur.u64()?;
    let mut blobs = Vec::with_capacity(count.min(1 << 24) as usize);
    let mut max_r: f64 = 0.1;
    let mut min_r = f64::MAX;
    for _ in 0..count {
        let id = cur.u64()?;
        let cx = cur.f64()?;
        let cy = cur.f64()?;
        let a = cur.f64()?;
        let b = cur.f64()?;
        let phi = cur.f64()?;
        let code = cur.take(1)?[0];
        let color = BlobColor::from_code(code).ok_or_else(|| FloorError::BadRecord {
            path: path.to_path_buf(),
            reason: format!("unknown color code {code}"),
        })?;
        max_r = max_r.max(a);
        min_r = min_r.min(b);
        blobs.push(FloorBlob {
            id,
            center: (cx, cy),
            semi_axes_mm: (a, b),
            orientation: phi,
            color,
        });
    }
    let spec = FloorSpec {
        width_m: width,
        height_m: height,
        blob_radius_range_mm: (min_r.min(max_r), max_r),
        ..FloorSpec::default()
    };
    Ok(FloorTruth::new(spec, blobs))
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Cursor {
            path,
            bytes,
            pos: 0,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FloorError> {
        if self.pos + n > self.bytes.len() {
            return Err(FloorError::Truncated {
                path: self.path.to_path_buf(),
                reason: format!(
                    "needed {} bytes at offset {}, file has {}",
                    n,
                    self.pos,
                    self.bytes.len()
                ),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, FloorError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FloorError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, FloorError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
