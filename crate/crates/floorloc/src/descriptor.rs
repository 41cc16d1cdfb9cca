//! Rotation-normalized keypoint patches and the 30-dimensional descriptor.
//!
//! Around each keypoint a circular class-label patch (radius 64) is
//! extracted from the segmentation mask, rotated so the blob's major axis is
//! horizontal, and flipped so the upper half-disc holds at least as many
//! colored pixels as the lower. The descriptor is a fixed 30-component
//! feature vector of the normalized patch, L2-normalized.
//!
//! The camera's pixels are not square, so patch extraction resamples onto an
//! isotropic grid (one patch pixel = the finer of the two pixel pitches in
//! both axes) and the blob orientation is measured in metric coordinates.
//! Working in pixel units instead would bake the anisotropy into the patch
//! and descriptors of the same floor blob would drift apart across camera
//! headings.
//!
//! The descriptor implementation is swappable: anything producing 30
//! L2-normalized components against these patches (for example a learned
//! encoder trained on the exported cluster dataset) can replace the
//! reference histogram descriptor without touching the rest of the pipeline.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::color::ColorClass;
use crate::detector::{Blob, Keypoint, SegMask};
use crate::floorsim::CameraModel;
use crate::image::{write_pgm, GrayImage, ImageIoError};
use crate::mapper::Cluster;

/// Patch radius in patch pixels; the grid is `(2 * PATCH_RADIUS + 1)^2`.
pub const PATCH_RADIUS: i32 = 64;
/// Patch grid side length.
pub const PATCH_SIZE: usize = (2 * PATCH_RADIUS + 1) as usize;
/// Descriptor dimensionality.
pub const DESCRIPTOR_DIM: usize = 30;
/// Angular sectors of the reference descriptor histogram. Six sectors with
/// four color classes each plus the six scalar features give exactly
/// [`DESCRIPTOR_DIM`] components.
pub const SECTOR_COUNT: usize = 6;

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("patch center pixel is background; cannot describe")]
    EmptyPatch,
    #[error("zero feature vector cannot be normalized")]
    ZeroVector,
    #[error("blob has {0} pixels, need at least 3 for an orientation")]
    DegenerateBlob(usize),
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error("cluster {cluster} has no retained patches; rebuild the map with patch retention")]
    MissingPatches { cluster: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Metric pixel geometry used by patch extraction and orientation fitting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchGeometry {
    /// Horizontal pixel pitch, millimeters.
    pub sx_mm: f64,
    /// Vertical pixel pitch, millimeters.
    pub sy_mm: f64,
}

impl PatchGeometry {
    pub fn from_camera(cam: &CameraModel) -> Self {
        PatchGeometry {
            sx_mm: cam.px_scale_x_mm(),
            sy_mm: cam.px_scale_y_mm(),
        }
    }

    /// Isotropic patch pitch: the finer of the two pixel pitches, so the
    /// patch never reads outside the border margin that the keypoint
    /// criteria already guarantee.
    pub fn patch_pitch_mm(&self) -> f64 {
        self.sx_mm.min(self.sy_mm)
    }
}

/// Result of the major-axis fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlobOrientation {
    /// Major-axis angle in metric camera coordinates (y up), radians in
    /// `(-pi/2, pi/2]`.
    pub angle: f64,
    /// True when the blob is too small or rotationally symmetric, in which
    /// case the angle defaults to zero.
    pub degenerate: bool,
}

/// Fits the blob's major-axis orientation from second central moments of its
/// pixels, measured in metric coordinates.
pub fn fit_ellipse_orientation(blob: &Blob, geom: &PatchGeometry) -> BlobOrientation {
    if blob.pixel_count < 3 {
        return BlobOrientation {
            angle: 0.0,
            degenerate: true,
        };
    }
    let (mu20, mu02, mu11) = metric_central_moments(&blob.pixels, geom);
    let spread = mu20 + mu02;
    if spread <= 0.0 {
        return BlobOrientation {
            angle: 0.0,
            degenerate: true,
        };
    }
    let num = 2.0 * mu11;
    let den = mu20 - mu02;
    if num.abs() < 1e-12 * spread && den.abs() < 1e-12 * spread {
        // Perfectly circular: orientation undefined.
        return BlobOrientation {
            angle: 0.0,
            degenerate: true,
        };
    }
    let mut angle = 0.5 * num.atan2(den);
    if angle <= -std::f64::consts::FRAC_PI_2 {
        angle += std::f64::consts::PI;
    }
    BlobOrientation {
        angle,
        degenerate: false,
    }
}

/// Second central moments over pixel coordinates mapped to metric camera
/// coordinates (x right, y up).
fn metric_central_moments(pixels: &[(u16, u16)], geom: &PatchGeometry) -> (f64, f64, f64) {
    let n = pixels.len() as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for &(u, v) in pixels {
        mx += u as f64 * geom.sx_mm;
        my += -(v as f64) * geom.sy_mm;
    }
    mx /= n;
    my /= n;
    let (mut mu20, mut mu02, mut mu11) = (0.0, 0.0, 0.0);
    for &(u, v) in pixels {
        let dx = u as f64 * geom.sx_mm - mx;
        let dy = -(v as f64) * geom.sy_mm - my;
        mu20 += dx * dx;
        mu02 += dy * dy;
        mu11 += dx * dy;
    }
    (mu20, mu02, mu11)
}

/// Applied patch normalization: the content rotation and whether the
/// half-disc rule added a half turn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientationFrame {
    pub angle: f64,
    pub flip_resolved: bool,
}

/// Rotation-normalized circular class-label patch.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    grid: Vec<ColorClass>,
    pub orientation: OrientationFrame,
}

impl Patch {
    #[inline]
    pub fn get(&self, col: usize, row: usize) -> ColorClass {
        self.grid[row * PATCH_SIZE + col]
    }

    pub fn center_class(&self) -> ColorClass {
        self.get(PATCH_RADIUS as usize, PATCH_RADIUS as usize)
    }

    pub fn grid(&self) -> &[ColorClass] {
        &self.grid
    }

    pub fn to_gray(&self) -> GrayImage {
        let bytes: Vec<u8> = self.grid.iter().map(|c| c.code()).collect();
        GrayImage::from_raw(PATCH_SIZE as u32, PATCH_SIZE as u32, bytes).unwrap()
    }
}

struct PatchTables {
    /// (dcol, drow) offsets inside the radius-64 disc.
    disc: Vec<(i32, i32)>,
    /// Sector index per grid cell, `u8::MAX` outside the disc.
    sector: Vec<u8>,
    disc_count: usize,
}

fn patch_tables() -> &'static PatchTables {
    static TABLES: OnceLock<PatchTables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let disc = crate::detector::disc_offsets(PATCH_RADIUS as u32);
        let mut sector = vec![u8::MAX; PATCH_SIZE * PATCH_SIZE];
        for &(dc, dr) in &disc {
            // Angle in patch coordinates with y up; sector 0 starts at the
            // +x axis, counterclockwise.
            let mut ang = (-(dr as f64)).atan2(dc as f64);
            if ang < 0.0 {
                ang += std::f64::consts::TAU;
            }
            let s = ((ang / (std::f64::consts::TAU / SECTOR_COUNT as f64)) as usize)
                .min(SECTOR_COUNT - 1);
            let col = (dc + PATCH_RADIUS) as usize;
            let row = (dr + PATCH_RADIUS) as usize;
            sector[row * PATCH_SIZE + col] = s as u8;
        }
        let disc_count = disc.len();
        PatchTables {
            disc,
            sector,
            disc_count,
        }
    })
}

/// Number of grid cells inside the patch disc.
pub fn disc_pixel_count() -> usize {
    patch_tables().disc_count
}

/// Extracts the rotation-normalized patch around a keypoint.
///
/// The patch grid is isotropic (pitch = finer pixel pitch); each in-disc
/// cell maps through a rotation by `angle` in metric camera coordinates back
/// to a source pixel, sampled nearest-neighbor. If the lower half-disc then
/// holds strictly more colored pixels than the upper, the grid is rotated a
/// further half turn (an exact grid reversal), recorded as `flip_resolved`.
pub fn normalize_patch(mask: &SegMask, kp: &Keypoint, angle: f64, geom: &PatchGeometry) -> Patch {
    let tables = patch_tables();
    let mut grid = vec![ColorClass::Bg; PATCH_SIZE * PATCH_SIZE];
    let pitch = geom.patch_pitch_mm();
    let (sin_a, cos_a) = angle.sin_cos();
    let (kx, ky) = kp.center;
    let w = mask.width() as i64;
    let h = mask.height() as i64;

    // Source pixel is affine in the grid offsets (dc, dr): the target offset
    // in metric camera coordinates (y up) is (dc, -dr) * pitch, rotated by
    // +angle so content at `angle` lands on the patch +x axis, then divided
    // by the per-axis pitches.
    let a_u = cos_a * pitch / geom.sx_mm;
    let b_u = sin_a * pitch / geom.sx_mm;
    let a_v = -sin_a * pitch / geom.sy_mm;
    let b_v = cos_a * pitch / geom.sy_mm;
    let sample = |dc: f64, dr: f64| (kx + a_u * dc + b_u * dr, ky + a_v * dc + b_v * dr);

    // A rotation preserves the metric offset norm, so source reads stay
    // within pitch/sx x 64 horizontally and 64 vertically of the center;
    // keypoints that far inside the frame skip per-cell bounds checks.
    let max_du = (pitch / geom.sx_mm * PATCH_RADIUS as f64).ceil() as i64 + 1;
    let max_dv = PATCH_RADIUS as i64 + 1;
    let interior = kx as i64 - max_du >= 0
        && ky as i64 - max_dv >= 0
        && (kx.ceil() as i64) + max_du < w
        && (ky.ceil() as i64) + max_dv < h;

    if interior {
        for &(dc, dr) in &tables.disc {
            let (u, v) = sample(dc as f64, dr as f64);
            let class = mask.get((u + 0.5) as u32, (v + 0.5) as u32);
            let col = (dc + PATCH_RADIUS) as usize;
            let row = (dr + PATCH_RADIUS) as usize;
            grid[row * PATCH_SIZE + col] = class;
        }
    } else {
        for &(dc, dr) in &tables.disc {
            let (u, v) = sample(dc as f64, dr as f64);
            let (u, v) = ((u + 0.5).floor() as i64, (v + 0.5).floor() as i64);
            if u < 0 || v < 0 || u >= w || v >= h {
                continue;
            }
            let class = mask.get(u as u32, v as u32);
            let col = (dc + PATCH_RADIUS) as usize;
            let row = (dr + PATCH_RADIUS) as usize;
            grid[row * PATCH_SIZE + col] = class;
        }
    }

    // Half-disc rule: rows above center vs below center.
    let mut upper = 0usize;
    let mut lower = 0usize;
    for row in 0..PATCH_SIZE {
        for col in 0..PATCH_SIZE {
            if grid[row * PATCH_SIZE + col].is_colored() {
                use std::cmp::Ordering;
                match row.cmp(&(PATCH_RADIUS as usize)) {
                    Ordering::Less => upper += 1,
                    Ordering::Greater => lower += 1,
                    Ordering::Equal => {}
                }
            }
        }
    }
    let flip = lower > upper;
    if flip {
        grid.reverse();
    }

    Patch {
        grid,
        orientation: OrientationFrame {
            angle,
            flip_resolved: flip,
        },
    }
}

/// 30-component L2-normalized feature vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Descriptor(pub [f32; DESCRIPTOR_DIM]);

impl Descriptor {
    /// Normalizes raw components to unit L2 norm. A (near-)zero vector is an
    /// error, never silently normalized.
    pub fn from_components(raw: &[f64; DESCRIPTOR_DIM]) -> Result<Descriptor, DescriptorError> {
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(DescriptorError::ZeroVector);
        }
        let mut out = [0.0f32; DESCRIPTOR_DIM];
        for (o, x) in out.iter_mut().zip(raw) {
            *o = (x / norm) as f32;
        }
        Ok(Descriptor(out))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    /// L2 norm, accumulated in f64.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt()
    }

    /// Cosine distance `1 - dot(a, b)` for unit vectors; the single
    /// definition shared by clustering and retrieval.
    pub fn cosine_distance(&self, other: &Descriptor) -> f64 {
        let dot: f64 = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        1.0 - dot
    }
}

/// Reference descriptor of a normalized patch.
///
/// Components: 4 one-hot center color; 1 center-component area over disc
/// area; 1 center-component eccentricity; 24 per-sector per-class fractions
/// of disc pixels (sector-major, class-minor; sector 0 starts at the +x
/// axis, counterclockwise). The concatenation is L2-normalized.
pub fn describe(patch: &Patch) -> Result<Descriptor, DescriptorError> {
    let tables = patch_tables();
    let center = patch.center_class();
    let Some(center_color) = center.blob_color() else {
        return Err(DescriptorError::EmptyPatch);
    };

    let mut raw = [0.0f64; DESCRIPTOR_DIM];
    raw[center_color.index()] = 1.0;

    let component = center_component(patch);
    raw[4] = component.len() as f64 / tables.disc_count as f64;
    raw[5] = grid_eccentricity(&component);

    for row in 0..PATCH_SIZE {
        for col in 0..PATCH_SIZE {
            let class = patch.grid[row * PATCH_SIZE + col];
            if !class.is_colored() {
                continue;
            }
            let sector = tables.sector[row * PATCH_SIZE + col];
            if sector == u8::MAX {
                continue;
            }
            let color = class.blob_color().unwrap();
            raw[6 + sector as usize * 4 + color.index()] += 1.0;
        }
    }
    for slot in raw[6..].iter_mut() {
        *slot /= tables.disc_count as f64;
    }

    Descriptor::from_components(&raw)
}

/// 4-connected component of the center pixel's class, in grid coordinates.
fn center_component(patch: &Patch) -> Vec<(i32, i32)> {
    const WORDS: usize = (PATCH_SIZE * PATCH_SIZE).div_ceil(64);
    let class = patch.center_class();
    let mut seen = [0u64; WORDS];
    let mut stack = Vec::with_capacity(256);
    let mut out = Vec::with_capacity(256);
    let idx = |c: i32, r: i32| r as usize * PATCH_SIZE + c as usize;
    let start = idx(PATCH_RADIUS, PATCH_RADIUS);
    seen[start / 64] |= 1 << (start % 64);
    stack.push((PATCH_RADIUS, PATCH_RADIUS));
    while let Some((c, r)) = stack.pop() {
        out.push((c, r));
        for (nc, nr) in [(c - 1, r), (c + 1, r), (c, r - 1), (c, r + 1)] {
            if nc < 0 || nr < 0 || nc >= PATCH_SIZE as i32 || nr >= PATCH_SIZE as i32 {
                continue;
            }
            let i = idx(nc, nr);
            if seen[i / 64] & (1 << (i % 64)) == 0 && patch.grid[i] == class {
                seen[i / 64] |= 1 << (i % 64);
                stack.push((nc, nr));
            }
        }
    }
    out
}

/// Eccentricity of a pixel set from its second central moments, in `[0, 1)`.
fn grid_eccentricity(pixels: &[(i32, i32)]) -> f64 {
    if pixels.len() < 3 {
        return 0.0;
    }
    let n = pixels.len() as f64;
    let mx = pixels.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let my = pixels.iter().map(|p| p.1 as f64).sum::<f64>() / n;
    let (mut mu20, mut mu02, mut mu11) = (0.0, 0.0, 0.0);
    for p in pixels {
        let dx = p.0 as f64 - mx;
        let dy = p.1 as f64 - my;
        mu20 += dx * dx;
        mu02 += dy * dy;
        mu11 += dx * dy;
    }
    let tr = mu20 + mu02;
    let det_term = ((mu20 - mu02).powi(2) + 4.0 * mu11 * mu11).sqrt();
    let l_max = (tr + det_term) / 2.0;
    let l_min = (tr - det_term) / 2.0;
    if l_max <= 0.0 {
        return 0.0;
    }
    (1.0 - (l_min / l_max).max(0.0)).sqrt().min(0.999_999)
}

/// Summary of a training-cluster export.
#[derive(Clone, Debug)]
pub struct ExportSummary {
    pub clusters_exported: usize,
    pub patches_written: usize,
    pub manifest_path: PathBuf,
}

/// Exports per-cluster patch samples as a descriptor-training dataset.
///
/// Every cluster with at least `per_cluster` members contributes
/// `per_cluster` members sampled uniformly without replacement (seeded);
/// smaller clusters are skipped. Patches are written as PGM label maps under
/// one directory per cluster, with a `manifest.csv` of schema
/// `cluster_id,member_idx,file,world_x,world_y`.
pub fn export_training_clusters(
    clusters: &[Cluster],
    per_cluster: usize,
    dir: &Path,
    seed: u64,
) -> Result<ExportSummary, DescriptorError> {
    std::fs::create_dir_all(dir).map_err(|e| DescriptorError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let manifest_path = dir.join("manifest.csv");
    let mut manifest = String::from("cluster_id,member_idx,file,world_x,world_y\n");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clusters_exported = 0usize;
    let mut patches_written = 0usize;

    for (cluster_id, cluster) in clusters.iter().enumerate() {
        if cluster.members.len() < per_cluster {
            continue;
        }
        let picks = rand::seq::index::sample(&mut rng, cluster.members.len(), per_cluster);
        let sub = format!("cluster_{cluster_id:05}");
        let subdir = dir.join(&sub);
        std::fs::create_dir_all(&subdir).map_err(|e| DescriptorError::Io {
            path: subdir.clone(),
            source: e,
        })?;
        for (k, member_idx) in picks.iter().enumerate() {
            let member = &cluster.members[member_idx];
            let patch = member
                .patch
                .as_ref()
                .ok_or(DescriptorError::MissingPatches { cluster: cluster_id })?;
            let file = format!("{sub}/patch_{k}.pgm");
            write_pgm(&patch.to_gray(), &dir.join(&file))?;
            manifest.push_str(&format!(
                "{},{},{},{:.6},{:.6}\n",
                cluster_id, member_idx, file, member.world_pos.0, member.world_pos.1
            ));
            patches_written += 1;
        }
        clusters_exported += 1;
    }

    std::fs::write(&manifest_path, manifest).map_err(|e| DescriptorError::Io {
        path: manifest_path.clone(),
        source: e,
    })?;
    Ok(ExportSummary {
        clusters_exported,
        patches_written,
        manifest_path,
    })
}
