//! Keypoint detection: color segmentation, connected-component labeling and
//! the three eligibility rules.
//!
//! A frame is first segmented into a five-class mask (background plus the
//! four blob colors). Blobs are the 4-connected components of the non-background
//! classes; a blob center becomes a keypoint when it keeps a margin from the
//! image border, the blob is large enough, and enough colored pixels of any
//! class surround it.
//!
//! Segmentation is a pluggable interface so an externally trained model can
//! replace the reference classifier: any per-pixel labeling with the same
//! class codes works, including label maps loaded from PGM files.

use std::path::PathBuf;

use thiserror::Error;

use crate::color::{rgb_distance_sq, BlobColor, ColorClass, Palette};
use crate::floorsim::Frame;
use crate::image::{GrayImage, ImageIoError};

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error("mask size {got_w}x{got_h} does not match frame {want_w}x{want_h}")]
    SizeMismatch {
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
    #[error("mask contains invalid class code {code}")]
    BadClassCode { code: u8 },
}

/// Per-pixel class labels for one frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegMask {
    width: u32,
    height: u32,
    labels: Vec<ColorClass>,
}

impl SegMask {
    pub fn new(width: u32, height: u32, labels: Vec<ColorClass>) -> Option<Self> {
        if labels.len() != width as usize * height as usize {
            return None;
        }
        Some(SegMask {
            width,
            height,
            labels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> ColorClass {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    pub fn labels(&self) -> &[ColorClass] {
        &self.labels
    }

    pub fn colored_pixel_count(&self) -> usize {
        self.labels.iter().filter(|c| c.is_colored()).count()
    }

    /// Converts to a PGM label map (class codes as pixel values).
    pub fn to_gray(&self) -> GrayImage {
        let bytes: Vec<u8> = self.labels.iter().map(|c| c.code()).collect();
        GrayImage::from_raw(self.width, self.height, bytes).unwrap()
    }

    /// Builds a mask from a PGM label map.
    pub fn from_gray(gray: &GrayImage) -> Result<Self, SegmentError> {
        let mut labels = Vec::with_capacity(gray.as_bytes().len());
        for &code in gray.as_bytes() {
            labels.push(
                ColorClass::from_code(code).ok_or(SegmentError::BadClassCode { code })?,
            );
        }
        Ok(SegMask {
            width: gray.width(),
            height: gray.height(),
            labels,
        })
    }
}

/// Pluggable per-pixel classifier.
pub trait Segmenter: Sync {
    fn segment(&self, frame: &Frame) -> Result<SegMask, SegmentError>;
}

/// Reference classifier: nearest palette color in RGB space.
///
/// Each pixel takes the class of the nearest palette entry by Euclidean RGB
/// distance; pixels whose nearest non-background entry is farther than
/// `max_distance` are background regardless.
#[derive(Clone, Debug)]
pub struct PaletteSegmenter {
    palette: Palette,
    max_distance: f64,
    max_distance_sq: i32,
    // Pixels within this Chebyshev radius of the background color are
    // provably background under the exact rule; lets the classifier skip
    // the full distance computation for the vast background majority.
    bg_linf_radius: i32,
}

impl Default for PaletteSegmenter {
    fn default() -> Self {
        PaletteSegmenter::new(Palette::default(), 90.0)
    }
}

impl PaletteSegmenter {
    pub fn new(palette: Palette, max_distance: f64) -> Self {
        let max_distance_sq = (max_distance * max_distance).floor() as i32;
        // For any pixel p with ||p - bg||_inf <= r:
        //   ||p - c||_2 >= ||c - bg||_2 - r*sqrt(3)   for every color c,
        //   ||p - bg||_2 <= r*sqrt(3).
        // Background is guaranteed when r*sqrt(3) is both below half the
        // smallest bg-to-color distance and below that distance minus the
        // max_distance cut.
        let sqrt3 = 3.0f64.sqrt();
        let mut r = f64::MAX;
        for class in [
            ColorClass::Red,
            ColorClass::Green,
            ColorClass::Blue,
            ColorClass::White,
        ] {
            let d = (rgb_distance_sq(palette.rgb_of(class), palette.background) as f64).sqrt();
            r = r.min(d / (2.0 * sqrt3));
            r = r.min((d - max_distance) / sqrt3);
        }
        let bg_linf_radius = r.floor().max(0.0) as i32;
        PaletteSegmenter {
            palette,
            max_distance,
            max_distance_sq,
            bg_linf_radius,
        }
    }

    pub fn palette(&self) -> &Palette {
        &self.palette
    }

    pub fn max_distance(&self) -> f64 {
        self.max_distance
    }

    fn classify(&self, rgb: [u8; 3]) -> ColorClass {
        let bg = self.palette.background;
        let dr = (rgb[0] as i32 - bg[0] as i32).abs();
        let dg = (rgb[1] as i32 - bg[1] as i32).abs();
        let db = (rgb[2] as i32 - bg[2] as i32).abs();
        if dr <= self.bg_linf_radius && dg <= self.bg_linf_radius && db <= self.bg_linf_radius {
            return ColorClass::Bg;
        }
        let mut best = ColorClass::Bg;
        let mut best_d = rgb_distance_sq(rgb, bg);
        for class in [
            ColorClass::Red,
            ColorClass::Green,
            ColorClass::Blue,
            ColorClass::White,
        ] {
            let d = rgb_distance_sq(rgb, self.palette.rgb_of(class));
            if d < best_d {
                best = class;
                best_d = d;
            }
        }
        if best != ColorClass::Bg && best_d > self.max_distance_sq {
            return ColorClass::Bg;
        }
        best
    }
}

impl Segmenter for PaletteSegmenter {
    fn segment(&self, frame: &Frame) -> Result<SegMask, SegmentError> {
        let w = frame.image.width();
        let h = frame.image.height();
        let bytes = frame.image.as_bytes();
        let labels: Vec<ColorClass> = bytes
            .chunks_exact(3)
            .map(|px| self.classify([px[0], px[1], px[2]]))
            .collect();
        Ok(SegMask {
            width: w,
            height: h,
            labels,
        })
    }
}

/// Assigns each pixel the nearest palette class by Euclidean RGB distance;
/// background when the nearest non-background entry is farther than
/// `max_distance`.
pub fn segment(frame: &Frame, palette: &Palette, max_distance: f64) -> SegMask {
    PaletteSegmenter::new(*palette, max_distance)
        .segment(frame)
        .expect("palette segmentation is infallible")
}

/// Segmenter that loads externally produced label maps (`mask_NNNNNN.pgm`,
/// values 0 = background, 1..4 = red, green, blue, white) from a directory,
/// keyed by frame id.
pub struct MaskDirSegmenter {
    pub dir: PathBuf,
}

impl Segmenter for MaskDirSegmenter {
    fn segment(&self, frame: &Frame) -> Result<SegMask, SegmentError> {
        let path = self.dir.join(format!("mask_{:06}.pgm", frame.frame_id));
        let gray = crate::image::read_pgm(&path)?;
        if gray.width() != frame.image.width() || gray.height() != frame.image.height() {
            return Err(SegmentError::SizeMismatch {
                got_w: gray.width(),
                got_h: gray.height(),
                want_w: frame.image.width(),
                want_h: frame.image.height(),
            });
        }
        SegMask::from_gray(&gray)
    }
}

/// One connected component of a single color class.
#[derive(Clone, Debug)]
pub struct Blob {
    pub id: u32,
    pub color: BlobColor,
    pub pixel_count: usize,
    /// Arithmetic mean of member pixel coordinates (subpixel).
    pub centroid: (f64, f64),
    pub pixels: Vec<(u16, u16)>,
}

/// Labels 4-connected components per non-background class (two-pass
/// union-find). Adjacent pixels merge only when they share a class. Blob ids
/// are dense in row-major first-encounter order.
pub fn connected_components(mask: &SegMask) -> Vec<Blob> {
    let w = mask.width as usize;
    let h = mask.height as usize;
    if w == 0 || h == 0 {
        return Vec::new();
    }

    // Provisional labels, 0 = background/unlabeled.
    let mut labels = vec![0u32; w * h];
    let mut parent: Vec<u32> = vec![0]; // parent[0] unused
    let classes = &mask.labels;
    // ColorClass is repr(u8) with Bg = 0; viewing the labels as bytes lets
    // the scan skip background eight pixels at a time.
    let bytes: &[u8] =
        unsafe { std::slice::from_raw_parts(classes.as_ptr() as *const u8, classes.len()) };
    let all_bg = |start: usize| -> bool {
        u64::from_ne_bytes(bytes[start..start + 8].try_into().unwrap()) == 0
    };

    fn find(parent: &mut [u32], mut x: u32) -> u32 {
        while parent[x as usize] != x {
            let up = parent[parent[x as usize] as usize];
            parent[x as usize] = up;
            x = up;
        }
        x
    }

    for y in 0..h {
        let row = y * w;
        let mut x = 0usize;
        while x < w {
            if bytes[row + x] == 0 {
                if x + 8 <= w && all_bg(row + x) {
                    x += 8;
                } else {
                    x += 1;
                }
                continue;
            }
            let class = classes[row + x];
            let west = if x > 0 && classes[row + x - 1] == class {
                labels[row + x - 1]
            } else {
                0
            };
            let north = if y > 0 && classes[row - w + x] == class {
                labels[row - w + x]
            } else {
                0
            };
            let label = match (west, north) {
                (0, 0) => {
                    let next = parent.len() as u32;
                    parent.push(next);
                    next
                }
                (l, 0) | (0, l) => l,
                (a, b) => {
                    let ra = find(&mut parent, a);
                    let rb = find(&mut parent, b);
                    let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
                    parent[hi as usize] = lo;
                    lo
                }
            };
            labels[row + x] = label;
            x += 1;
        }
    }

    // Second pass: compact roots into dense blob ids and accumulate
    // per-blob statistics.
    let mut root_to_blob: Vec<u32> = vec![u32::MAX; parent.len()];
    let mut blobs: Vec<Blob> = Vec::new();
    let mut sums: Vec<(f64, f64)> = Vec::new();
    for y in 0..h {
        let row = y * w;
        let mut x = 0usize;
        while x < w {
            if bytes[row + x] == 0 {
                if x + 8 <= w && all_bg(row + x) {
                    x += 8;
                } else {
                    x += 1;
                }
                continue;
            }
            let label = labels[row + x];
            let root = find(&mut parent, label);
            let blob_id = if root_to_blob[root as usize] == u32::MAX {
                let id = blobs.len() as u32;
                root_to_blob[root as usize] = id;
                blobs.push(Blob {
                    id,
                    color: classes[row + x]
                        .blob_color()
                        .expect("labeled pixels are colored"),
                    pixel_count: 0,
                    centroid: (0.0, 0.0),
                    pixels: Vec::new(),
                });
                sums.push((0.0, 0.0));
                id
            } else {
                root_to_blob[root as usize]
            };
            let blob = &mut blobs[blob_id as usize];
            blob.pixel_count += 1;
            blob.pixels.push((x as u16, y as u16));
            sums[blob_id as usize].0 += x as f64;
            sums[blob_id as usize].1 += y as f64;
            x += 1;
        }
    }
    for (blob, sum) in blobs.iter_mut().zip(&sums) {
        let n = blob.pixel_count as f64;
        blob.centroid = (sum.0 / n, sum.1 / n);
    }
    blobs
}

/// Keypoint eligibility thresholds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorParams {
    /// Minimum distance of the blob center from every image border, pixels.
    pub border_margin: u32,
    /// A blob must contain strictly more pixels than this.
    pub min_blob_area: usize,
    /// Radius of the colored-support disc, pixels.
    pub support_radius: u32,
    /// Minimum colored pixels (any class) within the support disc.
    pub min_support_pixels: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            border_margin: 64,
            min_blob_area: 150,
            support_radius: 64,
            min_support_pixels: 500,
        }
    }
}

/// A blob center that passed all eligibility rules.
#[derive(Clone, Copy, Debug)]
pub struct Keypoint {
    /// Subpixel blob centroid in pixel coordinates.
    pub center: (f64, f64),
    pub blob_id: u32,
    pub color: BlobColor,
}

/// Offsets of all integer pixels within a Euclidean radius (boundary
/// inclusive).
pub fn disc_offsets(radius: u32) -> Vec<(i32, i32)> {
    let r = radius as i32;
    let r2 = r * r;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r2 {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Filters blob centers by the three eligibility rules:
/// margin from the border, strict minimum area, and a minimum count of
/// colored pixels of any class within the support disc around the (rounded)
/// center.
pub fn detect_keypoints(mask: &SegMask, blobs: &[Blob], params: &DetectorParams) -> Vec<Keypoint> {
    let w = mask.width as f64;
    let h = mask.height as f64;
    let margin = params.border_margin as f64;
    let offsets = disc_offsets(params.support_radius);

    let mut out = Vec::new();
    for blob in blobs {
        let (cx, cy) = blob.centroid;
        let border_dist = cx.min(cy).min((w - 1.0) - cx).min((h - 1.0) - cy);
        if border_dist < margin {
            continue;
        }
        if blob.pixel_count <= params.min_blob_area {
            continue;
        }
        let ucx = cx.round() as i32;
        let ucy = cy.round() as i32;
        let mut support = 0usize;
        for &(dx, dy) in &offsets {
            let x = ucx + dx;
            let y = ucy + dy;
            if x >= 0
                && y >= 0
                && (x as u32) < mask.width
                && (y as u32) < mask.height
                && mask.get(x as u32, y as u32).is_colored()
            {
                support += 1;
            }
        }
        if support < params.min_support_pixels {
            continue;
        }
        out.push(Keypoint {
            center: blob.centroid,
            blob_id: blob.id,
            color: blob.color,
        });
    }
    out
}
