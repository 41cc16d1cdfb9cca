//! Rasterization of camera views over a synthetic floor.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CameraModel, FloorError, FloorTruth, Frame, PoseSample};
use crate::color::{ColorClass, Palette};
use crate::geometry::Pose2D;
use crate::image::RgbImage;

/// Renders the camera view at a pose.
///
/// Every pixel maps through the camera model and the pose into floor
/// coordinates; pixels inside a blob ellipse take the blob's nominal palette
/// color (highest blob id wins on overlap), everything else is the
/// near-black background. With `noise_sigma > 0`, seeded additive Gaussian
/// noise (quantized to integer counts, which is all an 8-bit image can
/// carry) is applied per channel and clipped to `[0, 255]`.
pub fn render_view(
    floor: &FloorTruth,
    cam: &CameraModel,
    pose: Pose2D,
    noise_sigma: f64,
    noise_seed: u64,
) -> Frame {
    let palette = Palette::default();
    let mut image = RgbImage::filled(cam.image_width, cam.image_height, palette.background);

    let reach = cam.footprint_half_diagonal_m() + floor.max_semi_axis_m() + 1e-6;
    let blobs = floor.blobs_near(pose.position(), reach);

    let sx = cam.px_scale_x_m();
    let sy = cam.px_scale_y_m();
    let (sin_t, cos_t) = pose.theta.sin_cos();
    let w = cam.image_width as i64;
    let h = cam.image_height as i64;

    for blob in blobs {
        // Pixel-space bounding box from the ellipse extents along the
        // camera axes: for a unit direction at angle g to the major axis the
        // support is sqrt(a^2 cos^2 g + b^2 sin^2 g).
        let cam_pt = pose.apply_inverse(blob.center);
        let (cu, cv) = cam.camera_to_pixel(cam_pt.0, cam_pt.1);
        let rel = blob.orientation - pose.theta;
        let (rs, rc) = rel.sin_cos();
        let (a_mm2, b_mm2) = (
            blob.semi_axes_mm.0 * blob.semi_axes_mm.0,
            blob.semi_axes_mm.1 * blob.semi_axes_mm.1,
        );
        let ext_x_m = (a_mm2 * rc * rc + b_mm2 * rs * rs).sqrt() / 1000.0;
        let ext_y_m = (a_mm2 * rs * rs + b_mm2 * rc * rc).sqrt() / 1000.0;
        let ru = (ext_x_m / sx).ceil() as i64 + 1;
        let rv = (ext_y_m / sy).ceil() as i64 + 1;
        let u0 = (cu.floor() as i64 - ru).max(0);
        let u1 = (cu.ceil() as i64 + ru).min(w - 1);
        let v0 = (cv.floor() as i64 - rv).max(0);
        let v1 = (cv.ceil() as i64 + rv).min(h - 1);
        if u0 > u1 || v0 > v1 {
            continue;
        }

        let rgb = palette.blob_rgb(blob.color);
        let (bs, bc) = blob.orientation.sin_cos();
        let (a_mm, b_mm) = blob.semi_axes_mm;
        let inv_a2 = 1.0 / (a_mm * a_mm);
        let inv_b2 = 1.0 / (b_mm * b_mm);

        // World position is affine in (u, v); evaluate it incrementally in
        // millimeters relative to the blob center.
        let (cx, cy) = cam.principal_point();
        let sx_mm = cam.px_scale_x_mm();
        let sy_mm = cam.px_scale_y_mm();
        let du_x = cos_t * sx_mm;
        let du_y = sin_t * sx_mm;
        let dv_x = sin_t * sy_mm;
        let dv_y = -cos_t * sy_mm;
        let base_x = (pose.x - blob.center.0) * 1000.0 - cx * du_x - cy * dv_x;
        let base_y = (pose.y - blob.center.1) * 1000.0 - cx * du_y - cy * dv_y;

        for v in v0..=v1 {
            let row_x = base_x + v as f64 * dv_x;
            let row_y = base_y + v as f64 * dv_y;
            for u in u0..=u1 {
                let dx_mm = row_x + u as f64 * du_x;
                let dy_mm = row_y + u as f64 * du_y;
                let e1 = bc * dx_mm + bs * dy_mm;
                let e2 = -bs * dx_mm + bc * dy_mm;
                if e1 * e1 * inv_a2 + e2 * e2 * inv_b2 <= 1.0 {
                    image.put(u as u32, v as u32, rgb);
                }
            }
        }
    }

    if noise_sigma > 0.0 {
        apply_noise(&mut image, noise_sigma, noise_seed);
    }

    Frame {
        image,
        truth_pose: pose,
        frame_id: 0,
    }
}

/// Adds seeded Gaussian noise, quantized to integer counts.
///
/// One uniform byte per channel indexes a 256-quantile table of the normal
/// distribution scaled by sigma; this matches sampling-then-rounding to well
/// below the 8-bit quantization step and costs a table lookup per channel.
fn apply_noise(image: &mut RgbImage, sigma: f64, seed: u64) {
    let mut table = [0i16; 256];
    for (i, slot) in table.iter_mut().enumerate() {
        let p = (i as f64 + 0.5) / 256.0;
        *slot = (sigma * normal_quantile(p)).round().clamp(-128.0, 127.0) as i16;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = image.as_bytes_mut();
    let mut noise = [0u8; 8192];
    for chunk in data.chunks_mut(noise.len()) {
        rng.fill_bytes(&mut noise[..chunk.len()]);
        for (px, nb) in chunk.iter_mut().zip(&noise) {
            let v = *px as i16 + table[*nb as usize];
            *px = v.clamp(0, 255) as u8;
        }
    }
}

/// Inverse standard normal CDF (Acklam's rational approximation,
/// |relative error| < 1.2e-9 over (0, 1)).
fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Ground-truth class of a pixel: the color of the blob covering its floor
/// point, or background. Uses the same pixel mapping and overlap rule as the
/// renderer.
pub fn true_class_at_pixel(
    floor: &FloorTruth,
    cam: &CameraModel,
    pose: Pose2D,
    u: u32,
    v: u32,
) -> ColorClass {
    let p = cam.pixel_to_camera(u as f64, v as f64);
    let world = pose.apply(p);
    match floor.blob_at(world) {
        Some(b) => b.color.class(),
        None => ColorClass::Bg,
    }
}

/// Floating-point pixel position of a floor point as seen from a pose.
pub fn world_to_pixel(cam: &CameraModel, pose: Pose2D, world: (f64, f64)) -> (f64, f64) {
    let local = pose.apply_inverse(world);
    cam.camera_to_pixel(local.0, local.1)
}

/// Source of frames for map building and evaluation.
///
/// Implementations render on demand or load persisted images; either way a
/// frame is produced per pose-log sample and dropped by the caller as soon
/// as it is processed, so runs of any length stream in constant memory.
pub trait FrameProvider: Sync {
    fn frame(&self, sample: &PoseSample) -> Result<Frame, FloorError>;
}

/// Renders frames on the fly from a floor.
pub struct RenderProvider<'a> {
    pub floor: &'a FloorTruth,
    pub cam: CameraModel,
    pub noise_sigma: f64,
    /// Per-frame noise stream seed is derived from this and the frame id.
    pub noise_seed: u64,
}

impl FrameProvider for RenderProvider<'_> {
    fn frame(&self, sample: &PoseSample) -> Result<Frame, FloorError> {
        let seed = crate::mix_seed(self.noise_seed, sample.frame_id);
        let mut frame = render_view(self.floor, &self.cam, sample.pose, self.noise_sigma, seed);
        frame.frame_id = sample.frame_id;
        Ok(frame)
    }
}
