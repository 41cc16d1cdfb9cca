//! Prints per-stage frame-processing timings, for performance work.

use std::time::Instant;

use floorloc::detector::{
    connected_components, detect_keypoints, DetectorParams, PaletteSegmenter, Segmenter,
};
use floorloc::descriptor::{describe, fit_ellipse_orientation, normalize_patch, PatchGeometry};
use floorloc::floorsim::{generate_floor, render_view, CameraModel, FloorSpec};
use floorloc::geometry::Pose2D;

fn main() {
    let spec = FloorSpec {
        width_m: 0.6,
        height_m: 0.6,
        ..FloorSpec::default()
    };
    let floor = generate_floor(&spec).unwrap();
    let cam = CameraModel::default();
    let segmenter = PaletteSegmenter::default();
    let geom = PatchGeometry::from_camera(&cam);
    let params = DetectorParams::default();

    let n = 100;
    let poses: Vec<Pose2D> = (0..n)
        .map(|i| Pose2D::new(0.1 + 0.004 * i as f64, 0.3, i as f64 * 0.05))
        .collect();

    let (mut t_render, mut t_segment, mut t_ccl, mut t_detect, mut t_desc) =
        (0.0f64, 0.0, 0.0, 0.0, 0.0);
    let mut keypoints = 0usize;

    for (i, &pose) in poses.iter().enumerate() {
        let t0 = Instant::now();
        let frame = render_view(&floor, &cam, pose, 3.0, i as u64);
        t_render += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let mask = segmenter.segment(&frame).unwrap();
        t_segment += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let blobs = connected_components(&mask);
        t_ccl += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let kps = detect_keypoints(&mask, &blobs, &params);
        t_detect += t0.elapsed().as_secs_f64();
        keypoints += kps.len();

        let t0 = Instant::now();
        for kp in &kps {
            let fit = fit_ellipse_orientation(&blobs[kp.blob_id as usize], &geom);
            let patch = normalize_patch(&mask, kp, fit.angle, &geom);
            let _ = describe(&patch);
        }
        t_desc += t0.elapsed().as_secs_f64();
    }

    let ms = |t: f64| t * 1000.0 / n as f64;
    println!("frames: {n}, keypoints/frame: {:.1}", keypoints as f64 / n as f64);
    println!("render:   {:.3} ms/frame", ms(t_render));
    println!("segment:  {:.3} ms/frame", ms(t_segment));
    println!("ccl:      {:.3} ms/frame", ms(t_ccl));
    println!("detect:   {:.3} ms/frame", ms(t_detect));
    println!("describe: {:.3} ms/frame", ms(t_desc));
    println!(
        "total:    {:.3} ms/frame",
        ms(t_render + t_segment + t_ccl + t_detect + t_desc)
    );
}
