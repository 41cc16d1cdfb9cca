//! Shared per-frame processing: segmentation, labeling, keypoint detection
//! and description. Map building and localization run exactly this code
//! path, so a frame yields identical keypoints and descriptors on both
//! sides.

use std::sync::Arc;

use thiserror::Error;

use crate::descriptor::{
    describe, fit_ellipse_orientation, normalize_patch, Descriptor, Patch, PatchGeometry,
};
use crate::detector::{
    connected_components, detect_keypoints, DetectorParams, Keypoint, SegmentError, Segmenter,
};
use crate::floorsim::{CameraModel, Frame};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("segmentation failed: {0}")]
    Segment(#[from] SegmentError),
}

/// One keypoint with its descriptor (and optionally the normalized patch).
pub struct ExtractedKeypoint {
    pub keypoint: Keypoint,
    pub descriptor: Descriptor,
    pub patch: Option<Arc<Patch>>,
}

/// Frame processing configuration shared by mapping and localization.
pub struct FramePipeline<'a> {
    pub segmenter: &'a dyn Segmenter,
    pub detector: DetectorParams,
    pub camera: CameraModel,
}

impl FramePipeline<'_> {
    pub fn geometry(&self) -> PatchGeometry {
        PatchGeometry::from_camera(&self.camera)
    }

    /// Runs segmentation, component labeling, the keypoint rules, patch
    /// normalization and description on one frame.
    ///
    /// Keypoints whose patch cannot be described (the rounded centroid of a
    /// strongly concave blob may miss the blob) are skipped; detection order
    /// is preserved for the survivors.
    pub fn extract(
        &self,
        frame: &Frame,
        keep_patches: bool,
    ) -> Result<Vec<ExtractedKeypoint>, PipelineError> {
        let mask = self.segmenter.segment(frame)?;
        let blobs = connected_components(&mask);
        let keypoints = detect_keypoints(&mask, &blobs, &self.detector);
        let geom = self.geometry();

        let mut out = Vec::with_capacity(keypoints.len());
        for kp in keypoints {
            let orientation = fit_ellipse_orientation(&blobs[kp.blob_id as usize], &geom);
            let patch = normalize_patch(&mask, &kp, orientation.angle, &geom);
            let Ok(descriptor) = describe(&patch) else {
                continue;
            };
            out.push(ExtractedKeypoint {
                keypoint: kp,
                descriptor,
                patch: keep_patches.then(|| Arc::new(patch)),
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::PaletteSegmenter;
    use crate::floorsim::{generate_floor, render_view, FloorSpec};
    use crate::geometry::Pose2D;

    #[test]
    fn extraction_is_deterministic_and_ordered() {
        let floor = generate_floor(&FloorSpec {
            width_m: 0.4,
            height_m: 0.4,
            ..FloorSpec::default()
        })
        .unwrap();
        let cam = CameraModel::default();
        let segmenter = PaletteSegmenter::default();
        let pipeline = FramePipeline {
            segmenter: &segmenter,
            detector: DetectorParams::default(),
            camera: cam,
        };
        let frame = render_view(&floor, &cam, Pose2D::new(0.2, 0.2, 0.4), 3.0, 5);
        let a = pipeline.extract(&frame, false).unwrap();
        let b = pipeline.extract(&frame, false).unwrap();
        assert_eq!(a.len(), b.len());
        assert!(!a.is_empty(), "view over a dense floor has keypoints");
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.keypoint.center, y.keypoint.center);
            assert_eq!(x.descriptor.as_slice(), y.descriptor.as_slice());
            assert!(x.patch.is_none());
        }
        let mut prev = 0;
        for e in &a {
            assert!(e.keypoint.blob_id as usize >= prev);
            prev = e.keypoint.blob_id as usize;
        }
    }

    #[test]
    fn patches_are_retained_on_request() {
        let floor = generate_floor(&FloorSpec {
            width_m: 0.4,
            height_m: 0.4,
            ..FloorSpec::default()
        })
        .unwrap();
        let cam = CameraModel::default();
        let segmenter = PaletteSegmenter::default();
        let pipeline = FramePipeline {
            segmenter: &segmenter,
            detector: DetectorParams::default(),
            camera: cam,
        };
        let frame = render_view(&floor, &cam, Pose2D::new(0.2, 0.2, 0.0), 0.0, 5);
        let extracted = pipeline.extract(&frame, true).unwrap();
        assert!(extracted.iter().all(|e| e.patch.is_some()));
    }
}
