//! Planar rigid-body math: poses, rigid transforms, least-squares
//! registration and RANSAC.
//!
//! Everything here is purely functional over immutable inputs. The RANSAC
//! routine threads an explicit seed so that identical inputs replay
//! bit-identically.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GeometryError {
    #[error("point lists differ in length ({src} vs {dst})")]
    LengthMismatch { src: usize, dst: usize },
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
    #[error("too few correspondences: got {got}, need at least {need}")]
    TooFewMatches { got: usize, need: usize },
    #[error("no consensus: best hypothesis had {best} inliers, need {need}")]
    NoConsensus { best: usize, need: usize },
    #[error("invalid RANSAC parameters: {0}")]
    BadParams(&'static str),
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Planar pose: position in meters, heading in radians, counterclockwise,
/// normalized to `(-pi, pi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2D {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Pose2D {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    /// Maps a point from the pose's local frame into the world frame:
    /// `R(theta) * p + position`.
    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (
            c * p.0 - s * p.1 + self.x,
            s * p.0 + c * p.1 + self.y,
        )
    }

    /// Maps a world point into the pose's local frame.
    pub fn apply_inverse(&self, p: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let dx = p.0 - self.x;
        let dy = p.1 - self.y;
        (c * dx + s * dy, -s * dx + c * dy)
    }
}

/// Position and absolute heading difference between two poses.
///
/// The distance is the Euclidean norm of the position difference; the angle
/// is the wrapped heading difference in `[0, pi]`.
pub fn pose_delta(a: &Pose2D, b: &Pose2D) -> (f64, f64) {
    let dist = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
    let angle = wrap_angle(a.theta - b.theta).abs();
    (dist, angle)
}

/// Rigid (rotation + translation, no scale or reflection) planar transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform2D {
    pub rotation: f64,
    pub translation: (f64, f64),
}

impl RigidTransform2D {
    pub fn identity() -> Self {
        RigidTransform2D {
            rotation: 0.0,
            translation: (0.0, 0.0),
        }
    }

    /// Applies `R(rotation) * p + translation`.
    pub fn transform_point(&self, p: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        (
            c * p.0 - s * p.1 + self.translation.0,
            s * p.0 + c * p.1 + self.translation.1,
        )
    }

    pub fn inverse(&self) -> RigidTransform2D {
        let (s, c) = self.rotation.sin_cos();
        let tx = -(c * self.translation.0 + s * self.translation.1);
        let ty = -(-s * self.translation.0 + c * self.translation.1);
        RigidTransform2D {
            rotation: -self.rotation,
            translation: (tx, ty),
        }
    }
}

/// RANSAC configuration for [`ransac_rigid`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacParams {
    pub min_samples: usize,
    /// Inlier residual threshold in meters.
    pub residual_threshold: f64,
    pub max_trials: usize,
    pub rng_seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams {
            min_samples: 3,
            residual_threshold: 0.002,
            max_trials: 100,
            rng_seed: 0,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.min_samples < 3 {
            return Err(GeometryError::BadParams("min_samples must be >= 3"));
        }
        if !(self.residual_threshold > 0.0) {
            return Err(GeometryError::BadParams(
                "residual_threshold must be positive",
            ));
        }
        if self.max_trials < 1 {
            return Err(GeometryError::BadParams("max_trials must be >= 1"));
        }
        Ok(())
    }
}

/// Least-squares rigid transform mapping `src` onto `dst` (planar Kabsch).
///
/// Minimizes the sum of squared distances over rotations and translations
/// only; reflections are never produced. Fails on fewer than two pairs or
/// when all source points coincide.
pub fn estimate_rigid_2d(
    src: &[(f64, f64)],
    dst: &[(f64, f64)],
) -> Result<RigidTransform2D, GeometryError> {
    if src.len() != dst.len() {
        return Err(GeometryError::LengthMismatch {
            src: src.len(),
            dst: dst.len(),
        });
    }
    if src.len() < 2 {
        return Err(GeometryError::Degenerate("need at least two points"));
    }

    let n = src.len() as f64;
    let (mut scx, mut scy, mut dcx, mut dcy) = (0.0, 0.0, 0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        scx += s.0;
        scy += s.1;
        dcx += d.0;
        dcy += d.1;
    }
    scx /= n;
    scy /= n;
    dcx /= n;
    dcy /= n;

    // Aggregate the 2D dot/cross terms of the centered point pairs; the
    // optimal rotation is atan2(cross, dot), which has determinant +1 by
    // construction.
    let (mut dot, mut cross, mut spread) = (0.0, 0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        let sx = s.0 - scx;
        let sy = s.1 - scy;
        let dx = d.0 - dcx;
        let dy = d.1 - dcy;
        dot += sx * dx + sy * dy;
        cross += sx * dy - sy * dx;
        spread += sx * sx + sy * sy;
    }
    if spread < 1e-20 {
        return Err(GeometryError::Degenerate("all source points coincide"));
    }

    let rotation = cross.atan2(dot);
    let (s, c) = rotation.sin_cos();
    let translation = (dcx - (c * scx - s * scy), dcy - (s * scx + c * scy));
    Ok(RigidTransform2D {
        rotation,
        translation,
    })
}

/// Result of a successful [`ransac_rigid`] run.
#[derive(Clone, Debug)]
pub struct RansacResult {
    pub transform: RigidTransform2D,
    /// Per-correspondence inlier flags under the refit transform.
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
    pub mean_inlier_residual: f64,
}

/// Robust rigid registration of correspondence pairs.
///
/// Samples `min_samples` correspondences per trial (seeded, without
/// replacement), fits with [`estimate_rigid_2d`], and scores hypotheses by
/// inlier count with mean inlier residual as the tie-break. The best
/// hypothesis is refit over all of its inliers and the inlier set is
/// re-evaluated under the refit transform, so every reported inlier residual
/// is below the threshold.
pub fn ransac_rigid(
    src: &[(f64, f64)],
    dst: &[(f64, f64)],
    params: &RansacParams,
) -> Result<RansacResult, GeometryError> {
    params.validate()?;
    if src.len() != dst.len() {
        return Err(GeometryError::LengthMismatch {
            src: src.len(),
            dst: dst.len(),
        });
    }
    let n = src.len();
    if n < params.min_samples {
        return Err(GeometryError::TooFewMatches {
            got: n,
            need: params.min_samples,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut best: Option<(usize, f64, RigidTransform2D)> = None;

    for _ in 0..params.max_trials {
        let sample = rand::seq::index::sample(&mut rng, n, params.min_samples);
        let s: Vec<(f64, f64)> = sample.iter().map(|i| src[i]).collect();
        let d: Vec<(f64, f64)> = sample.iter().map(|i| dst[i]).collect();
        let Ok(hyp) = estimate_rigid_2d(&s, &d) else {
            continue;
        };
        let (count, mean) = score(&hyp, src, dst, params.residual_threshold);
        let better = match &best {
            None => true,
            Some((bc, bm, _)) => count > *bc || (count == *bc && mean < *bm),
        };
        if better {
            best = Some((count, mean, hyp));
        }
    }

    let Some((best_count, _, hyp)) = best else {
        return Err(GeometryError::NoConsensus {
            best: 0,
            need: params.min_samples,
        });
    };
    if best_count < params.min_samples {
        return Err(GeometryError::NoConsensus {
            best: best_count,
            need: params.min_samples,
        });
    }

    // Refit over all inliers of the winning hypothesis, then re-evaluate the
    // inlier set under the refit so the returned mask matches the returned
    // transform.
    let mask = inlier_mask(&hyp, src, dst, params.residual_threshold);
    let s: Vec<(f64, f64)> = mask_select(src, &mask);
    let d: Vec<(f64, f64)> = mask_select(dst, &mask);
    let refit = estimate_rigid_2d(&s, &d).unwrap_or(hyp);
    let inliers = inlier_mask(&refit, src, dst, params.residual_threshold);
    let (inlier_count, mean_inlier_residual) = score(&refit, src, dst, params.residual_threshold);
    if inlier_count < params.min_samples {
        return Err(GeometryError::NoConsensus {
            best: inlier_count,
            need: params.min_samples,
        });
    }
    Ok(RansacResult {
        transform: refit,
        inliers,
        inlier_count,
        mean_inlier_residual,
    })
}

fn residual(t: &RigidTransform2D, s: (f64, f64), d: (f64, f64)) -> f64 {
    let p = t.transform_point(s);
    ((p.0 - d.0).powi(2) + (p.1 - d.1).powi(2)).sqrt()
}

fn score(
    t: &RigidTransform2D,
    src: &[(f64, f64)],
    dst: &[(f64, f64)],
    threshold: f64,
) -> (usize, f64) {
    let mut count = 0usize;
    let mut sum = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let r = residual(t, *s, *d);
        if r < threshold {
            count += 1;
            sum += r;
        }
    }
    let mean = if count > 0 {
        sum / count as f64
    } else {
        f64::INFINITY
    };
    (count, mean)
}

fn inlier_mask(
    t: &RigidTransform2D,
    src: &[(f64, f64)],
    dst: &[(f64, f64)],
    threshold: f64,
) -> Vec<bool> {
    src.iter()
        .zip(dst)
        .map(|(s, d)| residual(t, *s, *d) < threshold)
        .collect()
}

fn mask_select(points: &[(f64, f64)], mask: &[bool]) -> Vec<(f64, f64)> {
    points
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(p, _)| *p)
        .collect()
}
