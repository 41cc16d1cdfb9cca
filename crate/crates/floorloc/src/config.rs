//! Experiment configuration: a flat `key = value` text format mirroring the
//! parameter structs.
//!
//! Lines are `key = value`; blank lines and `#` comments are ignored.
//! Unknown keys are errors, so typos fail loudly instead of silently
//! running with defaults. `color_weights` takes four comma-separated
//! numbers; `knn.mode` takes `exact` or `approx`. Angles are degrees in the
//! file and radians in memory.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::detector::DetectorParams;
use crate::floorsim::FloorSpec;
use crate::harness::SuccessGates;
use crate::localizer::LocalizationParams;
use crate::mapdb::QueryMode;
use crate::mapper::{ClusterParams, OutlierFilterParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: expected `key = value`, got {text:?}")]
    BadLine { line: usize, text: String },
    #[error("line {line}: invalid value for {key:?}: {value:?}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
}

/// Mapping-pass settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MappingConfig {
    /// Tile side length, meters; the floor is covered by a grid of such
    /// tiles, one mapping run each.
    pub tile: f64,
    /// Lane spacing, meters.
    pub spacing: f64,
    /// Robot speed, m/s.
    pub speed: f64,
    /// Capture rate, Hz.
    pub rate: f64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        MappingConfig {
            tile: 2.0,
            spacing: 0.01,
            speed: 0.2,
            rate: 60.0,
        }
    }
}

/// Evaluation-run settings.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// Evaluated areas in square meters; one run per area.
    pub areas: Vec<f64>,
    /// Frames per evaluation run.
    pub frames: usize,
    /// Robot speed, m/s.
    pub speed: f64,
    /// Capture rate, Hz.
    pub rate: f64,
    /// Ground-truth position noise, meters per axis.
    pub pose_noise_sigma: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            areas: vec![4.0],
            frames: 500,
            speed: 0.3,
            rate: 60.0,
            pose_noise_sigma: 0.0005,
        }
    }
}

/// Full experiment configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Top-level seed; every stage derives its own stream from it.
    pub seed: u64,
    pub floor: FloorSpec,
    /// Pixel noise sigma (8-bit counts) applied by the renderer.
    pub render_noise_sigma: f64,
    pub mapping: MappingConfig,
    pub eval: EvalConfig,
    pub detector: DetectorParams,
    /// Reference segmenter color cut.
    pub segment_max_distance: f64,
    pub outlier: OutlierFilterParams,
    pub cluster: ClusterParams,
    pub localization: LocalizationParams,
    pub gates: SuccessGates,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            floor: FloorSpec::default(),
            render_noise_sigma: 3.0,
            mapping: MappingConfig::default(),
            eval: EvalConfig::default(),
            detector: DetectorParams::default(),
            segment_max_distance: 90.0,
            outlier: OutlierFilterParams::default(),
            cluster: ClusterParams::default(),
            localization: LocalizationParams::default(),
            gates: SuccessGates::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<ExperimentConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        ExperimentConfig::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let mut config = ExperimentConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = raw.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            let Some((key, value)) = stripped.split_once('=') else {
                return Err(ConfigError::BadLine {
                    line,
                    text: raw.to_string(),
                });
            };
            let key = key.trim();
            let value = value.trim();
            config.apply(line, key, value)?;
        }
        Ok(config)
    }

    fn apply(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |key: &str, value: &str| ConfigError::BadValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
        };
        macro_rules! num {
            ($ty:ty) => {
                value.parse::<$ty>().map_err(|_| bad(key, value))?
            };
        }
        match key {
            "seed" => {
                self.seed = num!(u64);
                // The floor seed follows the global seed unless set
                // explicitly later in the file.
                self.floor.rng_seed = self.seed;
            }
            "floor.width" => self.floor.width_m = num!(f64),
            "floor.height" => self.floor.height_m = num!(f64),
            "floor.blob_density" => self.floor.blob_density_per_cm2 = num!(f64),
            "floor.blob_radius_min" => self.floor.blob_radius_range_mm.0 = num!(f64),
            "floor.blob_radius_max" => self.floor.blob_radius_range_mm.1 = num!(f64),
            "floor.color_weights" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 4 {
                    return Err(bad(key, value));
                }
                for (slot, part) in self.floor.color_weights.iter_mut().zip(parts) {
                    *slot = part.parse().map_err(|_| bad(key, value))?;
                }
            }
            "floor.seed" => self.floor.rng_seed = num!(u64),
            "render.noise_sigma" => self.render_noise_sigma = num!(f64),
            "mapping.tile" => self.mapping.tile = num!(f64),
            "mapping.spacing" => self.mapping.spacing = num!(f64),
            "mapping.speed" => self.mapping.speed = num!(f64),
            "mapping.rate" => self.mapping.rate = num!(f64),
            "eval.areas" => {
                let parts: Result<Vec<f64>, _> =
                    value.split(',').map(|p| p.trim().parse::<f64>()).collect();
                self.eval.areas = parts.map_err(|_| bad(key, value))?;
                if self.eval.areas.is_empty() {
                    return Err(bad(key, value));
                }
            }
            "eval.frames" => self.eval.frames = num!(usize),
            "eval.speed" => self.eval.speed = num!(f64),
            "eval.rate" => self.eval.rate = num!(f64),
            "eval.pose_noise_sigma" => self.eval.pose_noise_sigma = num!(f64),
            "detector.border_margin" => self.detector.border_margin = num!(u32),
            "detector.min_blob_area" => self.detector.min_blob_area = num!(usize),
            "detector.support_radius" => self.detector.support_radius = num!(u32),
            "detector.min_support_pixels" => self.detector.min_support_pixels = num!(usize),
            "segment.max_distance" => self.segment_max_distance = num!(f64),
            "outlier.window_size" => self.outlier.window_size = num!(usize),
            "outlier.alpha" => self.outlier.alpha = num!(f64),
            "outlier.sigma_floor" => self.outlier.sigma_floor_m = num!(f64),
            "cluster.position_radius" => self.cluster.position_radius = num!(f64),
            "cluster.cosine_threshold" => self.cluster.cosine_threshold = num!(f64),
            "cluster.min_members" => self.cluster.min_members = num!(usize),
            "localize.k" => self.localization.k = num!(usize),
            "localize.mode_radius" => self.localization.mode_radius = num!(f64),
            "localize.min_filtered_matches" => {
                self.localization.min_filtered_matches = num!(usize)
            }
            "ransac.min_samples" => self.localization.ransac.min_samples = num!(usize),
            "ransac.residual_threshold" => {
                self.localization.ransac.residual_threshold = num!(f64)
            }
            "ransac.max_trials" => self.localization.ransac.max_trials = num!(usize),
            "gates.max_position_error" => self.gates.max_position_error_m = num!(f64),
            "gates.max_angle_error_deg" => {
                self.gates.max_angle_error_rad = num!(f64).to_radians()
            }
            "knn.mode" => {
                self.localization.query_mode = match value {
                    "exact" => QueryMode::Exact,
                    "approx" => QueryMode::Approx,
                    _ => return Err(bad(key, value)),
                }
            }
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }
}
