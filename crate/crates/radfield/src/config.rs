//! Run configuration shared by the CLI subcommands.
//!
//! Every section has defaults, so a config file only lists what it changes.
//! Unknown keys are rejected at every level.

use radfield_core::camera::{orbit_trajectory_with_phase, CameraError};
use radfield_core::field::FieldError;
use radfield_core::scene::{MotionTrack, SceneSpec};
use radfield_core::train::TrainConfig;
use radfield_core::{level_resolutions, Aabb, CameraPose, Intrinsics, MultiresField, Vec3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// Multiresolution grid layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldSpec {
    pub n_min: usize,
    pub n_max: usize,
    pub levels: usize,
    pub log2_table_size: u32,
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec { n_min: 8, n_max: 32, levels: 4, log2_table_size: 16 }
    }
}

impl FieldSpec {
    /// Randomly initialized field over `bounds`.
    pub fn build(&self, bounds: Aabb, seed: u64) -> Result<MultiresField, FieldError> {
        if self.log2_table_size > 28 {
            return Err(FieldError::TableSize(usize::MAX));
        }
        MultiresField::random(level_resolutions(self.n_min, self.n_max, self.levels)?, 1 << self.log2_table_size, bounds, seed)
    }
}

/// Cameras on a horizontal circle looking at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrbitSpec {
    pub radius: f64,
    /// Camera height above the orbit center.
    pub height: f64,
    pub frames: usize,
    /// Azimuth offset of frame 0 in radians.
    pub phase: f64,
    pub fov_x: f64,
    /// Image `[width, height]` in pixels.
    pub resolution: [usize; 2],
}

impl Default for OrbitSpec {
    fn default() -> Self {
        OrbitSpec { radius: 2.6, height: 1.4, frames: 20, phase: 0.0, fov_x: 0.9, resolution: [96, 96] }
    }
}

impl OrbitSpec {
    pub fn width(&self) -> usize {
        self.resolution[0]
    }

    pub fn image_height(&self) -> usize {
        self.resolution[1]
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_fov_x(self.width(), self.image_height(), self.fov_x)
    }

    pub fn poses(&self) -> Result<Vec<CameraPose>, CameraError> {
        orbit_trajectory_with_phase(Vec3::ZERO, self.radius, self.height, self.frames, self.phase, self.intrinsics())
    }

    fn validate(&self, name: &str) -> Result<(), ConfigError> {
        if !(self.radius > 0.0) || self.frames == 0 || self.resolution.contains(&0) {
            return Err(invalid(format!("{name}: radius, frames and resolution must be positive")));
        }
        if !(self.fov_x > 0.0 && self.fov_x < std::f64::consts::PI) {
            return Err(invalid(format!("{name}: fov_x must lie in (0, pi)")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressionSpec {
    /// Capture trajectory; frames are rendered from the oracle at its resolution.
    pub trajectory: OrbitSpec,
    /// Target `[width, height]` list; both frames and references are area-downsampled.
    pub resolutions: Vec<[usize; 2]>,
    pub q: u8,
    /// Samples per ray of the field reference render.
    pub reference_samples: usize,
}

impl Default for CompressionSpec {
    fn default() -> Self {
        CompressionSpec {
            trajectory: OrbitSpec { frames: 36, phase: 0.05, resolution: [320, 180], ..OrbitSpec::default() },
            resolutions: vec![[96, 54], [160, 90], [320, 180]],
            q: 4,
            reference_samples: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicSpec {
    pub track: MotionTrack,
    /// Capture times of the training views; must include 0.
    pub times: Vec<f64>,
    /// Deformation grid cells per axis.
    pub deformation_resolution: usize,
    /// Time keys of the deformation grid.
    pub keys: usize,
    /// Leading iterations on t = 0 views only.
    pub warmup_iterations: usize,
}

impl Default for DynamicSpec {
    fn default() -> Self {
        DynamicSpec {
            track: MotionTrack::arm_swing(0.6),
            times: vec![0.0, 0.5, 1.0],
            deformation_resolution: 16,
            keys: 3,
            warmup_iterations: 300,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisparitySpec {
    pub tau: f64,
    pub kernel: usize,
    pub iterations: usize,
}

impl Default for DisparitySpec {
    fn default() -> Self {
        use radfield_core::depthnav::{DEFAULT_ITERATIONS, DEFAULT_KERNEL, DEFAULT_TAU};
        DisparitySpec { tau: DEFAULT_TAU, kernel: DEFAULT_KERNEL, iterations: DEFAULT_ITERATIONS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneSpec,
    pub field: FieldSpec,
    /// `train.seed` drives ray sampling; the field is initialized with `train.seed + 1`.
    pub train: TrainConfig,
    /// Training views.
    pub views: OrbitSpec,
    /// Evaluation views.
    pub holdout: OrbitSpec,
    /// Train on random backgrounds using the views' opacity.
    pub alpha: bool,
    /// Samples per ray of every ground-truth render.
    pub oracle_samples: usize,
    pub compression: CompressionSpec,
    pub dynamic: Option<DynamicSpec>,
    pub disparity: DisparitySpec,
}

impl Default for RunConfig {
    /// Static reconstruction of the standard scene.
    fn default() -> Self {
        RunConfig {
            scene: SceneSpec::standard(32),
            field: FieldSpec::default(),
            train: TrainConfig { iterations: 1000, ..TrainConfig::default() },
            views: OrbitSpec::default(),
            holdout: OrbitSpec { frames: 5, phase: 0.37, ..OrbitSpec::default() },
            alpha: false,
            oracle_samples: 128,
            compression: CompressionSpec::default(),
            dynamic: None,
            disparity: DisparitySpec::default(),
        }
    }
}

impl RunConfig {
    /// Textured standard scene, field trained at the capture framing.
    pub fn compression_preset() -> Self {
        let mut scene = SceneSpec::standard(32);
        scene.texture_amplitude = 0.6;
        scene.texture_cell = 0.01;
        let compression = CompressionSpec::default();
        RunConfig {
            scene,
            train: TrainConfig { iterations: 3000, ..TrainConfig::default() },
            views: OrbitSpec { resolution: compression.trajectory.resolution, ..OrbitSpec::default() },
            compression,
            ..RunConfig::default()
        }
    }

    /// Arm scene with a swinging arm, trained on opacity-aware views.
    pub fn dynamic_preset() -> Self {
        RunConfig {
            scene: SceneSpec::arm(32),
            train: TrainConfig { iterations: 1500, ..TrainConfig::default() },
            views: OrbitSpec { frames: 24, ..OrbitSpec::default() },
            holdout: OrbitSpec { frames: 6, phase: 0.13, ..OrbitSpec::default() },
            alpha: true,
            dynamic: Some(DynamicSpec::default()),
            ..RunConfig::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self
    }

    pub fn field_seed(&self) -> u64 {
        self.train.seed.wrapping_add(1)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate().map_err(|e| invalid(e.to_string()))?;
        self.scene.bounds().map_err(|e| invalid(format!("scene: {e}")))?;
        level_resolutions(self.field.n_min, self.field.n_max, self.field.levels).map_err(|e| invalid(format!("field: {e}")))?;
        if !(4..=28).contains(&self.field.log2_table_size) {
            return Err(invalid("field: log2_table_size must lie in [4, 28]"));
        }
        self.views.validate("views")?;
        self.holdout.validate("holdout")?;
        self.compression.trajectory.validate("compression.trajectory")?;
        if self.oracle_samples < 2 || self.compression.reference_samples < 2 {
            return Err(invalid("sample counts must be at least 2"));
        }
        let c = &self.compression;
        if c.q == 0 || c.resolutions.is_empty() || c.resolutions.iter().any(|r| r.contains(&0)) {
            return Err(invalid("compression: q must be >= 1 and resolutions non-empty and positive"));
        }
        if let Some(d) = &self.dynamic {
            d.track.validate().map_err(|e| invalid(format!("dynamic: {e}")))?;
            if !d.times.contains(&0.0) || d.times.iter().any(|t| !(0.0..=1.0).contains(t)) {
                return Err(invalid("dynamic: times must lie in [0, 1] and include 0"));
            }
            if d.deformation_resolution == 0 || d.keys < 2 {
                return Err(invalid("dynamic: deformation_resolution >= 1 and keys >= 2 required"));
            }
        }
        let p = &self.disparity;
        if !(p.tau > 0.0 && p.tau < 1.0) || p.kernel < 3 || p.kernel % 2 == 0 || p.iterations == 0 {
            return Err(invalid("disparity: tau in (0, 1), odd kernel >= 3, iterations >= 1"));
        }
        Ok(())
    }
}
