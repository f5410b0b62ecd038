//! TOML pipeline configuration. Relative paths resolve against the config
//! file's directory.

use std::path::{Path, PathBuf};

use hand2robot::augment::{AugmentMode, ColorGranularity};
use hand2robot::kinematics::IkOptions;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root of every random stream. Must fit in 63 bits.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_log_level")]
    pub log_level: String,
    pub paths: Paths,
    #[serde(default)]
    pub retarget: RetargetSection,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub mix: MixSection,
}

fn default_log_level() -> String {
    "info".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Hand-eye calibration file.
    pub calibration: PathBuf,
    /// Camera intrinsics file.
    pub intrinsics: PathBuf,
    /// Dataset root; reports and schedules are written here too.
    pub output: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<PathBuf>,
    /// Kinematic chain file; the bundled arm when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub robot_logs: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tracks: Vec<TrackInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackInput {
    pub path: PathBuf,
    /// Directory of `NNNNNN.png` camera frames, one per track record.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<PathBuf>,
    /// Episode id; the file stem when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
}

impl TrackInput {
    pub fn episode_id(&self) -> String {
        self.id.clone().unwrap_or_else(|| {
            self.path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetargetSection {
    /// Low/high percentiles of fingertip distance used as `d_min`/`d_max`.
    pub gripper_percentiles: [f64; 2],
    /// `[d_min, d_max]` used when the percentiles collapse.
    pub fallback_gripper: [f64; 2],
    /// Resampling rate; the track's own rate when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_fps: Option<f64>,
    pub flicker_threshold: f64,
    pub flicker_window: usize,
    pub max_gap: usize,
    pub min_valid_fraction: f64,
    /// Odd smoothing windows; 1 disables smoothing.
    pub position_window: usize,
    pub orientation_window: usize,
    /// Smallest acceptable reachable fraction per episode.
    pub reachable_floor: f64,
    pub ik: IkOptions,
}

impl Default for RetargetSection {
    fn default() -> Self {
        Self {
            gripper_percentiles: [5.0, 95.0],
            fallback_gripper: [0.02, 0.10],
            target_fps: None,
            flicker_threshold: 0.05,
            flicker_window: 5,
            max_gap: 5,
            min_valid_fraction: 0.8,
            position_window: 1,
            orientation_window: 1,
            reachable_floor: 0.95,
            ik: IkOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub modes: Vec<AugmentMode>,
    /// Derived from the global seed per track when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub color_seed: Option<u64>,
    pub hue: [f64; 2],
    pub saturation: [f64; 2],
    pub value: [f64; 2],
    pub per: ColorGranularity,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let d = hand2robot::augment::AugmentConfig::default();
        Self {
            modes: vec![AugmentMode::Full],
            color_seed: None,
            hue: d.hue,
            saturation: d.saturation,
            value: d.value,
            per: d.per,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub horizon: usize,
    /// Task text for tracks that do not set their own.
    pub task_text: String,
    /// `[height, width]` of the zero-padded wrist view of human episodes;
    /// the camera resolution when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wrist_resolution: Option<[u32; 2]>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            horizon: hand2robot::dataset::DEFAULT_HORIZON,
            task_text: String::new(),
            wrist_resolution: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixSection {
    pub batch_size: usize,
    /// `clamp(Nh / (Nh + Nr), 0.5, 0.9)` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub human_fraction: Option<f64>,
    /// One pass over the human samples when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batches: Option<usize>,
    pub human_with_replacement: bool,
    pub robot_with_replacement: bool,
}

impl Default for MixSection {
    fn default() -> Self {
        Self {
            batch_size: 32,
            human_fraction: None,
            batches: None,
            human_with_replacement: false,
            robot_with_replacement: true,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check_values()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Range checks that need no file access.
    pub fn check_values(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let r = &self.retarget;
        let [lo, hi] = r.gripper_percentiles;
        if !(0.0 <= lo && lo < hi && hi <= 100.0) {
            return bad(format!("gripper_percentiles {lo}/{hi} must satisfy 0 <= low < high <= 100"));
        }
        let [dmin, dmax] = r.fallback_gripper;
        if !(dmin > 0.0 && dmin < dmax) {
            return bad(format!("fallback_gripper {dmin}/{dmax} must satisfy 0 < d_min < d_max"));
        }
        if let Some(fps) = r.target_fps {
            if !(fps.is_finite() && fps > 0.0) {
                return bad(format!("target_fps {fps} must be positive"));
            }
        }
        if r.flicker_window < 3 || r.flicker_window % 2 == 0 {
            return bad(format!("flicker_window {} must be odd and at least 3", r.flicker_window));
        }
        for w in [r.position_window, r.orientation_window] {
            if w == 0 || w % 2 == 0 {
                return bad(format!("smoothing window {w} must be odd"));
            }
        }
        if !(0.0..=1.0).contains(&r.reachable_floor) || !(0.0..=1.0).contains(&r.min_valid_fraction) {
            return bad("reachable_floor and min_valid_fraction must lie in [0, 1]".into());
        }
        if self.dataset.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.mix.batch_size < 2 {
            return bad("batch_size must be at least 2".into());
        }
        if self.seed > i64::MAX as u64 {
            return bad("seed must fit in 63 bits".into());
        }
        if !matches!(self.log_level.as_str(), "error" | "warn" | "info" | "debug" | "trace" | "off") {
            return bad(format!("unknown log level {:?}", self.log_level));
        }
        let mut ids = std::collections::BTreeSet::new();
        for t in &self.paths.tracks {
            if !ids.insert(t.episode_id()) {
                return bad(format!("duplicate track id {}", t.episode_id()));
            }
        }
        Ok(())
    }
}

/// A config together with the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub base: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let config = PipelineConfig::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn output(&self) -> PathBuf {
        self.resolve(&self.config.paths.output)
    }

    /// Fails with a config error naming the first referenced input that
    /// does not exist.
    pub fn require(&self, paths: &[&Path]) -> Result<(), CliError> {
        for p in paths {
            let full = self.resolve(p);
            if !full.exists() {
                return Err(CliError::Config(format!("missing input {}", full.display())));
            }
        }
        Ok(())
    }
}
