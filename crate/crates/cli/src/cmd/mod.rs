//! One module per subcommand, plus loaders shared between them.

pub mod augment;
pub mod demo;
pub mod inspect;
pub mod mix;
pub mod retarget;
pub mod validate;

use std::path::Path;

use hand2robot::augment::{load_png, Image, MeshTopology};
use hand2robot::calibration::{load_calibration, load_camera, CameraModel, HandEyeCalibration};
use hand2robot::dataset::{frame_file, write_atomic};
use hand2robot::kinematics::{load_chain, KinematicChain};

use crate::config::LoadedConfig;
use crate::CliError;

pub(crate) fn camera(cfg: &LoadedConfig) -> Result<CameraModel, CliError> {
    let p = cfg.resolve(&cfg.config.paths.intrinsics);
    load_camera(&p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
}

pub(crate) fn calibration(cfg: &LoadedConfig) -> Result<HandEyeCalibration, CliError> {
    let p = cfg.resolve(&cfg.config.paths.calibration);
    load_calibration(&p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
}

pub(crate) fn chain(cfg: &LoadedConfig) -> Result<KinematicChain, CliError> {
    match &cfg.config.paths.chain {
        Some(rel) => {
            let p = cfg.resolve(rel);
            load_chain(&p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
        }
        None => Ok(KinematicChain::so100_plus()),
    }
}

pub(crate) fn topology(cfg: &LoadedConfig) -> Result<Option<MeshTopology>, CliError> {
    let Some(rel) = &cfg.config.paths.topology else { return Ok(None) };
    let p = cfg.resolve(rel);
    hand2robot::augment::load_topology(&p)
        .map(Some)
        .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
}

/// Loads the `NNNNNN.png` frames in `range` from `dir`.
pub(crate) fn load_frames(dir: &Path, range: std::ops::Range<usize>) -> Result<Vec<Image>, CliError> {
    range
        .map(|i| {
            let p = dir.join(frame_file(i));
            load_png(&p).map_err(|e| CliError::Input(e.to_string()))
        })
        .collect()
}

/// Number of consecutive `NNNNNN.png` frames in `dir`, starting at 0.
pub(crate) fn count_frames(dir: &Path) -> usize {
    (0..).take_while(|&i| dir.join(frame_file(i)).is_file()).count()
}

pub(crate) fn write_report(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes).map_err(|e| CliError::Input(e.to_string()))
}
