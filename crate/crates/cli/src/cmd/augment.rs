//! Paints the hand in each track's camera frames, one output directory per
//! mode next to the originals (`<frames>_full`, `<frames>_partial`, ...).

use std::fs;
use std::path::{Path, PathBuf};

use hand2robot::augment::{
    augment_episode, rasterize_mesh, save_png, AugmentConfig, AugmentError, AugmentMode, AugmentStats, PartFilter,
};
use hand2robot::dataset::frame_file;
use hand2robot::hand::{parse_hand_track, HandFrame};
use hand2robot::rng::derive_seed;
use serde::{Deserialize, Serialize};

use super::{camera, count_frames, load_frames, topology, write_report};
use crate::config::LoadedConfig;
use crate::{CliError, RunOptions};

pub const REPORT_FILE: &str = "augment_report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: AugmentMode,
    pub output: String,
    pub color_seed: u64,
    pub stats: AugmentStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackAugmentReport {
    pub episode_id: String,
    pub frames: usize,
    pub modes: Vec<ModeReport>,
    /// Frames whose Partial coverage lies inside Full coverage; present
    /// when both modes ran.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partial_within_full: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentReport {
    pub passed: bool,
    pub tracks: Vec<TrackAugmentReport>,
}

impl AugmentReport {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            crate::EXIT_OK
        } else {
            crate::EXIT_VALIDATION
        }
    }
}

/// `<frames>_<suffix>` next to `frames`.
pub fn mode_dir(frames: &Path, mode: AugmentMode) -> PathBuf {
    let name = frames
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "frames".into());
    frames.with_file_name(format!("{name}_{}", mode.suffix()))
}

pub fn cmd_augment(cfg: &LoadedConfig, run: &RunOptions) -> Result<AugmentReport, CliError> {
    let c = &cfg.config;
    let mut required: Vec<&Path> = vec![&c.paths.intrinsics];
    if let Some(t) = &c.paths.topology {
        required.push(t);
    }
    for t in &c.paths.tracks {
        required.push(&t.path);
        if let Some(f) = &t.frames {
            required.push(f);
        }
    }
    cfg.require(&required)?;
    if c.augment.modes.is_empty() {
        return Err(CliError::Config("augment.modes is empty".into()));
    }
    let needs_mesh = c.augment.modes.iter().any(|m| *m != AugmentMode::None);
    let topo = topology(cfg)?;
    if needs_mesh && topo.is_none() {
        return Err(CliError::Config(format!("paths.topology: {}", AugmentError::MissingTopology)));
    }
    let cam = camera(cfg)?;

    let mut tracks = Vec::new();
    let mut passed = true;
    for (k, input) in c.paths.tracks.iter().enumerate() {
        let Some(frames_rel) = &input.frames else {
            log::warn!("{}: no frames directory, skipped", input.episode_id());
            continue;
        };
        let path = cfg.resolve(&input.path);
        let dir = cfg.resolve(frames_rel);
        let track = parse_hand_track(&path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let n = count_frames(&dir);
        if n != track.len() {
            return Err(CliError::Input(format!(
                "{}: {n} frames for a {}-record track",
                dir.display(),
                track.len()
            )));
        }
        let images = load_frames(&dir, 0..n)?;
        // Render in the real camera frame, not the mirrored one.
        let hand: Vec<HandFrame> = track
            .frames()
            .iter()
            .map(|f| {
                let mut f = f.clone();
                if track.mirrored {
                    f.mirror_x();
                }
                f
            })
            .collect();
        let color_seed = c
            .augment
            .color_seed
            .unwrap_or_else(|| derive_seed(c.seed, "augment-color", k as u64));

        let mut modes = Vec::new();
        for &mode in &c.augment.modes {
            let acfg = AugmentConfig {
                mode,
                color_seed,
                hue: c.augment.hue,
                saturation: c.augment.saturation,
                value: c.augment.value,
                per: c.augment.per,
            };
            let (out, stats) = augment_episode(run.exec, &images, &hand, &cam, topo.as_ref(), &acfg)
                .map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
            let out_dir = mode_dir(&dir, mode);
            if !run.dry_run {
                write_frames(&out_dir, &dir, mode, &out)?;
            }
            modes.push(ModeReport {
                mode,
                output: mode_dir(frames_rel, mode).display().to_string(),
                color_seed,
                stats,
            });
        }

        let has = |m| c.augment.modes.contains(&m);
        let partial_within_full = match (&topo, has(AugmentMode::Full) && has(AugmentMode::Partial)) {
            (Some(topo), true) => {
                let ok = subset_frames(&cam, topo, &hand)?;
                if ok != hand.len() {
                    passed = false;
                }
                Some(ok)
            }
            _ => None,
        };
        tracks.push(TrackAugmentReport {
            episode_id: input.episode_id(),
            frames: n,
            modes,
            partial_within_full,
        });
    }

    let report = AugmentReport { passed, tracks };
    if !run.dry_run {
        let out = cfg.output();
        fs::create_dir_all(&out).map_err(|e| CliError::Input(format!("{}: {e}", out.display())))?;
        write_report(&out.join(REPORT_FILE), &report)?;
    }
    Ok(report)
}

/// Mode None copies the source files byte for byte.
fn write_frames(
    out_dir: &Path,
    src_dir: &Path,
    mode: AugmentMode,
    frames: &[hand2robot::augment::Image],
) -> Result<(), CliError> {
    let io = |p: &Path, e: std::io::Error| CliError::Input(format!("{}: {e}", p.display()));
    fs::create_dir_all(out_dir).map_err(|e| io(out_dir, e))?;
    for (i, img) in frames.iter().enumerate() {
        let dst = out_dir.join(frame_file(i));
        if mode == AugmentMode::None {
            let src = src_dir.join(frame_file(i));
            fs::copy(&src, &dst).map_err(|e| io(&src, e))?;
        } else {
            save_png(img, &dst).map_err(|e| CliError::Input(e.to_string()))?;
        }
    }
    Ok(())
}

fn subset_frames(
    cam: &hand2robot::calibration::CameraModel,
    topo: &hand2robot::augment::MeshTopology,
    hand: &[HandFrame],
) -> Result<usize, CliError> {
    let mut ok = 0;
    for f in hand {
        let Some(v) = f.vertices.as_deref() else {
            ok += 1;
            continue;
        };
        let render = |filter: &PartFilter| match rasterize_mesh(cam, v, topo, filter) {
            Ok(c) => Ok(Some(c)),
            Err(AugmentError::EmptyMesh) => Ok(None),
            Err(e) => Err(CliError::Input(e.to_string())),
        };
        let full = render(&PartFilter::all())?;
        let partial = render(&PartFilter::thumb_and_index())?;
        let inside = match (&partial, &full) {
            (None, _) => true,
            (Some(p), Some(f)) => p.is_subset_of(f),
            (Some(p), None) => p.covered_count() == 0,
        };
        if inside {
            ok += 1;
        }
    }
    Ok(ok)
}
