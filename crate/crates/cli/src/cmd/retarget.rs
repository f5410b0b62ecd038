//! parse → flicker rejection → resample → retarget → IK check → chunk → write.

use std::collections::BTreeMap;
use std::path::Path;

use hand2robot::calibration::{CameraModel, HandEyeCalibration};
use hand2robot::dataset::{import_robot_log, write_dataset, Episode, View, TOP_VIEW, WRIST_VIEW};
use hand2robot::hand::{parse_hand_track, reject_flicker, resample_track, FlickerConfig, HandTrack};
use hand2robot::kinematics::{validate_trajectory, KinematicChain, ValidateOptions};
use hand2robot::retarget::{
    calibrate_gripper, retarget_track, smooth_trajectory, GripperCalibration, RetargetError, RetargetOptions,
};
use hand2robot::par;
use serde::{Deserialize, Serialize};

use super::{calibration, camera, chain, count_frames, load_frames, write_report};
use crate::config::{LoadedConfig, TrackInput};
use crate::{CliError, RunOptions};

pub const REPORT_FILE: &str = "retarget_report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GripperUsed {
    pub d_min: f64,
    pub d_max: f64,
    /// `percentiles` or `fallback`.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackReport {
    pub episode_id: String,
    pub source: String,
    pub mirrored: bool,
    pub source_frames: usize,
    pub flicker_removed: usize,
    pub resampled_frames: usize,
    pub orientation_filled: usize,
    pub dropped_frames: usize,
    pub episode_frames: usize,
    pub chunks: usize,
    pub gripper: GripperUsed,
    pub reachable_fraction: f64,
    pub unreachable_frames: Vec<usize>,
    pub max_joint_jump: f64,
    pub top_view: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetargetReport {
    pub reachable_floor: f64,
    pub passed: bool,
    pub tracks: Vec<TrackReport>,
    pub robot_episodes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RetargetOutcome {
    pub report: RetargetReport,
    /// Human episodes first, in config order, then robot episodes.
    pub episodes: Vec<Episode>,
}

impl RetargetOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.report.passed {
            crate::EXIT_OK
        } else {
            crate::EXIT_VALIDATION
        }
    }
}

struct Shared<'a> {
    cfg: &'a LoadedConfig,
    cal: HandEyeCalibration,
    cam: CameraModel,
    chain: KinematicChain,
    wrist: [u32; 2],
}

pub fn cmd_retarget(cfg: &LoadedConfig, run: &RunOptions) -> Result<RetargetOutcome, CliError> {
    let c = &cfg.config;
    let mut required: Vec<&Path> = vec![&c.paths.calibration, &c.paths.intrinsics];
    if let Some(p) = &c.paths.chain {
        required.push(p);
    }
    for t in &c.paths.tracks {
        required.push(&t.path);
        if let Some(f) = &t.frames {
            required.push(f);
        }
    }
    required.extend(c.paths.robot_logs.iter().map(|p| p.as_path()));
    cfg.require(&required)?;
    if c.paths.tracks.is_empty() && c.paths.robot_logs.is_empty() {
        return Err(CliError::Config("no tracks or robot logs configured".into()));
    }

    let cam = camera(cfg)?;
    let shared = Shared {
        cfg,
        cal: calibration(cfg)?,
        chain: chain(cfg)?,
        wrist: c.dataset.wrist_resolution.unwrap_or([cam.height, cam.width]),
        cam,
    };

    let results = par::map(run.exec, &c.paths.tracks, |t| process_track(&shared, t));
    let mut episodes = Vec::new();
    let mut tracks = Vec::new();
    for r in results {
        let (ep, rep) = r?;
        log::info!(
            "{}: {} frames, reachable {:.4}, gripper [{:.4}, {:.4}] ({})",
            rep.episode_id,
            rep.episode_frames,
            rep.reachable_fraction,
            rep.gripper.d_min,
            rep.gripper.d_max,
            rep.gripper.source
        );
        episodes.push(ep);
        tracks.push(rep);
    }

    let expected: BTreeMap<String, [u32; 2]> = [
        (TOP_VIEW.to_string(), [shared.cam.height, shared.cam.width]),
        (WRIST_VIEW.to_string(), shared.wrist),
    ]
    .into_iter()
    .collect();
    let logs: Vec<_> = c.paths.robot_logs.iter().map(|p| cfg.resolve(p)).collect();
    let robot = par::map(run.exec, &logs, |p| {
        import_robot_log(p, c.dataset.horizon, &expected).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
    });
    let mut robot_episodes = Vec::new();
    for r in robot {
        let ep = r?;
        robot_episodes.push(ep.id.clone());
        episodes.push(ep);
    }

    let floor = c.retarget.reachable_floor;
    let passed = tracks.iter().all(|t| t.reachable_fraction >= floor);
    let report = RetargetReport {
        reachable_floor: floor,
        passed,
        tracks,
        robot_episodes,
    };

    let out = cfg.output();
    if run.dry_run {
        log::info!("dry run: {} episodes not written to {}", episodes.len(), out.display());
    } else {
        write_dataset(run.exec, &out, &episodes, c.dataset.horizon)
            .map_err(|e| CliError::Input(format!("writing {}: {e}", out.display())))?;
        write_report(&out.join(REPORT_FILE), &report)?;
    }
    if !passed {
        log::error!("reachable fraction below the floor {floor} for at least one track");
    }
    Ok(RetargetOutcome { report, episodes })
}

fn process_track(s: &Shared, input: &TrackInput) -> Result<(Episode, TrackReport), CliError> {
    let c = &s.cfg.config;
    let r = &c.retarget;
    let path = s.cfg.resolve(&input.path);
    let ctx = |e: &dyn std::fmt::Display| CliError::Input(format!("{}: {e}", path.display()));
    let id = input.episode_id();

    let raw = parse_hand_track(&path).map_err(|e| ctx(&e))?;
    if raw.camera_id != s.cal.camera_id {
        return Err(ctx(&format!(
            "track camera {:?} does not match calibration camera {:?}",
            raw.camera_id, s.cal.camera_id
        )));
    }
    let flicker = FlickerConfig {
        jump_threshold: r.flicker_threshold,
        window: r.flicker_window,
    };
    let (clean, fr) = reject_flicker(&raw, &flicker).map_err(|e| ctx(&e))?;
    let track = match r.target_fps {
        Some(fps) => resample_track(&clean, fps).map_err(|e| ctx(&e))?,
        None => clean,
    };

    let [lo, hi] = r.gripper_percentiles;
    let (gcal, source) = match calibrate_gripper(&track, lo, hi) {
        Ok(g) => (g, "percentiles"),
        Err(RetargetError::DegenerateCalibration { .. }) => {
            let [dmin, dmax] = r.fallback_gripper;
            let g = GripperCalibration::new(dmin, dmax).map_err(|e| CliError::Config(e.to_string()))?;
            (g, "fallback")
        }
        Err(e) => return Err(ctx(&e)),
    };
    let opts = RetargetOptions {
        max_gap: r.max_gap,
        min_valid_fraction: r.min_valid_fraction,
    };
    let (traj, rr) = retarget_track(&track, &gcal, &s.cal.cam_to_base, &opts).map_err(|e| ctx(&e))?;
    let traj = smooth_trajectory(&traj, r.position_window, r.orientation_window).map_err(|e| ctx(&e))?;

    let vopts = ValidateOptions {
        ik: r.ik,
        seed: None,
        keep_joint_trajectory: false,
    };
    let val = validate_trajectory(&s.chain, &traj, &vopts).map_err(|e| ctx(&e))?;

    let times: Vec<f64> = traj.poses().iter().map(|p| p.timestamp).collect();
    let (top, top_kind) = match &input.frames {
        Some(dir) => (View::Frames(source_images(s, &raw, &s.cfg.resolve(dir), &times)?), "frames"),
        None => (
            View::ZeroPadded {
                frames: times.len(),
                height: s.cam.height,
                width: s.cam.width,
            },
            "zero_padded",
        ),
    };
    let wrist = View::ZeroPadded {
        frames: times.len(),
        height: s.wrist[0],
        width: s.wrist[1],
    };
    let views = [(TOP_VIEW.to_string(), top), (WRIST_VIEW.to_string(), wrist)].into_iter().collect();
    let task = input.task.clone().unwrap_or_else(|| c.dataset.task_text.clone());
    let ep = Episode::from_trajectory(&id, task, &traj, c.dataset.horizon, views)
        .map_err(|e| CliError::Config(format!("track {}: {e}", input.path.display())))?;

    let report = TrackReport {
        episode_id: id,
        source: input.path.display().to_string(),
        mirrored: raw.mirrored,
        source_frames: raw.len(),
        flicker_removed: fr.removed_timestamps.len(),
        resampled_frames: track.len(),
        orientation_filled: rr.filled_frames,
        dropped_frames: rr.dropped_timestamps.len(),
        episode_frames: ep.len(),
        chunks: ep.chunk_count(),
        gripper: GripperUsed {
            d_min: gcal.d_min(),
            d_max: gcal.d_max(),
            source: source.into(),
        },
        reachable_fraction: val.reachable_fraction.unwrap_or(0.0),
        unreachable_frames: val.unreachable_indices(),
        max_joint_jump: val.max_joint_jump,
        top_view: top_kind.into(),
    };
    Ok((ep, report))
}

/// For each output timestamp, the source frame with the nearest
/// timestamp (the earlier one on ties).
fn source_images(
    s: &Shared,
    raw: &HandTrack,
    dir: &Path,
    times: &[f64],
) -> Result<Vec<hand2robot::augment::Image>, CliError> {
    let n = count_frames(dir);
    if n != raw.len() {
        return Err(CliError::Input(format!(
            "{}: {n} frames for a {}-record track",
            dir.display(),
            raw.len()
        )));
    }
    let src_t = raw.timestamps();
    let picks: Vec<usize> = times.iter().map(|&t| nearest(&src_t, t)).collect();
    let mut cache: BTreeMap<usize, hand2robot::augment::Image> = BTreeMap::new();
    for &i in &picks {
        if cache.contains_key(&i) {
            continue;
        }
        let img = load_frames(dir, i..i + 1)?.remove(0);
        if (img.width, img.height) != (s.cam.width, s.cam.height) {
            return Err(CliError::Input(format!(
                "{}: frame {i} is {}x{}, camera is {}x{}",
                dir.display(),
                img.width,
                img.height,
                s.cam.width,
                s.cam.height
            )));
        }
        cache.insert(i, img);
    }
    Ok(picks.iter().map(|i| cache[i].clone()).collect())
}

fn nearest(sorted: &[f64], t: f64) -> usize {
    let hi = sorted.partition_point(|&x| x < t);
    if hi == 0 {
        return 0;
    }
    if hi == sorted.len() {
        return sorted.len() - 1;
    }
    if t - sorted[hi - 1] <= sorted[hi] - t {
        hi - 1
    } else {
        hi
    }
}

#[cfg(test)]
mod tests {
    use super::nearest;

    #[test]
    fn nearest_prefers_earlier_on_ties() {
        let t = [0.0, 1.0, 2.0];
        assert_eq!(nearest(&t, -1.0), 0);
        assert_eq!(nearest(&t, 0.5), 0);
        assert_eq!(nearest(&t, 0.6), 1);
        assert_eq!(nearest(&t, 5.0), 2);
    }
}
