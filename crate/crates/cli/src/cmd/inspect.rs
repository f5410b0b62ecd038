//! Static previews of a written dataset: pose and gripper plots (SVG) and
//! the end-effector path drawn over the first top-view frame (PNG).

use std::fs;
use std::path::PathBuf;

use hand2robot::augment::{save_png, Image};
use hand2robot::calibration::{project_point, CameraModel};
use hand2robot::dataset::{Dataset, Episode, View, TOP_VIEW};
use hand2robot::{RigidTransform, Vec3};

use super::{calibration, camera};
use crate::config::LoadedConfig;
use crate::svg::{line_plot, Series};
use crate::{CliError, RunOptions};

pub const INSPECT_DIR: &str = "inspect";

/// Writes previews for `episode`, or for every episode when `None`.
/// Returns the files written (or that would be, under dry run).
pub fn cmd_inspect(cfg: &LoadedConfig, episode: Option<&str>, run: &RunOptions) -> Result<Vec<PathBuf>, CliError> {
    let c = &cfg.config;
    cfg.require(&[&c.paths.calibration, &c.paths.intrinsics])?;
    let cam = camera(cfg)?;
    let base_to_cam = calibration(cfg)?.cam_to_base.inverse();
    let root = cfg.output();
    let ds = Dataset::open(&root).map_err(|e| CliError::Input(format!("{}: {e}", root.display())))?;
    let ids: Vec<String> = match episode {
        Some(id) => {
            if ds.manifest.entry(id).is_none() {
                return Err(CliError::Config(format!("no episode {id} in {}", root.display())));
            }
            vec![id.to_string()]
        }
        None => ds.manifest.episodes.iter().map(|e| e.episode_id.clone()).collect(),
    };

    let dir = root.join(INSPECT_DIR);
    let mut written = Vec::new();
    for id in ids {
        let ep = ds
            .load_episode(&id)
            .map_err(|e| CliError::Input(format!("{id}: {e}")))?;
        let pose = dir.join(format!("{id}_pose.svg"));
        let grip = dir.join(format!("{id}_gripper.svg"));
        let overlay = dir.join(format!("{id}_overlay.png"));
        if !run.dry_run {
            fs::create_dir_all(&dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
            write_text(&pose, &pose_plot(&ep))?;
            write_text(&grip, &gripper_plot(&ep))?;
            save_png(&overlay_image(&ep, &cam, &base_to_cam), &overlay).map_err(|e| CliError::Input(e.to_string()))?;
        }
        written.extend([pose, grip, overlay]);
    }
    Ok(written)
}

fn write_text(p: &std::path::Path, s: &str) -> Result<(), CliError> {
    fs::write(p, s).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
}

fn channel(ep: &Episode, k: usize) -> Vec<(f64, f64)> {
    ep.timestamps
        .iter()
        .zip(&ep.states)
        .map(|(&t, s)| (t, s[k] as f64))
        .collect()
}

pub fn pose_plot(ep: &Episode) -> String {
    let series = [("x", "#d62728", 0), ("y", "#2ca02c", 1), ("z", "#1f77b4", 2)].map(|(name, color, k)| Series {
        name,
        color,
        points: channel(ep, k),
    });
    line_plot(&format!("{} position", ep.id), "time (s)", "metres", &series, None)
}

pub fn gripper_plot(ep: &Episode) -> String {
    let series = [Series {
        name: "gripper",
        color: "#9467bd",
        points: channel(ep, 7),
    }];
    line_plot(&format!("{} gripper", ep.id), "time (s)", "opening", &series, Some((0.0, 1.0)))
}

/// First top-view frame (black when padded) with the end-effector path:
/// one dot per state, green when open fading to red when closed.
pub fn overlay_image(ep: &Episode, cam: &CameraModel, base_to_cam: &RigidTransform) -> Image {
    let mut img = match ep.views.get(TOP_VIEW) {
        Some(v @ View::Frames(_)) if !v.is_empty() => v.frame(0),
        _ => Image::new(cam.width, cam.height),
    };
    for s in &ep.states {
        let p = base_to_cam.apply_point(Vec3::new(s[0] as f64, s[1] as f64, s[2] as f64));
        let Ok((u, v)) = project_point(cam, p) else { continue };
        let g = s[7].clamp(0.0, 1.0);
        let color = [(255.0 * (1.0 - g)) as u8, (255.0 * g) as u8, 0];
        let (cx, cy) = (u.round() as i64, v.round() as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (x, y) = (cx + dx, cy + dy);
                if x >= 0 && y >= 0 && (x as u32) < img.width && (y as u32) < img.height {
                    img.set_pixel(x as u32, y as u32, color);
                }
            }
        }
    }
    img
}
