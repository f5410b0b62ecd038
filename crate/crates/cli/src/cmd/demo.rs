//! Self-contained synthetic inputs: a grasp track generated by forward
//! kinematics (so every pose is reachable), its camera frames, a robot
//! log, calibration, intrinsics, mesh topology, arm file and a config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use hand2robot::augment::{save_png, save_topology, Image};
use hand2robot::calibration::{save_calibration, save_camera, HandEyeCalibration};
use hand2robot::dataset::{frame_file, write_robot_log, RobotLog, RobotLogFrame, TOP_VIEW, WRIST_VIEW};
use hand2robot::geometry::quat_from_matrix;
use hand2robot::hand::save_hand_track;
use hand2robot::kinematics::{so100_plus_json, KinematicChain};
use hand2robot::synth::{
    background_image, demo_camera, demo_camera_pose, grasp_episode, hand_topology, ApertureProfile, GraspSpec,
};

use crate::config::{DatasetSection, Paths, PipelineConfig, TrackInput};
use crate::CliError;

pub const CONFIG_FILE: &str = "config.toml";
pub const CAMERA_ID: &str = "top";
pub const WRIST_RESOLUTION: [u32; 2] = [60, 80];

#[derive(Debug, Clone)]
pub struct DemoSpec {
    pub frames: usize,
    pub robot_frames: usize,
    pub seed: u64,
    /// Fingertip distance at the first and last frame, metres.
    pub aperture: [f64; 2],
}

impl Default for DemoSpec {
    fn default() -> Self {
        Self {
            frames: 90,
            robot_frames: 60,
            seed: 7,
            aperture: [0.09, 0.025],
        }
    }
}

/// Writes the demo inputs under `dir` and returns the config path.
pub fn write_demo(dir: &Path, spec: &DemoSpec) -> Result<PathBuf, CliError> {
    let io = |p: &Path| {
        let p = p.display().to_string();
        move |e: String| CliError::Input(format!("{p}: {e}"))
    };
    fs::create_dir_all(dir).map_err(|e| io(dir)(e.to_string()))?;
    let chain = KinematicChain::so100_plus();
    let cam = demo_camera();
    let cam_to_base = demo_camera_pose();

    let arm = dir.join("arm.json");
    fs::write(&arm, so100_plus_json()).map_err(|e| io(&arm)(e.to_string()))?;
    let cal = HandEyeCalibration {
        cam_to_base,
        camera_id: CAMERA_ID.into(),
        rms_error: None,
    };
    let cal_path = dir.join("calibration.json");
    save_calibration(&cal, &cal_path).map_err(|e| io(&cal_path)(e.to_string()))?;
    let cam_path = dir.join("camera.json");
    save_camera(&cam, &cam_path).map_err(|e| io(&cam_path)(e.to_string()))?;
    let topo_path = dir.join("topology.json");
    save_topology(&hand_topology(), &topo_path).map_err(|e| io(&topo_path)(e.to_string()))?;

    let grasp = GraspSpec {
        frames: spec.frames,
        seed: spec.seed,
        aperture: ApertureProfile::Ramp {
            from: spec.aperture[0],
            to: spec.aperture[1],
        },
        ..Default::default()
    };
    let mut ep = grasp_episode(&chain, &cam_to_base, &grasp);
    ep.track.camera_id = CAMERA_ID.into();
    let track_path = dir.join("tracks").join("grasp.jsonl");
    fs::create_dir_all(track_path.parent().unwrap()).map_err(|e| io(dir)(e.to_string()))?;
    save_hand_track(&ep.track, &track_path).map_err(|e| io(&track_path)(e.to_string()))?;
    let frames_dir = dir.join("frames").join("grasp");
    fs::create_dir_all(&frames_dir).map_err(|e| io(&frames_dir)(e.to_string()))?;
    let bg = background_image(cam.width, cam.height, spec.seed);
    for i in 0..spec.frames {
        let p = frames_dir.join(frame_file(i));
        save_png(&bg, &p).map_err(|e| io(&p)(e.to_string()))?;
    }

    let robot = grasp_episode(
        &chain,
        &cam_to_base,
        &GraspSpec {
            frames: spec.robot_frames,
            seed: spec.seed.wrapping_add(1),
            with_mesh: false,
            ..Default::default()
        },
    );
    let frames = robot
        .base_poses
        .iter()
        .zip(&robot.apertures)
        .enumerate()
        .map(|(i, (pose, a))| RobotLogFrame {
            t: robot.track.frames()[i].timestamp,
            position: pose.translation.to_array(),
            orientation: quat_from_matrix(&pose.rotation).to_array(),
            gripper: ((a - 0.02) / 0.07).clamp(0.0, 1.0),
        })
        .collect();
    let log = RobotLog::new("robot_grasp", "pick up the cube", frames);
    let top = background_image(cam.width, cam.height, spec.seed.wrapping_add(1));
    let wrist = Image::filled(WRIST_RESOLUTION[1], WRIST_RESOLUTION[0], [90, 70, 50]);
    let views: BTreeMap<String, Vec<Image>> = [
        (TOP_VIEW.to_string(), vec![top; spec.robot_frames]),
        (WRIST_VIEW.to_string(), vec![wrist; spec.robot_frames]),
    ]
    .into_iter()
    .collect();
    let robot_dir = dir.join("robot");
    write_robot_log(&robot_dir, &log, &views).map_err(|e| io(&robot_dir)(e.to_string()))?;

    let config = PipelineConfig {
        seed: spec.seed,
        log_level: "info".into(),
        paths: Paths {
            calibration: "calibration.json".into(),
            intrinsics: "camera.json".into(),
            output: "out".into(),
            topology: Some("topology.json".into()),
            chain: Some("arm.json".into()),
            robot_logs: vec!["robot/log.json".into()],
            tracks: vec![TrackInput {
                path: "tracks/grasp.jsonl".into(),
                frames: Some("frames/grasp".into()),
                id: Some("human_grasp".into()),
                task: Some("pick up the cube".into()),
            }],
        },
        retarget: Default::default(),
        augment: Default::default(),
        dataset: DatasetSection {
            wrist_resolution: Some(WRIST_RESOLUTION),
            ..Default::default()
        },
        mix: Default::default(),
    };
    let cfg_path = dir.join(CONFIG_FILE);
    fs::write(&cfg_path, config.to_toml()).map_err(|e| io(&cfg_path)(e.to_string()))?;
    Ok(cfg_path)
}
