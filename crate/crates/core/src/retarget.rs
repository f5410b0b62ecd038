//! Hand-to-gripper retargeting: maps each hand frame to an end-effector
//! pose `(position, orientation, gripper)` and carries it into the robot
//! base frame.
//!
//! * Position is the midpoint of `THUMB_IP` and `INDEX_MCP`.
//! * Orientation takes Z from a plane fitted through the four index-finger
//!   joints and `THUMB_IP`, and X from `INDEX_MCP → INDEX_PIP`.
//! * Gripper is the thumb/index fingertip distance normalized by a
//!   [`GripperCalibration`] and clipped to `[0, 1]` (0 = closed).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    fit_plane, frame_from_axes, quat_from_matrix, slerp, transform_pose, GeometryError, RigidTransform,
    UnitQuaternion, Vec3,
};
use crate::hand::{keypoints, HandFrame, HandTrack};
use crate::par::{self, Execution};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RetargetError {
    #[error("track is empty")]
    EmptyTrack,
    #[error("only {valid} of {total} frames yield an orientation (floor {floor})")]
    TooManyGaps { valid: usize, total: usize, floor: f64 },
    #[error("gripper calibration is degenerate: d_min {d_min} >= d_max {d_max}")]
    DegenerateCalibration { d_min: f64, d_max: f64 },
    #[error("invalid gripper calibration: d_min {d_min}, d_max {d_max}")]
    InvalidCalibration { d_min: f64, d_max: f64 },
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Embodiment {
    HumanHand,
    Robot,
}

impl Embodiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Embodiment::HumanHand => "human_hand",
            Embodiment::Robot => "robot",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameTag {
    Camera,
    RobotBase,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndEffectorPose {
    pub timestamp: f64,
    pub position: Vec3,
    pub orientation: UnitQuaternion,
    pub gripper: f64,
    pub frame: FrameTag,
}

impl EndEffectorPose {
    /// `[px, py, pz, qw, qx, qy, qz, g]`
    pub fn to_array(&self) -> [f64; 8] {
        let q = self.orientation.to_array();
        let p = self.position;
        [p.x, p.y, p.z, q[0], q[1], q[2], q[3], self.gripper]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperCalibration {
    d_min: f64,
    d_max: f64,
}

impl Default for GripperCalibration {
    fn default() -> Self {
        Self { d_min: 0.02, d_max: 0.10 }
    }
}

impl GripperCalibration {
    pub fn new(d_min: f64, d_max: f64) -> Result<Self, RetargetError> {
        if !(d_min.is_finite() && d_max.is_finite() && d_min > 0.0 && d_min < d_max) {
            return Err(RetargetError::InvalidCalibration { d_min, d_max });
        }
        Ok(Self { d_min, d_max })
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    /// `clip((d − d_min) / (d_max − d_min), 0, 1)`
    pub fn normalize(&self, d: f64) -> f64 {
        ((d - self.d_min) / (self.d_max - self.d_min)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    poses: Vec<EndEffectorPose>,
    pub embodiment: Embodiment,
    pub frame: FrameTag,
}

impl StateTrajectory {
    pub fn new(poses: Vec<EndEffectorPose>, embodiment: Embodiment, frame: FrameTag) -> Result<Self, RetargetError> {
        for (i, p) in poses.iter().enumerate() {
            if p.frame != frame {
                return Err(RetargetError::InvalidTrajectory(format!(
                    "pose {i} is tagged {:?}, trajectory is {frame:?}",
                    p.frame
                )));
            }
            if !(0.0..=1.0).contains(&p.gripper) {
                return Err(RetargetError::InvalidTrajectory(format!("pose {i} gripper {}", p.gripper)));
            }
            if i > 0 && p.timestamp <= poses[i - 1].timestamp {
                return Err(RetargetError::InvalidTrajectory(format!(
                    "timestamps not increasing at pose {i}"
                )));
            }
        }
        Ok(Self {
            poses,
            embodiment,
            frame,
        })
    }

    pub fn poses(&self) -> &[EndEffectorPose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

pub fn anchor_position(frame: &HandFrame) -> Vec3 {
    frame
        .keypoint(keypoints::THUMB_IP)
        .midpoint(frame.keypoint(keypoints::INDEX_MCP))
}

pub fn fingertip_distance(frame: &HandFrame) -> f64 {
    frame
        .keypoint(keypoints::THUMB_TIP)
        .distance(frame.keypoint(keypoints::INDEX_TIP))
}

pub fn gripper_state(frame: &HandFrame, cal: &GripperCalibration) -> f64 {
    cal.normalize(fingertip_distance(frame))
}

/// Below this |sin| between the thumb offset and the index direction the
/// chirality test is considered ambiguous.
const CHIRALITY_MIN_SIN: f64 = 0.1;

/// Palm orientation of one frame. Also returns the resolved Z axis so a
/// caller can feed it back as `prev_z` for the next frame.
///
/// The plane normal's sign is chosen so that
/// `Z · ((THUMB_IP − centroid) × (INDEX_TIP − INDEX_MCP)) > 0`. When that
/// test is ambiguous and `prev_z` is given, the sign closer to `prev_z` wins.
pub fn hand_orientation_with_axis(
    frame: &HandFrame,
    prev_z: Option<Vec3>,
) -> Result<(UnitQuaternion, Vec3), GeometryError> {
    let pts = keypoints::PALM_PLANE.map(|i| frame.keypoint(i));
    let plane = fit_plane(&pts)?;
    let thumb = frame.keypoint(keypoints::THUMB_IP) - plane.centroid;
    let index_dir = frame.keypoint(keypoints::INDEX_TIP) - frame.keypoint(keypoints::INDEX_MCP);
    let reference = thumb.cross(index_dir);
    let score = plane.normal.dot(reference);
    let scale = thumb.norm() * index_dir.norm();

    let mut z = plane.normal;
    let ambiguous = !(score.abs() > CHIRALITY_MIN_SIN * scale);
    match (ambiguous, prev_z) {
        (true, Some(prev)) => {
            if z.dot(prev) < 0.0 {
                z = -z;
            }
        }
        _ => {
            if score < 0.0 {
                z = -z;
            }
        }
    }
    let x_hint = frame.keypoint(keypoints::INDEX_PIP) - frame.keypoint(keypoints::INDEX_MCP);
    let r = frame_from_axes(x_hint, z)?;
    Ok((quat_from_matrix(&r), z))
}

pub fn hand_orientation(frame: &HandFrame) -> Result<UnitQuaternion, GeometryError> {
    hand_orientation_with_axis(frame, None).map(|(q, _)| q)
}

/// Linear-interpolated percentile (`p` in `[0, 100]`) of unsorted data.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (p / 100.0) * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    v[lo] + (v[hi] - v[lo]) * frac
}

/// Per-track gripper calibration from fingertip-distance percentiles.
pub fn calibrate_gripper(track: &HandTrack, low_pct: f64, high_pct: f64) -> Result<GripperCalibration, RetargetError> {
    if track.is_empty() {
        return Err(RetargetError::EmptyTrack);
    }
    if !(0.0 <= low_pct && low_pct < high_pct && high_pct <= 100.0) {
        return Err(RetargetError::InvalidParameter(format!(
            "percentiles {low_pct}/{high_pct}"
        )));
    }
    let d: Vec<f64> = track.frames().iter().map(fingertip_distance).collect();
    let d_min = percentile(&d, low_pct);
    let d_max = percentile(&d, high_pct);
    if !(d_min < d_max) || d_min <= 0.0 {
        return Err(RetargetError::DegenerateCalibration { d_min, d_max });
    }
    GripperCalibration::new(d_min, d_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetargetOptions {
    /// Longest run of orientation failures that is filled by interpolation.
    pub max_gap: usize,
    /// Minimum fraction of frames with a directly computed orientation.
    pub min_valid_fraction: f64,
}

impl Default for RetargetOptions {
    fn default() -> Self {
        Self {
            max_gap: 5,
            min_valid_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetargetReport {
    pub total_frames: usize,
    pub valid_frames: usize,
    pub filled_frames: usize,
    pub dropped_timestamps: Vec<f64>,
}

/// Retargets a whole track into the robot base frame.
pub fn retarget_track(
    track: &HandTrack,
    cal: &GripperCalibration,
    cam_to_base: &RigidTransform,
    opts: &RetargetOptions,
) -> Result<(StateTrajectory, RetargetReport), RetargetError> {
    let frames = track.frames();
    if frames.is_empty() {
        return Err(RetargetError::EmptyTrack);
    }
    let mut orientations: Vec<Option<UnitQuaternion>> = Vec::with_capacity(frames.len());
    let mut prev_z = None;
    for f in frames {
        match hand_orientation_with_axis(f, prev_z) {
            Ok((q, z)) => {
                orientations.push(Some(q));
                prev_z = Some(z);
            }
            Err(_) => orientations.push(None),
        }
    }
    let valid = orientations.iter().filter(|o| o.is_some()).count();
    let total = frames.len();
    if (valid as f64) < opts.min_valid_fraction * total as f64 || valid == 0 {
        return Err(RetargetError::TooManyGaps {
            valid,
            total,
            floor: opts.min_valid_fraction,
        });
    }

    let filled = fill_orientation_gaps(frames, &orientations, opts.max_gap);
    let mut report = RetargetReport {
        total_frames: total,
        valid_frames: valid,
        ..Default::default()
    };
    let mut poses = Vec::with_capacity(total);
    for (i, f) in frames.iter().enumerate() {
        let Some(q_cam) = filled[i] else {
            report.dropped_timestamps.push(f.timestamp);
            continue;
        };
        if orientations[i].is_none() {
            report.filled_frames += 1;
        }
        let (position, orientation) = transform_pose(cam_to_base, anchor_position(f), q_cam);
        poses.push(EndEffectorPose {
            timestamp: f.timestamp,
            position,
            orientation,
            gripper: gripper_state(f, cal),
            frame: FrameTag::RobotBase,
        });
    }
    let traj = StateTrajectory::new(poses, Embodiment::HumanHand, FrameTag::RobotBase)?;
    Ok((traj, report))
}

/// Fills runs of `None` no longer than `max_gap`: interior runs by slerp
/// between the bounding valid frames (by timestamp), edge runs by holding
/// the nearest valid orientation. Longer runs stay `None`.
fn fill_orientation_gaps(
    frames: &[HandFrame],
    orientations: &[Option<UnitQuaternion>],
    max_gap: usize,
) -> Vec<Option<UnitQuaternion>> {
    let n = orientations.len();
    let mut out = orientations.to_vec();
    let mut i = 0;
    while i < n {
        if orientations[i].is_some() {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && orientations[i].is_none() {
            i += 1;
        }
        let end = i; // exclusive
        if end - start > max_gap {
            continue;
        }
        let before = start.checked_sub(1).map(|j| (j, orientations[j].unwrap()));
        let after = (end < n).then(|| (end, orientations[end].unwrap()));
        for (k, slot) in out.iter_mut().enumerate().take(end).skip(start) {
            *slot = match (before, after) {
                (Some((a, qa)), Some((b, qb))) => {
                    let t = (frames[k].timestamp - frames[a].timestamp)
                        / (frames[b].timestamp - frames[a].timestamp);
                    Some(slerp(qa, qb, t))
                }
                (Some((_, q)), None) | (None, Some((_, q))) => Some(q),
                (None, None) => None,
            };
        }
    }
    out
}

/// Retargets many tracks, in parallel where enabled. Each track uses its
/// own calibration.
pub fn retarget_tracks(
    exec: Execution,
    jobs: &[(HandTrack, GripperCalibration)],
    cam_to_base: &RigidTransform,
    opts: &RetargetOptions,
) -> Vec<Result<(StateTrajectory, RetargetReport), RetargetError>> {
    par::map(exec, jobs, |(track, cal)| retarget_track(track, cal, cam_to_base, opts))
}

/// Karcher mean of rotations near `center` (a few Gauss-Newton steps in
/// the tangent space at the running estimate).
pub fn average_rotations(quats: &[UnitQuaternion], center: UnitQuaternion) -> UnitQuaternion {
    let mut mean = center;
    for _ in 0..20 {
        let inv = mean.inverse();
        let step = quats
            .iter()
            .fold(Vec3::ZERO, |acc, q| acc + inv.mul(*q).to_rotation_vector())
            / quats.len() as f64;
        mean = mean.mul(UnitQuaternion::from_rotation_vector(step));
        if step.norm() < 1e-14 {
            break;
        }
    }
    mean
}

/// Centered moving-average smoothing. Windows shrink symmetrically near the
/// ends; a window of 1 leaves the channel untouched.
pub fn smooth_trajectory(
    traj: &StateTrajectory,
    position_window: usize,
    orientation_window: usize,
) -> Result<StateTrajectory, RetargetError> {
    for w in [position_window, orientation_window] {
        if w == 0 || w % 2 == 0 {
            return Err(RetargetError::InvalidParameter(format!(
                "smoothing window must be odd and >= 1, got {w}"
            )));
        }
    }
    let poses = traj.poses();
    let n = poses.len();
    let span = |i: usize, w: usize| {
        let half = (w / 2).min(i).min(n - 1 - i);
        (i - half, i + half + 1)
    };
    let mut out = poses.to_vec();
    for (i, pose) in out.iter_mut().enumerate() {
        if position_window > 1 {
            let (a, b) = span(i, position_window);
            let k = (b - a) as f64;
            pose.position = poses[a..b].iter().fold(Vec3::ZERO, |acc, p| acc + p.position) / k;
            let g = poses[a..b].iter().map(|p| p.gripper).sum::<f64>() / k;
            pose.gripper = g.clamp(0.0, 1.0);
        }
        if orientation_window > 1 {
            let (a, b) = span(i, orientation_window);
            let qs: Vec<UnitQuaternion> = poses[a..b].iter().map(|p| p.orientation).collect();
            pose.orientation = average_rotations(&qs, poses[i].orientation);
        }
    }
    StateTrajectory::new(out, traj.embodiment, traj.frame)
}
