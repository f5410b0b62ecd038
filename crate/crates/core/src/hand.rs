//! Hand conventions (21 keypoints, 778 mesh vertices), the hand-track file
//! format, and track cleaning: flicker rejection and temporal resampling.
//!
//! # Track file format
//!
//! Newline-delimited JSON. The first non-empty line is a header record:
//!
//! ```text
//! {"format":"hand-track","version":1,"fps":30.0,"camera_id":"top"}
//! ```
//!
//! Every following non-empty line is one frame:
//!
//! ```text
//! {"t":0.0,"hand":"R","conf":0.97,"kp":[x0,y0,z0, ... x20,y20,z20],"verts":[...]}
//! ```
//!
//! `kp` holds 63 reals (meters, camera frame) in [`keypoints`] order.
//! `verts` is optional and holds 2334 reals (778 vertices). Left hands are
//! mirrored into the right-hand convention at parse time by negating x; the
//! writer undoes the mirroring so a parse/write cycle is lossless.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{RigidTransform, Vec3};

pub const NUM_KEYPOINTS: usize = 21;
pub const NUM_VERTICES: usize = 778;
pub const TRACK_FORMAT: &str = "hand-track";
pub const TRACK_VERSION: u32 = 1;

/// Timestamps closer than this are treated as the same instant when
/// resampling.
const TIME_EPSILON: f64 = 1e-9;

/// Indices into the 21-keypoint array. Each finger runs base to tip.
///
/// The thumb has no anatomical PIP joint; its interphalangeal joint
/// `THUMB_IP` is used wherever a "thumb PIP" is called for.
pub mod keypoints {
    pub const WRIST: usize = 0;
    pub const THUMB_CMC: usize = 1;
    pub const THUMB_MCP: usize = 2;
    pub const THUMB_IP: usize = 3;
    pub const THUMB_TIP: usize = 4;
    pub const INDEX_MCP: usize = 5;
    pub const INDEX_PIP: usize = 6;
    pub const INDEX_DIP: usize = 7;
    pub const INDEX_TIP: usize = 8;
    pub const MIDDLE_MCP: usize = 9;
    pub const MIDDLE_PIP: usize = 10;
    pub const MIDDLE_DIP: usize = 11;
    pub const MIDDLE_TIP: usize = 12;
    pub const RING_MCP: usize = 13;
    pub const RING_PIP: usize = 14;
    pub const RING_DIP: usize = 15;
    pub const RING_TIP: usize = 16;
    pub const PINKY_MCP: usize = 17;
    pub const PINKY_PIP: usize = 18;
    pub const PINKY_DIP: usize = 19;
    pub const PINKY_TIP: usize = 20;

    pub const NAMES: [&str; super::NUM_KEYPOINTS] = [
        "wrist",
        "thumb_cmc",
        "thumb_mcp",
        "thumb_ip",
        "thumb_tip",
        "index_mcp",
        "index_pip",
        "index_dip",
        "index_tip",
        "middle_mcp",
        "middle_pip",
        "middle_dip",
        "middle_tip",
        "ring_mcp",
        "ring_pip",
        "ring_dip",
        "ring_tip",
        "pinky_mcp",
        "pinky_pip",
        "pinky_dip",
        "pinky_tip",
    ];

    /// The five points whose plane defines palm orientation.
    pub const PALM_PLANE: [usize; 5] = [INDEX_MCP, INDEX_PIP, INDEX_DIP, INDEX_TIP, THUMB_IP];

    /// Per-finger chains, base to tip: thumb, index, middle, ring, pinky.
    pub const FINGERS: [[usize; 4]; 5] = [
        [THUMB_CMC, THUMB_MCP, THUMB_IP, THUMB_TIP],
        [INDEX_MCP, INDEX_PIP, INDEX_DIP, INDEX_TIP],
        [MIDDLE_MCP, MIDDLE_PIP, MIDDLE_DIP, MIDDLE_TIP],
        [RING_MCP, RING_PIP, RING_DIP, RING_TIP],
        [PINKY_MCP, PINKY_PIP, PINKY_DIP, PINKY_TIP],
    ];
}

#[derive(Debug, Error)]
pub enum HandError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("track has no valid frames")]
    EmptyTrack,
    #[error("timestamps not strictly increasing at frame {index} ({prev} -> {current})")]
    NonMonotonicTime { index: usize, prev: f64, current: f64 },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("frames disagree on handedness")]
    MixedHandedness,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Handedness {
    #[serde(rename = "L")]
    Left,
    #[serde(rename = "R")]
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandFrame {
    pub timestamp: f64,
    pub keypoints: [Vec3; NUM_KEYPOINTS],
    pub vertices: Option<Vec<Vec3>>,
    pub confidence: f64,
    pub handedness: Handedness,
}

impl HandFrame {
    pub fn new(
        timestamp: f64,
        keypoints: [Vec3; NUM_KEYPOINTS],
        vertices: Option<Vec<Vec3>>,
        confidence: f64,
        handedness: Handedness,
    ) -> Result<Self, HandError> {
        let frame = Self {
            timestamp,
            keypoints,
            vertices,
            confidence,
            handedness,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<(), HandError> {
        if !self.timestamp.is_finite() {
            return Err(HandError::InvalidFrame("timestamp is not finite".into()));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(HandError::InvalidFrame(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        if let Some(i) = self.keypoints.iter().position(|p| !p.is_finite()) {
            return Err(HandError::InvalidFrame(format!("keypoint {i} is not finite")));
        }
        if let Some(v) = &self.vertices {
            if v.len() != NUM_VERTICES {
                return Err(HandError::InvalidFrame(format!(
                    "expected {NUM_VERTICES} vertices, got {}",
                    v.len()
                )));
            }
            if v.iter().any(|p| !p.is_finite()) {
                return Err(HandError::InvalidFrame("vertex is not finite".into()));
            }
        }
        Ok(())
    }

    pub fn keypoint(&self, index: usize) -> Vec3 {
        self.keypoints[index]
    }

    pub fn wrist(&self) -> Vec3 {
        self.keypoints[keypoints::WRIST]
    }

    /// Applies `t` to every keypoint and vertex.
    pub fn transformed(&self, t: &RigidTransform) -> HandFrame {
        HandFrame {
            keypoints: self.keypoints.map(|p| t.apply_point(p)),
            vertices: self
                .vertices
                .as_ref()
                .map(|v| v.iter().map(|p| t.apply_point(*p)).collect()),
            ..self.clone()
        }
    }

    /// Negates x of every keypoint and vertex. Its own inverse.
    pub fn mirror_x(&mut self) {
        for p in self.keypoints.iter_mut() {
            p.x = -p.x;
        }
        if let Some(v) = self.vertices.as_mut() {
            for p in v.iter_mut() {
                p.x = -p.x;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandTrack {
    frames: Vec<HandFrame>,
    pub source_fps: f64,
    pub camera_id: String,
    /// Set when the source was a left hand mirrored into right-hand form.
    pub mirrored: bool,
}

impl HandTrack {
    pub fn new(frames: Vec<HandFrame>, source_fps: f64, camera_id: impl Into<String>) -> Result<Self, HandError> {
        if frames.is_empty() {
            return Err(HandError::EmptyTrack);
        }
        if !(source_fps.is_finite() && source_fps > 0.0) {
            return Err(HandError::InvalidParameter(format!("fps {source_fps}")));
        }
        let hand = frames[0].handedness;
        for (i, f) in frames.iter().enumerate() {
            f.validate()?;
            if f.handedness != hand {
                return Err(HandError::MixedHandedness);
            }
            if i > 0 && f.timestamp <= frames[i - 1].timestamp {
                return Err(HandError::NonMonotonicTime {
                    index: i,
                    prev: frames[i - 1].timestamp,
                    current: f.timestamp,
                });
            }
        }
        Ok(Self {
            frames,
            source_fps,
            camera_id: camera_id.into(),
            mirrored: false,
        })
    }

    pub fn frames(&self) -> &[HandFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.timestamp).collect()
    }

    pub fn duration(&self) -> f64 {
        self.frames.last().unwrap().timestamp - self.frames[0].timestamp
    }

    pub fn transformed(&self, t: &RigidTransform) -> HandTrack {
        HandTrack {
            frames: self.frames.iter().map(|f| f.transformed(t)).collect(),
            ..self.clone()
        }
    }

    fn with_frames(&self, frames: Vec<HandFrame>) -> HandTrack {
        HandTrack {
            frames,
            ..self.clone()
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TrackHeader {
    format: String,
    version: u32,
    fps: f64,
    camera_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameRecord {
    t: f64,
    hand: Handedness,
    conf: f64,
    kp: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    verts: Option<Vec<f64>>,
}

fn points_from_flat(flat: &[f64]) -> Vec<Vec3> {
    flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

fn flat_from_points(points: &[Vec3]) -> Vec<f64> {
    points.iter().flat_map(|p| p.to_array()).collect()
}

/// Parses a hand-track file. Left hands are mirrored to right-hand form.
pub fn parse_hand_track(path: impl AsRef<Path>) -> Result<HandTrack, HandError> {
    let file = fs::File::open(path.as_ref())?;
    read_hand_track(BufReader::new(file))
}

pub fn read_hand_track(reader: impl BufRead) -> Result<HandTrack, HandError> {
    let mut header: Option<TrackHeader> = None;
    let mut frames = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| HandError::Parse { line: line_no, message };
        if header.is_none() {
            let h: TrackHeader =
                serde_json::from_str(&line).map_err(|e| parse_err(format!("bad header: {e}")))?;
            if h.format != TRACK_FORMAT {
                return Err(parse_err(format!("unknown format {:?}", h.format)));
            }
            if h.version != TRACK_VERSION {
                return Err(parse_err(format!(
                    "unsupported version {} (expected {TRACK_VERSION})",
                    h.version
                )));
            }
            header = Some(h);
            continue;
        }
        let frame_index = frames.len();
        let rec: FrameRecord = serde_json::from_str(&line)
            .map_err(|e| parse_err(format!("frame {frame_index}: {e}")))?;
        if rec.kp.len() != NUM_KEYPOINTS * 3 {
            return Err(parse_err(format!(
                "frame {frame_index}: expected {} keypoint values ({NUM_KEYPOINTS} keypoints), got {}",
                NUM_KEYPOINTS * 3,
                rec.kp.len()
            )));
        }
        let kp: [Vec3; NUM_KEYPOINTS] = points_from_flat(&rec.kp).try_into().unwrap();
        let verts = match rec.verts {
            Some(v) if v.len() != NUM_VERTICES * 3 => {
                return Err(parse_err(format!(
                    "frame {frame_index}: expected {} vertex values, got {}",
                    NUM_VERTICES * 3,
                    v.len()
                )))
            }
            Some(v) => Some(points_from_flat(&v)),
            None => None,
        };
        let frame = HandFrame::new(rec.t, kp, verts, rec.conf, rec.hand)
            .map_err(|e| parse_err(format!("frame {frame_index}: {e}")))?;
        frames.push(frame);
    }
    let header = header.ok_or(HandError::EmptyTrack)?;
    if frames.is_empty() {
        return Err(HandError::EmptyTrack);
    }
    let mirrored = frames[0].handedness == Handedness::Left;
    let mut track = HandTrack::new(frames, header.fps, header.camera_id)?;
    if mirrored {
        for f in track.frames.iter_mut() {
            f.mirror_x();
            f.handedness = Handedness::Right;
        }
        track.mirrored = true;
    }
    Ok(track)
}

/// Writes a track in the file format above, undoing parse-time mirroring.
pub fn write_hand_track(track: &HandTrack, mut out: impl Write) -> Result<(), HandError> {
    let header = TrackHeader {
        format: TRACK_FORMAT.into(),
        version: TRACK_VERSION,
        fps: track.source_fps,
        camera_id: track.camera_id.clone(),
    };
    writeln!(out, "{}", serde_json::to_string(&header).unwrap())?;
    for f in &track.frames {
        let mut f = f.clone();
        if track.mirrored {
            f.mirror_x();
            f.handedness = Handedness::Left;
        }
        let rec = FrameRecord {
            t: f.timestamp,
            hand: f.handedness,
            conf: f.confidence,
            kp: flat_from_points(&f.keypoints),
            verts: f.vertices.as_deref().map(flat_from_points),
        };
        writeln!(out, "{}", serde_json::to_string(&rec).unwrap())?;
    }
    Ok(())
}

pub fn save_hand_track(track: &HandTrack, path: impl AsRef<Path>) -> Result<(), HandError> {
    let mut buf = Vec::new();
    write_hand_track(track, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlickerConfig {
    /// Meters of wrist deviation from the window median that flags a frame.
    pub jump_threshold: f64,
    /// Odd window length, at least 3.
    pub window: usize,
}

impl Default for FlickerConfig {
    fn default() -> Self {
        Self {
            jump_threshold: 0.05,
            window: 5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlickerReport {
    pub removed_timestamps: Vec<f64>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Indices of frames whose wrist is farther than the threshold from the
/// per-axis median wrist of the surrounding window. The window keeps its
/// full length near the ends by shifting instead of shrinking.
fn flag_flicker(frames: &[HandFrame], cfg: &FlickerConfig) -> Vec<usize> {
    let n = frames.len();
    if n < 2 {
        return Vec::new();
    }
    let w = cfg.window.min(n);
    let half = cfg.window / 2;
    let mut flagged = Vec::new();
    let mut xs = Vec::with_capacity(w);
    let mut ys = Vec::with_capacity(w);
    let mut zs = Vec::with_capacity(w);
    for i in 0..n {
        let start = i.saturating_sub(half).min(n - w);
        xs.clear();
        ys.clear();
        zs.clear();
        for f in &frames[start..start + w] {
            let p = f.wrist();
            xs.push(p.x);
            ys.push(p.y);
            zs.push(p.z);
        }
        let med = Vec3::new(median(&mut xs), median(&mut ys), median(&mut zs));
        if frames[i].wrist().distance(med) > cfg.jump_threshold {
            flagged.push(i);
        }
    }
    flagged
}

/// Removes frames whose wrist jumps away from its neighborhood. Removal is
/// repeated until no frame is flagged, so the result is a fixed point.
pub fn reject_flicker(track: &HandTrack, cfg: &FlickerConfig) -> Result<(HandTrack, FlickerReport), HandError> {
    if cfg.window < 3 || cfg.window % 2 == 0 {
        return Err(HandError::InvalidParameter(format!(
            "flicker window must be odd and >= 3, got {}",
            cfg.window
        )));
    }
    if !(cfg.jump_threshold > 0.0) {
        return Err(HandError::InvalidParameter(format!(
            "jump threshold must be positive, got {}",
            cfg.jump_threshold
        )));
    }
    let mut frames = track.frames.clone();
    let mut report = FlickerReport::default();
    loop {
        let flagged = flag_flicker(&frames, cfg);
        if flagged.is_empty() {
            break;
        }
        let mut keep = Vec::with_capacity(frames.len() - flagged.len());
        let mut next = flagged.iter().peekable();
        for (i, f) in frames.into_iter().enumerate() {
            if next.peek() == Some(&&i) {
                next.next();
                report.removed_timestamps.push(f.timestamp);
            } else {
                keep.push(f);
            }
        }
        frames = keep;
        if frames.is_empty() {
            return Err(HandError::EmptyTrack);
        }
    }
    report.removed_timestamps.sort_by(f64::total_cmp);
    Ok((track.with_frames(frames), report))
}

/// Number of frames produced by resampling a span at `fps`.
pub fn resampled_len(span: f64, fps: f64) -> usize {
    (span * fps + TIME_EPSILON).floor() as usize + 1
}

/// Linearly resamples keypoints, vertices and confidence onto a uniform
/// grid starting at the first timestamp. Grid points that coincide with an
/// input timestamp copy that frame's values exactly.
pub fn resample_track(track: &HandTrack, target_fps: f64) -> Result<HandTrack, HandError> {
    if track.len() < 2 {
        return Err(HandError::EmptyTrack);
    }
    if !(target_fps.is_finite() && target_fps > 0.0) {
        return Err(HandError::InvalidParameter(format!("target fps {target_fps}")));
    }
    let frames = &track.frames;
    let t0 = frames[0].timestamp;
    let count = resampled_len(track.duration(), target_fps);
    let times: Vec<f64> = frames.iter().map(|f| f.timestamp).collect();

    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let t = t0 + k as f64 / target_fps;
        // first index with timestamp > t
        let hi = times.partition_point(|&x| x <= t + TIME_EPSILON);
        let lo = hi.saturating_sub(1);
        let near = |j: usize| (times[j] - t).abs() <= TIME_EPSILON;
        let frame = if near(lo) {
            HandFrame {
                timestamp: t,
                ..frames[lo].clone()
            }
        } else if hi < frames.len() && near(hi) {
            HandFrame {
                timestamp: t,
                ..frames[hi].clone()
            }
        } else if hi >= frames.len() {
            HandFrame {
                timestamp: t,
                ..frames[frames.len() - 1].clone()
            }
        } else {
            let (a, b) = (&frames[lo], &frames[hi]);
            let alpha = (t - a.timestamp) / (b.timestamp - a.timestamp);
            let keypoints = std::array::from_fn(|i| a.keypoints[i].lerp(b.keypoints[i], alpha));
            let vertices = match (&a.vertices, &b.vertices) {
                (Some(va), Some(vb)) => Some(va.iter().zip(vb).map(|(p, q)| p.lerp(*q, alpha)).collect()),
                _ => None,
            };
            HandFrame {
                timestamp: t,
                keypoints,
                vertices,
                confidence: a.confidence + (b.confidence - a.confidence) * alpha,
                handedness: a.handedness,
            }
        };
        out.push(frame);
    }
    Ok(HandTrack {
        frames: out,
        source_fps: target_fps,
        camera_id: track.camera_id.clone(),
        mirrored: track.mirrored,
    })
}
