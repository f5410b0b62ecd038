//! Episode storage: action chunking, per-embodiment normalization, zero-padded
//! camera views, robot-log import and the on-disk format.
//!
//! Layout under a dataset root:
//!
//! ```text
//! manifest.json
//! normalization.json
//! episodes/<id>/meta.json
//! episodes/<id>/states.bin       f32 LE, [len, 8]
//! episodes/<id>/timestamps.bin   f64 LE, [len]
//! episodes/<id>/actions.bin      f32 LE, [chunks, h, 8]
//! episodes/<id>/views/<view>/000000.png ...
//! ```
//!
//! State rows are `[px, py, pz, qw, qx, qy, qz, gripper]` in the robot base
//! frame. Zero-padded views have no files; `meta.json` declares their shape.
//! The full schema is in the repository README.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::augment::{load_png, save_png, AugmentError, Image};
use crate::geometry::{UnitQuaternion, Vec3};
use crate::par::{self, Execution};
use crate::retarget::{Embodiment, FrameTag, StateTrajectory};

pub const FORMAT_VERSION: u32 = 1;
pub const STATE_DIM: usize = 8;
pub const DEFAULT_HORIZON: usize = 16;
pub const STATE_LAYOUT: [&str; STATE_DIM] = ["px", "py", "pz", "qw", "qx", "qy", "qz", "gripper"];
pub const TOP_VIEW: &str = "top";
pub const WRIST_VIEW: &str = "wrist";
pub const QUATERNION_NORM_TOLERANCE: f64 = 1e-6;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const NORMALIZATION_FILE: &str = "normalization.json";
const ROBOT_LOG_FORMAT: &str = "robot-log";

pub type StateRow = [f32; STATE_DIM];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: format version {found} is not supported (this build reads version {expected}); re-export the dataset with a matching toolkit version")]
    VersionMismatch { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: checksum mismatch (expected {expected}, found {found})")]
    ChecksumMismatch { path: PathBuf, expected: String, found: String },
    #[error("view {view}: expected {expected:?}, found {found:?}")]
    ViewMismatch { view: String, expected: [u32; 2], found: [u32; 2] },
    #[error("no episodes to compute statistics from")]
    EmptySet,
    #[error("invalid episode: {0}")]
    InvalidEpisode(String),
    #[error("episode {0} is not in the manifest")]
    MissingEpisode(String),
    #[error(transparent)]
    Image(#[from] AugmentError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, message: impl ToString) -> DatasetError {
    DatasetError::Parse {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `h` future states following step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionChunk {
    pub t: usize,
    pub actions: Vec<StateRow>,
}

/// `max(0, len - h)`.
pub fn chunk_count(len: usize, h: usize) -> usize {
    len.saturating_sub(h)
}

/// Chunk `t` holds `states[t + 1 ..= t + h]`.
pub fn make_chunks(states: &[StateRow], h: usize) -> Vec<ActionChunk> {
    assert!(h >= 1, "chunk horizon must be at least 1");
    (0..chunk_count(states.len(), h))
        .map(|t| ActionChunk {
            t,
            actions: states[t + 1..t + 1 + h].to_vec(),
        })
        .collect()
}

pub fn state_row(traj_pose: &crate::retarget::EndEffectorPose) -> StateRow {
    traj_pose.to_array().map(|v| v as f32)
}

#[derive(Debug, Clone, PartialEq)]
pub enum View {
    Frames(Vec<Image>),
    /// Absent stream, read back as all-zero images of this shape.
    ZeroPadded { frames: usize, height: u32, width: u32 },
}

impl View {
    pub fn len(&self) -> usize {
        match self {
            View::Frames(f) => f.len(),
            View::ZeroPadded { frames, .. } => *frames,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[height, width]`, or `None` for an empty frame list.
    pub fn resolution(&self) -> Option<[u32; 2]> {
        match self {
            View::Frames(f) => f.first().map(|i| [i.height, i.width]),
            View::ZeroPadded { height, width, .. } => Some([*height, *width]),
        }
    }

    pub fn frame(&self, i: usize) -> Image {
        match self {
            View::Frames(f) => f[i].clone(),
            View::ZeroPadded { height, width, .. } => Image::new(*width, *height),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: String,
    pub embodiment: Embodiment,
    pub task_text: String,
    pub horizon: usize,
    pub timestamps: Vec<f64>,
    pub states: Vec<StateRow>,
    pub views: BTreeMap<String, View>,
}

impl Episode {
    /// Builds an episode from a robot-base trajectory. Views must match the
    /// trajectory length.
    pub fn from_trajectory(
        id: impl Into<String>,
        task_text: impl Into<String>,
        traj: &StateTrajectory,
        horizon: usize,
        views: BTreeMap<String, View>,
    ) -> Result<Self, DatasetError> {
        if traj.frame != FrameTag::RobotBase {
            return Err(DatasetError::InvalidEpisode("trajectory is not in the robot base frame".into()));
        }
        let ep = Self {
            id: id.into(),
            embodiment: traj.embodiment,
            task_text: task_text.into(),
            horizon,
            timestamps: traj.poses().iter().map(|p| p.timestamp).collect(),
            states: traj.poses().iter().map(state_row).collect(),
            views,
        };
        ep.check()?;
        Ok(ep)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn chunks(&self) -> Vec<ActionChunk> {
        make_chunks(&self.states, self.horizon)
    }

    pub fn chunk_count(&self) -> usize {
        chunk_count(self.len(), self.horizon)
    }

    /// Structural checks shared by the writer and reader.
    pub fn check(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidEpisode(format!("{}: {m}", self.id)));
        if !valid_id(&self.id) {
            return bad("id must be non-empty and use only [A-Za-z0-9_.-]".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.timestamps.len() != self.states.len() {
            return bad(format!("{} timestamps for {} states", self.timestamps.len(), self.states.len()));
        }
        for (name, view) in &self.views {
            if !valid_id(name) {
                return bad(format!("bad view name {name:?}"));
            }
            if view.len() != self.len() {
                return bad(format!("view {name} has {} frames for {} states", view.len(), self.len()));
            }
            if let View::Frames(frames) = view {
                if let Some(first) = frames.first() {
                    if frames.iter().any(|f| f.width != first.width || f.height != first.height) {
                        return bad(format!("view {name} changes resolution"));
                    }
                }
            }
        }
        Ok(())
    }
}

fn valid_id(s: &str) -> bool {
    !s.is_empty()
        && !s.starts_with('.')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Action-head route for an embodiment.
pub fn route_name(e: Embodiment) -> &'static str {
    match e {
        Embodiment::HumanHand => "human_action_head",
        Embodiment::Robot => "robot_action_head",
    }
}

// ----- normalization -------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationScheme {
    /// Maps `[min, max]` onto `[0, 1]`.
    MinMaxToUnit,
    ZScore,
}

/// Streaming per-dimension statistics (Welford, with Chan's merge).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub count: u64,
    pub min: [f64; STATE_DIM],
    pub max: [f64; STATE_DIM],
    pub mean: [f64; STATE_DIM],
    m2: [f64; STATE_DIM],
}

impl Default for NormalizationStats {
    fn default() -> Self {
        Self {
            count: 0,
            min: [f64::INFINITY; STATE_DIM],
            max: [f64::NEG_INFINITY; STATE_DIM],
            mean: [0.0; STATE_DIM],
            m2: [0.0; STATE_DIM],
        }
    }
}

impl NormalizationStats {
    pub fn push(&mut self, x: &[f64; STATE_DIM]) {
        self.count += 1;
        let n = self.count as f64;
        for d in 0..STATE_DIM {
            self.min[d] = self.min[d].min(x[d]);
            self.max[d] = self.max[d].max(x[d]);
            let delta = x[d] - self.mean[d];
            self.mean[d] += delta / n;
            self.m2[d] += delta * (x[d] - self.mean[d]);
        }
    }

    pub fn merge(&self, o: &NormalizationStats) -> NormalizationStats {
        if self.count == 0 {
            return o.clone();
        }
        if o.count == 0 {
            return self.clone();
        }
        let (na, nb) = (self.count as f64, o.count as f64);
        let n = na + nb;
        let mut out = NormalizationStats {
            count: self.count + o.count,
            ..Default::default()
        };
        for d in 0..STATE_DIM {
            let delta = o.mean[d] - self.mean[d];
            out.min[d] = self.min[d].min(o.min[d]);
            out.max[d] = self.max[d].max(o.max[d]);
            out.mean[d] = self.mean[d] + delta * nb / n;
            out.m2[d] = self.m2[d] + o.m2[d] + delta * delta * na * nb / n;
        }
        out
    }

    /// Population standard deviation.
    pub fn std(&self) -> [f64; STATE_DIM] {
        std::array::from_fn(|d| if self.count == 0 { 0.0 } else { (self.m2[d].max(0.0) / self.count as f64).sqrt() })
    }

    /// Dimensions the scheme cannot scale; they normalize to 0.
    pub fn constant_dims(&self, scheme: NormalizationScheme) -> Vec<usize> {
        let std = self.std();
        (0..STATE_DIM)
            .filter(|&d| match scheme {
                NormalizationScheme::MinMaxToUnit => !(self.max[d] > self.min[d]),
                NormalizationScheme::ZScore => !(std[d] > 0.0),
            })
            .collect()
    }

    fn affine(&self, scheme: NormalizationScheme) -> [(f64, f64, bool); STATE_DIM] {
        let std = self.std();
        std::array::from_fn(|d| match scheme {
            NormalizationScheme::MinMaxToUnit => {
                let range = self.max[d] - self.min[d];
                (self.min[d], range, !(range > 0.0))
            }
            NormalizationScheme::ZScore => (self.mean[d], std[d], !(std[d] > 0.0)),
        })
    }

    pub fn normalize(&self, x: &[f64; STATE_DIM], scheme: NormalizationScheme) -> [f64; STATE_DIM] {
        let a = self.affine(scheme);
        std::array::from_fn(|d| if a[d].2 { 0.0 } else { (x[d] - a[d].0) / a[d].1 })
    }

    /// Inverse of [`normalize`](Self::normalize); constant dimensions map
    /// back to their single observed value.
    pub fn denormalize(&self, y: &[f64; STATE_DIM], scheme: NormalizationScheme) -> [f64; STATE_DIM] {
        let a = self.affine(scheme);
        std::array::from_fn(|d| if a[d].2 { a[d].0 } else { y[d] * a[d].1 + a[d].0 })
    }
}

pub fn row_to_f64(r: &StateRow) -> [f64; STATE_DIM] {
    r.map(f64::from)
}

/// Statistics over every state row of the given episodes.
pub fn compute_stats(exec: Execution, episodes: &[&Episode]) -> Result<NormalizationStats, DatasetError> {
    if episodes.is_empty() || episodes.iter().all(|e| e.is_empty()) {
        return Err(DatasetError::EmptySet);
    }
    let partial = par::map(exec, episodes, |e| {
        let mut s = NormalizationStats::default();
        for r in &e.states {
            s.push(&row_to_f64(r));
        }
        s
    });
    Ok(partial.iter().fold(NormalizationStats::default(), |a, b| a.merge(b)))
}

// ----- on-disk schema ------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadMeta {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViewMeta {
    /// `shape` is `[frames, height, width, 3]`; one PNG per frame.
    Frames { shape: [usize; 4], sha256: Vec<String> },
    ZeroPadded { shape: [usize; 4] },
}

impl ViewMeta {
    pub fn shape(&self) -> [usize; 4] {
        match self {
            ViewMeta::Frames { shape, .. } | ViewMeta::ZeroPadded { shape } => *shape,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub format_version: u32,
    pub episode_id: String,
    pub embodiment: Embodiment,
    pub route: String,
    pub task_text: String,
    pub length: usize,
    pub horizon: usize,
    pub chunk_count: usize,
    pub state_layout: Vec<String>,
    pub states: PayloadMeta,
    pub timestamps: PayloadMeta,
    pub actions: PayloadMeta,
    pub views: BTreeMap<String, ViewMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub episode_id: String,
    pub embodiment: Embodiment,
    pub route: String,
    pub length: usize,
    pub chunk_count: usize,
    /// Path of `meta.json` relative to the dataset root.
    pub meta: String,
    pub meta_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub horizon: usize,
    pub state_layout: Vec<String>,
    /// Action-head route per embodiment present.
    pub routes: BTreeMap<String, String>,
    /// `[height, width]` per view.
    pub views: BTreeMap<String, [u32; 2]>,
    pub normalization: String,
    pub normalization_sha256: String,
    pub episodes: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.episodes.iter().find(|e| e.episode_id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationFile {
    pub format_version: u32,
    pub state_layout: Vec<String>,
    pub per_embodiment: BTreeMap<String, NormalizationStats>,
}

fn f32_bytes(v: impl IntoIterator<Item = f32>) -> Vec<u8> {
    v.into_iter().flat_map(f32::to_le_bytes).collect()
}

fn f64_bytes(v: impl IntoIterator<Item = f64>) -> Vec<u8> {
    v.into_iter().flat_map(f64::to_le_bytes).collect()
}

pub fn decode_f32(bytes: &[u8]) -> Option<Vec<f32>> {
    (bytes.len() % 4 == 0).then(|| {
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    })
}

pub fn decode_f64(bytes: &[u8]) -> Option<Vec<f64>> {
    (bytes.len() % 8 == 0).then(|| {
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    })
}

fn rows_from_f32(v: &[f32]) -> Vec<StateRow> {
    v.chunks_exact(STATE_DIM).map(|c| c.try_into().unwrap()).collect()
}

/// `NNNNNN.png`, zero-padded frame index.
pub fn frame_file(i: usize) -> String {
    format!("{i:06}.png")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))?;
    f.sync_all().map_err(io_err(path))
}

/// Writes `bytes` to `path` via a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::Builder::new()
        .prefix(".tmp-")
        .tempfile_in(dir)
        .map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("serializable");
    s.push(b'\n');
    s
}

/// Writes one episode under `episodes_dir/<id>` through a temporary
/// directory that is renamed into place, replacing any previous copy.
pub fn write_episode(episodes_dir: &Path, ep: &Episode) -> Result<EpisodeMeta, DatasetError> {
    ep.check()?;
    fs::create_dir_all(episodes_dir).map_err(io_err(episodes_dir))?;
    let tmp = tempfile::Builder::new()
        .prefix(&format!(".tmp-{}-", ep.id))
        .tempdir_in(episodes_dir)
        .map_err(io_err(episodes_dir))?;
    let dir = tmp.path();

    let states = f32_bytes(ep.states.iter().flatten().copied());
    let timestamps = f64_bytes(ep.timestamps.iter().copied());
    let chunks = ep.chunks();
    let actions = f32_bytes(chunks.iter().flat_map(|c| c.actions.iter().flatten().copied()));
    write_file(&dir.join("states.bin"), &states)?;
    write_file(&dir.join("timestamps.bin"), &timestamps)?;
    write_file(&dir.join("actions.bin"), &actions)?;

    let mut views = BTreeMap::new();
    for (name, view) in &ep.views {
        let meta = match view {
            View::Frames(frames) => {
                let vdir = dir.join("views").join(name);
                fs::create_dir_all(&vdir).map_err(io_err(&vdir))?;
                let mut hashes = Vec::with_capacity(frames.len());
                for (i, img) in frames.iter().enumerate() {
                    let p = vdir.join(frame_file(i));
                    save_png(img, &p)?;
                    hashes.push(sha256_hex(&fs::read(&p).map_err(io_err(&p))?));
                }
                let [h, w] = view.resolution().unwrap_or([0, 0]);
                ViewMeta::Frames {
                    shape: [frames.len(), h as usize, w as usize, 3],
                    sha256: hashes,
                }
            }
            View::ZeroPadded { frames, height, width } => ViewMeta::ZeroPadded {
                shape: [*frames, *height as usize, *width as usize, 3],
            },
        };
        views.insert(name.clone(), meta);
    }

    let meta = EpisodeMeta {
        format_version: FORMAT_VERSION,
        episode_id: ep.id.clone(),
        embodiment: ep.embodiment,
        route: route_name(ep.embodiment).into(),
        task_text: ep.task_text.clone(),
        length: ep.len(),
        horizon: ep.horizon,
        chunk_count: chunks.len(),
        state_layout: STATE_LAYOUT.iter().map(|s| s.to_string()).collect(),
        states: PayloadMeta {
            dtype: "f32le".into(),
            shape: vec![ep.len(), STATE_DIM],
            sha256: sha256_hex(&states),
        },
        timestamps: PayloadMeta {
            dtype: "f64le".into(),
            shape: vec![ep.len()],
            sha256: sha256_hex(&timestamps),
        },
        actions: PayloadMeta {
            dtype: "f32le".into(),
            shape: vec![chunks.len(), ep.horizon, STATE_DIM],
            sha256: sha256_hex(&actions),
        },
        views,
    };
    write_file(&dir.join("meta.json"), &to_json(&meta))?;

    let dest = episodes_dir.join(&ep.id);
    if dest.exists() {
        fs::remove_dir_all(&dest).map_err(io_err(&dest))?;
    }
    let tmp_path = tmp.keep();
    fs::rename(&tmp_path, &dest).map_err(io_err(&dest))?;
    Ok(meta)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, DatasetError> {
    fs::read(path).map_err(io_err(path))
}

fn verify(path: &Path, bytes: &[u8], expected: &str) -> Result<(), DatasetError> {
    let found = sha256_hex(bytes);
    if found != expected {
        return Err(DatasetError::ChecksumMismatch {
            path: path.to_path_buf(),
            expected: expected.into(),
            found,
        });
    }
    Ok(())
}

fn check_version(path: &Path, found: u32) -> Result<(), DatasetError> {
    if found != FORMAT_VERSION {
        return Err(DatasetError::VersionMismatch {
            path: path.to_path_buf(),
            found,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

/// Parses a JSON file, checking `format_version` before the full schema so
/// that future files fail with a version error rather than a parse error.
fn read_versioned<T: for<'de> Deserialize<'de>>(path: &Path, bytes: &[u8]) -> Result<T, DatasetError> {
    let probe: VersionProbe = serde_json::from_slice(bytes).map_err(|e| parse_err(path, e))?;
    check_version(path, probe.format_version)?;
    serde_json::from_slice(bytes).map_err(|e| parse_err(path, e))
}

pub fn read_episode_meta(dir: &Path) -> Result<EpisodeMeta, DatasetError> {
    let p = dir.join("meta.json");
    read_versioned(&p, &read_bytes(&p)?)
}

/// Reads and verifies an episode directory.
pub fn read_episode(dir: &Path) -> Result<Episode, DatasetError> {
    let meta = read_episode_meta(dir)?;
    let load = |name: &str, pm: &PayloadMeta| -> Result<Vec<u8>, DatasetError> {
        let p = dir.join(name);
        let b = read_bytes(&p)?;
        verify(&p, &b, &pm.sha256)?;
        Ok(b)
    };
    let states_path = dir.join("states.bin");
    let states = decode_f32(&load("states.bin", &meta.states)?)
        .filter(|v| v.len() == meta.length * STATE_DIM)
        .ok_or_else(|| parse_err(&states_path, "payload size does not match declared shape"))?;
    let ts_path = dir.join("timestamps.bin");
    let timestamps = decode_f64(&load("timestamps.bin", &meta.timestamps)?)
        .filter(|v| v.len() == meta.length)
        .ok_or_else(|| parse_err(&ts_path, "payload size does not match declared shape"))?;
    load("actions.bin", &meta.actions)?;

    let mut views = BTreeMap::new();
    for (name, vm) in &meta.views {
        let view = match vm {
            ViewMeta::Frames { shape, sha256 } => {
                let vdir = dir.join("views").join(name);
                if sha256.len() != shape[0] {
                    return Err(parse_err(&vdir, "frame hash count does not match shape"));
                }
                let mut frames = Vec::with_capacity(shape[0]);
                for (i, hash) in sha256.iter().enumerate() {
                    let p = vdir.join(frame_file(i));
                    verify(&p, &read_bytes(&p)?, hash)?;
                    let img = load_png(&p)?;
                    if [img.height as usize, img.width as usize] != [shape[1], shape[2]] {
                        return Err(DatasetError::ViewMismatch {
                            view: name.clone(),
                            expected: [shape[1] as u32, shape[2] as u32],
                            found: [img.height, img.width],
                        });
                    }
                    frames.push(img);
                }
                View::Frames(frames)
            }
            ViewMeta::ZeroPadded { shape } => View::ZeroPadded {
                frames: shape[0],
                height: shape[1] as u32,
                width: shape[2] as u32,
            },
        };
        views.insert(name.clone(), view);
    }
    let ep = Episode {
        id: meta.episode_id,
        embodiment: meta.embodiment,
        task_text: meta.task_text,
        horizon: meta.horizon,
        timestamps,
        states: rows_from_f32(&states),
        views,
    };
    ep.check()?;
    Ok(ep)
}

/// Writes a complete dataset: episodes (in parallel), normalization
/// statistics per embodiment, then the manifest. The manifest is written
/// last and atomically, so readers see either the old or the new dataset.
pub fn write_dataset(
    exec: Execution,
    root: &Path,
    episodes: &[Episode],
    horizon: usize,
) -> Result<DatasetManifest, DatasetError> {
    let mut ids = std::collections::BTreeSet::new();
    for ep in episodes {
        if ep.horizon != horizon {
            return Err(DatasetError::InvalidEpisode(format!(
                "{} uses horizon {}, dataset uses {horizon}",
                ep.id, ep.horizon
            )));
        }
        if !ids.insert(ep.id.as_str()) {
            return Err(DatasetError::InvalidEpisode(format!("duplicate id {}", ep.id)));
        }
    }
    let mut view_shapes: BTreeMap<String, [u32; 2]> = BTreeMap::new();
    for ep in episodes {
        for (name, view) in &ep.views {
            let Some(res) = view.resolution() else { continue };
            match view_shapes.get(name) {
                Some(&prev) if prev != res => {
                    return Err(DatasetError::ViewMismatch {
                        view: name.clone(),
                        expected: prev,
                        found: res,
                    })
                }
                _ => {
                    view_shapes.insert(name.clone(), res);
                }
            }
        }
    }

    let episodes_dir = root.join("episodes");
    fs::create_dir_all(&episodes_dir).map_err(io_err(&episodes_dir))?;
    let metas = par::map(exec, episodes, |ep| write_episode(&episodes_dir, ep));

    let mut entries = Vec::with_capacity(episodes.len());
    let mut routes = BTreeMap::new();
    for (ep, meta) in episodes.iter().zip(metas) {
        meta?;
        let meta_rel = format!("episodes/{}/meta.json", ep.id);
        let meta_path = root.join(&meta_rel);
        let meta_sha256 = sha256_hex(&read_bytes(&meta_path)?);
        routes.insert(ep.embodiment.as_str().to_string(), route_name(ep.embodiment).to_string());
        entries.push(ManifestEntry {
            episode_id: ep.id.clone(),
            embodiment: ep.embodiment,
            route: route_name(ep.embodiment).into(),
            length: ep.len(),
            chunk_count: ep.chunk_count(),
            meta: meta_rel,
            meta_sha256,
        });
    }

    let mut per_embodiment = BTreeMap::new();
    for e in [Embodiment::HumanHand, Embodiment::Robot] {
        let group: Vec<&Episode> = episodes.iter().filter(|ep| ep.embodiment == e).collect();
        if let Ok(stats) = compute_stats(exec, &group) {
            per_embodiment.insert(e.as_str().to_string(), stats);
        }
    }
    let norm = NormalizationFile {
        format_version: FORMAT_VERSION,
        state_layout: STATE_LAYOUT.iter().map(|s| s.to_string()).collect(),
        per_embodiment,
    };
    let norm_bytes = to_json(&norm);
    write_atomic(&root.join(NORMALIZATION_FILE), &norm_bytes)?;

    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        horizon,
        state_layout: STATE_LAYOUT.iter().map(|s| s.to_string()).collect(),
        routes,
        views: view_shapes,
        normalization: NORMALIZATION_FILE.into(),
        normalization_sha256: sha256_hex(&norm_bytes),
        episodes: entries,
    };
    write_atomic(&root.join(MANIFEST_FILE), &to_json(&manifest))?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest, DatasetError> {
    let p = root.join(MANIFEST_FILE);
    read_versioned(&p, &read_bytes(&p)?)
}

pub fn read_normalization(root: &Path, manifest: &DatasetManifest) -> Result<NormalizationFile, DatasetError> {
    let p = root.join(&manifest.normalization);
    let bytes = read_bytes(&p)?;
    verify(&p, &bytes, &manifest.normalization_sha256)?;
    read_versioned(&p, &bytes)
}

/// An opened dataset root.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, DatasetError> {
        let root = root.into();
        let manifest = read_manifest(&root)?;
        Ok(Self { root, manifest })
    }

    pub fn episode_dir(&self, id: &str) -> PathBuf {
        self.root.join("episodes").join(id)
    }

    /// Loads an episode after checking its meta file against the manifest.
    pub fn load_episode(&self, id: &str) -> Result<Episode, DatasetError> {
        let entry = self
            .manifest
            .entry(id)
            .ok_or_else(|| DatasetError::MissingEpisode(id.into()))?;
        let meta_path = self.root.join(&entry.meta);
        verify(&meta_path, &read_bytes(&meta_path)?, &entry.meta_sha256)?;
        read_episode(&self.episode_dir(id))
    }

    pub fn load_all(&self, exec: Execution) -> Result<Vec<Episode>, DatasetError> {
        let ids: Vec<&str> = self.manifest.episodes.iter().map(|e| e.episode_id.as_str()).collect();
        par::map(exec, &ids, |id| self.load_episode(id)).into_iter().collect()
    }
}

// ----- validation ----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    VersionMismatch,
    Checksum,
    Parse,
    Missing,
    Shape,
    Chunk,
    Quaternion,
    Range,
    Time,
    Route,
    ZeroPad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub episode: Option<String>,
    pub t: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{:?}]", self.kind)?;
        if let Some(e) = &self.episode {
            write!(f, " episode {e}")?;
        }
        if let Some(t) = self.t {
            write!(f, " t={t}")?;
        }
        write!(f, ": {}", self.message)
    }
}

/// `w > 0`, or the first nonzero component positive when `w == 0`.
pub fn sign_is_canonical(q: &[f64; 4]) -> bool {
    q.iter().find(|v| **v != 0.0).is_some_and(|v| *v > 0.0)
}

fn finding(kind: FindingKind, episode: Option<&str>, t: Option<usize>, message: impl Into<String>) -> Finding {
    Finding {
        kind,
        episode: episode.map(String::from),
        t,
        message: message.into(),
    }
}

/// Re-checks every on-disk invariant: versions, hashes, payload shapes,
/// the chunk definition, quaternion norms, gripper range, timestamps,
/// routes and zero-padded view shapes. An empty result means clean.
pub fn validate_dataset(exec: Execution, root: &Path) -> Vec<Finding> {
    let manifest = match read_manifest(root) {
        Ok(m) => m,
        Err(e) => {
            let kind = match e {
                DatasetError::VersionMismatch { .. } => FindingKind::VersionMismatch,
                DatasetError::Io { .. } => FindingKind::Missing,
                _ => FindingKind::Parse,
            };
            return vec![finding(kind, None, None, e.to_string())];
        }
    };
    let mut out = Vec::new();
    if let Err(e) = read_normalization(root, &manifest) {
        let kind = match e {
            DatasetError::ChecksumMismatch { .. } => FindingKind::Checksum,
            DatasetError::VersionMismatch { .. } => FindingKind::VersionMismatch,
            DatasetError::Io { .. } => FindingKind::Missing,
            _ => FindingKind::Parse,
        };
        out.push(finding(kind, None, None, e.to_string()));
    }
    if manifest.state_layout != STATE_LAYOUT {
        out.push(finding(FindingKind::Shape, None, None, format!("state layout {:?}", manifest.state_layout)));
    }
    let expected_routes: BTreeMap<String, String> = manifest
        .episodes
        .iter()
        .map(|e| (e.embodiment.as_str().to_string(), route_name(e.embodiment).to_string()))
        .collect();
    if manifest.routes != expected_routes {
        out.push(finding(
            FindingKind::Route,
            None,
            None,
            format!("routes {:?}, expected {:?}", manifest.routes, expected_routes),
        ));
    }
    for entry in &manifest.episodes {
        let expected = route_name(entry.embodiment);
        if entry.route != expected || manifest.routes.get(entry.embodiment.as_str()).map(String::as_str) != Some(expected)
        {
            out.push(finding(
                FindingKind::Route,
                Some(&entry.episode_id),
                None,
                format!("route for {} must be {expected}", entry.embodiment.as_str()),
            ));
        }
    }
    let per_episode = par::map(exec, &manifest.episodes, |entry| validate_episode(root, &manifest, entry));
    let mut view_names = std::collections::BTreeSet::new();
    let mut all_read = true;
    for (findings, names) in per_episode {
        out.extend(findings);
        match names {
            Some(n) => view_names.extend(n),
            None => all_read = false,
        }
    }
    if all_read {
        for name in manifest.views.keys().filter(|k| !view_names.contains(*k)) {
            out.push(finding(FindingKind::Shape, None, None, format!("manifest view {name} is used by no episode")));
        }
    }
    out
}

/// Findings for one episode, plus its view names when its meta was readable.
fn validate_episode(
    root: &Path,
    manifest: &DatasetManifest,
    entry: &ManifestEntry,
) -> (Vec<Finding>, Option<Vec<String>>) {
    let id = entry.episode_id.as_str();
    let mut out = Vec::new();
    let mut push = |kind, t, msg: String| out.push(finding(kind, Some(id), t, msg));

    let meta_path = root.join(&entry.meta);
    let meta_bytes = match fs::read(&meta_path) {
        Ok(b) => b,
        Err(e) => {
            push(FindingKind::Missing, None, format!("{}: {e}", meta_path.display()));
            return (out, None);
        }
    };
    if sha256_hex(&meta_bytes) != entry.meta_sha256 {
        push(FindingKind::Checksum, None, format!("{} does not match the manifest hash", meta_path.display()));
    }
    let meta: EpisodeMeta = match read_versioned(&meta_path, &meta_bytes) {
        Ok(m) => m,
        Err(e) => {
            let kind = if matches!(e, DatasetError::VersionMismatch { .. }) {
                FindingKind::VersionMismatch
            } else {
                FindingKind::Parse
            };
            push(kind, None, e.to_string());
            return (out, None);
        }
    };
    let dir = meta_path.parent().unwrap().to_path_buf();
    if meta.episode_id != id || meta.embodiment != entry.embodiment || meta.route != route_name(meta.embodiment) {
        push(FindingKind::Route, None, "meta id/embodiment/route disagree with the manifest".into());
    }
    if meta.state_layout != STATE_LAYOUT {
        push(FindingKind::Shape, None, format!("state layout {:?}", meta.state_layout));
    }
    if meta.horizon != manifest.horizon {
        push(FindingKind::Shape, None, format!("horizon {} vs dataset {}", meta.horizon, manifest.horizon));
    }
    let expected_chunks = chunk_count(meta.length, meta.horizon);
    if meta.chunk_count != expected_chunks || entry.chunk_count != expected_chunks || entry.length != meta.length {
        push(
            FindingKind::Shape,
            None,
            format!("chunk count {} for length {} and horizon {}", meta.chunk_count, meta.length, meta.horizon),
        );
    }

    let mut payload = |name: &str, pm: &PayloadMeta, shape: Vec<usize>, width: usize| -> Option<Vec<u8>> {
        let p = dir.join(name);
        let bytes = match fs::read(&p) {
            Ok(b) => b,
            Err(e) => {
                push(FindingKind::Missing, None, format!("{}: {e}", p.display()));
                return None;
            }
        };
        if sha256_hex(&bytes) != pm.sha256 {
            push(FindingKind::Checksum, None, format!("{name} does not match its recorded hash"));
        }
        let n: usize = shape.iter().product();
        if pm.shape != shape || bytes.len() != n * width {
            push(
                FindingKind::Shape,
                None,
                format!("{name}: {} bytes, declared {:?}, expected {:?}", bytes.len(), pm.shape, shape),
            );
            return None;
        }
        Some(bytes)
    };
    let states = payload("states.bin", &meta.states, vec![meta.length, STATE_DIM], 4)
        .and_then(|b| decode_f32(&b))
        .map(|v| rows_from_f32(&v));
    let timestamps =
        payload("timestamps.bin", &meta.timestamps, vec![meta.length], 8).and_then(|b| decode_f64(&b));
    let actions = payload("actions.bin", &meta.actions, vec![expected_chunks, meta.horizon, STATE_DIM], 4)
        .and_then(|b| decode_f32(&b))
        .map(|v| rows_from_f32(&v));

    if let Some(states) = &states {
        for (t, r) in states.iter().enumerate() {
            if r.iter().any(|v| !v.is_finite()) {
                push(FindingKind::Range, Some(t), "non-finite state".into());
                continue;
            }
            let q = [r[3], r[4], r[5], r[6]].map(f64::from);
            let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
                push(FindingKind::Quaternion, Some(t), format!("quaternion norm {norm}"));
            } else if !sign_is_canonical(&q) {
                push(FindingKind::Quaternion, Some(t), "quaternion sign is not canonical".into());
            }
            if !(0.0..=1.0).contains(&r[7]) {
                push(FindingKind::Range, Some(t), format!("gripper {} outside [0, 1]", r[7]));
            }
        }
        if let Some(actions) = &actions {
            for t in 0..expected_chunks {
                let stored = &actions[t * meta.horizon..(t + 1) * meta.horizon];
                if let Some(k) = (0..meta.horizon).find(|&k| stored[k].map(f32::to_bits) != states[t + 1 + k].map(f32::to_bits)) {
                    push(
                        FindingKind::Chunk,
                        Some(t),
                        format!("action {k} differs from state {}", t + 1 + k),
                    );
                }
            }
        }
    }
    if let Some(ts) = &timestamps {
        if let Some(i) = (1..ts.len()).find(|&i| !(ts[i] > ts[i - 1])) {
            push(FindingKind::Time, Some(i), "timestamps are not strictly increasing".into());
        }
        if ts.iter().any(|t| !t.is_finite()) {
            push(FindingKind::Time, None, "non-finite timestamp".into());
        }
    }

    for (name, vm) in &meta.views {
        let shape = vm.shape();
        if !manifest.views.contains_key(name) {
            push(FindingKind::Shape, None, format!("view {name} is not declared in the manifest"));
        }
        if shape[0] != meta.length || shape[3] != 3 || shape[1] == 0 || shape[2] == 0 {
            push(FindingKind::Shape, None, format!("view {name} declares shape {shape:?}"));
        }
        if let Some(&[h, w]) = manifest.views.get(name) {
            if [h as usize, w as usize] != [shape[1], shape[2]] {
                push(
                    FindingKind::Shape,
                    None,
                    format!("view {name} is {}x{}, manifest declares {h}x{w}", shape[1], shape[2]),
                );
            }
        }
        match vm {
            ViewMeta::ZeroPadded { .. } => {
                let vdir = dir.join("views").join(name);
                if vdir.exists() {
                    push(FindingKind::ZeroPad, None, format!("zero-padded view {name} has frame files"));
                }
            }
            ViewMeta::Frames { sha256, .. } => {
                if sha256.len() != shape[0] {
                    push(FindingKind::Shape, None, format!("view {name} lists {} frame hashes", sha256.len()));
                }
                for (i, hash) in sha256.iter().enumerate() {
                    let p = dir.join("views").join(name).join(frame_file(i));
                    match fs::read(&p) {
                        Ok(b) if sha256_hex(&b) == *hash => {}
                        Ok(_) => push(FindingKind::Checksum, Some(i), format!("{} does not match its hash", p.display())),
                        Err(e) => push(FindingKind::Missing, Some(i), format!("{}: {e}", p.display())),
                    }
                }
            }
        }
    }
    let names = meta.views.keys().cloned().collect();
    (out, Some(names))
}

// ----- robot logs ----------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotLogFrame {
    pub t: f64,
    pub position: [f64; 3],
    /// `[w, x, y, z]`; normalized and sign-canonicalized on import.
    pub orientation: [f64; 4],
    pub gripper: f64,
}

/// Teleoperation log. View paths are directories of `NNNNNN.png` frames,
/// relative to the log file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotLog {
    pub format: String,
    pub version: u32,
    pub episode_id: String,
    #[serde(default)]
    pub task_text: String,
    pub views: BTreeMap<String, String>,
    pub frames: Vec<RobotLogFrame>,
}

impl RobotLog {
    pub fn new(episode_id: impl Into<String>, task_text: impl Into<String>, frames: Vec<RobotLogFrame>) -> Self {
        Self {
            format: ROBOT_LOG_FORMAT.into(),
            version: 1,
            episode_id: episode_id.into(),
            task_text: task_text.into(),
            views: [TOP_VIEW, WRIST_VIEW].iter().map(|v| (v.to_string(), v.to_string())).collect(),
            frames,
        }
    }
}

/// Reads a robot log and both camera streams. `expected` gives
/// `[height, width]` per view when a dataset already declares them.
pub fn import_robot_log(
    path: &Path,
    horizon: usize,
    expected: &BTreeMap<String, [u32; 2]>,
) -> Result<Episode, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let log: RobotLog = serde_json::from_str(&text).map_err(|e| parse_err(path, e))?;
    if log.format != ROBOT_LOG_FORMAT || log.version != 1 {
        return Err(parse_err(path, format!("unsupported log {} v{}", log.format, log.version)));
    }
    if log.frames.is_empty() {
        return Err(parse_err(path, "log has no frames"));
    }
    for view in [TOP_VIEW, WRIST_VIEW] {
        if !log.views.contains_key(view) {
            return Err(parse_err(path, format!("robot logs need a {view} view")));
        }
    }
    let mut poses = Vec::with_capacity(log.frames.len());
    for (i, f) in log.frames.iter().enumerate() {
        let [w, x, y, z] = f.orientation;
        let q = UnitQuaternion::new(w, x, y, z)
            .ok_or_else(|| parse_err(path, format!("frame {i}: invalid orientation")))?;
        if !(0.0..=1.0).contains(&f.gripper) || f.position.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(path, format!("frame {i}: position or gripper out of range")));
        }
        poses.push(crate::retarget::EndEffectorPose {
            timestamp: f.t,
            position: Vec3::from_array(f.position),
            orientation: q,
            gripper: f.gripper,
            frame: FrameTag::RobotBase,
        });
    }
    let traj = StateTrajectory::new(poses, Embodiment::Robot, FrameTag::RobotBase)
        .map_err(|e| parse_err(path, e))?;

    let base = path.parent().unwrap_or(Path::new("."));
    let mut views = BTreeMap::new();
    for (name, rel) in &log.views {
        let dir = base.join(rel);
        let mut frames = Vec::with_capacity(traj.len());
        for i in 0..traj.len() {
            let p = dir.join(frame_file(i));
            if !p.exists() {
                return Err(parse_err(&p, format!("view {name} is missing frame {i}")));
            }
            frames.push(load_png(&p)?);
        }
        let res = [frames[0].height, frames[0].width];
        let declared = expected.get(name).copied().unwrap_or(res);
        if let Some(f) = frames.iter().find(|f| [f.height, f.width] != declared) {
            return Err(DatasetError::ViewMismatch {
                view: name.clone(),
                expected: declared,
                found: [f.height, f.width],
            });
        }
        views.insert(name.clone(), View::Frames(frames));
    }
    Episode::from_trajectory(log.episode_id, log.task_text, &traj, horizon, views)
}

/// Writes a robot log and its frames under `dir` (`log.json`, `top/`,
/// `wrist/`).
pub fn write_robot_log(dir: &Path, log: &RobotLog, views: &BTreeMap<String, Vec<Image>>) -> Result<PathBuf, DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, frames) in views {
        let rel = log.views.get(name).cloned().unwrap_or_else(|| name.clone());
        let vdir = dir.join(rel);
        fs::create_dir_all(&vdir).map_err(io_err(&vdir))?;
        for (i, img) in frames.iter().enumerate() {
            save_png(img, vdir.join(frame_file(i)))?;
        }
    }
    let p = dir.join("log.json");
    write_file(&p, &to_json(log))?;
    Ok(p)
}
