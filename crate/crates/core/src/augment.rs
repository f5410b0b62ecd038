//! Visual augmentation: rasterizes the reconstructed hand mesh into the
//! camera image and paints the covered pixels one flat random color.
//!
//! The rasterizer snaps projected vertices to 1/256 pixel and evaluates
//! integer edge functions at pixel centers, so coverage is exact and
//! reproducible. Pixel centers strictly inside a triangle, or exactly on one
//! of its top or left edges, are covered. Faces with a vertex at or behind
//! the near plane are discarded, not clipped. Among overlapping faces the
//! nearest (largest interpolated `1/z`) wins; on exact depth ties the
//! earlier face wins.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::CameraModel;
use crate::geometry::Vec3;
use crate::hand::{keypoints, HandFrame, NUM_KEYPOINTS};
use crate::par::{self, Execution};

/// Faces with any vertex at `z <= NEAR_PLANE` are discarded.
pub const NEAR_PLANE: f64 = 1e-4;
pub const SUBPIXEL_BITS: u32 = 8;
const SUBPIXEL: f64 = (1u32 << SUBPIXEL_BITS) as f64;
const HALF_PIXEL: i64 = 1 << (SUBPIXEL_BITS - 1);
/// Projected coordinates beyond this many pixels are discarded to keep the
/// fixed-point edge functions in range.
pub const MAX_SCREEN_COORD: f64 = 1e6;
pub const NO_FACE: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("no renderable faces")]
    EmptyMesh,
    #[error("augmentation needs a mesh topology")]
    MissingTopology,
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("expected {expected} vertices, got {got}")]
    VertexCount { expected: usize, got: usize },
    #[error("size mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("image error for {path}: {message}")]
    Image { path: String, message: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandPart {
    Thumb,
    Index,
    Middle,
    Ring,
    Pinky,
    Palm,
}

impl HandPart {
    pub const ALL: [HandPart; 6] = [
        HandPart::Thumb,
        HandPart::Index,
        HandPart::Middle,
        HandPart::Ring,
        HandPart::Pinky,
        HandPart::Palm,
    ];

    /// Part of each keypoint, used for nearest-keypoint labeling.
    pub fn of_keypoint(index: usize) -> HandPart {
        match index {
            keypoints::WRIST => HandPart::Palm,
            1..=4 => HandPart::Thumb,
            5..=8 => HandPart::Index,
            9..=12 => HandPart::Middle,
            13..=16 => HandPart::Ring,
            _ => HandPart::Pinky,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshTopology {
    faces: Vec<[u32; 3]>,
    labels: Vec<HandPart>,
    /// True when labels came from the nearest-keypoint heuristic.
    pub approximate_labels: bool,
}

impl MeshTopology {
    pub fn new(faces: Vec<[u32; 3]>, labels: Vec<HandPart>) -> Result<Self, AugmentError> {
        let n = labels.len();
        for (i, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v as usize >= n) {
                return Err(AugmentError::InvalidTopology(format!("face {i} indexes past {n} vertices")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(AugmentError::InvalidTopology(format!("face {i} repeats a vertex")));
            }
        }
        Ok(Self {
            faces,
            labels,
            approximate_labels: false,
        })
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn labels(&self) -> &[HandPart] {
        &self.labels
    }

    pub fn vertex_count(&self) -> usize {
        self.labels.len()
    }

    /// Same faces with labels replaced by the nearest-keypoint heuristic.
    pub fn relabeled_from_keypoints(&self, vertices: &[Vec3], kp: &[Vec3; NUM_KEYPOINTS]) -> Self {
        Self {
            faces: self.faces.clone(),
            labels: label_by_nearest_keypoint(vertices, kp),
            approximate_labels: true,
        }
    }
}

/// Assigns each vertex the part of its nearest keypoint.
pub fn label_by_nearest_keypoint(vertices: &[Vec3], kp: &[Vec3; NUM_KEYPOINTS]) -> Vec<HandPart> {
    vertices
        .iter()
        .map(|v| {
            let (best, _) = kp
                .iter()
                .enumerate()
                .map(|(i, k)| (i, v.distance(*k)))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            HandPart::of_keypoint(best)
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct TopologyFile {
    format: String,
    version: u32,
    vertex_count: usize,
    faces: Vec<[u32; 3]>,
    labels: Vec<HandPart>,
}

pub fn topology_to_string(topo: &MeshTopology) -> String {
    let file = TopologyFile {
        format: "hand-topology".into(),
        version: 1,
        vertex_count: topo.vertex_count(),
        faces: topo.faces.clone(),
        labels: topo.labels.clone(),
    };
    serde_json::to_string(&file).unwrap()
}

pub fn parse_topology(text: &str) -> Result<MeshTopology, AugmentError> {
    let file: TopologyFile = serde_json::from_str(text).map_err(|e| AugmentError::Parse(e.to_string()))?;
    if file.format != "hand-topology" || file.version != 1 {
        return Err(AugmentError::Parse(format!(
            "unsupported topology format {} v{}",
            file.format, file.version
        )));
    }
    if file.labels.len() != file.vertex_count {
        return Err(AugmentError::InvalidTopology(format!(
            "{} labels for {} vertices",
            file.labels.len(),
            file.vertex_count
        )));
    }
    MeshTopology::new(file.faces, file.labels)
}

pub fn load_topology(path: impl AsRef<Path>) -> Result<MeshTopology, AugmentError> {
    parse_topology(&fs::read_to_string(path)?)
}

pub fn save_topology(topo: &MeshTopology, path: impl AsRef<Path>) -> Result<(), AugmentError> {
    fs::write(path, topology_to_string(topo))?;
    Ok(())
}

/// Row-major RGB8 image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; width as usize * height as usize * 3],
        }
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self, AugmentError> {
        if data.len() != width as usize * height as usize * 3 {
            return Err(AugmentError::DimensionMismatch(format!(
                "{} bytes for {width}x{height} RGB",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

pub fn load_png(path: impl AsRef<Path>) -> Result<Image, AugmentError> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| AugmentError::Image {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    Image::from_raw(w, h, rgb.into_raw())
}

pub fn save_png(img: &Image, path: impl AsRef<Path>) -> Result<(), AugmentError> {
    let path = path.as_ref();
    let buf = image::RgbImage::from_raw(img.width, img.height, img.data.clone())
        .ok_or_else(|| AugmentError::DimensionMismatch("image buffer".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| AugmentError::Image {
            path: path.display().to_string(),
            message: e.to_string(),
        })
}

/// Per-pixel rasterization result: covering face index and its `1/z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    pub width: u32,
    pub height: u32,
    faces: Vec<u32>,
    inv_depth: Vec<f64>,
}

impl Coverage {
    pub fn empty(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            faces: vec![NO_FACE; n],
            inv_depth: vec![0.0; n],
        }
    }

    pub fn face_at(&self, x: u32, y: u32) -> Option<u32> {
        let f = self.faces[y as usize * self.width as usize + x as usize];
        (f != NO_FACE).then_some(f)
    }

    pub fn depth_at(&self, x: u32, y: u32) -> Option<f64> {
        self.face_at(x, y)
            .map(|_| 1.0 / self.inv_depth[y as usize * self.width as usize + x as usize])
    }

    pub fn is_covered(&self, x: u32, y: u32) -> bool {
        self.face_at(x, y).is_some()
    }

    pub fn face_buffer(&self) -> &[u32] {
        &self.faces
    }

    pub fn covered_count(&self) -> usize {
        self.faces.iter().filter(|&&f| f != NO_FACE).count()
    }

    /// Mean pixel-center coordinate of covered pixels.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.is_covered(x, y) {
                    sx += x as f64 + 0.5;
                    sy += y as f64 + 0.5;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// True if every pixel covered here is also covered in `other`.
    pub fn is_subset_of(&self, other: &Coverage) -> bool {
        self.faces
            .iter()
            .zip(&other.faces)
            .all(|(a, b)| *a == NO_FACE || *b != NO_FACE)
    }
}

/// A projected vertex in 1/256-pixel fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedPoint {
    pub x: i64,
    pub y: i64,
}

/// Projects a camera-frame vertex and snaps it to the sub-pixel grid.
/// `None` if the vertex is at/behind the near plane or projects absurdly far.
pub fn project_fixed(cam: &CameraModel, p: Vec3) -> Option<FixedPoint> {
    if !(p.z > NEAR_PLANE) {
        return None;
    }
    let u = cam.fx * (p.x / p.z) + cam.cx;
    let v = cam.fy * (p.y / p.z) + cam.cy;
    if !(u.abs() <= MAX_SCREEN_COORD && v.abs() <= MAX_SCREEN_COORD) {
        return None;
    }
    Some(FixedPoint {
        x: (u * SUBPIXEL).round() as i64,
        y: (v * SUBPIXEL).round() as i64,
    })
}

/// Fixed-point coordinate of a pixel center.
pub fn pixel_center(x: u32, y: u32) -> FixedPoint {
    FixedPoint {
        x: ((x as i64) << SUBPIXEL_BITS) + HALF_PIXEL,
        y: ((y as i64) << SUBPIXEL_BITS) + HALF_PIXEL,
    }
}

fn orient(a: FixedPoint, b: FixedPoint, p: FixedPoint) -> i64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Top or left edge of a positively oriented triangle (image y down).
fn is_top_left(a: FixedPoint, b: FixedPoint) -> bool {
    (a.y == b.y && b.x > a.x) || b.y < a.y
}

/// Which faces to draw: every vertex of a face must carry a listed part.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartFilter(BTreeSet<HandPart>);

impl PartFilter {
    pub fn all() -> Self {
        Self(HandPart::ALL.into_iter().collect())
    }

    pub fn thumb_and_index() -> Self {
        Self([HandPart::Thumb, HandPart::Index].into_iter().collect())
    }

    pub fn of(parts: &[HandPart]) -> Self {
        Self(parts.iter().copied().collect())
    }

    pub fn contains(&self, p: HandPart) -> bool {
        self.0.contains(&p)
    }
}

/// Z-buffered coverage of the filtered faces.
pub fn rasterize_mesh(
    cam: &CameraModel,
    vertices: &[Vec3],
    topo: &MeshTopology,
    subset: &PartFilter,
) -> Result<Coverage, AugmentError> {
    if vertices.len() != topo.vertex_count() {
        return Err(AugmentError::VertexCount {
            expected: topo.vertex_count(),
            got: vertices.len(),
        });
    }
    let (w, h) = (cam.width, cam.height);
    let mut cov = Coverage::empty(w, h);
    let mut renderable = 0usize;
    for (fi, face) in topo.faces().iter().enumerate() {
        if !face.iter().all(|&v| subset.contains(topo.labels[v as usize])) {
            continue;
        }
        let vs = face.map(|v| vertices[v as usize]);
        let proj = vs.map(|v| project_fixed(cam, v));
        let (Some(p0), Some(mut p1), Some(mut p2)) = (proj[0], proj[1], proj[2]) else {
            continue;
        };
        renderable += 1;
        let mut iz = [1.0 / vs[0].z, 1.0 / vs[1].z, 1.0 / vs[2].z];
        let mut area = orient(p0, p1, p2);
        if area == 0 {
            continue;
        }
        if area < 0 {
            std::mem::swap(&mut p1, &mut p2);
            iz.swap(1, 2);
            area = -area;
        }
        let min_x = p0.x.min(p1.x).min(p2.x);
        let max_x = p0.x.max(p1.x).max(p2.x);
        let min_y = p0.y.min(p1.y).min(p2.y);
        let max_y = p0.y.max(p1.y).max(p2.y);
        let sub = 1i64 << SUBPIXEL_BITS;
        let x0 = (min_x.div_euclid(sub) - 1).max(0);
        let x1 = (max_x.div_euclid(sub) + 1).min(w as i64 - 1);
        let y0 = (min_y.div_euclid(sub) - 1).max(0);
        let y1 = (max_y.div_euclid(sub) + 1).min(h as i64 - 1);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let tl = [is_top_left(p1, p2), is_top_left(p2, p0), is_top_left(p0, p1)];
        for y in y0..=y1 {
            for x in x0..=x1 {
                let c = pixel_center(x as u32, y as u32);
                let wts = [orient(p1, p2, c), orient(p2, p0, c), orient(p0, p1, c)];
                let inside = wts.iter().zip(tl).all(|(&wt, top_left)| wt > 0 || (wt == 0 && top_left));
                if !inside {
                    continue;
                }
                let d = (wts[0] as f64 * iz[0] + wts[1] as f64 * iz[1] + wts[2] as f64 * iz[2]) / area as f64;
                let idx = y as usize * w as usize + x as usize;
                if d > cov.inv_depth[idx] {
                    cov.inv_depth[idx] = d;
                    cov.faces[idx] = fi as u32;
                }
            }
        }
    }
    if renderable == 0 {
        return Err(AugmentError::EmptyMesh);
    }
    Ok(cov)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentMode {
    Full,
    Partial,
    None,
}

impl AugmentMode {
    pub fn suffix(self) -> &'static str {
        match self {
            AugmentMode::Full => "full",
            AugmentMode::Partial => "partial",
            AugmentMode::None => "none",
        }
    }

    pub fn filter(self) -> Option<PartFilter> {
        match self {
            AugmentMode::Full => Some(PartFilter::all()),
            AugmentMode::Partial => Some(PartFilter::thumb_and_index()),
            AugmentMode::None => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorGranularity {
    Frame,
    Episode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub mode: AugmentMode,
    pub color_seed: u64,
    /// Degrees, within `[0, 360)`.
    pub hue: [f64; 2],
    pub saturation: [f64; 2],
    pub value: [f64; 2],
    pub per: ColorGranularity,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            mode: AugmentMode::Full,
            color_seed: 0,
            hue: [0.0, 360.0],
            saturation: [0.3, 1.0],
            value: [0.4, 1.0],
            per: ColorGranularity::Frame,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let ok = |r: [f64; 2], lo: f64, hi: f64| lo <= r[0] && r[0] <= r[1] && r[1] <= hi;
        if !ok(self.hue, 0.0, 360.0) || !ok(self.saturation, 0.0, 1.0) || !ok(self.value, 0.0, 1.0) {
            return Err(AugmentError::InvalidConfig(format!(
                "color ranges out of bounds: hue {:?} sat {:?} val {:?}",
                self.hue, self.saturation, self.value
            )));
        }
        Ok(())
    }

    /// Flat hand color for a frame. The generator is keyed by
    /// `color_seed ^ frame_index` (or `color_seed` alone per episode), so
    /// draws do not depend on processing order.
    pub fn draw_color(&self, frame_index: u64) -> [u8; 3] {
        let key = match self.per {
            ColorGranularity::Frame => self.color_seed ^ frame_index,
            ColorGranularity::Episode => self.color_seed,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let mut draw = |r: [f64; 2]| if r[0] < r[1] { rng.random_range(r[0]..r[1]) } else { r[0] };
        let h = draw(self.hue);
        let s = draw(self.saturation);
        let v = draw(self.value);
        hsv_to_rgb(h, s, v)
    }
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0);
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r, g, b].map(|ch| ((ch + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// Paints covered pixels with the frame's color; every other pixel is
/// copied unchanged.
pub fn augment_frame(
    img: &Image,
    coverage: &Coverage,
    cfg: &AugmentConfig,
    frame_index: u64,
) -> Result<Image, AugmentError> {
    if coverage.width != img.width || coverage.height != img.height {
        return Err(AugmentError::DimensionMismatch(format!(
            "coverage {}x{} vs image {}x{}",
            coverage.width, coverage.height, img.width, img.height
        )));
    }
    if cfg.mode == AugmentMode::None {
        return Ok(img.clone());
    }
    let color = cfg.draw_color(frame_index);
    let mut out = img.clone();
    for (px, &face) in out.data.chunks_exact_mut(3).zip(coverage.face_buffer()) {
        if face != NO_FACE {
            px.copy_from_slice(&color);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentStats {
    pub frames: usize,
    pub augmented: usize,
    pub missing_mesh: usize,
    pub empty_render: usize,
    pub covered_pixels: Vec<usize>,
}

impl AugmentStats {
    pub fn augmented_fraction(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            self.augmented as f64 / self.frames as f64
        }
    }
}

enum FrameOutcome {
    Augmented(Image, usize),
    MissingMesh,
    Empty,
    Unchanged,
}

/// Augments a time-aligned sequence of images and hand frames. Frames
/// without mesh vertices, or whose mesh renders nothing, pass through.
pub fn augment_episode(
    exec: Execution,
    frames: &[Image],
    hand_frames: &[HandFrame],
    cam: &CameraModel,
    topo: Option<&MeshTopology>,
    cfg: &AugmentConfig,
) -> Result<(Vec<Image>, AugmentStats), AugmentError> {
    cfg.validate()?;
    if frames.len() != hand_frames.len() {
        return Err(AugmentError::DimensionMismatch(format!(
            "{} images vs {} hand frames",
            frames.len(),
            hand_frames.len()
        )));
    }
    if let Some(img) = frames.iter().find(|i| i.width != cam.width || i.height != cam.height) {
        return Err(AugmentError::DimensionMismatch(format!(
            "image {}x{} vs camera {}x{}",
            img.width, img.height, cam.width, cam.height
        )));
    }
    let filter = cfg.mode.filter();
    if filter.is_some() && topo.is_none() {
        return Err(AugmentError::MissingTopology);
    }

    let outcomes = par::map_range(exec, frames.len(), |i| -> Result<FrameOutcome, AugmentError> {
        let (Some(filter), Some(topo)) = (filter.as_ref(), topo) else {
            return Ok(FrameOutcome::Unchanged);
        };
        let Some(verts) = hand_frames[i].vertices.as_deref() else {
            return Ok(FrameOutcome::MissingMesh);
        };
        match rasterize_mesh(cam, verts, topo, filter) {
            Ok(cov) => {
                let n = cov.covered_count();
                Ok(FrameOutcome::Augmented(augment_frame(&frames[i], &cov, cfg, i as u64)?, n))
            }
            Err(AugmentError::EmptyMesh) => Ok(FrameOutcome::Empty),
            Err(e) => Err(e),
        }
    });

    let mut stats = AugmentStats {
        frames: frames.len(),
        ..Default::default()
    };
    let mut out = Vec::with_capacity(frames.len());
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome? {
            FrameOutcome::Augmented(img, n) => {
                stats.augmented += 1;
                stats.covered_pixels.push(n);
                out.push(img);
            }
            FrameOutcome::MissingMesh => {
                stats.missing_mesh += 1;
                stats.covered_pixels.push(0);
                out.push(frames[i].clone());
            }
            FrameOutcome::Empty => {
                stats.empty_render += 1;
                stats.covered_pixels.push(0);
                out.push(frames[i].clone());
            }
            FrameOutcome::Unchanged => {
                stats.covered_pixels.push(0);
                out.push(frames[i].clone());
            }
        }
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam(w: u32, h: u32) -> CameraModel {
        CameraModel::new(100.0, 100.0, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap()
    }

    fn tri_topo(n_faces: usize) -> MeshTopology {
        let faces = (0..n_faces as u32).map(|f| [3 * f, 3 * f + 1, 3 * f + 2]).collect();
        MeshTopology::new(faces, vec![HandPart::Palm; 3 * n_faces]).unwrap()
    }

    /// Camera-frame point that projects to pixel (u, v) at depth z.
    fn unproject(c: &CameraModel, u: f64, v: f64, z: f64) -> Vec3 {
        Vec3::new((u - c.cx) / c.fx * z, (v - c.cy) / c.fy * z, z)
    }

    #[test]
    fn nearer_triangle_wins_overlap() {
        let c = cam(32, 32);
        let mut verts = Vec::new();
        for &z in &[2.0, 1.0] {
            verts.push(unproject(&c, 2.0, 2.0, z));
            verts.push(unproject(&c, 30.0, 2.0, z));
            verts.push(unproject(&c, 2.0, 30.0, z));
        }
        let cov = rasterize_mesh(&c, &verts, &tri_topo(2), &PartFilter::all()).unwrap();
        assert_eq!(cov.face_at(5, 5), Some(1));
        assert!((cov.depth_at(5, 5).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cov.face_at(31, 31), None);
    }

    #[test]
    fn shared_edge_pixels_are_covered_once() {
        // Square split along its diagonal, with the diagonal through pixel
        // centers: every center in the square is covered by exactly one face.
        let c = cam(16, 16);
        let corners = [(2.5, 2.5), (12.5, 2.5), (12.5, 12.5), (2.5, 12.5)];
        let v: Vec<Vec3> = corners.iter().map(|&(u, vv)| unproject(&c, u, vv, 1.0)).collect();
        let faces = vec![[0, 1, 2], [0, 2, 3]];
        let topo = MeshTopology::new(faces.clone(), vec![HandPart::Palm; 4]).unwrap();
        let both = rasterize_mesh(&c, &v, &topo, &PartFilter::all()).unwrap();
        let a = rasterize_mesh(&c, &v, &MeshTopology::new(vec![faces[0]], vec![HandPart::Palm; 4]).unwrap(), &PartFilter::all()).unwrap();
        let b = rasterize_mesh(&c, &v, &MeshTopology::new(vec![faces[1]], vec![HandPart::Palm; 4]).unwrap(), &PartFilter::all()).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                let n = a.is_covered(x, y) as u32 + b.is_covered(x, y) as u32;
                assert!(n <= 1, "pixel ({x},{y}) covered twice");
                assert_eq!(both.is_covered(x, y), n == 1);
            }
        }
        // Pixel centers 2.5..12.5 on each axis: top and left edges in,
        // bottom and right edges out -> 10 x 10 pixels.
        assert_eq!(both.covered_count(), 100);
    }

    #[test]
    fn behind_camera_is_empty_mesh() {
        let c = cam(16, 16);
        let verts = vec![Vec3::new(0.0, 0.0, -1.0), Vec3::new(1.0, 0.0, -1.0), Vec3::new(0.0, 1.0, -1.0)];
        assert!(matches!(
            rasterize_mesh(&c, &verts, &tri_topo(1), &PartFilter::all()),
            Err(AugmentError::EmptyMesh)
        ));
        assert!(matches!(
            rasterize_mesh(&c, &verts, &tri_topo(1), &PartFilter::of(&[HandPart::Thumb])),
            Err(AugmentError::EmptyMesh)
        ));
    }

    #[test]
    fn topology_validation() {
        assert!(MeshTopology::new(vec![[0, 1, 3]], vec![HandPart::Palm; 3]).is_err());
        assert!(MeshTopology::new(vec![[0, 1, 1]], vec![HandPart::Palm; 3]).is_err());
        let t = tri_topo(2);
        assert_eq!(parse_topology(&topology_to_string(&t)).unwrap(), t);
    }

    #[test]
    fn none_mode_and_empty_coverage_are_identity() {
        let mut img = Image::new(8, 8);
        for (i, b) in img.data.iter_mut().enumerate() {
            *b = (i * 7 % 251) as u8;
        }
        let mut cov = Coverage::empty(8, 8);
        let cfg = AugmentConfig::default();
        assert_eq!(augment_frame(&img, &cov, &cfg, 3).unwrap(), img);
        cov.faces[10] = 0;
        let none = AugmentConfig { mode: AugmentMode::None, ..cfg };
        assert_eq!(augment_frame(&img, &cov, &none, 3).unwrap(), img);
        let out = augment_frame(&img, &cov, &cfg, 3).unwrap();
        assert_eq!(out.pixel(2, 1), cfg.draw_color(3));
        for i in (0..64).filter(|&i| i != 10) {
            assert_eq!(out.data[i * 3..i * 3 + 3], img.data[i * 3..i * 3 + 3]);
        }
    }

    #[test]
    fn colors_are_seeded_and_in_range() {
        let cfg = AugmentConfig { color_seed: 99, ..Default::default() };
        assert_eq!(cfg.draw_color(5), cfg.draw_color(5));
        let distinct: BTreeSet<[u8; 3]> = (0..50).map(|i| cfg.draw_color(i)).collect();
        assert!(distinct.len() > 40);
        let ep = AugmentConfig { per: ColorGranularity::Episode, ..cfg };
        assert_eq!(ep.draw_color(1), ep.draw_color(7));
        for i in 0..200 {
            let [r, g, b] = cfg.draw_color(i);
            let max = r.max(g).max(b) as f64 / 255.0;
            assert!(max >= 0.4 - 1.0 / 255.0);
        }
    }

    #[test]
    fn hsv_primaries() {
        assert_eq!(hsv_to_rgb(0.0, 1.0, 1.0), [255, 0, 0]);
        assert_eq!(hsv_to_rgb(120.0, 1.0, 1.0), [0, 255, 0]);
        assert_eq!(hsv_to_rgb(240.0, 1.0, 1.0), [0, 0, 255]);
        assert_eq!(hsv_to_rgb(77.0, 0.0, 0.5), [128, 128, 128]);
    }

    #[test]
    fn config_ranges_are_checked() {
        let bad = AugmentConfig { saturation: [0.5, 1.2], ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::new(5, 3);
        img.set_pixel(4, 2, [1, 2, 3]);
        let p = dir.path().join("a.png");
        save_png(&img, &p).unwrap();
        assert_eq!(load_png(&p).unwrap(), img);
    }
}
