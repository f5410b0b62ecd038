//! Synthetic hands, meshes and grasp episodes. Used by the test suites, the
//! benchmarks and the `demo` command, where no real reconstructions exist.
//!
//! The canonical hand is a flat right hand in the `z = 0` plane, index
//! finger along `+x`, with its retargeting anchor at the origin and an
//! identity retargeted orientation. Its fingertip distance equals the
//! requested aperture.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::augment::{HandPart, MeshTopology};
use crate::calibration::CameraModel;
use crate::geometry::{RigidTransform, RotationMatrix, UnitQuaternion, Vec3};
use crate::hand::{keypoints as kp, HandFrame, HandTrack, Handedness, NUM_KEYPOINTS, NUM_VERTICES};
use crate::kinematics::{forward_kinematics, KinematicChain};
use crate::rng;

const RING_COUNT: usize = 9;
const RING_SEGMENTS: usize = 12;
const PALM_RINGS: usize = 11;
const PALM_SEGMENTS: usize = 21;
const FINGER_VERTS: usize = RING_COUNT * RING_SEGMENTS + 1;
const FINGER_RADIUS: [f64; 5] = [0.010, 0.009, 0.009, 0.0085, 0.0075];
const FINGER_PARTS: [HandPart; 5] = [
    HandPart::Thumb,
    HandPart::Index,
    HandPart::Middle,
    HandPart::Ring,
    HandPart::Pinky,
];
const THUMB_TIP_DIR: Vec3 = Vec3::new(-0.28, -0.96, 0.0);

/// Flat right hand whose thumb tip sits `aperture` metres from the index tip.
pub fn canonical_hand(aperture: f64) -> [Vec3; NUM_KEYPOINTS] {
    let mut p = [Vec3::ZERO; NUM_KEYPOINTS];
    p[kp::WRIST] = Vec3::new(-0.085, 0.03, 0.0);
    p[kp::THUMB_CMC] = Vec3::new(-0.055, -0.01, 0.0);
    p[kp::THUMB_MCP] = Vec3::new(-0.03, -0.025, 0.0);
    p[kp::THUMB_IP] = Vec3::new(0.0, -0.02, 0.0);
    let finger_x = [0.0, 0.04, 0.065, 0.085];
    let finger_y = [0.02, 0.04, 0.058, 0.074];
    let finger_scale = [1.0, 1.08, 1.0, 0.82];
    for f in 0..4 {
        for (j, &x) in finger_x.iter().enumerate() {
            let root = if f == 0 { 0.0 } else { -0.004 * f as f64 };
            p[kp::FINGERS[f + 1][j]] = Vec3::new(root + x * finger_scale[f], finger_y[f], 0.0);
        }
    }
    p[kp::THUMB_TIP] = p[kp::INDEX_TIP] + THUMB_TIP_DIR * aperture;
    p
}

/// Canonical hand rotated by `orientation` and moved so its anchor lands on
/// `anchor`, with mesh vertices attached.
pub fn hand_at_pose(anchor: Vec3, orientation: UnitQuaternion, aperture: f64) -> HandFrame {
    let t = RigidTransform::from_quat_translation(orientation, anchor);
    let keypoints = canonical_hand(aperture).map(|p| t.apply_point(p));
    let vertices = hand_mesh(&keypoints);
    HandFrame {
        timestamp: 0.0,
        keypoints,
        vertices: Some(vertices),
        confidence: 1.0,
        handedness: Handedness::Right,
    }
}

/// Uniformly distributed rotation.
pub fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let u3: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    UnitQuaternion::new(a * u2.cos(), a * u2.sin(), b * u3.sin(), b * u3.cos()).unwrap()
}

pub fn gaussian_vec(rng: &mut impl Rng, sigma: f64) -> Vec3 {
    let mut g = || -> f64 { StandardNormal.sample(rng) };
    Vec3::new(g(), g(), g()) * sigma
}

fn palm_normal(k: &[Vec3; NUM_KEYPOINTS]) -> Vec3 {
    let a = k[kp::INDEX_MCP] - k[kp::WRIST];
    let b = k[kp::PINKY_MCP] - k[kp::WRIST];
    b.cross(a).try_normalize().unwrap_or(Vec3::Z)
}

fn perpendicular(t: Vec3, hint: Vec3) -> Vec3 {
    (hint - t * hint.dot(t))
        .try_normalize()
        .or_else(|| Vec3::X.cross(t).try_normalize())
        .or_else(|| Vec3::Y.cross(t).try_normalize())
        .unwrap_or(Vec3::Y)
}

fn point_on_chain(chain: &[Vec3; 4], s: f64) -> (Vec3, Vec3) {
    let lens: Vec<f64> = chain.windows(2).map(|w| w[0].distance(w[1])).collect();
    let total: f64 = lens.iter().sum();
    let mut target = s * total;
    for (i, &l) in lens.iter().enumerate() {
        if target <= l || i == lens.len() - 1 {
            let f = if l > 0.0 { (target / l).clamp(0.0, 1.0) } else { 0.0 };
            let dir = (chain[i + 1] - chain[i]).try_normalize().unwrap_or(Vec3::X);
            return (chain[i].lerp(chain[i + 1], f), dir);
        }
        target -= l;
    }
    unreachable!()
}

/// 778 mesh vertices posed from keypoints: five tapered finger tubes and an
/// ellipsoidal palm. Pairs with [`hand_topology`].
pub fn hand_mesh(k: &[Vec3; NUM_KEYPOINTS]) -> Vec<Vec3> {
    let normal = palm_normal(k);
    let mut out = Vec::with_capacity(NUM_VERTICES);
    for (f, chain_idx) in kp::FINGERS.iter().enumerate() {
        let chain = chain_idx.map(|i| k[i]);
        let r0 = FINGER_RADIUS[f];
        let mut last = (chain[3], Vec3::X, r0);
        for ring in 0..RING_COUNT {
            let s = ring as f64 / (RING_COUNT - 1) as f64;
            let (c, t) = point_on_chain(&chain, s);
            let r = r0 * (1.0 - 0.25 * s);
            let u = perpendicular(t, normal);
            let v = t.cross(u);
            for seg in 0..RING_SEGMENTS {
                let a = std::f64::consts::TAU * seg as f64 / RING_SEGMENTS as f64;
                out.push(c + u * (r * a.cos()) + v * (r * a.sin()));
            }
            last = (c, t, r);
        }
        out.push(last.0 + last.1 * last.2);
    }

    let center = [kp::WRIST, kp::INDEX_MCP, kp::MIDDLE_MCP, kp::RING_MCP, kp::PINKY_MCP]
        .iter()
        .fold(Vec3::ZERO, |a, &i| a + k[i])
        / 5.0;
    let length_dir = k[kp::MIDDLE_MCP] - k[kp::WRIST];
    let half_len = (length_dir.norm() * 0.6).max(1e-3);
    let e1 = length_dir.try_normalize().unwrap_or(Vec3::X);
    let e3 = perpendicular(e1, normal);
    let e2 = e3.cross(e1);
    let half_width = (k[kp::PINKY_MCP].distance(k[kp::INDEX_MCP]) * 0.6).max(1e-3);
    let half_depth = 0.012;
    out.push(center + e1 * half_len);
    out.push(center - e1 * half_len);
    for ring in 0..PALM_RINGS {
        let theta = std::f64::consts::PI * (ring + 1) as f64 / (PALM_RINGS + 1) as f64;
        for seg in 0..PALM_SEGMENTS {
            let phi = std::f64::consts::TAU * seg as f64 / PALM_SEGMENTS as f64;
            out.push(
                center
                    + e1 * (half_len * theta.cos())
                    + e2 * (half_width * theta.sin() * phi.cos())
                    + e3 * (half_depth * theta.sin() * phi.sin()),
            );
        }
    }
    debug_assert_eq!(out.len(), NUM_VERTICES);
    out
}

/// Faces and part labels for [`hand_mesh`].
pub fn hand_topology() -> MeshTopology {
    let mut faces = Vec::new();
    let mut labels = Vec::with_capacity(NUM_VERTICES);
    let seg = RING_SEGMENTS as u32;
    for (f, part) in FINGER_PARTS.iter().enumerate() {
        let base = (f * FINGER_VERTS) as u32;
        for ring in 0..(RING_COUNT - 1) as u32 {
            for s in 0..seg {
                let a = base + ring * seg + s;
                let b = base + ring * seg + (s + 1) % seg;
                let c = a + seg;
                let d = b + seg;
                faces.push([a, b, d]);
                faces.push([a, d, c]);
            }
        }
        let tip = base + FINGER_VERTS as u32 - 1;
        let last = base + (RING_COUNT as u32 - 1) * seg;
        for s in 0..seg {
            faces.push([last + s, last + (s + 1) % seg, tip]);
        }
        labels.extend(std::iter::repeat_n(*part, FINGER_VERTS));
    }

    let base = (5 * FINGER_VERTS) as u32;
    let (top, bottom) = (base, base + 1);
    let ring0 = base + 2;
    let ps = PALM_SEGMENTS as u32;
    for s in 0..ps {
        faces.push([top, ring0 + s, ring0 + (s + 1) % ps]);
    }
    for ring in 0..(PALM_RINGS - 1) as u32 {
        for s in 0..ps {
            let a = ring0 + ring * ps + s;
            let b = ring0 + ring * ps + (s + 1) % ps;
            faces.push([a, b + ps, b]);
            faces.push([a, a + ps, b + ps]);
        }
    }
    let last = ring0 + (PALM_RINGS as u32 - 1) * ps;
    for s in 0..ps {
        faces.push([bottom, last + (s + 1) % ps, last + s]);
    }
    labels.extend(std::iter::repeat_n(HandPart::Palm, NUM_VERTICES - labels.len()));
    MeshTopology::new(faces, labels).expect("generated topology is valid")
}

/// Camera-to-base transform of a camera at `eye` looking at `target`, with
/// image y pointing away from world `+z`.
pub fn look_at(eye: Vec3, target: Vec3) -> RigidTransform {
    let z = (target - eye).try_normalize().unwrap_or(Vec3::X);
    let x = perpendicular(z, z.cross(Vec3::Z));
    let y = z.cross(x);
    RigidTransform::new(RotationMatrix::from_columns(x, y, z), eye)
}

/// Overhead-front camera used by the demo data.
pub fn demo_camera_pose() -> RigidTransform {
    look_at(Vec3::new(0.6, 0.0, 0.45), Vec3::new(0.15, 0.0, 0.1))
}

pub fn demo_camera() -> CameraModel {
    CameraModel::new(110.0, 110.0, 80.0, 60.0, 160, 120).expect("valid intrinsics")
}

#[derive(Debug, Clone)]
pub struct GraspSpec {
    pub frames: usize,
    pub fps: f64,
    pub seed: u64,
    /// Gaussian keypoint noise, metres.
    pub noise_std: f64,
    pub with_mesh: bool,
    pub aperture: ApertureProfile,
}

/// Thumb-to-index fingertip distance over an episode, metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ApertureProfile {
    /// Seeded sinusoid between 0.02 and 0.09.
    Oscillating,
    /// Linear ramp from `from` at the first frame to `to` at the last.
    Ramp { from: f64, to: f64 },
}

impl Default for GraspSpec {
    fn default() -> Self {
        Self {
            frames: 120,
            fps: 30.0,
            seed: 0,
            noise_std: 0.0,
            with_mesh: true,
            aperture: ApertureProfile::Oscillating,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticEpisode {
    /// Camera-frame hand track.
    pub track: HandTrack,
    pub joints: Vec<Vec<f64>>,
    /// Ground-truth base-frame end-effector poses.
    pub base_poses: Vec<RigidTransform>,
    pub apertures: Vec<f64>,
}

/// Smooth joint-space motion of `chain`, observed as a hand whose retargeted
/// pose equals the arm's end-effector pose. Every pose is reachable.
pub fn grasp_episode(chain: &KinematicChain, cam_to_base: &RigidTransform, spec: &GraspSpec) -> SyntheticEpisode {
    let mut r = rng::stream(spec.seed, "grasp", 0);
    let mid = chain.mid_range();
    let amp: Vec<f64> = chain
        .joints()
        .iter()
        .map(|j| 0.3 * (j.limits[1] - j.limits[0]) * r.random_range(0.3..1.0) / 2.0)
        .collect();
    let offset: Vec<f64> = chain
        .joints()
        .iter()
        .map(|j| 0.2 * (j.limits[1] - j.limits[0]) * r.random_range(-0.5..0.5))
        .collect();
    let freq: Vec<f64> = (0..chain.dof()).map(|_| r.random_range(0.1..0.4)).collect();
    let phase: Vec<f64> = (0..chain.dof()).map(|_| r.random_range(0.0..std::f64::consts::TAU)).collect();
    let grip_freq = r.random_range(0.2..0.5);
    let base_to_cam = cam_to_base.inverse();
    let mut noise = rng::stream(spec.seed, "grasp-noise", 0);

    let mut joints = Vec::with_capacity(spec.frames);
    let mut base_poses = Vec::with_capacity(spec.frames);
    let mut apertures = Vec::with_capacity(spec.frames);
    let mut frames = Vec::with_capacity(spec.frames);
    for i in 0..spec.frames {
        let t = i as f64 / spec.fps;
        let mut q: Vec<f64> = (0..chain.dof())
            .map(|j| mid[j] + offset[j] + amp[j] * (std::f64::consts::TAU * freq[j] * t + phase[j]).sin())
            .collect();
        chain.clamp(&mut q);
        let ee = forward_kinematics(chain, &q).expect("dof matches");
        let cam_pose = base_to_cam.compose(&ee);
        let aperture = match spec.aperture {
            ApertureProfile::Oscillating => 0.055 + 0.035 * (std::f64::consts::TAU * grip_freq * t).sin(),
            ApertureProfile::Ramp { from, to } => {
                let s = if spec.frames > 1 { i as f64 / (spec.frames - 1) as f64 } else { 0.0 };
                from + (to - from) * s
            }
        };
        let q_cam = crate::geometry::quat_from_matrix(&cam_pose.rotation);
        let mut frame = hand_at_pose(cam_pose.translation, q_cam, aperture);
        frame.timestamp = t;
        if spec.noise_std > 0.0 {
            for p in frame.keypoints.iter_mut() {
                *p = *p + gaussian_vec(&mut noise, spec.noise_std);
            }
            if let Some(v) = frame.vertices.as_mut() {
                *v = hand_mesh(&frame.keypoints);
            }
        }
        if !spec.with_mesh {
            frame.vertices = None;
        }
        frames.push(frame);
        joints.push(q);
        base_poses.push(ee);
        apertures.push(aperture);
    }
    SyntheticEpisode {
        track: HandTrack::new(frames, spec.fps, "synthetic").expect("generated track is valid"),
        joints,
        base_poses,
        apertures,
    }
}

/// Smooth procedural background with a seeded tint.
pub fn background_image(width: u32, height: u32, seed: u64) -> crate::augment::Image {
    let mut r = rng::stream(seed, "background", 0);
    let tint: [f64; 3] = [r.random_range(40.0..120.0), r.random_range(40.0..120.0), r.random_range(40.0..120.0)];
    let mut img = crate::augment::Image::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let check = if ((x / 16) + (y / 16)) % 2 == 0 { 20.0 } else { 0.0 };
            let grad = 60.0 * y as f64 / height.max(1) as f64;
            let px = tint.map(|t| (t + check + grad).clamp(0.0, 255.0) as u8);
            img.set_pixel(x, y, px);
        }
    }
    img
}
