//! Serial-arm forward kinematics, geometric Jacobian and damped
//! least-squares IK, plus a reachability check for whole trajectories.
//!
//! Chains are data: see `data/so100_plus.json` for the bundled 6-DoF arm.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{matrix_from_quat, RigidTransform, RotationMatrix, UnitQuaternion, Vec3};
use crate::par::{self, Execution};
use crate::retarget::{FrameTag, StateTrajectory};

pub const ARM_DOF: usize = 6;

const SO100_PLUS: &str = include_str!("../data/so100_plus.json");

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("joint vector has {got} entries, chain has {expected} joints")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("trajectory must be in the robot base frame")]
    WrongFrame,
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    /// Rotation axis in the joint's own frame.
    pub axis: Vec3,
    /// Transform from the parent link to this joint at zero angle.
    pub origin: RigidTransform,
    /// `[min, max]`, radians.
    pub limits: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    joints: Vec<Joint>,
    tool: RigidTransform,
}

impl KinematicChain {
    /// Any number (≥ 1) of revolute joints. Axes are normalized.
    pub fn new(joints: Vec<Joint>, tool: RigidTransform) -> Result<Self, KinematicsError> {
        if joints.is_empty() {
            return Err(KinematicsError::InvalidChain("no joints".into()));
        }
        let mut joints = joints;
        for j in joints.iter_mut() {
            j.axis = j
                .axis
                .try_normalize()
                .ok_or_else(|| KinematicsError::InvalidChain(format!("joint {} has a zero axis", j.name)))?;
            if !(j.limits[0] < j.limits[1]) {
                return Err(KinematicsError::InvalidChain(format!(
                    "joint {} limits {:?} are not increasing",
                    j.name, j.limits
                )));
            }
            if j.origin.rotation.orthonormality_error() > 1e-9 || (j.origin.rotation.determinant() - 1.0).abs() > 1e-9
            {
                return Err(KinematicsError::InvalidChain(format!(
                    "joint {} origin is not a rotation",
                    j.name
                )));
            }
        }
        Ok(Self { joints, tool })
    }

    /// As [`KinematicChain::new`] but requires exactly six joints.
    pub fn six_dof(joints: Vec<Joint>, tool: RigidTransform) -> Result<Self, KinematicsError> {
        if joints.len() != ARM_DOF {
            return Err(KinematicsError::InvalidChain(format!(
                "expected {ARM_DOF} joints, got {}",
                joints.len()
            )));
        }
        Self::new(joints, tool)
    }

    /// The bundled SO100-Plus description. Link dimensions are approximate.
    pub fn so100_plus() -> Self {
        parse_chain(SO100_PLUS).expect("bundled chain is valid")
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn tool(&self) -> &RigidTransform {
        &self.tool
    }

    pub fn mid_range(&self) -> Vec<f64> {
        self.joints.iter().map(|j| 0.5 * (j.limits[0] + j.limits[1])).collect()
    }

    pub fn clamp(&self, q: &mut [f64]) {
        for (v, j) in q.iter_mut().zip(&self.joints) {
            *v = v.clamp(j.limits[0], j.limits[1]);
        }
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.iter().zip(&self.joints).all(|(v, j)| j.limits[0] <= *v && *v <= j.limits[1])
    }

    /// Sum of all link and tool offsets: an upper bound on the distance from
    /// the base origin to the tool point.
    pub fn max_reach(&self) -> f64 {
        self.joints.iter().map(|j| j.origin.translation.norm()).sum::<f64>() + self.tool.translation.norm()
    }

    fn check_dim(&self, q: &[f64]) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::DimensionMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        Ok(())
    }

    /// World transforms of every joint frame (after its rotation) and the
    /// tool frame.
    fn joint_frames(&self, q: &[f64]) -> (Vec<RigidTransform>, RigidTransform) {
        let mut frames = Vec::with_capacity(self.dof());
        let mut t = RigidTransform::IDENTITY;
        for (j, &angle) in self.joints.iter().zip(q) {
            t = t.compose(&j.origin);
            frames.push(t);
            let rot = RotationMatrix::from_axis_angle(j.axis, angle).unwrap_or(RotationMatrix::IDENTITY);
            t = t.compose(&RigidTransform::from_rotation(rot));
        }
        (frames, t.compose(&self.tool))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ChainFile {
    name: String,
    #[serde(default)]
    note: Option<String>,
    joints: Vec<JointFile>,
    tool: OffsetFile,
}

#[derive(Debug, Serialize, Deserialize)]
struct JointFile {
    name: String,
    axis: [f64; 3],
    origin: OffsetFile,
    limits: [f64; 2],
}

/// Offset as translation plus roll-pitch-yaw (radians, fixed-axis XYZ).
#[derive(Debug, Serialize, Deserialize)]
struct OffsetFile {
    xyz: [f64; 3],
    #[serde(default)]
    rpy: [f64; 3],
}

impl OffsetFile {
    fn to_transform(&self) -> RigidTransform {
        let [r, p, y] = self.rpy;
        let qx = UnitQuaternion::from_axis_angle(Vec3::X, r).unwrap();
        let qy = UnitQuaternion::from_axis_angle(Vec3::Y, p).unwrap();
        let qz = UnitQuaternion::from_axis_angle(Vec3::Z, y).unwrap();
        RigidTransform::new(matrix_from_quat(qz.mul(qy).mul(qx)), Vec3::from_array(self.xyz))
    }
}

/// Parses a chain description (JSON, see the bundled file). Requires six
/// joints.
pub fn parse_chain(text: &str) -> Result<KinematicChain, KinematicsError> {
    let file: ChainFile = serde_json::from_str(text).map_err(|e| KinematicsError::Parse(e.to_string()))?;
    let joints = file
        .joints
        .iter()
        .map(|j| Joint {
            name: j.name.clone(),
            axis: Vec3::from_array(j.axis),
            origin: j.origin.to_transform(),
            limits: j.limits,
        })
        .collect();
    KinematicChain::six_dof(joints, file.tool.to_transform())
}

pub fn load_chain(path: impl AsRef<Path>) -> Result<KinematicChain, KinematicsError> {
    parse_chain(&fs::read_to_string(path)?)
}

/// The bundled chain file contents, for writing alongside a config.
pub fn so100_plus_json() -> &'static str {
    SO100_PLUS
}

/// `origin₁ ∘ rot(axis₁, q₁) ∘ … ∘ originₙ ∘ rot(axisₙ, qₙ) ∘ tool`
pub fn forward_kinematics(chain: &KinematicChain, q: &[f64]) -> Result<RigidTransform, KinematicsError> {
    chain.check_dim(q)?;
    Ok(chain.joint_frames(q).1)
}

/// Geometric Jacobian in the base frame, 6×n: rows 0..3 linear velocity,
/// rows 3..6 angular velocity.
pub fn jacobian(chain: &KinematicChain, q: &[f64]) -> Result<DMatrix<f64>, KinematicsError> {
    chain.check_dim(q)?;
    let (frames, end) = chain.joint_frames(q);
    let p_end = end.translation;
    let mut jac = DMatrix::zeros(6, chain.dof());
    for (i, (frame, joint)) in frames.iter().zip(chain.joints()).enumerate() {
        let axis = frame.apply_vector(joint.axis);
        let lin = axis.cross(p_end - frame.translation);
        for (r, v) in lin.to_array().into_iter().chain(axis.to_array()).enumerate() {
            jac[(r, i)] = v;
        }
    }
    Ok(jac)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IkOptions {
    pub damping: f64,
    pub max_iters: usize,
    pub pos_tol: f64,
    pub rot_tol: f64,
    /// Largest joint change per iteration, radians.
    pub max_step: f64,
    /// Extra attempts from seeded random configurations when the given
    /// seed does not converge.
    pub restarts: usize,
    /// Levenberg-Marquardt schedule: starting from `damping`, λ halves
    /// after a step that lowers the error (down to `min_damping`) and
    /// grows fourfold, retrying, after one that does not. Off means a
    /// fixed λ.
    pub adaptive_damping: bool,
    pub min_damping: f64,
}

const MAX_DAMPING: f64 = 10.0;

impl Default for IkOptions {
    fn default() -> Self {
        Self {
            damping: 0.05,
            max_iters: 200,
            pos_tol: 1e-4,
            rot_tol: 1e-3,
            max_step: 0.2,
            restarts: 32,
            adaptive_damping: true,
            min_damping: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkResult {
    pub joints: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub position_error: f64,
    pub orientation_error: f64,
}

/// Position error and orientation error (axis-angle of `R_target·R_currentᵀ`)
/// stacked as a twist.
fn pose_error(current: &RigidTransform, target_p: Vec3, target_r: &RotationMatrix) -> (Vec3, Vec3) {
    let dp = target_p - current.translation;
    let dr = target_r.mul(&current.rotation.transpose()).to_rotation_vector();
    (dp, dr)
}

/// Damped least-squares IK: `Δq = Jᵀ(JJᵀ + λ²I)⁻¹ e`, clamped to joint
/// limits after every step. If the seed gets stuck, up to `opts.restarts`
/// further attempts start from configurations drawn from a fixed-seed
/// stream, so results are deterministic. `iterations` counts all attempts.
/// Not converging is a normal outcome; the best attempt is returned.
pub fn solve_ik(
    chain: &KinematicChain,
    target: (Vec3, UnitQuaternion),
    seed: &[f64],
    opts: &IkOptions,
) -> Result<IkResult, KinematicsError> {
    chain.check_dim(seed)?;
    let mut best = solve_ik_from(chain, target, seed, opts);
    if best.converged || opts.restarts == 0 {
        return Ok(best);
    }
    let mut total = best.iterations;
    let mut rng = ChaCha8Rng::seed_from_u64(RESTART_SEED);
    for _ in 0..opts.restarts {
        let q: Vec<f64> = chain
            .joints
            .iter()
            .map(|j| rng.random_range(j.limits[0]..=j.limits[1]))
            .collect();
        let r = solve_ik_from(chain, target, &q, opts);
        total += r.iterations;
        let better = r.converged || r.position_error + r.orientation_error * 0.1 < best.position_error + best.orientation_error * 0.1;
        if better {
            best = r;
        }
        if best.converged {
            break;
        }
    }
    best.iterations = total;
    Ok(best)
}

const RESTART_SEED: u64 = 0x1c0ffee;

fn solve_ik_from(chain: &KinematicChain, target: (Vec3, UnitQuaternion), seed: &[f64], opts: &IkOptions) -> IkResult {
    let (target_p, target_q) = target;
    let target_r = matrix_from_quat(target_q);
    let n = chain.dof();
    let mut q = seed.to_vec();
    chain.clamp(&mut q);
    let mut lambda = opts.damping;

    let fk = |q: &[f64]| forward_kinematics(chain, q).expect("seed length checked");
    let cost = |dp: Vec3, dr: Vec3| dp.norm_squared() + dr.norm_squared();
    let (mut dp, mut dr) = pose_error(&fk(&q), target_p, &target_r);
    let mut iterations = 0;
    loop {
        let (pos_err, rot_err) = (dp.norm(), dr.norm());
        let converged = pos_err <= opts.pos_tol && rot_err <= opts.rot_tol;
        if converged || iterations >= opts.max_iters {
            return IkResult {
                joints: q,
                converged,
                iterations,
                position_error: pos_err,
                orientation_error: rot_err,
            };
        }
        iterations += 1;
        let jac = jacobian(chain, &q).expect("seed length checked");
        let e = DVector::from_iterator(6, dp.to_array().into_iter().chain(dr.to_array()));
        let jjt = &jac * jac.transpose();
        loop {
            let mut damped = jjt.clone();
            for d in 0..6 {
                damped[(d, d)] += lambda * lambda;
            }
            let Some(y) = damped.cholesky().map(|c| c.solve(&e)) else {
                lambda *= 4.0;
                continue;
            };
            let mut dq = jac.transpose() * y;
            let largest = dq.amax();
            if largest > opts.max_step {
                dq *= opts.max_step / largest;
            }
            let mut trial = q.clone();
            for i in 0..n {
                trial[i] += dq[i];
            }
            chain.clamp(&mut trial);
            let (ndp, ndr) = pose_error(&fk(&trial), target_p, &target_r);
            if !opts.adaptive_damping || cost(ndp, ndr) < cost(dp, dr) || lambda >= MAX_DAMPING {
                if opts.adaptive_damping {
                    lambda = (lambda * 0.5).max(opts.min_damping);
                }
                q = trial;
                dp = ndp;
                dr = ndr;
                break;
            }
            lambda = (lambda * 4.0).min(MAX_DAMPING);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateOptions {
    pub ik: IkOptions,
    /// Seed for the first pose; mid-range when `None`.
    pub seed: Option<Vec<f64>>,
    pub keep_joint_trajectory: bool,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            ik: IkOptions::default(),
            seed: None,
            keep_joint_trajectory: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// `None` for an empty trajectory.
    pub reachable_fraction: Option<f64>,
    pub results: Vec<IkResult>,
    pub joint_trajectory: Option<Vec<Vec<f64>>>,
    /// Largest per-joint change between consecutive solutions.
    pub max_joint_jump: f64,
}

impl ValidationReport {
    pub fn unreachable_indices(&self) -> Vec<usize> {
        self.results
            .iter()
            .enumerate()
            .filter(|(_, r)| !r.converged)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Solves IK along a trajectory, seeding each pose with the previous
/// solution.
pub fn validate_trajectory(
    chain: &KinematicChain,
    traj: &StateTrajectory,
    opts: &ValidateOptions,
) -> Result<ValidationReport, KinematicsError> {
    if traj.frame != FrameTag::RobotBase {
        return Err(KinematicsError::WrongFrame);
    }
    let mut seed = opts.seed.clone().unwrap_or_else(|| chain.mid_range());
    let mut results = Vec::with_capacity(traj.len());
    for pose in traj.poses() {
        let r = solve_ik(chain, (pose.position, pose.orientation), &seed, &opts.ik)?;
        seed = r.joints.clone();
        results.push(r);
    }
    Ok(summarize(results, opts.keep_joint_trajectory))
}

/// Solves every pose independently from the same seed. Poses are
/// independent here, so this runs in parallel where enabled.
pub fn validate_poses_independent(
    exec: Execution,
    chain: &KinematicChain,
    targets: &[(Vec3, UnitQuaternion)],
    seed: &[f64],
    opts: &IkOptions,
) -> Result<ValidationReport, KinematicsError> {
    chain.check_dim(seed)?;
    let results = par::map(exec, targets, |t| solve_ik(chain, *t, seed, opts))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(results, false))
}

fn summarize(results: Vec<IkResult>, keep_joints: bool) -> ValidationReport {
    let converged = results.iter().filter(|r| r.converged).count();
    let reachable_fraction = (!results.is_empty()).then(|| converged as f64 / results.len() as f64);
    let max_joint_jump = results
        .windows(2)
        .flat_map(|w| w[0].joints.iter().zip(&w[1].joints).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    let joint_trajectory = keep_joints.then(|| results.iter().map(|r| r.joints.clone()).collect());
    ValidationReport {
        reachable_fraction,
        results,
        joint_trajectory,
        max_joint_jump,
    }
}
