//! Turns monocular hand reconstructions into robot demonstration datasets.
//!
//! The pipeline is: parse and clean a [`hand::HandTrack`], retarget it to
//! end-effector poses in the robot base frame ([`retarget`]), check those
//! poses against the arm ([`kinematics`]), optionally paint the hand in the
//! camera frames ([`augment`]), store chunked episodes ([`dataset`]) and
//! plan balanced human/robot training batches ([`mixer`]).
//!
//! Batch operations take an [`Execution`]; with the default `parallel`
//! feature they run on rayon, and both modes give identical results.

pub mod augment;
pub mod calibration;
pub mod dataset;
pub mod geometry;
pub mod hand;
pub mod kinematics;
pub mod mixer;
pub mod par;
pub mod retarget;
pub mod rng;
pub mod synth;

pub use geometry::{RigidTransform, RotationMatrix, UnitQuaternion, Vec3};
pub use hand::{HandFrame, HandTrack};
pub use par::Execution;
pub use retarget::{EndEffectorPose, StateTrajectory};
