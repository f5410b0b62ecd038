//! Hand-eye calibration and pinhole intrinsics: file formats, validation and
//! projection.
//!
//! Calibration file (JSON):
//!
//! ```text
//! {"camera_id":"top","matrix":[r00,r01,r02,tx, r10,r11,r12,ty, r20,r21,r22,tz, 0,0,0,1],"rms_error":0.0015}
//! ```
//!
//! `matrix` maps camera-frame points into the robot base frame. `rms_error`
//! is optional. Intrinsics file (JSON): `{"fx","fy","cx","cy","width","height"}`.

use std::fs;
use std::path::Path;

use nalgebra::SVD;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{RigidTransform, RotationMatrix, Vec3};

/// Points closer to the image plane than this cannot be projected.
pub const MIN_DEPTH: f64 = 1e-6;
/// Largest `‖RᵀR − I‖∞` that is repaired rather than rejected.
pub const ORTHONORMAL_REPAIR_TOLERANCE: f64 = 1e-6;
/// Below this the rotation block is taken as-is.
pub const ORTHONORMAL_EXACT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("invalid camera model: {0}")]
    InvalidCamera(String),
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, CalibrationError> {
        let cam = Self { fx, fy, cx, cy, width, height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(CalibrationError::InvalidCamera(format!(
                "focal lengths must be positive (fx {}, fy {})",
                self.fx, self.fy
            )));
        }
        if !(0.0 <= self.cx && self.cx < self.width as f64 && 0.0 <= self.cy && self.cy < self.height as f64) {
            return Err(CalibrationError::InvalidCamera(format!(
                "principal point ({}, {}) outside {}x{}",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Pinhole projection of a camera-frame point to pixel coordinates.
pub fn project_point(cam: &CameraModel, p: Vec3) -> Result<(f64, f64), CalibrationError> {
    if !(p.z > MIN_DEPTH) {
        return Err(CalibrationError::BehindCamera(p.z));
    }
    Ok((cam.fx * (p.x / p.z) + cam.cx, cam.fy * (p.y / p.z) + cam.cy))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandEyeCalibration {
    pub cam_to_base: RigidTransform,
    pub camera_id: String,
    pub rms_error: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CalibrationFile {
    camera_id: String,
    matrix: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rms_error: Option<f64>,
}

/// Validates a row-major 4×4 as a rigid transform. Rotation blocks within
/// [`ORTHONORMAL_REPAIR_TOLERANCE`] of orthonormal are projected onto SO(3)
/// by polar decomposition.
pub fn rigid_from_matrix4(m: &[f64; 16]) -> Result<RigidTransform, CalibrationError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(CalibrationError::InvalidMatrix("non-finite entry".into()));
    }
    let bottom = [m[12], m[13], m[14], m[15]];
    let expected = [0.0, 0.0, 0.0, 1.0];
    if bottom.iter().zip(expected).any(|(a, b)| (a - b).abs() > 1e-12) {
        return Err(CalibrationError::InvalidMatrix(format!("bottom row {bottom:?} is not (0, 0, 0, 1)")));
    }
    let raw = RigidTransform::from_matrix4_unchecked(m);
    let det = raw.rotation.determinant();
    if det <= 0.0 {
        return Err(CalibrationError::InvalidMatrix(format!("rotation determinant {det} is not positive")));
    }
    let err = raw.rotation.orthonormality_error();
    if err <= ORTHONORMAL_EXACT_TOLERANCE {
        return Ok(raw);
    }
    if err > ORTHONORMAL_REPAIR_TOLERANCE {
        return Err(CalibrationError::InvalidMatrix(format!(
            "rotation block is {err:e} from orthonormal"
        )));
    }
    Ok(RigidTransform::new(polar_rotation(&raw.rotation), raw.translation))
}

/// Closest rotation in the Frobenius sense: `U Vᵀ` from the SVD.
pub fn polar_rotation(r: &RotationMatrix) -> RotationMatrix {
    let svd = SVD::new(r.to_nalgebra(), true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let mut q = u * v_t;
    if q.determinant() < 0.0 {
        let mut u2 = u;
        let mut col = u2.column_mut(2);
        col *= -1.0;
        q = u2 * v_t;
    }
    RotationMatrix::from_nalgebra(&q)
}

pub fn load_calibration(path: impl AsRef<Path>) -> Result<HandEyeCalibration, CalibrationError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_calibration(&text).map_err(|e| match e {
        CalibrationError::Parse { message, .. } => CalibrationError::Parse {
            path: path.display().to_string(),
            message,
        },
        other => other,
    })
}

pub fn parse_calibration(text: &str) -> Result<HandEyeCalibration, CalibrationError> {
    let file: CalibrationFile = serde_json::from_str(text).map_err(|e| CalibrationError::Parse {
        path: String::new(),
        message: e.to_string(),
    })?;
    let m: [f64; 16] = file.matrix.as_slice().try_into().map_err(|_| {
        CalibrationError::InvalidMatrix(format!("expected 16 matrix entries, got {}", file.matrix.len()))
    })?;
    Ok(HandEyeCalibration {
        cam_to_base: rigid_from_matrix4(&m)?,
        camera_id: file.camera_id,
        rms_error: file.rms_error,
    })
}

pub fn calibration_to_string(cal: &HandEyeCalibration) -> String {
    let file = CalibrationFile {
        camera_id: cal.camera_id.clone(),
        matrix: cal.cam_to_base.to_matrix4().to_vec(),
        rms_error: cal.rms_error,
    };
    serde_json::to_string_pretty(&file).unwrap()
}

pub fn save_calibration(cal: &HandEyeCalibration, path: impl AsRef<Path>) -> Result<(), CalibrationError> {
    fs::write(path, calibration_to_string(cal))?;
    Ok(())
}

pub fn load_camera(path: impl AsRef<Path>) -> Result<CameraModel, CalibrationError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let cam: CameraModel = serde_json::from_str(&text).map_err(|e| CalibrationError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    cam.validate()?;
    Ok(cam)
}

pub fn save_camera(cam: &CameraModel, path: impl AsRef<Path>) -> Result<(), CalibrationError> {
    fs::write(path, serde_json::to_string_pretty(cam).unwrap())?;
    Ok(())
}
