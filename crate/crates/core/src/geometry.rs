//! 3D primitives: vectors, unit quaternions, rotation matrices, rigid
//! transforms and total-least-squares plane fitting.
//!
//! Everything here is a plain `Copy` value. Lengths are meters and angles
//! are radians throughout the crate.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Two smallest covariance eigenvalues closer than this mean the points do
/// not span a plane.
pub const EIGEN_TIE_TOLERANCE: f64 = 1e-12;
/// Minimum norm for an axis (or an axis cross product) to be usable.
pub const AXIS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("plane fit is degenerate (points collinear or coincident)")]
    DegenerateFit,
    #[error("plane fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("axis has zero length")]
    ZeroAxis,
    #[error("x hint is parallel to the z axis")]
    ParallelAxes,
    #[error("non-finite input")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Unit vector in the same direction, or `None` below [`AXIS_TOLERANCE`].
    pub fn try_normalize(self) -> Option<Vec3> {
        let n = self.norm();
        if n > AXIS_TOLERANCE && n.is_finite() {
            Some(self / n)
        } else {
            None
        }
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn lerp(self, o: Vec3, t: f64) -> Vec3 {
        self + (o - self) * t
    }

    pub fn midpoint(self, o: Vec3) -> Vec3 {
        (self + o) * 0.5
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn max_abs_diff(self, o: Vec3) -> f64 {
        (self.x - o.x)
            .abs()
            .max((self.y - o.y).abs())
            .max((self.z - o.z).abs())
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Unit quaternion `w + xi + yj + zk`, kept sign-canonical: `w >= 0`, and
/// when `w == 0` the first nonzero of `(x, y, z)` is positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes and canonicalizes. Returns `None` for a zero or
    /// non-finite input.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Option<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-300 {
            return None;
        }
        Some(Self::canonical(w / n, x / n, y / n, z / n))
    }

    /// Builds from components assumed unit length, applying sign
    /// canonicalization only.
    fn canonical(w: f64, x: f64, y: f64, z: f64) -> Self {
        let flip = if w != 0.0 {
            w < 0.0
        } else if x != 0.0 {
            x < 0.0
        } else if y != 0.0 {
            y < 0.0
        } else {
            z < 0.0
        };
        if flip {
            Self { w: -w, x: -x, y: -y, z: -z }
        } else {
            Self { w, x, y, z }
        }
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Option<Self> {
        let a = axis.try_normalize()?;
        let (s, c) = (angle * 0.5).sin_cos();
        Self::new(c, a.x * s, a.y * s, a.z * s)
    }

    /// Exponential map of a rotation vector (axis times angle).
    pub fn from_rotation_vector(v: Vec3) -> Self {
        let angle = v.norm();
        if angle < 1e-12 {
            return Self::new(1.0, v.x * 0.5, v.y * 0.5, v.z * 0.5).unwrap_or(Self::IDENTITY);
        }
        Self::from_axis_angle(v / angle, angle).unwrap_or(Self::IDENTITY)
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    /// `[w, x, y, z]`
    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 4]) -> Option<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn dot(self, o: UnitQuaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn conjugate(self) -> Self {
        Self::canonical(self.w, -self.x, -self.y, -self.z)
    }

    pub fn inverse(self) -> Self {
        self.conjugate()
    }

    /// Hamilton product `self ⊗ o`, renormalized and canonicalized.
    pub fn mul(self, o: UnitQuaternion) -> Self {
        let (w, x, y, z) = hamilton(self.to_array(), o.to_array());
        Self::new(w, x, y, z).unwrap_or(Self::IDENTITY)
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        matrix_from_quat(self).mul_vec(v)
    }

    /// Geodesic angle between the two rotations, in `[0, π]`.
    pub fn angle_to(self, o: UnitQuaternion) -> f64 {
        let d = self.dot(o).abs().min(1.0);
        // 2·atan2 is better conditioned than 2·acos near identity.
        let rel = hamilton(self.conjugate().to_array(), o.to_array());
        let vec = (rel.1 * rel.1 + rel.2 * rel.2 + rel.3 * rel.3).sqrt();
        2.0 * vec.atan2(d)
    }

    /// Rotation vector (axis · angle) with angle in `[0, π]`.
    pub fn to_rotation_vector(self) -> Vec3 {
        let v = Vec3::new(self.x, self.y, self.z);
        let s = v.norm();
        if s < 1e-15 {
            return v * 2.0;
        }
        let angle = 2.0 * s.atan2(self.w);
        v * (angle / s)
    }
}

fn hamilton(a: [f64; 4], b: [f64; 4]) -> (f64, f64, f64, f64) {
    let [aw, ax, ay, az] = a;
    let [bw, bx, by, bz] = b;
    (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )
}

/// Row-major 3×3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationMatrix {
    m: [[f64; 3]; 3],
}

impl Default for RotationMatrix {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl RotationMatrix {
    pub const IDENTITY: RotationMatrix = RotationMatrix {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    /// Wraps rows without checking; use [`RotationMatrix::orthonormality_error`]
    /// to validate untrusted data.
    pub const fn from_rows_unchecked(m: [[f64; 3]; 3]) -> Self {
        Self { m }
    }

    pub fn from_columns(x: Vec3, y: Vec3, z: Vec3) -> Self {
        Self {
            m: [[x.x, y.x, z.x], [x.y, y.y, z.y], [x.z, y.z, z.z]],
        }
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Option<Self> {
        UnitQuaternion::from_axis_angle(axis, angle).map(matrix_from_quat)
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        self.m
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.m[r][c]
    }

    pub fn column(&self, c: usize) -> Vec3 {
        Vec3::new(self.m[0][c], self.m[1][c], self.m[2][c])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.m;
        Self {
            m: [
                [m[0][0], m[1][0], m[2][0]],
                [m[0][1], m[1][1], m[2][1]],
                [m[0][2], m[1][2], m[2][2]],
            ],
        }
    }

    pub fn mul(&self, o: &RotationMatrix) -> Self {
        let mut out = [[0.0; 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.m[r][k] * o.m[k][c]).sum();
            }
        }
        Self { m: out }
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.m;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// `‖RᵀR − I‖∞`, elementwise.
    pub fn orthonormality_error(&self) -> f64 {
        let rtr = self.transpose().mul(self);
        let mut err: f64 = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                let target = if r == c { 1.0 } else { 0.0 };
                err = err.max((rtr.m[r][c] - target).abs());
            }
        }
        err
    }

    pub fn max_abs_diff(&self, o: &RotationMatrix) -> f64 {
        let mut err: f64 = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                err = err.max((self.m[r][c] - o.m[r][c]).abs());
            }
        }
        err
    }

    /// Rotation vector of this matrix (via its quaternion).
    pub fn to_rotation_vector(&self) -> Vec3 {
        quat_from_matrix(self).to_rotation_vector()
    }

    pub(crate) fn to_nalgebra(self) -> Matrix3<f64> {
        let m = &self.m;
        Matrix3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        )
    }

    pub(crate) fn from_nalgebra(n: &Matrix3<f64>) -> Self {
        let mut m = [[0.0; 3]; 3];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = n[(r, c)];
            }
        }
        Self { m }
    }
}

/// Shepperd's method: picks the largest of `w², x², y², z²` as pivot so the
/// division is well conditioned everywhere, including trace ≈ −1.
pub fn quat_from_matrix(r: &RotationMatrix) -> UnitQuaternion {
    let m = &r.m;
    let trace = m[0][0] + m[1][1] + m[2][2];
    let (w, x, y, z);
    if trace >= m[0][0] && trace >= m[1][1] && trace >= m[2][2] {
        let s = (1.0 + trace).max(0.0).sqrt() * 2.0;
        w = 0.25 * s;
        x = (m[2][1] - m[1][2]) / s;
        y = (m[0][2] - m[2][0]) / s;
        z = (m[1][0] - m[0][1]) / s;
    } else if m[0][0] >= m[1][1] && m[0][0] >= m[2][2] {
        let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).max(0.0).sqrt() * 2.0;
        w = (m[2][1] - m[1][2]) / s;
        x = 0.25 * s;
        y = (m[0][1] + m[1][0]) / s;
        z = (m[0][2] + m[2][0]) / s;
    } else if m[1][1] >= m[2][2] {
        let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).max(0.0).sqrt() * 2.0;
        w = (m[0][2] - m[2][0]) / s;
        x = (m[0][1] + m[1][0]) / s;
        y = 0.25 * s;
        z = (m[1][2] + m[2][1]) / s;
    } else {
        let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).max(0.0).sqrt() * 2.0;
        w = (m[1][0] - m[0][1]) / s;
        x = (m[0][2] + m[2][0]) / s;
        y = (m[1][2] + m[2][1]) / s;
        z = 0.25 * s;
    }
    UnitQuaternion::new(w, x, y, z).unwrap_or(UnitQuaternion::IDENTITY)
}

pub fn matrix_from_quat(q: UnitQuaternion) -> RotationMatrix {
    let UnitQuaternion { w, x, y, z } = q;
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, xz, yz) = (x * y, x * z, y * z);
    let (wx, wy, wz) = (w * x, w * y, w * z);
    RotationMatrix {
        m: [
            [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
            [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
            [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
        ],
    }
}

/// Builds a right-handed frame with `z` as the Z column and `x_hint`
/// projected onto the plane orthogonal to it as the X column.
pub fn frame_from_axes(x_hint: Vec3, z: Vec3) -> Result<RotationMatrix, GeometryError> {
    if !x_hint.is_finite() || !z.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    let z_axis = z.try_normalize().ok_or(GeometryError::ZeroAxis)?;
    if x_hint.cross(z_axis).norm() < AXIS_TOLERANCE {
        return Err(GeometryError::ParallelAxes);
    }
    let x_axis = (x_hint - z_axis * x_hint.dot(z_axis))
        .try_normalize()
        .ok_or(GeometryError::ParallelAxes)?;
    let y_axis = z_axis.cross(x_axis);
    Ok(RotationMatrix::from_columns(x_axis, y_axis, z_axis))
}

/// Shortest-arc spherical interpolation at constant angular velocity.
pub fn slerp(q0: UnitQuaternion, q1: UnitQuaternion, t: f64) -> UnitQuaternion {
    let mut b = q1.to_array();
    let mut dot = q0.dot(q1);
    if dot < 0.0 {
        dot = -dot;
        b = b.map(|c| -c);
    }
    let a = q0.to_array();
    let (wa, wb) = if dot > 1.0 - 1e-12 {
        (1.0 - t, t)
    } else {
        let theta = dot.min(1.0).acos();
        let s = theta.sin();
        (((1.0 - t) * theta).sin() / s, (t * theta).sin() / s)
    };
    let c: Vec<f64> = (0..4).map(|i| wa * a[i] + wb * b[i]).collect();
    UnitQuaternion::new(c[0], c[1], c[2], c[3]).unwrap_or(q0)
}

/// `p ↦ R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: RotationMatrix,
    pub translation: Vec3,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: RotationMatrix::IDENTITY,
        translation: Vec3::ZERO,
    };

    pub fn new(rotation: RotationMatrix, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(RotationMatrix::IDENTITY, t)
    }

    pub fn from_rotation(r: RotationMatrix) -> Self {
        Self::new(r, Vec3::ZERO)
    }

    pub fn from_quat_translation(q: UnitQuaternion, t: Vec3) -> Self {
        Self::new(matrix_from_quat(q), t)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation.mul(&other.rotation),
            translation: self.rotation.mul_vec(other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -rt.mul_vec(self.translation),
        }
    }

    pub fn apply_point(&self, p: Vec3) -> Vec3 {
        self.rotation.mul_vec(p) + self.translation
    }

    pub fn apply_vector(&self, v: Vec3) -> Vec3 {
        self.rotation.mul_vec(v)
    }

    /// Homogeneous 4×4, row-major.
    pub fn to_matrix4(&self) -> [f64; 16] {
        let r = self.rotation.rows();
        let t = self.translation;
        [
            r[0][0], r[0][1], r[0][2], t.x, //
            r[1][0], r[1][1], r[1][2], t.y, //
            r[2][0], r[2][1], r[2][2], t.z, //
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    /// Reads the rotation block and translation column of a row-major 4×4
    /// without validating it.
    pub fn from_matrix4_unchecked(m: &[f64; 16]) -> Self {
        Self {
            rotation: RotationMatrix::from_rows_unchecked([
                [m[0], m[1], m[2]],
                [m[4], m[5], m[6]],
                [m[8], m[9], m[10]],
            ]),
            translation: Vec3::new(m[3], m[7], m[11]),
        }
    }
}

/// Maps a pose through `t`: position by the full transform, orientation by
/// left-multiplying the transform's rotation.
pub fn transform_pose(t: &RigidTransform, p: Vec3, q: UnitQuaternion) -> (Vec3, UnitQuaternion) {
    (t.apply_point(p), quat_from_matrix(&t.rotation).mul(q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vec3,
    pub centroid: Vec3,
    pub residual_rms: f64,
}

/// Total-least-squares plane through `points`. The normal's sign is left
/// to the caller.
pub fn fit_plane(points: &[Vec3]) -> Result<Plane, GeometryError> {
    if points.len() < 3 {
        return Err(GeometryError::TooFewPoints(points.len()));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vec3::ZERO, |acc, &p| acc + p) / n;
    let mut cov = Matrix3::<f64>::zeros();
    for p in points {
        let d = *p - centroid;
        let d = nalgebra::Vector3::new(d.x, d.y, d.z);
        cov += d * d.transpose();
    }
    cov /= n;

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (smallest, second) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if (second - smallest).abs() <= EIGEN_TIE_TOLERANCE {
        return Err(GeometryError::DegenerateFit);
    }
    let v = eig.eigenvectors.column(order[0]);
    let normal = Vec3::new(v[0], v[1], v[2])
        .try_normalize()
        .ok_or(GeometryError::DegenerateFit)?;

    let sq: f64 = points
        .iter()
        .map(|p| {
            let d = (*p - centroid).dot(normal);
            d * d
        })
        .sum();
    Ok(Plane {
        normal,
        centroid,
        residual_rms: (sq / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_quat(rng: &mut impl Rng) -> UnitQuaternion {
        loop {
            let c: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let n2: f64 = c.iter().map(|v| v * v).sum();
            if n2 > 1e-3 && n2 <= 1.0 {
                return UnitQuaternion::from_array(c).unwrap();
            }
        }
    }

    #[test]
    fn plane_of_coplanar_points() {
        let pts = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.5, 0.5, 0.0),
        ];
        let plane = fit_plane(&pts).unwrap();
        assert!((plane.normal.z.abs() - 1.0).abs() < 1e-12);
        assert!(plane.centroid.max_abs_diff(Vec3::new(0.5, 0.5, 0.0)) < 1e-15);
        assert!(plane.residual_rms < 1e-12);
    }

    #[test]
    fn collinear_and_coincident_points_are_degenerate() {
        let line: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert_eq!(fit_plane(&line), Err(GeometryError::DegenerateFit));
        let same = vec![Vec3::new(1.0, 2.0, 3.0); 4];
        assert_eq!(fit_plane(&same), Err(GeometryError::DegenerateFit));
        assert_eq!(fit_plane(&same[..2]), Err(GeometryError::TooFewPoints(2)));
    }

    /// Brute-force oracle: minimize Σ (n·(p − c))² over a dense grid of unit
    /// normals on the upper hemisphere.
    fn grid_search_normal(points: &[Vec3]) -> Vec3 {
        let c = points.iter().fold(Vec3::ZERO, |a, &p| a + p) / points.len() as f64;
        let cost = |n: Vec3| -> f64 { points.iter().map(|p| (*p - c).dot(n).powi(2)).sum() };
        let mut best = (f64::INFINITY, Vec3::Z);
        let steps = 400;
        for i in 0..=steps {
            let theta = std::f64::consts::FRAC_PI_2 * i as f64 / steps as f64;
            let ring = ((4 * steps) as f64 * theta.sin()).ceil().max(1.0) as usize;
            for j in 0..ring {
                let phi = std::f64::consts::TAU * j as f64 / ring as f64;
                let n = Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
                let v = cost(n);
                if v < best.0 {
                    best = (v, n);
                }
            }
        }
        best.1
    }

    #[test]
    fn noisy_plane_matches_grid_search_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let pts: Vec<Vec3> = (0..5)
                .map(|_| {
                    Vec3::new(
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                        2.0 + rng.random_range(-1e-3..1e-3),
                    )
                })
                .collect();
            let fitted = fit_plane(&pts).unwrap().normal;
            let oracle = grid_search_normal(&pts);
            let angle_to_z = fitted.dot(Vec3::Z).abs().min(1.0).acos();
            assert!(angle_to_z < 0.01, "angle {angle_to_z}");
            let angle_to_oracle = fitted.dot(oracle).abs().min(1.0).acos();
            assert!(angle_to_oracle < 0.01, "oracle disagreement {angle_to_oracle}");
        }
    }

    #[test]
    fn frame_from_axes_cases() {
        let r = frame_from_axes(Vec3::X, Vec3::Z).unwrap();
        assert!(r.max_abs_diff(&RotationMatrix::IDENTITY) < 1e-15);
        let r = frame_from_axes(Vec3::new(1.0, 0.0, 0.5), Vec3::Z).unwrap();
        assert!(r.max_abs_diff(&RotationMatrix::IDENTITY) < 1e-15);
        assert_eq!(frame_from_axes(Vec3::X, Vec3::ZERO), Err(GeometryError::ZeroAxis));
        assert_eq!(
            frame_from_axes(Vec3::new(0.0, 0.0, 3.0), Vec3::Z),
            Err(GeometryError::ParallelAxes)
        );
    }

    #[test]
    fn quaternion_matrix_known_values() {
        let q = quat_from_matrix(&RotationMatrix::IDENTITY);
        assert_eq!(q.to_array(), [1.0, 0.0, 0.0, 0.0]);
        let rz = RotationMatrix::from_rows_unchecked([
            [-1.0, 0.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
        ]);
        let q = quat_from_matrix(&rz);
        assert!((q.z() - 1.0).abs() < 1e-15 && q.w().abs() < 1e-15);
    }

    #[test]
    fn quaternion_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let q = random_quat(&mut rng);
            let r = matrix_from_quat(q);
            assert!(r.orthonormality_error() < 1e-9);
            assert!((r.determinant() - 1.0).abs() < 1e-9);
            let back = matrix_from_quat(quat_from_matrix(&r));
            assert!(back.max_abs_diff(&r) < 1e-9);
            let q2 = quat_from_matrix(&r);
            assert!(q2.w() >= 0.0);
            assert!((q2.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn near_pi_rotations_round_trip() {
        for axis in [Vec3::X, Vec3::Y, Vec3::Z, Vec3::new(1.0, 1.0, 1.0)] {
            for eps in [0.0, 1e-12, 1e-8, 1e-4] {
                let r = RotationMatrix::from_axis_angle(axis, std::f64::consts::PI - eps).unwrap();
                let back = matrix_from_quat(quat_from_matrix(&r));
                assert!(back.max_abs_diff(&r) < 1e-9);
            }
        }
    }

    #[test]
    fn canonical_sign_tie_break() {
        let q = UnitQuaternion::new(0.0, -1.0, 0.0, 0.0).unwrap();
        assert_eq!(q.to_array(), [0.0, 1.0, 0.0, 0.0]);
        let q = UnitQuaternion::new(-0.5, 0.5, 0.5, 0.5).unwrap();
        assert!(q.w() > 0.0);
        let q = UnitQuaternion::new(0.0, 0.0, 0.0, -2.0).unwrap();
        assert_eq!(q.to_array(), [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn transform_pose_cases() {
        let p = Vec3::new(0.3, -0.2, 0.1);
        let q = UnitQuaternion::from_axis_angle(Vec3::Y, 0.4).unwrap();
        let (p2, q2) = transform_pose(&RigidTransform::IDENTITY, p, q);
        assert_eq!(p2, p);
        assert!(q2.angle_to(q) < 1e-15);

        let t = RigidTransform::from_translation(Vec3::Z);
        let (p2, q2) = transform_pose(&t, Vec3::ZERO, q);
        assert_eq!(p2, Vec3::Z);
        assert!(q2.angle_to(q) < 1e-15);

        let rz = RotationMatrix::from_axis_angle(Vec3::Z, std::f64::consts::FRAC_PI_2).unwrap();
        let (p2, _) = transform_pose(&RigidTransform::from_rotation(rz), Vec3::X, q);
        assert!(p2.max_abs_diff(Vec3::Y) < 1e-15);
    }

    #[test]
    fn transform_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let t1 = RigidTransform::from_quat_translation(
                random_quat(&mut rng),
                Vec3::new(rng.random(), rng.random(), rng.random()),
            );
            let t2 = RigidTransform::from_quat_translation(
                random_quat(&mut rng),
                Vec3::new(rng.random(), rng.random(), rng.random()),
            );
            let p = Vec3::new(rng.random(), rng.random(), rng.random());
            let q = random_quat(&mut rng);
            let (pa, qa) = transform_pose(&t1, p, q);
            let (pa, qa) = transform_pose(&t2, pa, qa);
            let (pb, qb) = transform_pose(&t2.compose(&t1), p, q);
            assert!(pa.max_abs_diff(pb) < 1e-9);
            assert!(qa.angle_to(qb) < 1e-9);
            let id = t1.compose(&t1.inverse());
            assert!(id.rotation.max_abs_diff(&RotationMatrix::IDENTITY) < 1e-12);
            assert!(id.translation.norm() < 1e-12);
        }
    }

    #[test]
    fn slerp_cases() {
        let q = UnitQuaternion::from_axis_angle(Vec3::new(1.0, 2.0, 3.0), 0.7).unwrap();
        for i in 0..=10 {
            assert!(slerp(q, q, i as f64 / 10.0).angle_to(q) < 1e-12);
        }
        let half_turn = UnitQuaternion::from_axis_angle(Vec3::Z, std::f64::consts::PI).unwrap();
        let mid = slerp(UnitQuaternion::IDENTITY, half_turn, 0.5);
        let expected = UnitQuaternion::from_axis_angle(Vec3::Z, std::f64::consts::FRAC_PI_2).unwrap();
        assert!(mid.angle_to(expected) < 1e-12);
        assert!(slerp(UnitQuaternion::IDENTITY, half_turn, 0.0).angle_to(UnitQuaternion::IDENTITY) < 1e-15);
        assert!(slerp(UnitQuaternion::IDENTITY, half_turn, 1.0).angle_to(half_turn) < 1e-12);
    }

    /// Path length of slerp, integrated numerically from sampled angular
    /// steps, must equal the geodesic angle even for near-antipodal pairs.
    #[test]
    fn slerp_path_length_matches_angle() {
        let q0 = UnitQuaternion::from_axis_angle(Vec3::new(0.2, 1.0, -0.3), 0.1).unwrap();
        let q1 = UnitQuaternion::from_axis_angle(Vec3::new(0.2, 1.0, -0.3), 0.1 + 3.14159).unwrap();
        let total = q0.angle_to(q1);
        let n = 20_000;
        let mut length = 0.0;
        let mut prev = q0;
        for i in 1..=n {
            let cur = slerp(q0, q1, i as f64 / n as f64);
            length += prev.angle_to(cur);
            prev = cur;
        }
        assert!((length - total).abs() < 1e-6, "{length} vs {total}");
        for i in 0..100 {
            let q = slerp(q0, q1, i as f64 / 99.0);
            assert!((q.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_vector_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let q = random_quat(&mut rng);
            let back = UnitQuaternion::from_rotation_vector(q.to_rotation_vector());
            assert!(back.angle_to(q) < 1e-9);
        }
    }
}
