//! Camera mathematics: pinhole projection, rigid poses, look-at construction
//! and the anchor-centred spherical parameterisation.
//!
//! World frame is z-up. The camera frame is x = right, y = down (image rows
//! grow downward), z = forward along the optical axis. A [`Pose`] stores the
//! world-to-camera rotation whose rows are those three axes expressed in world
//! coordinates, plus the camera centre in world coordinates.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// World up direction.
pub const WORLD_UP: Vec3 = Vec3::new(0.0, 0.0, 1.0);

/// Every producer of spherical coordinates clamps elevation to this bound.
pub const PHI_LIMIT: f64 = 80.0 * std::f64::consts::PI / 180.0;

/// Orthonormality tolerance for rotations read from outside.
pub const ROTATION_TOL: f64 = 1e-9;

const MIN_DEPTH: f64 = 1e-9;
const MIN_HORIZONTAL: f64 = 1e-9;
/// look_at refuses forward directions within this angle of world up.
const GIMBAL_MARGIN: f64 = 0.5 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("look-at is degenerate: forward direction is parallel to world up or position equals target")]
    DegenerateLookAt,
    #[error("position lies on the vertical axis through the anchor")]
    DegenerateSpherical,
    #[error("invalid spherical coordinate: {0}")]
    InvalidSpherical(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation not orthonormal (error {error:.3e})")]
    NotOrthonormal { error: f64 },
}

#[inline]
pub fn deg(rad: f64) -> f64 {
    rad.to_degrees()
}

#[inline]
pub fn rad(deg: f64) -> f64 {
    deg.to_radians()
}

/// Pinhole intrinsics with square pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(f: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self { f, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Frame of the given size, principal point at the centre.
    pub fn centered(f: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        Self::new(f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.f.is_finite() && self.f > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!("f must be > 0, got {}", self.f)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics("width and height must be positive".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!("cx {} outside [0, width)", self.cx)));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!("cy {} outside [0, height)", self.cy)));
        }
        Ok(())
    }

    pub fn width_f(&self) -> f64 {
        self.width as f64
    }

    pub fn height_f(&self) -> f64 {
        self.height as f64
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= self.width_f() && v <= self.height_f()
    }
}

impl Default for CameraIntrinsics {
    /// 640×480, f = 500 px, principal point at the frame centre.
    fn default() -> Self {
        Self { f: 500.0, cx: 320.0, cy: 240.0, width: 640, height: 480 }
    }
}

/// Rigid camera pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    position: Vec3,
}

impl Pose {
    /// Builds a pose, rejecting rotations that are not proper orthonormal
    /// within [`ROTATION_TOL`].
    pub fn new(rotation: Matrix3<f64>, position: Vec3) -> Result<Self, GeometryError> {
        let pose = Self { rotation, position };
        let error = pose.orthonormality_error();
        if !(error <= ROTATION_TOL) || !position.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::NotOrthonormal { error });
        }
        Ok(pose)
    }

    pub(crate) fn from_axes(right: Vec3, down: Vec3, forward: Vec3, position: Vec3) -> Self {
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Self { rotation, position }
    }

    /// World-to-camera rotation (rows: right, down, forward).
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn position(&self) -> Vec3 {
        self.position
    }

    pub fn right(&self) -> Vec3 {
        self.rotation.row(0).transpose()
    }

    pub fn down(&self) -> Vec3 {
        self.rotation.row(1).transpose()
    }

    pub fn forward(&self) -> Vec3 {
        self.rotation.row(2).transpose()
    }

    pub fn world_to_camera(&self, point: &Vec3) -> Vec3 {
        self.rotation * (point - self.position)
    }

    /// Max deviation of RᵀR from I, and of det R from +1.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.rotation.transpose() * self.rotation - Matrix3::identity();
        let off = gram.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        off.max((self.rotation.determinant() - 1.0).abs())
    }

    /// World-up component of the camera right axis; zero for a level horizon.
    pub fn roll_residual(&self) -> f64 {
        self.right().dot(&WORLD_UP).abs()
    }

    /// Row-major rotation followed by the position.
    pub fn to_array(&self) -> [f64; 12] {
        let r = &self.rotation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)],
            r[(1, 0)], r[(1, 1)], r[(1, 2)],
            r[(2, 0)], r[(2, 1)], r[(2, 2)],
            self.position.x, self.position.y, self.position.z,
        ]
    }

    pub fn from_array(a: &[f64; 12]) -> Result<Self, GeometryError> {
        let rotation = Matrix3::new(a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8]);
        Self::new(rotation, Vec3::new(a[9], a[10], a[11]))
    }
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let a = <[f64; 12]>::deserialize(d)?;
        Pose::from_array(&a).map_err(serde::de::Error::custom)
    }
}

impl std::fmt::Display for Pose {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let a = self.to_array();
        for (i, x) in a.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{x:.9}")?;
        }
        Ok(())
    }
}

/// Camera position about an anchor: distance, azimuth and elevation.
///
/// `theta = 0` places the camera on the +y side of the anchor looking along
/// −y; increasing `theta` swings it toward +x. `phi > 0` is above the anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalCoord {
    rho: f64,
    theta: f64,
    phi: f64,
    anchor: Vec3,
}

impl SphericalCoord {
    pub fn new(rho: f64, theta: f64, phi: f64, anchor: Vec3) -> Result<Self, GeometryError> {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(GeometryError::InvalidSpherical(format!("rho must be > 0, got {rho}")));
        }
        if !theta.is_finite() {
            return Err(GeometryError::InvalidSpherical("theta must be finite".into()));
        }
        if !(phi.abs() < std::f64::consts::FRAC_PI_2) {
            return Err(GeometryError::InvalidSpherical(format!(
                "phi must lie strictly inside (-90°, 90°), got {:.3}°",
                phi.to_degrees()
            )));
        }
        if !anchor.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::InvalidSpherical("anchor must be finite".into()));
        }
        Ok(Self { rho, theta, phi, anchor })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn anchor(&self) -> Vec3 {
        self.anchor
    }

    /// True when both coordinates describe the same camera placement within `tol`
    /// (angles compared modulo 2π).
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        (self.rho - other.rho).abs() <= tol
            && wrap_angle(self.theta - other.theta).abs() <= tol
            && (self.phi - other.phi).abs() <= tol
            && (self.anchor - other.anchor).amax() <= tol
    }
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

/// Projects a world point through the pinhole model; returns (u, v, depth).
pub fn project_point(
    intrinsics: &CameraIntrinsics,
    pose: &Pose,
    point: &Vec3,
) -> Result<(f64, f64, f64), GeometryError> {
    let c = pose.world_to_camera(point);
    if c.z <= MIN_DEPTH {
        return Err(GeometryError::BehindCamera { depth: c.z });
    }
    Ok((
        intrinsics.cx + intrinsics.f * c.x / c.z,
        intrinsics.cy + intrinsics.f * c.y / c.z,
        c.z,
    ))
}

/// Projects a camera-frame direction (z > 0) to pixel coordinates.
pub(crate) fn project_camera_dir(intrinsics: &CameraIntrinsics, c: &Vec3) -> Option<(f64, f64)> {
    (c.z > MIN_DEPTH).then(|| (intrinsics.cx + intrinsics.f * c.x / c.z, intrinsics.cy + intrinsics.f * c.y / c.z))
}

/// Zero-roll pose at `position` whose optical axis passes through `target`.
pub fn look_at(position: &Vec3, target: &Vec3, world_up: &Vec3) -> Result<Pose, GeometryError> {
    let d = target - position;
    let dist = d.norm();
    let up_norm = world_up.norm();
    if !(dist > 1e-12) || !(up_norm > 0.0) || !dist.is_finite() {
        return Err(GeometryError::DegenerateLookAt);
    }
    let forward = d / dist;
    let up = world_up / up_norm;
    let side = forward.cross(&up);
    if side.norm() < GIMBAL_MARGIN.sin() {
        return Err(GeometryError::DegenerateLookAt);
    }
    let right = side.normalize();
    let down = forward.cross(&right);
    Ok(Pose::from_axes(right, down, forward, *position))
}

pub fn spherical_to_position(s: &SphericalCoord) -> Vec3 {
    let (st, ct) = s.theta.sin_cos();
    let (sp, cp) = s.phi.sin_cos();
    s.anchor + s.rho * Vec3::new(cp * st, cp * ct, sp)
}

pub fn position_to_spherical(position: &Vec3, anchor: &Vec3) -> Result<SphericalCoord, GeometryError> {
    let d = position - anchor;
    let horizontal = d.x.hypot(d.y);
    if horizontal < MIN_HORIZONTAL {
        return Err(GeometryError::DegenerateSpherical);
    }
    let rho = d.norm();
    let theta = d.x.atan2(d.y);
    let phi = d.z.atan2(horizontal);
    SphericalCoord::new(rho, theta, phi, *anchor)
}

/// Camera on the sphere about the anchor, looking at it with zero roll.
pub fn spherical_to_pose(s: &SphericalCoord) -> Result<Pose, GeometryError> {
    look_at(&spherical_to_position(s), &s.anchor, &WORLD_UP)
}

/// Recovers the spherical coordinate of a pose's camera centre about `anchor`.
pub fn pose_to_spherical(pose: &Pose, anchor: &Vec3) -> Result<SphericalCoord, GeometryError> {
    position_to_spherical(&pose.position, anchor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::default()
    }

    #[test]
    fn optical_axis_point_projects_to_principal_point() {
        let pose = look_at(&Vec3::new(0.0, -2.0, 0.0), &Vec3::zeros(), &WORLD_UP).unwrap();
        let (u, v, z) = project_point(&k(), &pose, &Vec3::zeros()).unwrap();
        assert_abs_diff_eq!(u, 320.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 240.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn camera_frame_point_direct_arithmetic() {
        // Identity camera: world axes equal camera axes.
        let pose = Pose::new(Matrix3::identity(), Vec3::zeros()).unwrap();
        let (u, v, z) = project_point(&k(), &pose, &Vec3::new(0.1, 0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(u, 370.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 240.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn behind_camera_is_rejected() {
        let pose = Pose::new(Matrix3::identity(), Vec3::zeros()).unwrap();
        let err = project_point(&k(), &pose, &Vec3::new(0.0, 0.0, -1.0)).unwrap_err();
        assert!(matches!(err, GeometryError::BehindCamera { .. }));
        assert!(project_point(&k(), &pose, &Vec3::zeros()).is_err());
    }

    #[test]
    fn look_at_axis_aligned() {
        let pose = look_at(&Vec3::new(0.0, -2.0, 0.0), &Vec3::zeros(), &WORLD_UP).unwrap();
        assert_abs_diff_eq!(pose.forward(), Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(pose.right(), Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(pose.down(), Vec3::new(0.0, 0.0, -1.0), epsilon = 1e-12);
        assert_eq!(pose.right().z, 0.0);
        assert!(pose.orthonormality_error() < 1e-12);
    }

    #[test]
    fn look_at_straight_down_is_degenerate() {
        let err = look_at(&Vec3::new(0.0, 0.0, 5.0), &Vec3::zeros(), &WORLD_UP).unwrap_err();
        assert_eq!(err, GeometryError::DegenerateLookAt);
        assert!(look_at(&Vec3::zeros(), &Vec3::zeros(), &WORLD_UP).is_err());
    }

    #[test]
    fn spherical_examples() {
        let s = SphericalCoord::new(2.0, 0.0, 0.0, Vec3::zeros()).unwrap();
        assert_abs_diff_eq!(spherical_to_position(&s), Vec3::new(0.0, 2.0, 0.0), epsilon = 1e-15);
        let s = SphericalCoord::new(1.0, FRAC_PI_2, 0.0, Vec3::zeros()).unwrap();
        assert_abs_diff_eq!(spherical_to_position(&s), Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
        let s = SphericalCoord::new(1.0, 0.0, FRAC_PI_2 - 1e-7, Vec3::zeros()).unwrap();
        assert_abs_diff_eq!(spherical_to_position(&s), Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-6);
        assert!(SphericalCoord::new(1.0, 0.0, FRAC_PI_2, Vec3::zeros()).is_err());
        assert!(SphericalCoord::new(0.0, 0.0, 0.0, Vec3::zeros()).is_err());
    }

    #[test]
    fn position_to_spherical_examples() {
        let s = position_to_spherical(&Vec3::new(0.0, 2.0, 0.0), &Vec3::zeros()).unwrap();
        assert_abs_diff_eq!(s.rho(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.theta(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.phi(), 0.0, epsilon = 1e-15);
        assert_eq!(
            position_to_spherical(&Vec3::new(0.0, 0.0, 1.0), &Vec3::zeros()).unwrap_err(),
            GeometryError::DegenerateSpherical
        );
    }

    #[test]
    fn spherical_to_pose_faces_anchor() {
        let s = SphericalCoord::new(2.0, 0.0, 0.0, Vec3::zeros()).unwrap();
        let pose = spherical_to_pose(&s).unwrap();
        assert_abs_diff_eq!(pose.position(), Vec3::new(0.0, 2.0, 0.0), epsilon = 1e-15);
        assert_abs_diff_eq!(pose.forward(), Vec3::new(0.0, -1.0, 0.0), epsilon = 1e-15);
        let (u, v, _) = project_point(&k(), &pose, &Vec3::zeros()).unwrap();
        assert_abs_diff_eq!(u, 320.0, epsilon = 1e-9);
        assert_abs_diff_eq!(v, 240.0, epsilon = 1e-9);

        let anchor = Vec3::new(0.3, -0.2, 0.9);
        let s = SphericalCoord::new(1.7, 0.4, rad(60.0), anchor).unwrap();
        let pose = spherical_to_pose(&s).unwrap();
        assert!(pose.position().z > anchor.z);
        let (u, v, _) = project_point(&k(), &pose, &anchor).unwrap();
        assert!((u - 320.0).abs() < 1e-6 && (v - 240.0).abs() < 1e-6);
    }

    #[test]
    fn pose_array_round_trip_and_rejection() {
        let pose = look_at(&Vec3::new(1.0, -2.0, 0.5), &Vec3::new(0.0, 0.0, 0.2), &WORLD_UP).unwrap();
        let back = Pose::from_array(&pose.to_array()).unwrap();
        assert_eq!(back, pose);
        let mut bad = pose.to_array();
        bad[0] *= 1.01;
        assert!(matches!(Pose::from_array(&bad), Err(GeometryError::NotOrthonormal { .. })));
        // Reflection: orthogonal but det = −1.
        let mut mirrored = pose.to_array();
        for x in &mut mirrored[0..3] {
            *x = -*x;
        }
        assert!(Pose::from_array(&mirrored).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 1.0, 4, 4).is_ok());
    }

    #[test]
    fn wrap_angle_range() {
        assert_abs_diff_eq!(wrap_angle(3.0 * std::f64::consts::PI), std::f64::consts::PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(-0.1), -0.1, epsilon = 1e-15);
    }
}
