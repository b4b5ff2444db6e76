//! Closed-form constraint-to-pose solving followed by image-based visual
//! servoing of yaw and pitch until the anchor lands on its target pixel.

use nalgebra::{Matrix2, Rotation3, Unit, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    look_at, project_camera_dir, project_point, spherical_to_pose, CameraIntrinsics, GeometryError, Pose,
    SphericalCoord, Vec3, PHI_LIMIT, WORLD_UP,
};
use crate::scene::{observe_object, Scene, SceneObject};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("invalid scale ratio s = {0}: must be > 0")]
    InvalidScale(f64),
    #[error("invalid constraint `{field}`: {message}")]
    InvalidConstraint { field: &'static str, message: String },
    #[error("invalid servo config: {0}")]
    InvalidConfig(String),
    #[error("anchor `{0}` is not in the scene")]
    UnknownAnchor(String),
    #[error("anchor `{0}` is not visible from the current pose")]
    AnchorNotVisible(String),
    #[error("servo did not converge after {iterations} iterations (residual {residual:?} px)")]
    ServoNotConverged { best_pose: Pose, residual: [f64; 2], iterations: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl SolverError {
    /// Short machine-readable reason.
    pub fn reason(&self) -> &'static str {
        match self {
            SolverError::InvalidScale(_) => "InvalidScale",
            SolverError::InvalidConstraint { .. } => "InvalidConstraint",
            SolverError::InvalidConfig(_) => "InvalidConfig",
            SolverError::UnknownAnchor(_) => "UnknownAnchor",
            SolverError::AnchorNotVisible(_) => "AnchorNotVisible",
            SolverError::ServoNotConverged { .. } => "ServoNotConverged",
            SolverError::Geometry(_) => "GeometryError",
        }
    }
}

/// Target anchor pixel, scale ratio, azimuth and elevation (radians).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintVector {
    pub u_star: f64,
    pub v_star: f64,
    pub s: f64,
    pub theta: f64,
    pub phi: f64,
}

impl ConstraintVector {
    pub fn new(u_star: f64, v_star: f64, s: f64, theta: f64, phi: f64, k: &CameraIntrinsics) -> Result<Self, SolverError> {
        let g = Self { u_star, v_star, s, theta, phi };
        g.validate(k)?;
        Ok(g)
    }

    /// Target pixel inside the frame with a 5%-of-width margin; s > 0; |phi| ≤ 80°.
    pub fn validate(&self, k: &CameraIntrinsics) -> Result<(), SolverError> {
        let bad = |field, message: String| Err(SolverError::InvalidConstraint { field, message });
        let margin = 0.05 * k.width_f();
        if !(self.s.is_finite() && self.s > 0.0) {
            return bad("s", format!("must be > 0, got {}", self.s));
        }
        if !(self.u_star >= margin && self.u_star <= k.width_f() - margin) {
            return bad("u_star", format!("{} outside [{margin}, {}]", self.u_star, k.width_f() - margin));
        }
        if !(self.v_star >= margin && self.v_star <= k.height_f() - margin) {
            return bad("v_star", format!("{} outside [{margin}, {}]", self.v_star, k.height_f() - margin));
        }
        if !self.theta.is_finite() {
            return bad("theta", "must be finite".into());
        }
        if !(self.phi.abs() <= PHI_LIMIT + 1e-12) {
            return bad("phi", format!("{:.3}° outside [-80°, 80°]", self.phi.to_degrees()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServoConfig {
    /// Max per-step anchor shift as a fraction of image width.
    pub gain_fraction: f64,
    /// Convergence threshold on the ∞-norm pixel error.
    pub pixel_tol: f64,
    pub max_iters: usize,
    /// Per-axis angular cap per step, radians.
    pub angle_cap: f64,
    /// Passes that rescale ρ so the anchor's measured height at the target
    /// view equals s·h0. Zero keeps the bare distance law.
    pub scale_refine_iters: usize,
}

impl Default for ServoConfig {
    fn default() -> Self {
        Self { gain_fraction: 0.05, pixel_tol: 1.0, max_iters: 10, angle_cap: 5f64.to_radians(), scale_refine_iters: 4 }
    }
}

impl ServoConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.gain_fraction > 0.0 && self.gain_fraction <= 0.05) {
            return Err(SolverError::InvalidConfig(format!("gain fraction {} outside (0, 0.05]", self.gain_fraction)));
        }
        if self.max_iters < 1 {
            return Err(SolverError::InvalidConfig("max_iters must be ≥ 1".into()));
        }
        if !(self.pixel_tol > 0.0) || !(self.angle_cap > 0.0) {
            return Err(SolverError::InvalidConfig("pixel_tol and angle_cap must be > 0".into()));
        }
        Ok(())
    }

    pub fn shift_bound(&self, k: &CameraIntrinsics) -> f64 {
        self.gain_fraction * k.width_f()
    }
}

/// ρ = ρ0 / s: a larger on-screen subject means moving closer.
pub fn solve_distance(rho0: f64, s: f64) -> Result<f64, SolverError> {
    if !(s.is_finite() && s > 0.0) {
        return Err(SolverError::InvalidScale(s));
    }
    Ok(rho0 / s)
}

/// Anchor-centred pose at the distance implied by `g.s`, looking at the anchor.
pub fn initial_pose(g: &ConstraintVector, anchor: &Vec3, rho0: f64) -> Result<Pose, SolverError> {
    let rho = solve_distance(rho0, g.s)?;
    let sc = SphericalCoord::new(rho, g.theta, g.phi, *anchor)?;
    Ok(spherical_to_pose(&sc)?)
}

/// Rescales the distance until the anchor's bbox height at the target view is
/// `s·h0`. The distance law assumes the silhouette height only depends on ρ,
/// but an upright cylinder seen from a new elevation also shows its rim.
/// Stops early when the anchor is truncated, since its height is then unknown.
pub fn refine_distance(g: &ConstraintVector, anchor: &SceneObject, h0: f64, rho0: f64, k: &CameraIntrinsics, iters: usize) -> Result<Pose, SolverError> {
    let target_h = g.s * h0;
    let mut rho = solve_distance(rho0, g.s)?;
    let mut pose = spherical_to_pose(&SphericalCoord::new(rho, g.theta, g.phi, anchor.centroid)?)?;
    for _ in 0..iters {
        let obs = observe_object(anchor, &pose, k);
        if !obs.visible || obs.truncated || obs.pixel_height <= 0.0 {
            break;
        }
        let ratio = (obs.pixel_height / target_h).clamp(0.5, 2.0);
        if (ratio - 1.0).abs() < 1e-4 {
            break;
        }
        let candidate = spherical_to_pose(&SphericalCoord::new(rho * ratio, g.theta, g.phi, anchor.centroid)?)?;
        if observe_object(anchor, &candidate, k).truncated {
            break;
        }
        rho *= ratio;
        pose = candidate;
    }
    Ok(pose)
}

pub fn pixel_error(projected: (f64, f64), target: (f64, f64)) -> [f64; 2] {
    [projected.0 - target.0, projected.1 - target.1]
}

fn inf_norm(e: &[f64; 2]) -> f64 {
    e[0].abs().max(e[1].abs())
}

/// Rotates the camera by a local yaw (positive turns left, about the camera's
/// up axis) then a local pitch (positive tilts up, about the new right axis),
/// and re-levels the horizon. The camera centre never moves.
pub fn apply_yaw_pitch(pose: &Pose, yaw: f64, pitch: f64) -> Option<Pose> {
    let up = Unit::new_normalize(-pose.down());
    let yaw_rot = Rotation3::from_axis_angle(&up, yaw);
    let right = yaw_rot * pose.right();
    let forward = yaw_rot * pose.forward();
    let pitch_rot = Rotation3::from_axis_angle(&Unit::new_normalize(right), pitch);
    let forward = pitch_rot * forward;
    let position = pose.position();
    look_at(&position, &(position + forward), &WORLD_UP).ok()
}

/// Pixel where a world bearing (direction from the camera centre) lands.
fn bearing_pixel(pose: &Pose, bearing: &Vec3, k: &CameraIntrinsics) -> Option<(f64, f64)> {
    project_camera_dir(k, &(pose.rotation() * bearing))
}

fn pixel_bearing(pose: &Pose, u: f64, v: f64, k: &CameraIntrinsics) -> Vec3 {
    pose.rotation().transpose() * Vec3::new((u - k.cx) / k.f, (v - k.cy) / k.f, 1.0)
}

/// Step along `direction` (yaw, pitch), halving until the re-levelled pose exists.
fn actuate(pose: &Pose, direction: Vector2<f64>, mut lambda: f64) -> (Pose, f64) {
    for _ in 0..40 {
        if let Some(p) = apply_yaw_pitch(pose, lambda * direction.x, lambda * direction.y) {
            return (p, lambda);
        }
        lambda *= 0.5;
    }
    (*pose, 0.0)
}

/// λ = min(1, bound / |e|∞, angle_cap / |J⁻¹e|∞).
fn servo_gain(e: &[f64; 2], correction: &Vector2<f64>, k: &CameraIntrinsics, cfg: &ServoConfig) -> f64 {
    let predicted = inf_norm(e);
    let angle = correction.amax();
    let mut lambda = 1.0f64;
    if predicted > 0.0 {
        lambda = lambda.min(cfg.shift_bound(k) / predicted);
    }
    if angle > 0.0 {
        lambda = lambda.min(cfg.angle_cap / angle);
    }
    lambda
}

/// One IBVS correction with the constant Jacobian J = diag(f, f):
/// (Δyaw, Δpitch) = −λ J⁻¹ e.
pub fn servo_step(pose: &Pose, e: [f64; 2], k: &CameraIntrinsics, cfg: &ServoConfig) -> Pose {
    if e == [0.0, 0.0] {
        return *pose;
    }
    let correction = servo_correction(e, &Matrix2::from_diagonal(&Vector2::new(k.f, k.f)));
    let lambda = servo_gain(&e, &correction, k, cfg);
    actuate(pose, correction, lambda).0
}

/// −J⁻¹e, falling back to the diagonal of J when J is singular.
fn servo_correction(e: [f64; 2], jacobian: &Matrix2<f64>) -> Vector2<f64> {
    let e = Vector2::new(e[0], e[1]);
    match jacobian.try_inverse() {
        Some(inv) => -(inv * e),
        None => Vector2::new(-e.x / jacobian[(0, 0)], -e.y / jacobian[(1, 1)]),
    }
}

/// Interaction matrix of the yaw/pitch actuation for the point currently at
/// pixel (u, v): columns are ∂(u, v)/∂yaw and ∂(u, v)/∂pitch. Equals
/// diag(f, f) at the principal point of a level camera.
pub fn image_jacobian(pose: &Pose, u: f64, v: f64, k: &CameraIntrinsics) -> Matrix2<f64> {
    const H: f64 = 1e-6;
    let b = pixel_bearing(pose, u, v, k);
    let fallback = Matrix2::from_diagonal(&Vector2::new(k.f, k.f));
    let eval = |yaw: f64, pitch: f64| apply_yaw_pitch(pose, yaw, pitch).and_then(|p| bearing_pixel(&p, &b, k));
    let (Some(yp), Some(ym), Some(pp), Some(pm)) = (eval(H, 0.0), eval(-H, 0.0), eval(0.0, H), eval(0.0, -H)) else {
        return fallback;
    };
    let j = Matrix2::new(
        (yp.0 - ym.0) / (2.0 * H),
        (pp.0 - pm.0) / (2.0 * H),
        (yp.1 - ym.1) / (2.0 * H),
        (pp.1 - pm.1) / (2.0 * H),
    );
    if j.iter().all(|x| x.is_finite()) && j.determinant().abs() > 1e-6 * k.f * k.f {
        j
    } else {
        fallback
    }
}

/// Result of one bounded servo step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoRecord {
    pub error_before: [f64; 2],
    /// Realised ∞-norm displacement of the anchor's projection.
    pub shift: f64,
    pub lambda: f64,
}

/// Servo step used by [`geometric_solve`]: the Jacobian is evaluated at the
/// anchor's current projection, and λ is further reduced until the anchor's
/// realised displacement respects the per-step shift bound.
pub fn servo_step_toward(
    pose: &Pose,
    projected: (f64, f64),
    target: (f64, f64),
    k: &CameraIntrinsics,
    cfg: &ServoConfig,
) -> (Pose, ServoRecord) {
    let e = pixel_error(projected, target);
    let mut record = ServoRecord { error_before: e, shift: 0.0, lambda: 0.0 };
    if e == [0.0, 0.0] {
        return (*pose, record);
    }
    let bearing = pixel_bearing(pose, projected.0, projected.1, k);
    let correction = servo_correction(e, &image_jacobian(pose, projected.0, projected.1, k));
    let bound = cfg.shift_bound(k);
    let mut lambda = servo_gain(&e, &correction, k, cfg);
    for _ in 0..40 {
        let (candidate, applied) = actuate(pose, correction, lambda);
        let shift = bearing_pixel(&candidate, &bearing, k)
            .map(|(u, v)| (u - projected.0).abs().max((v - projected.1).abs()))
            .unwrap_or(f64::INFINITY);
        if shift <= bound + 0.25 {
            record.shift = shift;
            record.lambda = applied;
            return (candidate, record);
        }
        lambda = applied * (bound / shift).min(0.9);
    }
    (*pose, record)
}

/// Outcome of the analytic solve plus servo loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub pose: Pose,
    pub initial_pose: Pose,
    pub residual: [f64; 2],
    pub iterations: usize,
    pub steps: Vec<ServoRecord>,
    /// Anchor depth measured from the starting pose.
    pub rho0: f64,
}

/// Initial pose from `g`, then servoing until the anchor projects within
/// `pixel_tol` of (u*, v*).
pub fn geometric_solve(
    g: &ConstraintVector,
    scene: &Scene,
    anchor_id: &str,
    k: &CameraIntrinsics,
    current_pose: &Pose,
    cfg: &ServoConfig,
) -> Result<SolveOutcome, SolverError> {
    g.validate(k)?;
    cfg.validate()?;
    let anchor = scene.object(anchor_id).ok_or_else(|| SolverError::UnknownAnchor(anchor_id.to_string()))?;
    let obs = observe_object(anchor, current_pose, k);
    if !obs.visible {
        return Err(SolverError::AnchorNotVisible(anchor_id.to_string()));
    }
    let rho0 = obs.depth;
    let initial = if cfg.scale_refine_iters > 0 && !obs.truncated {
        refine_distance(g, anchor, obs.pixel_height, rho0, k, cfg.scale_refine_iters)?
    } else {
        initial_pose(g, &anchor.centroid, rho0)?
    };
    let target = (g.u_star, g.v_star);

    let mut pose = initial;
    let mut steps = Vec::new();
    let mut best: Option<(Pose, [f64; 2])> = None;
    for iteration in 0..=cfg.max_iters {
        let (u, v, _) = project_point(k, &pose, &anchor.centroid)?;
        let e = pixel_error((u, v), target);
        if best.is_none_or(|(_, b)| inf_norm(&e) < inf_norm(&b)) {
            best = Some((pose, e));
        }
        if inf_norm(&e) < cfg.pixel_tol {
            return Ok(SolveOutcome { pose, initial_pose: initial, residual: e, iterations: iteration, steps, rho0 });
        }
        if iteration == cfg.max_iters {
            break;
        }
        let (next, record) = servo_step_toward(&pose, (u, v), target, k, cfg);
        steps.push(record);
        pose = next;
    }
    let (best_pose, residual) = best.expect("at least one evaluation");
    Err(SolverError::ServoNotConverged { best_pose, residual, iterations: cfg.max_iters })
}
