//! Explicit world model and extraction of per-object perceptual inputs.
//!
//! Each object is bounded by an upright cylinder centred on its centroid,
//! spanning `centroid.z ± cyl_height / 2`.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project_camera_dir, CameraIntrinsics, Pose, Vec3};
use crate::render::Splat;

/// Number of rim samples per cylinder cap.
const RIM_SAMPLES: usize = 8;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot read scene file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scene file: {0}")]
    Parse(String),
    #[error("invalid scene field `{field}`: {message}")]
    Validation { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> SceneError {
    SceneError::Validation { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub id: String,
    pub label: String,
    pub centroid: Vec3,
    pub cyl_height: f64,
    pub cyl_radius: f64,
    pub facing: Option<Vec3>,
    pub splats: Vec<Splat>,
}

impl SceneObject {
    /// Validated constructor. `cyl_radius` defaults to a quarter of the height;
    /// `facing` is normalised.
    pub fn new(
        id: impl Into<String>,
        label: impl Into<String>,
        centroid: Vec3,
        cyl_height: f64,
        cyl_radius: Option<f64>,
        facing: Option<Vec3>,
        splats: Vec<Splat>,
    ) -> Result<Self, SceneError> {
        let id = id.into();
        let label = label.into();
        let field = |name: &str| format!("objects[{id}].{name}");
        if id.is_empty() {
            return Err(invalid("objects[].id", "must be non-empty"));
        }
        if label.trim().is_empty() {
            return Err(invalid(field("label"), "must be non-empty"));
        }
        if !centroid.iter().all(|c| c.is_finite()) {
            return Err(invalid(field("centroid"), "must be finite"));
        }
        if !(cyl_height.is_finite() && cyl_height > 0.0) {
            return Err(invalid(field("cyl_height"), format!("must be > 0, got {cyl_height}")));
        }
        let cyl_radius = cyl_radius.unwrap_or(cyl_height / 4.0);
        if !(cyl_radius.is_finite() && cyl_radius > 0.0) {
            return Err(invalid(field("cyl_radius"), format!("must be > 0, got {cyl_radius}")));
        }
        let facing = match facing {
            Some(v) => {
                let n = v.norm();
                if !(n.is_finite() && n > 1e-9) {
                    return Err(invalid(field("facing"), "must be a non-zero direction"));
                }
                Some(v / n)
            }
            None => None,
        };
        for (i, s) in splats.iter().enumerate() {
            s.validate().map_err(|m| invalid(field(&format!("splats[{i}]")), m))?;
            let d = s.center - centroid;
            let radial = d.x.hypot(d.y);
            // Within twice the bounding cylinder.
            if radial > 2.0 * cyl_radius + 1e-9 || d.z.abs() > cyl_height + 1e-9 {
                return Err(invalid(
                    field(&format!("splats[{i}].center")),
                    "lies outside twice the object's bounding cylinder",
                ));
            }
        }
        Ok(Self { id, label, centroid, cyl_height, cyl_radius, facing, splats })
    }

    /// 16 cylinder boundary samples: 8 on the top rim, then 8 on the bottom rim.
    pub fn rim_samples(&self) -> [Vec3; 2 * RIM_SAMPLES] {
        let mut out = [Vec3::zeros(); 2 * RIM_SAMPLES];
        let half = self.cyl_height / 2.0;
        for k in 0..RIM_SAMPLES {
            let a = k as f64 * std::f64::consts::TAU / RIM_SAMPLES as f64;
            let off = Vec3::new(self.cyl_radius * a.cos(), self.cyl_radius * a.sin(), 0.0);
            out[k] = self.centroid + off + Vec3::new(0.0, 0.0, half);
            out[k + RIM_SAMPLES] = self.centroid + off - Vec3::new(0.0, 0.0, half);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub background_color: [u8; 3],
    objects: Vec<SceneObject>,
}

impl Scene {
    pub fn new(background_color: [u8; 3], objects: Vec<SceneObject>) -> Result<Self, SceneError> {
        if objects.is_empty() {
            return Err(invalid("objects", "scene needs at least one object"));
        }
        let mut seen = HashSet::new();
        for o in &objects {
            if !seen.insert(o.id.as_str()) {
                return Err(invalid("objects[].id", format!("duplicate object id `{}`", o.id)));
            }
        }
        Ok(Self { background_color, objects })
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// All splats in scene order (object order, then per-object order).
    pub fn splats(&self) -> impl Iterator<Item = &Splat> {
        self.objects.iter().flat_map(|o| o.splats.iter())
    }

    pub fn from_json_str(text: &str) -> Result<Self, SceneError> {
        let file: SceneFile = serde_json::from_str(text).map_err(|e| SceneError::Parse(e.to_string()))?;
        file.try_into()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&SceneFile::from(self)).expect("scene serialises")
    }
}

pub fn load_scene(path: &Path) -> Result<Scene, SceneError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| SceneError::Io { path: path.display().to_string(), source })?;
    Scene::from_json_str(&text)
}

/// On-disk scene layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub background_color: [u8; 3],
    pub objects: Vec<ObjectFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectFile {
    pub id: String,
    pub label: String,
    pub centroid: [f64; 3],
    pub cyl_height: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cyl_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facing: Option<[f64; 3]>,
    #[serde(default)]
    pub splats: Vec<SplatFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplatFile {
    pub center: [f64; 3],
    pub sigma: f64,
    pub color: [u8; 3],
    pub opacity: f64,
}

impl TryFrom<SceneFile> for Scene {
    type Error = SceneError;

    fn try_from(file: SceneFile) -> Result<Self, SceneError> {
        let objects = file
            .objects
            .into_iter()
            .map(|o| {
                let splats = o
                    .splats
                    .iter()
                    .map(|s| Splat { center: s.center.into(), sigma: s.sigma, color: s.color, opacity: s.opacity })
                    .collect();
                SceneObject::new(o.id, o.label, o.centroid.into(), o.cyl_height, o.cyl_radius, o.facing.map(Vec3::from), splats)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Scene::new(file.background_color, objects)
    }
}

impl From<&Scene> for SceneFile {
    fn from(scene: &Scene) -> Self {
        SceneFile {
            background_color: scene.background_color,
            objects: scene
                .objects
                .iter()
                .map(|o| ObjectFile {
                    id: o.id.clone(),
                    label: o.label.clone(),
                    centroid: o.centroid.into(),
                    cyl_height: o.cyl_height,
                    cyl_radius: Some(o.cyl_radius),
                    facing: o.facing.map(Into::into),
                    splats: o
                        .splats
                        .iter()
                        .map(|s| SplatFile { center: s.center.into(), sigma: s.sigma, color: s.color, opacity: s.opacity })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// Axis-aligned pixel box, `min <= max` on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl BBox {
    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// What the camera sees of one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectObservation {
    pub id: String,
    pub label: String,
    pub world: Vec3,
    /// Clamped to the frame; absent when not visible.
    pub bbox: Option<BBox>,
    /// Projection of the centroid; may lie outside the frame.
    pub center: Option<[f64; 2]>,
    /// `v_max − v_min` of the clamped bbox, px; 0 when not visible.
    pub pixel_height: f64,
    /// Camera-frame depth of the centroid, m.
    pub depth: f64,
    pub visible: bool,
    /// The bbox was clipped by the frame or by the image plane.
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facing: Option<Vec3>,
}

impl ObjectObservation {
    /// Visible and with the centroid projecting inside the frame.
    pub fn centered_in_frame(&self, k: &CameraIntrinsics) -> bool {
        self.visible && self.center.is_some_and(|[u, v]| k.contains(u, v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredInputs {
    pub intrinsics: CameraIntrinsics,
    pub camera: Pose,
    pub objects: Vec<ObjectObservation>,
}

impl StructuredInputs {
    pub fn object(&self, id: &str) -> Option<&ObjectObservation> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn visible(&self) -> impl Iterator<Item = &ObjectObservation> {
        self.objects.iter().filter(|o| o.visible)
    }
}

pub fn observe_object(object: &SceneObject, pose: &Pose, k: &CameraIntrinsics) -> ObjectObservation {
    let mut obs = ObjectObservation {
        id: object.id.clone(),
        label: object.label.clone(),
        world: object.centroid,
        bbox: None,
        center: None,
        pixel_height: 0.0,
        depth: pose.world_to_camera(&object.centroid).z,
        visible: false,
        truncated: false,
        facing: object.facing,
    };
    let Some((u, v)) = project_camera_dir(k, &pose.world_to_camera(&object.centroid)) else {
        return obs;
    };
    obs.center = Some([u, v]);

    let mut behind = false;
    let (mut u_min, mut v_min, mut u_max, mut v_max) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in object.rim_samples() {
        match project_camera_dir(k, &pose.world_to_camera(&p)) {
            Some((su, sv)) => {
                u_min = u_min.min(su);
                u_max = u_max.max(su);
                v_min = v_min.min(sv);
                v_max = v_max.max(sv);
            }
            None => behind = true,
        }
    }
    let (w, h) = (k.width_f(), k.height_f());
    // Fully outside the frame.
    if u_max < 0.0 || v_max < 0.0 || u_min > w || v_min > h {
        return obs;
    }
    let clamped = BBox { u_min: u_min.max(0.0), v_min: v_min.max(0.0), u_max: u_max.min(w), v_max: v_max.min(h) };
    if clamped.height() <= 0.0 {
        return obs;
    }
    obs.truncated = behind || clamped != BBox { u_min, v_min, u_max, v_max };
    obs.pixel_height = clamped.height();
    obs.bbox = Some(clamped);
    obs.visible = true;
    obs
}

/// Per-object perceptual inputs as seen from `pose`. Invisible objects are
/// flagged, never dropped.
pub fn extract_structured_inputs(scene: &Scene, pose: &Pose, intrinsics: &CameraIntrinsics) -> StructuredInputs {
    StructuredInputs {
        intrinsics: *intrinsics,
        camera: *pose,
        objects: scene.objects.iter().map(|o| observe_object(o, pose, intrinsics)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{look_at, WORLD_UP};
    use approx::assert_abs_diff_eq;

    const MINIMAL: &str = r#"{
        "background_color": [10, 20, 30],
        "objects": [
            {"id": "b1", "label": "banana", "centroid": [0, 0, 0.1], "cyl_height": 0.2,
             "splats": [{"center": [0, 0, 0.1], "sigma": 0.03, "color": [230, 200, 40], "opacity": 0.9}]}
        ]
    }"#;

    #[test]
    fn minimal_scene_loads() {
        let scene = Scene::from_json_str(MINIMAL).unwrap();
        assert_eq!(scene.objects().len(), 1);
        let o = scene.object("b1").unwrap();
        assert_abs_diff_eq!(o.cyl_radius, 0.05);
        assert_eq!(scene.background_color, [10, 20, 30]);
        let again = Scene::from_json_str(&scene.to_json_string()).unwrap();
        assert_eq!(again, scene);
    }

    #[test]
    fn load_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        std::fs::write(&p, MINIMAL).unwrap();
        assert_eq!(load_scene(&p).unwrap().objects().len(), 1);
        assert!(matches!(load_scene(&dir.path().join("nope.json")), Err(SceneError::Io { .. })));
    }

    #[test]
    fn duplicate_id_names_the_id() {
        let text = r#"{"background_color":[0,0,0],"objects":[
            {"id":"a","label":"x","centroid":[0,0,0],"cyl_height":1},
            {"id":"a","label":"y","centroid":[1,0,0],"cyl_height":1}]}"#;
        let err = Scene::from_json_str(text).unwrap_err();
        assert!(err.to_string().contains("`a`"), "{err}");
    }

    #[test]
    fn negative_height_rejected() {
        let text = r#"{"background_color":[0,0,0],"objects":[
            {"id":"a","label":"x","centroid":[0,0,0],"cyl_height":-1}]}"#;
        match Scene::from_json_str(text).unwrap_err() {
            SceneError::Validation { field, .. } => assert_eq!(field, "objects[a].cyl_height"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn malformed_and_invariant_errors() {
        assert!(matches!(Scene::from_json_str("{"), Err(SceneError::Parse(_))));
        assert!(matches!(
            Scene::from_json_str(r#"{"background_color":[0,0,0],"objects":[]}"#),
            Err(SceneError::Validation { .. })
        ));
        let far_splat = r#"{"background_color":[0,0,0],"objects":[
            {"id":"a","label":"x","centroid":[0,0,0],"cyl_height":1,"cyl_radius":0.1,
             "splats":[{"center":[1,0,0],"sigma":0.1,"color":[1,1,1],"opacity":1}]}]}"#;
        assert!(matches!(Scene::from_json_str(far_splat), Err(SceneError::Validation { .. })));
        let bad_opacity = r#"{"background_color":[0,0,0],"objects":[
            {"id":"a","label":"x","centroid":[0,0,0],"cyl_height":1,
             "splats":[{"center":[0,0,0],"sigma":0.1,"color":[1,1,1],"opacity":0}]}]}"#;
        assert!(matches!(Scene::from_json_str(bad_opacity), Err(SceneError::Validation { .. })));
    }

    fn pillar(h: f64, r: f64) -> Scene {
        let o = SceneObject::new("p", "pillar", Vec3::zeros(), h, Some(r), None, vec![]).unwrap();
        Scene::new([0, 0, 0], vec![o]).unwrap()
    }

    #[test]
    fn optical_axis_object_is_centred() {
        let scene = pillar(0.5, 0.02);
        let pose = look_at(&Vec3::new(0.0, -2.0, 0.0), &Vec3::zeros(), &WORLD_UP).unwrap();
        let z = extract_structured_inputs(&scene, &pose, &CameraIntrinsics::default());
        let o = &z.objects[0];
        assert!(o.visible && !o.truncated);
        let [u, v] = o.center.unwrap();
        assert_abs_diff_eq!(u, 320.0, epsilon = 1e-9);
        assert_abs_diff_eq!(v, 240.0, epsilon = 1e-9);
        assert_abs_diff_eq!(o.depth, 2.0, epsilon = 1e-12);
        // Analytic pinhole height f·H/ρ = 125 px; rim sampling adds at most 2%.
        assert!((o.pixel_height - 125.0).abs() / 125.0 <= 0.02, "{}", o.pixel_height);
        assert_eq!(o.pixel_height, o.bbox.unwrap().height());
    }

    #[test]
    fn behind_camera_not_visible() {
        let scene = pillar(0.5, 0.1);
        let pose = look_at(&Vec3::new(0.0, -2.0, 0.0), &Vec3::new(0.0, -4.0, 0.0), &WORLD_UP).unwrap();
        let z = extract_structured_inputs(&scene, &pose, &CameraIntrinsics::default());
        assert!(!z.objects[0].visible);
        assert!(z.objects[0].bbox.is_none());
    }

    #[test]
    fn frame_edge_object_is_truncated() {
        let scene = pillar(0.5, 0.1);
        // Aim so the pillar sits at the left edge.
        let pose = look_at(&Vec3::new(0.0, -2.0, 0.0), &Vec3::new(1.28, 0.0, 0.0), &WORLD_UP).unwrap();
        let z = extract_structured_inputs(&scene, &pose, &CameraIntrinsics::default());
        let o = &z.objects[0];
        assert!(o.visible && o.truncated);
        let b = o.bbox.unwrap();
        assert!(b.u_min == 0.0 && b.u_min <= b.u_max && b.v_min <= b.v_max);
    }

    #[test]
    fn extraction_is_deterministic() {
        let scene = pillar(0.7, 0.2);
        let pose = look_at(&Vec3::new(0.4, -2.3, 0.9), &Vec3::new(0.1, 0.0, 0.0), &WORLD_UP).unwrap();
        let k = CameraIntrinsics::default();
        assert_eq!(extract_structured_inputs(&scene, &pose, &k), extract_structured_inputs(&scene, &pose, &k));
    }
}
