//! Browser bindings: render a built-in scene from an orbit, solve a framing
//! from constraints, and run the reflective loop with the rule critic.

use anchorview::critic::RuleCritic;
use anchorview::geometry::{deg, look_at, pose_to_spherical, rad, spherical_to_pose, CameraIntrinsics, Pose, SphericalCoord, WORLD_UP};
use anchorview::objective::Objective;
use anchorview::reflect::{reflect_optimize, ReflectorConfig};
use anchorview::render::render;
use anchorview::scene::{extract_structured_inputs, Scene};
use anchorview::solver::{geometric_solve, ConstraintVector, ServoConfig};
use serde_json::json;
use wasm_bindgen::prelude::*;

const SCENES: [(&str, &str); 3] = [
    ("banana_table", include_str!("../../../catalog/scenes/banana_table.json")),
    ("open_box", include_str!("../../../catalog/scenes/open_box.json")),
    ("cup_and_can", include_str!("../../../catalog/scenes/cup_and_can.json")),
];

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Names of the scenes compiled into the module.
#[wasm_bindgen(js_name = sceneNames)]
pub fn scene_names() -> Vec<String> {
    SCENES.iter().map(|(n, _)| n.to_string()).collect()
}

#[wasm_bindgen]
pub struct Demo {
    scene: Scene,
    k: CameraIntrinsics,
}

#[wasm_bindgen]
impl Demo {
    /// Loads a built-in scene by name, or parses `name` as scene JSON.
    #[wasm_bindgen(constructor)]
    pub fn new(name: &str, width: u32, height: u32) -> Result<Demo, JsError> {
        let text = SCENES.iter().find(|(n, _)| *n == name).map(|(_, t)| *t).unwrap_or(name);
        let scene = Scene::from_json_str(text).map_err(js_err)?;
        let f = 500.0 * width as f64 / 640.0;
        let k = CameraIntrinsics::centered(f, width, height).map_err(js_err)?;
        Ok(Demo { scene, k })
    }

    #[wasm_bindgen(js_name = objectIds)]
    pub fn object_ids(&self) -> Vec<String> {
        self.scene.objects().iter().map(|o| o.id.clone()).collect()
    }

    fn orbit(&self, anchor: &str, rho: f64, theta_deg: f64, phi_deg: f64) -> Result<Pose, JsError> {
        let centroid = self.scene.object(anchor).ok_or_else(|| js_err(format!("unknown object `{anchor}`")))?.centroid;
        let sc = SphericalCoord::new(rho, rad(theta_deg), rad(phi_deg), centroid).map_err(js_err)?;
        spherical_to_pose(&sc).map_err(js_err)
    }

    /// RGBA pixels of the view orbiting `anchor` at (ρ, θ, φ).
    #[wasm_bindgen(js_name = renderOrbit)]
    pub fn render_orbit(&self, anchor: &str, rho: f64, theta_deg: f64, phi_deg: f64) -> Result<Vec<u8>, JsError> {
        Ok(render(&self.scene, &self.orbit(anchor, rho, theta_deg, phi_deg)?, &self.k).to_rgba())
    }

    /// RGBA pixels for a pose given as 12 reals.
    #[wasm_bindgen(js_name = renderPose)]
    pub fn render_pose(&self, pose: &[f64]) -> Result<Vec<u8>, JsError> {
        let arr: [f64; 12] = pose.try_into().map_err(|_| js_err("pose needs 12 numbers"))?;
        let pose = Pose::from_array(&arr).map_err(js_err)?;
        Ok(render(&self.scene, &pose, &self.k).to_rgba())
    }

    /// Solves for the anchor at pixel (u, v), scale ratio `s` and the given
    /// orbit angles, starting from a view at (ρ, θ, φ) aimed slightly off the
    /// anchor. Returns JSON with the start and solved poses and servo steps.
    #[allow(clippy::too_many_arguments)]
    pub fn solve(&self, anchor: &str, u: f64, v: f64, s: f64, theta_deg: f64, phi_deg: f64, start_rho: f64) -> Result<String, JsError> {
        let orbit = self.orbit(anchor, start_rho, theta_deg, phi_deg)?;
        let centroid = self.scene.object(anchor).expect("orbit checked the anchor").centroid;
        // Aim the start view 0.1 m to the side so there is something to servo.
        let start = look_at(&orbit.position(), &(centroid + 0.1 * orbit.right()), &WORLD_UP).map_err(js_err)?;
        let g = ConstraintVector::new(u, v, s, rad(theta_deg), rad(phi_deg), &self.k).map_err(js_err)?;
        let out = geometric_solve(&g, &self.scene, anchor, &self.k, &start, &ServoConfig::default()).map_err(js_err)?;
        let shifts: Vec<f64> = out.steps.iter().map(|r| r.shift).collect();
        Ok(json!({
            "start": start,
            "pose": out.pose,
            "residual": out.residual,
            "iterations": out.iterations,
            "shifts": shifts,
        })
        .to_string())
    }

    /// Reflective refinement from the orbit (ρ, θ, φ) about the objective's
    /// anchor, scored by the rule critic. Returns the trace as JSON.
    pub fn reflect(&self, objective_json: &str, rho: f64, theta_deg: f64, phi_deg: f64, k_iters: u32) -> Result<String, JsError> {
        let objective = Objective::from_json_str(objective_json).map_err(js_err)?;
        objective.validate(&self.scene).map_err(js_err)?;
        let start = self.orbit(&objective.anchor_id, rho, theta_deg, phi_deg)?;
        let centroid = self.scene.object(&objective.anchor_id).expect("validated").centroid;
        let x0 = pose_to_spherical(&start, &centroid).map_err(js_err)?;
        let cfg = ReflectorConfig { max_iters: k_iters as usize, ..Default::default() };
        let mut critic = RuleCritic::new(objective);
        let (pose, trace) = reflect_optimize(x0, &self.scene, "", &mut critic, &cfg, &self.k, None).map_err(js_err)?;
        let iterations: Vec<_> = trace
            .iterations
            .iter()
            .map(|it| {
                json!({
                    "candidates": it.candidates.iter().map(|c| json!({
                        "axis": c.axis_tag,
                        "rho": c.coord.rho(),
                        "theta_deg": deg(c.coord.theta()),
                        "phi_deg": deg(c.coord.phi()),
                        "score": c.score.value(),
                        "rationale": c.score.rationale(),
                        "pose": c.pose,
                    })).collect::<Vec<_>>(),
                    "best": it.best,
                    "gain": it.gain,
                })
            })
            .collect();
        let best = trace.global_best().expect("one iteration ran");
        Ok(json!({
            "pose": pose,
            "score": best.score.value(),
            "rationale": best.score.rationale(),
            "termination": trace.termination,
            "iterations": iterations,
        })
        .to_string())
    }

    /// Projected centres of all objects for a pose, as JSON.
    pub fn observe(&self, pose: &[f64]) -> Result<String, JsError> {
        let arr: [f64; 12] = pose.try_into().map_err(|_| js_err("pose needs 12 numbers"))?;
        let pose = Pose::from_array(&arr).map_err(js_err)?;
        let z = extract_structured_inputs(&self.scene, &pose, &self.k);
        serde_json::to_string(&z.objects).map_err(js_err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_scenes_load() {
        for name in scene_names() {
            let d = Demo::new(&name, 320, 240).unwrap();
            assert!(!d.object_ids().is_empty());
        }
    }

    #[test]
    fn orbit_render_size() {
        let d = Demo::new("cup_and_can", 160, 120).unwrap();
        assert_eq!(d.render_orbit("cup", 0.8, 0.0, 25.0).unwrap().len(), 160 * 120 * 4);
    }

    #[test]
    fn solve_and_reflect_report_json() {
        let d = Demo::new("cup_and_can", 640, 480).unwrap();
        let s: serde_json::Value = serde_json::from_str(&d.solve("cup", 320.0, 240.0, 1.0, 0.0, 25.0, 0.8).unwrap()).unwrap();
        assert!(s["residual"][0].as_f64().unwrap().abs() <= 1.0);
        let obj = r#"{"anchor_id":"cup","target_center":[320,240],"secondary":[{"object_id":"can","region":"quadrant(upper-right)"}]}"#;
        let r: serde_json::Value = serde_json::from_str(&d.reflect(obj, 0.75, 0.0, 25.0, 3).unwrap()).unwrap();
        assert_eq!(r["iterations"][0]["candidates"].as_array().unwrap().len(), 7);
        assert!(r["score"].as_f64().unwrap() >= r["iterations"][0]["candidates"][0]["score"].as_f64().unwrap());
    }
}
