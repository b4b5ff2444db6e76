//! Step-budgeted benchmark tasks, success predicates and summary reports.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critic::{Critic, EvaluationContext};
use crate::geometry::{deg, look_at, pose_to_spherical, position_to_spherical, project_point, CameraIntrinsics, Pose, Vec3, WORLD_UP};
use crate::intent::IntentParser;
use crate::objective::{Objective, Region};
use crate::reflect::{DirSink, MemorySink, ReflectError, Reflector, ReflectorConfig, StepStatus, TraceSink};
use crate::render::render;
use crate::scene::{extract_structured_inputs, load_scene, Scene, SceneError, StructuredInputs};
use crate::solver::{geometric_solve, ServoConfig};

/// Default success radius as a fraction of the smaller frame dimension.
pub const DEFAULT_CENTER_RADIUS: f64 = 0.075;
/// Points sampled on an object's top rim for the opening-area check.
const OPENING_SAMPLES: usize = 64;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot read task file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed task file {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid task `{task}`: {message}")]
    Validation { task: String, message: String },
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// One conjunct of a success predicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SuccessCheck {
    /// Projected centroid within `radius · min(width, height)` of `target` (pixels).
    Center {
        object_id: String,
        target: [f64; 2],
        #[serde(default = "default_radius")]
        radius: f64,
    },
    /// Projected centroid inside a named frame region.
    Region { object_id: String, region: Region },
    /// Pixel height within `[lo, hi]` as fractions of frame height.
    Scale { object_id: String, lo: f64, hi: f64 },
    /// Camera elevation above the object's centroid of at least `degrees`.
    MinElevation { object_id: String, degrees: f64 },
    /// The object's top opening covers at least `min_pixels` of the frame.
    OpeningArea { object_id: String, min_pixels: f64 },
}

fn default_radius() -> f64 {
    DEFAULT_CENTER_RADIUS
}

impl SuccessCheck {
    pub fn object_id(&self) -> &str {
        match self {
            SuccessCheck::Center { object_id, .. }
            | SuccessCheck::Region { object_id, .. }
            | SuccessCheck::Scale { object_id, .. }
            | SuccessCheck::MinElevation { object_id, .. }
            | SuccessCheck::OpeningArea { object_id, .. } => object_id,
        }
    }

    fn validate(&self) -> Result<(), String> {
        match self {
            SuccessCheck::Center { radius, .. } if !(*radius > 0.0 && *radius <= 0.5) => {
                Err(format!("center radius must lie in (0, 0.5], got {radius}"))
            }
            SuccessCheck::Scale { lo, hi, .. } if !(lo.is_finite() && hi.is_finite() && lo < hi && *lo >= 0.0) => {
                Err(format!("scale bounds need 0 <= lo < hi, got [{lo}, {hi}]"))
            }
            SuccessCheck::MinElevation { degrees, .. } if !degrees.is_finite() => Err("elevation must be finite".into()),
            SuccessCheck::OpeningArea { min_pixels, .. } if !(min_pixels.is_finite() && *min_pixels >= 0.0) => {
                Err("min_pixels must be >= 0".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuccessPredicate {
    pub checks: Vec<SuccessCheck>,
}

/// Camera pose a trial starts from. Each trial perturbs `position` uniformly
/// within ±`jitter` meters per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartPose {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    #[serde(default)]
    pub jitter: f64,
}

impl StartPose {
    pub fn for_trial(&self, trial: usize) -> Result<Pose, crate::geometry::GeometryError> {
        let mut p = Vec3::from(self.position);
        if self.jitter > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(trial as u64);
            for c in p.iter_mut() {
                *c += rng.gen_range(-self.jitter..=self.jitter);
            }
        }
        look_at(&p, &Vec3::from(self.look_at), &WORLD_UP)
    }
}

fn default_budget() -> usize {
    3
}

/// Task file layout. `scene` is resolved relative to the task file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFile {
    pub name: String,
    pub scene: String,
    pub instruction: String,
    pub objective: Objective,
    #[serde(default = "default_budget")]
    pub budget: usize,
    pub success: SuccessPredicate,
    pub start: StartPose,
}

#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub name: String,
    pub scene_path: PathBuf,
    pub scene: Scene,
    pub instruction: String,
    pub objective: Objective,
    pub budget: usize,
    pub success: SuccessPredicate,
    pub start: StartPose,
    pub intrinsics: CameraIntrinsics,
}

impl TaskSpec {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| HarnessError::Io { path: path.display().to_string(), source })?;
        let file: TaskFile = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Parse { path: path.display().to_string(), message: e.to_string() })?;
        let scene_path = path.parent().unwrap_or(Path::new(".")).join(&file.scene);
        let scene = load_scene(&scene_path)?;
        Self::from_parts(file, scene_path, scene)
    }

    pub fn from_parts(file: TaskFile, scene_path: PathBuf, scene: Scene) -> Result<Self, HarnessError> {
        let task = Self {
            name: file.name,
            scene_path,
            scene,
            instruction: file.instruction,
            objective: file.objective,
            budget: file.budget,
            success: file.success,
            start: file.start,
            intrinsics: CameraIntrinsics::default(),
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |message: String| Err(HarnessError::Validation { task: self.name.clone(), message });
        if self.budget < 1 {
            return bad("budget must be >= 1".into());
        }
        if let Err(e) = self.objective.validate(&self.scene) {
            return bad(e.to_string());
        }
        for check in &self.success.checks {
            if self.scene.object(check.object_id()).is_none() {
                return bad(format!("success check references unknown object `{}`", check.object_id()));
            }
            if let Err(m) = check.validate() {
                return bad(m);
            }
        }
        if !(self.start.jitter.is_finite() && self.start.jitter >= 0.0) {
            return bad("start jitter must be >= 0".into());
        }
        if let Err(e) = self.start.for_trial(0) {
            return bad(format!("start pose: {e}"));
        }
        Ok(())
    }
}

/// Loads every `*.json` task in a directory, sorted by file name.
pub fn load_tasks(dir: &Path) -> Result<Vec<TaskSpec>, HarnessError> {
    let io = |source| HarnessError::Io { path: dir.display().to_string(), source };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.is_file())
        .collect();
    paths.sort();
    paths.iter().map(|p| TaskSpec::load(p)).collect()
}

/// Names of the checks that fail for `pose` (empty means success).
pub fn failed_checks(pose: &Pose, scene: &Scene, pred: &SuccessPredicate, k: &CameraIntrinsics) -> Vec<String> {
    let z = extract_structured_inputs(scene, pose, k);
    pred.checks
        .iter()
        .filter(|c| !check_holds(c, pose, scene, &z, k))
        .map(|c| serde_json::to_string(c).unwrap_or_default())
        .collect()
}

/// Conjunction of every check in the predicate.
pub fn evaluate_success(pose: &Pose, scene: &Scene, pred: &SuccessPredicate, k: &CameraIntrinsics) -> bool {
    let z = extract_structured_inputs(scene, pose, k);
    pred.checks.iter().all(|c| check_holds(c, pose, scene, &z, k))
}

fn check_holds(check: &SuccessCheck, pose: &Pose, scene: &Scene, z: &StructuredInputs, k: &CameraIntrinsics) -> bool {
    let Some(obs) = z.object(check.object_id()) else {
        return false;
    };
    match check {
        SuccessCheck::Center { target, radius, .. } => obs.center.is_some_and(|[u, v]| {
            (u - target[0]).hypot(v - target[1]) <= radius * k.width_f().min(k.height_f())
        }),
        SuccessCheck::Region { region, .. } => {
            let rect = region.rect(k, Some((obs, pose)));
            match (obs.center, rect) {
                (Some([u, v]), Some(r)) => u >= r[0] && u <= r[2] && v >= r[1] && v <= r[3],
                _ => false,
            }
        }
        SuccessCheck::Scale { lo, hi, .. } => {
            let frac = obs.pixel_height / k.height_f();
            obs.visible && frac >= *lo && frac <= *hi
        }
        SuccessCheck::MinElevation { degrees, .. } => match position_to_spherical(&pose.position(), &obs.world) {
            Ok(sc) => deg(sc.phi()) >= *degrees,
            // Directly above or below the centroid.
            Err(_) => pose.position().z > obs.world.z && 90.0 >= *degrees,
        },
        SuccessCheck::OpeningArea { object_id, min_pixels } => {
            scene.object(object_id).is_some_and(|o| opening_area(o, pose, k) >= *min_pixels)
        }
    }
}

/// Visible image area (px²) of an object's top rim disc, clipped to the frame.
/// Zero when any rim point is behind the camera.
pub fn opening_area(obj: &crate::scene::SceneObject, pose: &Pose, k: &CameraIntrinsics) -> f64 {
    let top = obj.centroid + Vec3::new(0.0, 0.0, obj.cyl_height / 2.0);
    let mut poly = Vec::with_capacity(OPENING_SAMPLES);
    for i in 0..OPENING_SAMPLES {
        let a = std::f64::consts::TAU * i as f64 / OPENING_SAMPLES as f64;
        let p = top + obj.cyl_radius * Vec3::new(a.cos(), a.sin(), 0.0);
        match project_point(k, pose, &p) {
            Ok((u, v, _)) => poly.push([u, v]),
            Err(_) => return 0.0,
        }
    }
    let clipped = clip_to_rect(&poly, [0.0, 0.0, k.width_f(), k.height_f()]);
    polygon_area(&clipped)
}

/// Sutherland–Hodgman clip of a polygon against an axis-aligned rectangle.
fn clip_to_rect(poly: &[[f64; 2]], rect: [f64; 4]) -> Vec<[f64; 2]> {
    // Each edge: (axis, bound, keep-if-greater).
    let edges = [(0, rect[0], true), (0, rect[2], false), (1, rect[1], true), (1, rect[3], false)];
    let mut out = poly.to_vec();
    for (axis, bound, greater) in edges {
        let inside = |p: &[f64; 2]| if greater { p[axis] >= bound } else { p[axis] <= bound };
        let input = std::mem::take(&mut out);
        for (i, cur) in input.iter().enumerate() {
            let prev = &input[(i + input.len() - 1) % input.len()];
            let cross = |a: &[f64; 2], b: &[f64; 2]| {
                let t = (bound - a[axis]) / (b[axis] - a[axis]);
                [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
            };
            match (inside(prev), inside(cur)) {
                (true, true) => out.push(*cur),
                (true, false) => out.push(cross(prev, cur)),
                (false, true) => {
                    out.push(cross(prev, cur));
                    out.push(*cur);
                }
                (false, false) => {}
            }
        }
        if out.is_empty() {
            break;
        }
    }
    out
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n).map(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        a[0] * b[1] - b[0] * a[1]
    }).sum();
    twice.abs() / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub task: String,
    pub trial: usize,
    pub success: bool,
    pub steps_used: usize,
    pub final_pose: Option<Pose>,
    /// Critic score of the pose held after each step.
    pub step_scores: Vec<f64>,
    pub trace_path: Option<String>,
    /// Why the trial failed, when it did.
    pub reason: Option<String>,
}

impl TrialResult {
    fn failed(task: &TaskSpec, trial: usize, steps_used: usize, reason: String) -> Self {
        Self {
            task: task.name.clone(),
            trial,
            success: false,
            steps_used,
            final_pose: None,
            step_scores: Vec::new(),
            trace_path: None,
            reason: Some(reason),
        }
    }
}

/// Runs one trial: step 1 is the geometric solve, each further step one
/// reflection iteration; stops at the first success or when the budget is
/// spent. With `run_dir`, candidate views and `trace.jsonl` go there.
pub fn run_task(
    task: &TaskSpec,
    critic: &mut dyn Critic,
    parser: &mut dyn IntentParser,
    cfg: &ReflectorConfig,
    trial: usize,
    run_dir: Option<&Path>,
) -> TrialResult {
    let k = task.intrinsics;
    let scene = &task.scene;
    let start = match task.start.for_trial(trial) {
        Ok(p) => p,
        Err(e) => return TrialResult::failed(task, trial, 0, format!("StartPose: {e}")),
    };
    let z = extract_structured_inputs(scene, &start, &k);
    let image = render(scene, &start, &k);
    let intent = match parser.parse(&task.instruction, &image, &z) {
        Ok(i) => i,
        Err(e) => return TrialResult::failed(task, trial, 0, e.reason().to_string()),
    };

    // Step 1: closed-form placement plus servoing.
    let solved = match geometric_solve(&intent.g, scene, &intent.anchor_id, &k, &start, &ServoConfig::default()) {
        Ok(o) => o.pose,
        Err(e) => return TrialResult::failed(task, trial, 1, e.reason().to_string()),
    };
    let mut result = TrialResult {
        task: task.name.clone(),
        trial,
        success: false,
        steps_used: 1,
        final_pose: Some(solved),
        step_scores: Vec::new(),
        trace_path: run_dir.map(|d| d.display().to_string()),
        reason: None,
    };
    let z1 = extract_structured_inputs(scene, &solved, &k);
    let ctx = EvaluationContext { instruction: &task.instruction, scene, pose: &solved, structured: &z1 };
    match critic.score(&render(scene, &solved, &k), &ctx, "") {
        Ok(s) => result.step_scores.push(s.value()),
        Err(e) => {
            result.reason = Some(format!("CriticFailure: {e}"));
            return result;
        }
    }
    if evaluate_success(&solved, scene, &task.success, &k) {
        result.success = true;
        return result;
    }
    if task.budget == 1 {
        result.reason = Some("budget exhausted".into());
        return result;
    }

    // Remaining steps: reflection iterations about the anchor.
    let anchor = match scene.object(&intent.anchor_id) {
        Some(o) => o.centroid,
        None => {
            result.reason = Some("UnknownAnchor".into());
            return result;
        }
    };
    let x0 = match pose_to_spherical(&solved, &anchor) {
        Ok(x) => x,
        Err(e) => {
            result.reason = Some(format!("Degenerate: {e}"));
            return result;
        }
    };
    let mut sink: Box<dyn TraceSink> = match run_dir.map(DirSink::create) {
        Some(Ok(s)) => Box::new(s),
        Some(Err(e)) => {
            result.reason = Some(e.to_string());
            return result;
        }
        None => Box::new(MemorySink::default()),
    };
    let mut reflector = match Reflector::new(x0, scene, &task.instruction, *cfg, k) {
        Ok(r) => r,
        Err(e) => {
            result.reason = Some(e.to_string());
            return result;
        }
    };
    while result.steps_used < task.budget {
        let status = match reflector.step(critic, sink.as_mut()) {
            Ok(s) => s,
            Err(e) => {
                result.reason = Some(reflect_reason(&e));
                return result;
            }
        };
        result.steps_used += 1;
        let best = reflector.trace().global_best().expect("a finished iteration has candidates");
        result.step_scores.push(best.score.value());
        result.final_pose = Some(best.pose);
        if evaluate_success(&best.pose, scene, &task.success, &k) {
            result.success = true;
            return result;
        }
        if let StepStatus::Finished(t) = status {
            result.reason = Some(format!("reflection stopped ({t:?}) before success"));
            return result;
        }
    }
    result.reason = Some("budget exhausted".into());
    result
}

fn reflect_reason(e: &ReflectError) -> String {
    match e {
        ReflectError::CriticFailure { .. } => format!("CriticFailure: {e}"),
        ReflectError::RenderFailure(_) => format!("RenderFailure: {e}"),
        _ => e.to_string(),
    }
}

/// Per-task aggregate in the benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: String,
    pub trials: usize,
    pub successes: usize,
    /// Mean steps over successful trials only.
    pub mean_steps: Option<f64>,
    pub cell: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tasks: Vec<TaskSummary>,
    pub trials: Vec<TrialResult>,
}

/// Formats a table cell: mean steps of the successful trials and the success
/// count, e.g. `2.33 (3/3)` or `N/A (0/3)`.
pub fn format_cell(success_steps: &[usize], trials: usize) -> String {
    if success_steps.is_empty() {
        return format!("N/A (0/{trials})");
    }
    let mean = success_steps.iter().sum::<usize>() as f64 / success_steps.len() as f64;
    format!("{mean:.2} ({}/{trials})", success_steps.len())
}

impl Report {
    /// Groups trials by task, keeping the order in which tasks first appear.
    pub fn from_results(results: Vec<TrialResult>) -> Self {
        let mut names: Vec<&str> = Vec::new();
        for r in &results {
            if !names.contains(&r.task.as_str()) {
                names.push(&r.task);
            }
        }
        let tasks = names
            .iter()
            .map(|name| {
                let of_task: Vec<&TrialResult> = results.iter().filter(|r| r.task == *name).collect();
                let steps: Vec<usize> = of_task.iter().filter(|r| r.success).map(|r| r.steps_used).collect();
                TaskSummary {
                    task: name.to_string(),
                    trials: of_task.len(),
                    successes: steps.len(),
                    mean_steps: (!steps.is_empty()).then(|| steps.iter().sum::<usize>() as f64 / steps.len() as f64),
                    cell: format_cell(&steps, of_task.len()),
                }
            })
            .collect();
        Self { tasks, trials: results }
    }

    pub fn to_text(&self) -> String {
        let width = self.tasks.iter().map(|t| t.task.len()).max().unwrap_or(4).max(4);
        let mut out = format!("{:<width$}  steps (successes/trials)\n", "task");
        for t in &self.tasks {
            out.push_str(&format!("{:<width$}  {}\n", t.task, t.cell));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }
}
