use std::path::Path;

use anchorview::critic::{Critic, RuleCritic, ScriptedCritic};
use anchorview::geometry::{deg, position_to_spherical, rad, spherical_to_pose, Pose, SphericalCoord, PHI_LIMIT};
use anchorview::harness::{load_tasks, run_task, Report};
use anchorview::intent::{IntentParser, RuleParser};
use anchorview::objective::Objective;
use anchorview::reflect::{reflect_optimize, ReflectError, ReflectorConfig};
use anchorview::render::{render as render_view, write_image};
use anchorview::scene::{extract_structured_inputs, load_scene, Scene};
use anchorview::solver::{geometric_solve, ConstraintVector, ServoConfig};
use anchorview::CameraIntrinsics;
use anchorview_gateway::{Gateway, GatewayConfig, LlmCritic, LlmIntentParser};
use serde_json::json;

use crate::support::*;
use crate::{BenchArgs, ReflectArgs, RenderArgs, SolveArgs};

fn scene_at(path: &Path) -> CliResult<Scene> {
    load_scene(path).map_err(|e| CliError::input("SceneError", e))
}

fn write_view(scene: &Scene, pose: &Pose, k: &CameraIntrinsics, path: &Path) -> CliResult {
    write_image(&render_view(scene, pose, k), path).map_err(|e| CliError::input("OutputError", e))
}

/// Parses an instruction with the rule grammar against the view from `start`.
fn parse_instruction(instruction: &str, scene: &Scene, start: &Pose, k: &CameraIntrinsics) -> CliResult<(ConstraintVector, String)> {
    let z = extract_structured_inputs(scene, start, k);
    let image = render_view(scene, start, k);
    let p = RuleParser.parse(instruction, &image, &z).map_err(|e| CliError::input(e.reason(), e))?;
    Ok((p.g, p.anchor_id))
}

/// Constraint vector implied by an objective, keeping the current azimuth and elevation.
fn g_from_objective(obj: &Objective, scene: &Scene, start: &Pose, k: &CameraIntrinsics) -> CliResult<ConstraintVector> {
    let anchor = scene
        .object(&obj.anchor_id)
        .ok_or_else(|| CliError::input("UnknownAnchor", format!("`{}` is not in the scene", obj.anchor_id)))?;
    let sc = position_to_spherical(&start.position(), &anchor.centroid).map_err(|e| CliError::input("GeometryError", e))?;
    let z = extract_structured_inputs(scene, start, k);
    let s = match (obj.target_scale, z.object(&obj.anchor_id)) {
        (Some(t), Some(o)) if o.visible && o.pixel_height > 0.0 => t * k.height_f() / o.pixel_height,
        _ => 1.0,
    };
    let [u, v] = obj.target_center;
    ConstraintVector::new(u, v, s, sc.theta(), sc.phi().clamp(-PHI_LIMIT, PHI_LIMIT), k).map_err(|e| CliError::input(e.reason(), e))
}

/// Objective for the rule critic when only an instruction is given.
fn objective_from_g(g: &ConstraintVector, anchor: &str, scene: &Scene, start: &Pose, k: &CameraIntrinsics) -> Objective {
    let z = extract_structured_inputs(scene, start, k);
    let target_scale = z
        .object(anchor)
        .filter(|o| o.visible && o.pixel_height > 0.0 && (g.s - 1.0).abs() > 1e-12)
        .map(|o| g.s * o.pixel_height / k.height_f());
    Objective {
        anchor_id: anchor.to_string(),
        target_center: [g.u_star, g.v_star],
        target_scale,
        secondary: Vec::new(),
        weights: Default::default(),
    }
}

fn gateway_config() -> CliResult<GatewayConfig> {
    GatewayConfig::from_env().ok_or_else(|| {
        CliError::input(
            "NoEndpoint",
            format!("the llm critic needs {} (and usually {})", anchorview_gateway::ENV_ENDPOINT, anchorview_gateway::ENV_API_KEY),
        )
    })
}

fn make_critic(spec: &str, objective: &Objective, log_dir: &Path) -> CliResult<Box<dyn Critic>> {
    if spec == "rule" {
        return Ok(Box::new(RuleCritic::new(objective.clone())));
    }
    if spec == "llm" {
        let gw = Gateway::http(gateway_config()?)
            .and_then(|g| g.with_log_dir(log_dir))
            .map_err(|e| CliError::input(e.reason(), e))?;
        return Ok(Box::new(LlmCritic::new(gw)));
    }
    if let Some(file) = spec.strip_prefix("scripted:") {
        let c = ScriptedCritic::load(Path::new(file)).map_err(|e| CliError::input("ScriptError", e))?;
        return Ok(Box::new(c));
    }
    Err(CliError::input("UnknownCritic", format!("--critic must be rule, scripted:<file> or llm, got `{spec}`")))
}

pub fn solve(a: SolveArgs, argv: &[String]) -> CliResult {
    let k = CameraIntrinsics::default();
    let scene = scene_at(&a.scene)?;
    let start = start_pose(a.start.start_pose.as_deref(), &scene)?;
    let (g, anchor) = match (&a.g, &a.instruction) {
        (Some(text), None) => {
            let anchor = a.anchor.clone().ok_or_else(|| CliError::input("MissingAnchor", "--g requires --anchor"))?;
            let v = parse_reals(text, 5, "--g")?;
            let g = ConstraintVector::new(v[0], v[1], v[2], rad(v[3]), rad(v[4]), &k).map_err(|e| CliError::input(e.reason(), e))?;
            (g, anchor)
        }
        (None, Some(instr)) => {
            let (g, parsed) = parse_instruction(instr, &scene, &start, &k)?;
            (g, a.anchor.clone().unwrap_or(parsed))
        }
        _ => return Err(CliError::input("Usage", "give exactly one of --g and --instruction")),
    };

    let dir = create_run_dir(&a.out)?;
    let mut manifest = RunManifest::new(
        "solve",
        argv,
        json!({ "scene": a.scene, "anchor": anchor, "g": g, "start_pose": start, "servo": ServoConfig::default() }),
        None,
    );
    manifest.outputs = vec!["view.ppm".into(), "pose.txt".into(), "result.json".into()];
    manifest.write(&dir)?;

    let out = geometric_solve(&g, &scene, &anchor, &k, &start, &ServoConfig::default()).map_err(|e| {
        let _ = manifest.finish(&dir, e.reason());
        CliError::input(e.reason(), e)
    })?;
    write_view(&scene, &out.pose, &k, &dir.join("view.ppm"))?;
    write_text(&dir.join("pose.txt"), &(pose_line(&out.pose) + "\n"))?;
    let result = json!({
        "anchor": anchor,
        "g": g,
        "pose": out.pose,
        "residual": out.residual,
        "iterations": out.iterations,
        "rho0": out.rho0,
    });
    write_text(&dir.join("result.json"), &serde_json::to_string_pretty(&result).expect("serializable"))?;
    manifest.finish(&dir, "ok")?;

    println!("anchor: {anchor}");
    println!("pose: {}", pose_line(&out.pose));
    println!("residual: {:.3} {:.3}", out.residual[0], out.residual[1]);
    println!("run: {}", dir.display());
    Ok(())
}

pub fn reflect(a: ReflectArgs, argv: &[String]) -> CliResult {
    let k = CameraIntrinsics::default();
    let scene = scene_at(&a.scene)?;
    let start = start_pose(a.start.start_pose.as_deref(), &scene)?;
    let cfg = ReflectorConfig { max_iters: a.k as usize, epsilon: a.epsilon, ..Default::default() };
    cfg.validate().map_err(|e| CliError::input("Usage", e))?;

    let objective = match &a.objective {
        Some(p) => {
            let o = Objective::load(p).map_err(|e| CliError::input("ObjectiveError", e))?;
            o.validate(&scene).map_err(|e| CliError::input("ObjectiveError", e))?;
            Some(o)
        }
        None => None,
    };
    let (g, anchor) = match (&a.instruction, &objective) {
        (Some(instr), _) => parse_instruction(instr, &scene, &start, &k)?,
        (None, Some(o)) => (g_from_objective(o, &scene, &start, &k)?, o.anchor_id.clone()),
        (None, None) => return Err(CliError::input("Usage", "give --instruction or --objective")),
    };
    let objective = objective.unwrap_or_else(|| objective_from_g(&g, &anchor, &scene, &start, &k));
    let instruction = a.instruction.clone().unwrap_or_default();

    let dir = create_run_dir(&a.out_dir)?;
    let mut critic = make_critic(&a.critic, &objective, &dir).inspect_err(|_| {
        let _ = std::fs::remove_dir(&dir);
    })?;
    let mut manifest = RunManifest::new(
        "reflect",
        argv,
        json!({
            "scene": a.scene,
            "instruction": instruction,
            "objective": objective,
            "critic": a.critic,
            "reflector": cfg,
            "anchor": anchor,
            "g": g,
            "start_pose": start,
        }),
        None,
    );
    manifest.outputs = vec!["trace.jsonl".into(), "view_<iter>_<candidate>.ppm".into(), "final_pose.txt".into(), "final.ppm".into(), "result.json".into()];
    manifest.write(&dir)?;

    let solved = geometric_solve(&g, &scene, &anchor, &k, &start, &ServoConfig::default()).map_err(|e| {
        let _ = manifest.finish(&dir, e.reason());
        CliError::input(e.reason(), e)
    })?;
    let centroid = scene.object(&anchor).expect("solver checked the anchor").centroid;
    let x0: SphericalCoord = anchorview::geometry::pose_to_spherical(&solved.pose, &centroid).map_err(|e| CliError::input("GeometryError", e))?;

    let (pose, trace) = match reflect_optimize(x0, &scene, &instruction, critic.as_mut(), &cfg, &k, Some(&dir)) {
        Ok(r) => r,
        Err(e) => {
            let err = match &e {
                ReflectError::CriticFailure { .. } => CliError::external("CriticFailure", &e),
                ReflectError::RenderFailure(_) => CliError::input("RenderFailure", &e),
                _ => CliError::input("ReflectError", &e),
            };
            let _ = manifest.finish(&dir, &err.reason);
            return Err(err);
        }
    };
    write_view(&scene, &pose, &k, &dir.join("final.ppm"))?;
    write_text(&dir.join("final_pose.txt"), &(pose_line(&pose) + "\n"))?;
    let best = trace.global_best().expect("at least one iteration ran");
    let result = json!({
        "termination": trace.termination,
        "iterations": trace.iterations.len(),
        "critic_calls": trace.critic_calls,
        "best": {
            "iteration": best.iteration,
            "axis_tag": best.axis_tag,
            "score": best.score.value(),
            "rationale": best.score.rationale(),
            "rho": best.coord.rho(),
            "theta_deg": deg(best.coord.theta()),
            "phi_deg": deg(best.coord.phi()),
        },
        "solve_residual": solved.residual,
        "pose": pose,
    });
    write_text(&dir.join("result.json"), &serde_json::to_string_pretty(&result).expect("serializable"))?;
    manifest.finish(&dir, "ok")?;

    for it in &trace.iterations {
        let b = it.best_candidate();
        println!("iteration {}: best {} score {:.3} gain {:.3}", it.iteration, b.axis_tag, b.score.value(), it.gain);
    }
    println!("termination: {:?}", trace.termination.expect("finished"));
    println!("score: {:.3} ({})", best.score.value(), best.score.rationale());
    println!("pose: {}", pose_line(&pose));
    println!("run: {}", dir.display());
    Ok(())
}

pub fn bench(a: BenchArgs, argv: &[String]) -> CliResult {
    let tasks = load_tasks(&a.tasks).map_err(|e| CliError::input("TaskError", e))?;
    if tasks.is_empty() {
        return Err(CliError::input("NoTasks", format!("no *.json task files in {}", a.tasks.display())));
    }
    if !matches!(a.parser.as_str(), "rule" | "llm") {
        return Err(CliError::input("Usage", format!("--parser must be rule or llm, got `{}`", a.parser)));
    }
    let cfg = ReflectorConfig::default();
    let dir = create_run_dir(&a.out)?;
    let mut manifest = RunManifest::new(
        "bench",
        argv,
        json!({
            "tasks": tasks.iter().map(|t| &t.name).collect::<Vec<_>>(),
            "critic": a.critic,
            "parser": a.parser,
            "trials": a.trials,
            "reflector": cfg,
        }),
        Some(0),
    );
    manifest.outputs = vec!["report.txt".into(), "report.json".into(), "<task>/trial_<n>/".into()];
    manifest.write(&dir)?;

    let mut results = Vec::new();
    for task in &tasks {
        for trial in 0..a.trials as usize {
            let trial_dir = dir.join(&task.name).join(format!("trial_{trial}"));
            std::fs::create_dir_all(&trial_dir).map_err(|e| CliError::input("OutputError", e))?;
            let mut critic = make_critic(&a.critic, &task.objective, &trial_dir)?;
            let mut parser: Box<dyn IntentParser> = if a.parser == "llm" {
                let gw = Gateway::http(gateway_config()?)
                    .and_then(|g| g.with_log_dir(&trial_dir))
                    .map_err(|e| CliError::input(e.reason(), e))?;
                Box::new(LlmIntentParser::new(gw))
            } else {
                Box::new(RuleParser)
            };
            let r = run_task(task, critic.as_mut(), parser.as_mut(), &cfg, trial, Some(&trial_dir));
            write_text(&trial_dir.join("result.json"), &serde_json::to_string_pretty(&r).expect("serializable"))?;
            results.push(r);
        }
    }
    let report = Report::from_results(results);
    write_text(&dir.join("report.txt"), &report.to_text())?;
    write_text(&dir.join("report.json"), &report.to_json())?;
    manifest.finish(&dir, "ok")?;
    print!("{}", report.to_text());
    println!("run: {}", dir.display());
    Ok(())
}

pub fn render(a: RenderArgs) -> CliResult {
    let k = CameraIntrinsics::default();
    let scene = scene_at(&a.scene)?;
    let pose = match (&a.pose, &a.spherical) {
        (Some(p), None) => parse_pose(p)?,
        (None, Some(s)) => {
            let (nums, id) = s
                .rsplit_once(',')
                .ok_or_else(|| CliError::input("MalformedArgument", "--spherical needs rho,theta_deg,phi_deg,anchor_id"))?;
            let v = parse_reals(nums, 3, "--spherical")?;
            let anchor = scene
                .object(id.trim())
                .ok_or_else(|| CliError::input("UnknownAnchor", format!("`{}` is not in the scene", id.trim())))?;
            let sc = SphericalCoord::new(v[0], rad(v[1]), rad(v[2]), anchor.centroid).map_err(|e| CliError::input("InvalidSpherical", e))?;
            spherical_to_pose(&sc).map_err(|e| CliError::input("GeometryError", e))?
        }
        _ => return Err(CliError::input("Usage", "give exactly one of --pose and --spherical")),
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::input("OutputError", e))?;
    }
    write_view(&scene, &pose, &k, &a.out)?;
    println!("pose: {}", pose_line(&pose));
    println!("wrote {}", a.out.display());
    Ok(())
}
