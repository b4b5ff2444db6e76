use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn catalog(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../catalog").join(rel).display().to_string()
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anchorview")).current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_dir(o: &Output) -> PathBuf {
    PathBuf::from(stdout(o).lines().find_map(|l| l.strip_prefix("run: ")).expect("run line").to_string())
}

fn line<'a>(text: &'a str, prefix: &str) -> &'a str {
    text.lines().find_map(|l| l.strip_prefix(prefix)).unwrap()
}

#[test]
fn solve_explicit_g_centres_anchor() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = catalog("scenes/banana_table.json");
    let o = run(tmp.path(), &["solve", "--scene", &scene, "--anchor", "banana", "--g", "320,240,1,0,0", "--out", "r/s"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(line(&stdout(&o), "residual: "), "0.000 0.000");
    assert_eq!(line(&stdout(&o), "pose: ").split_whitespace().count(), 12);
    let dir = tmp.path().join(run_dir(&o));
    for f in ["view.ppm", "pose.txt", "result.json", "manifest.json"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
}

#[test]
fn instruction_matches_explicit_centre() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = catalog("scenes/banana_table.json");
    let a = run(tmp.path(), &["solve", "--scene", &scene, "--instruction", "center the banana"]);
    assert!(a.status.success(), "{}", stderr(&a));
    // Same azimuth/elevation/scale as the instruction implies: read them back from result.json.
    let res: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join(run_dir(&a)).join("result.json")).unwrap()).unwrap();
    let g = &res["g"];
    assert_eq!((g["u_star"].as_f64(), g["v_star"].as_f64(), g["s"].as_f64()), (Some(320.0), Some(240.0), Some(1.0)));
    let g_arg = format!(
        "320,240,1,{},{}",
        g["theta"].as_f64().unwrap().to_degrees(),
        g["phi"].as_f64().unwrap().to_degrees()
    );
    let b = run(tmp.path(), &["solve", "--scene", &scene, "--anchor", "banana", "--g", &g_arg]);
    assert!(b.status.success(), "{}", stderr(&b));
    let pa: Vec<f64> = line(&stdout(&a), "pose: ").split_whitespace().map(|x| x.parse().unwrap()).collect();
    let pb: Vec<f64> = line(&stdout(&b), "pose: ").split_whitespace().map(|x| x.parse().unwrap()).collect();
    assert!(pa.iter().zip(&pb).all(|(x, y)| (x - y).abs() < 1e-6), "{pa:?} vs {pb:?}");
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = catalog("scenes/banana_table.json");
    let both = run(tmp.path(), &["solve", "--scene", &scene, "--anchor", "banana", "--g", "320,240,1,0,0", "--instruction", "x"]);
    assert_eq!(both.status.code(), Some(2));
    let k0 = run(tmp.path(), &["reflect", "--scene", &scene, "--instruction", "center the banana", "--K", "0"]);
    assert_eq!(k0.status.code(), Some(2));
    let ghost = run(tmp.path(), &["solve", "--scene", &scene, "--instruction", "photograph the ghost"]);
    assert_eq!(ghost.status.code(), Some(2));
    assert!(stderr(&ghost).contains("NoAnchorMatch"));
    std::fs::create_dir(tmp.path().join("empty")).unwrap();
    assert_eq!(run(tmp.path(), &["bench", "--tasks", "empty"]).status.code(), Some(2));
}

#[test]
fn render_checks_pose() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = catalog("scenes/cup_and_can.json");
    let ok = run(tmp.path(), &["render", "--scene", &scene, "--spherical", "0.8,10,25,cup", "--out", "v.ppm"]);
    assert!(ok.status.success(), "{}", stderr(&ok));
    assert!(std::fs::read(tmp.path().join("v.ppm")).unwrap().starts_with(b"P6"));
    let bad = run(tmp.path(), &["render", "--scene", &scene, "--pose", "1,2,3", "--out", "v.ppm"]);
    assert_eq!(bad.status.code(), Some(2));
    let skew = run(tmp.path(), &["render", "--scene", &scene, "--pose", "2 0 0 0 1 0 0 0 1 0 0 0", "--out", "v.ppm"]);
    assert_eq!(skew.status.code(), Some(2));
    assert!(stderr(&skew).contains("rotation not orthonormal"));
}

#[test]
fn reflect_rule_critic_on_hard_task() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(
        tmp.path(),
        &[
            "reflect",
            "--scene",
            &catalog("scenes/cup_and_can.json"),
            "--instruction",
            "center the cup",
            "--objective",
            &catalog("objectives/cup_can.json"),
            "--critic",
            "rule",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = tmp.path().join(run_dir(&o));
    let trace = std::fs::read_to_string(dir.join("trace.jsonl")).unwrap();
    let n = trace.lines().count();
    assert!(n <= 21 && n.is_multiple_of(7), "{n} records");
    for f in ["final.ppm", "final_pose.txt", "result.json", "manifest.json", "view_0_0.ppm"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
}

#[test]
fn scripted_plateau_stops_early() {
    let tmp = tempfile::tempdir().unwrap();
    let critic = format!("scripted:{}", catalog("critics/plateau.json"));
    let o = run(
        tmp.path(),
        &["reflect", "--scene", &catalog("scenes/cup_and_can.json"), "--instruction", "center the cup", "--critic", &critic],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(line(&stdout(&o), "termination: "), "Converged");
    let trace = std::fs::read_to_string(tmp.path().join(run_dir(&o)).join("trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 7);
}

#[test]
fn critic_failure_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("short.json"), "[3.0, 4.0, 1, 1, 1, 1, 1]").unwrap();
    let o = run(
        tmp.path(),
        &["reflect", "--scene", &catalog("scenes/cup_and_can.json"), "--instruction", "center the cup", "--critic", "scripted:short.json"],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("CriticFailure"));
}

#[test]
fn llm_critic_without_endpoint_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_anchorview"))
        .current_dir(tmp.path())
        .env_remove("ANCHORVIEW_LLM_ENDPOINT")
        .args(["reflect", "--scene", &catalog("scenes/cup_and_can.json"), "--instruction", "center the cup", "--critic", "llm"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("NoEndpoint"));
}

#[test]
fn bench_builtin_catalog() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["bench", "--tasks", &catalog("tasks"), "--trials", "3", "--out", "b"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for name in ["easy-banana", "medium-open-box", "hard-cup-can"] {
        let cell = line(&text, name).trim();
        assert!(cell.ends_with("/3)"), "{cell}");
    }
    let dir = tmp.path().join(run_dir(&o));
    assert!(dir.join("report.json").is_file() && dir.join("report.txt").is_file());

    let one = run(tmp.path(), &["bench", "--tasks", &catalog("tasks"), "--trials", "1", "--out", "b1"]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join(run_dir(&one)).join("report.json")).unwrap()).unwrap();
    for (summary, trial) in report["tasks"].as_array().unwrap().iter().zip(report["trials"].as_array().unwrap()) {
        if trial["success"].as_bool().unwrap() {
            assert_eq!(summary["mean_steps"].as_f64().unwrap(), trial["steps_used"].as_f64().unwrap());
        }
    }
}
