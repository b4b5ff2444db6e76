use std::path::{Path, PathBuf};

use anchorview::geometry::{look_at, Pose, Vec3, WORLD_UP};
use anchorview::scene::Scene;
use serde::Serialize;
use serde_json::Value;

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_EXTERNAL: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub reason: String,
    pub message: String,
}

impl CliError {
    pub fn input(reason: &str, message: impl ToString) -> Self {
        Self { code: EXIT_INPUT, reason: reason.into(), message: message.to_string() }
    }

    pub fn external(reason: &str, message: impl ToString) -> Self {
        Self { code: EXIT_EXTERNAL, reason: reason.into(), message: message.to_string() }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

/// Comma- or whitespace-separated reals.
pub fn parse_reals(text: &str, n: usize, what: &str) -> CliResult<Vec<f64>> {
    let vals: Result<Vec<f64>, _> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(str::parse::<f64>)
        .collect();
    match vals {
        Ok(v) if v.len() == n && v.iter().all(|x| x.is_finite()) => Ok(v),
        _ => Err(CliError::input("MalformedArgument", format!("{what} needs {n} finite numbers, got `{text}`"))),
    }
}

pub fn parse_pose(text: &str) -> CliResult<Pose> {
    let v = parse_reals(text, 12, "pose")?;
    let arr: [f64; 12] = v.try_into().expect("length checked");
    Pose::from_array(&arr).map_err(|e| CliError::input("InvalidPose", e))
}

/// Default viewpoint: 1.3 m in front (−y) of and 0.5 m above the mean object
/// centroid, looking at it.
pub fn default_start(scene: &Scene) -> CliResult<Pose> {
    let n = scene.objects().len().max(1) as f64;
    let centre = scene.objects().iter().fold(Vec3::zeros(), |acc, o| acc + o.centroid) / n;
    look_at(&(centre + Vec3::new(0.0, -1.3, 0.5)), &centre, &WORLD_UP).map_err(|e| CliError::input("InvalidPose", e))
}

pub fn start_pose(arg: Option<&str>, scene: &Scene) -> CliResult<Pose> {
    match arg {
        Some(text) => parse_pose(text),
        None => default_start(scene),
    }
}

/// Creates `<prefix>-<timestamp>`, adding a counter if that already exists.
pub fn create_run_dir(prefix: &Path) -> CliResult<PathBuf> {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S").to_string();
    let base = format!("{}-{stamp}", prefix.display());
    let io = |e: std::io::Error| CliError::input("OutputError", format!("cannot create run directory: {e}"));
    if let Some(parent) = Path::new(&base).parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
    }
    for n in 0.. {
        let candidate = if n == 0 { PathBuf::from(&base) } else { PathBuf::from(format!("{base}-{n}")) };
        match std::fs::create_dir(&candidate) {
            Ok(()) => return Ok(candidate),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(io(e)),
        }
    }
    unreachable!()
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: Value,
    pub seed: Option<u64>,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: Option<String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String], config: Value, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            argv: argv.to_vec(),
            config,
            seed,
            started_at: chrono::Local::now().to_rfc3339(),
            finished_at: None,
            status: None,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> CliResult {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_text(&dir.join("manifest.json"), &text)
    }

    pub fn finish(&mut self, dir: &Path, status: &str) -> CliResult {
        self.finished_at = Some(chrono::Local::now().to_rfc3339());
        self.status = Some(status.into());
        self.write(dir)
    }
}

pub fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| CliError::input("OutputError", format!("cannot write {}: {e}", path.display())))
}

pub fn pose_line(pose: &Pose) -> String {
    pose.to_array().iter().map(|x| format!("{x:.9}")).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals() {
        assert_eq!(parse_reals("320,240, 1,0,0", 5, "g").unwrap(), vec![320.0, 240.0, 1.0, 0.0, 0.0]);
        assert!(parse_reals("1,2", 5, "g").is_err());
        assert!(parse_reals("1,2,x,4,5", 5, "g").is_err());
        assert!(parse_reals("1,2,nan,4,5", 5, "g").is_err());
    }

    #[test]
    fn poses() {
        let p = parse_pose("1 0 0 0 1 0 0 0 1 0 0 0").unwrap();
        assert_eq!(p.position(), Vec3::zeros());
        let e = parse_pose("2 0 0 0 1 0 0 0 1 0 0 0").unwrap_err();
        assert!(e.message.contains("rotation not orthonormal"));
        assert_eq!(e.code, EXIT_INPUT);
    }

    #[test]
    fn run_dirs_never_collide() {
        let tmp = tempfile::tempdir().unwrap();
        let a = create_run_dir(&tmp.path().join("run")).unwrap();
        let b = create_run_dir(&tmp.path().join("run")).unwrap();
        assert_ne!(a, b);
        assert!(a.is_dir() && b.is_dir());
    }
}
