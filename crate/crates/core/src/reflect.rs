//! Critic-guided reflective search over single-axis spherical perturbations.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critic::{Critic, CriticError, CritiqueScore, EvaluationContext};
use crate::geometry::{deg, rad, spherical_to_pose, CameraIntrinsics, GeometryError, Pose, SphericalCoord, PHI_LIMIT};
use crate::render::{render, write_image, Image, RenderError};
use crate::scene::{extract_structured_inputs, Scene};

/// Coordinates closer than this reuse an earlier score.
pub const CACHE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectorConfig {
    /// Maximum number of iterations (K).
    pub max_iters: usize,
    /// Minimum score gain to keep going (ε).
    pub epsilon: f64,
    /// Azimuth step, radians.
    pub delta_theta: f64,
    /// Elevation step, radians.
    pub delta_phi: f64,
    /// Radial step as a fraction of the current distance (α).
    pub alpha: f64,
    /// Closest allowed camera distance, meters.
    pub min_rho: f64,
}

impl Default for ReflectorConfig {
    fn default() -> Self {
        Self { max_iters: 3, epsilon: 0.2, delta_theta: rad(8.0), delta_phi: rad(8.0), alpha: 0.1, min_rho: 0.05 }
    }
}

impl ReflectorConfig {
    pub fn validate(&self) -> Result<(), ReflectError> {
        let bad = |m: String| Err(ReflectError::InvalidConfig(m));
        if self.max_iters < 1 {
            return bad("K must be >= 1".into());
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return bad(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        if !(self.delta_theta.is_finite() && self.delta_theta > 0.0) || !(self.delta_phi.is_finite() && self.delta_phi > 0.0) {
            return bad("angular steps must be > 0".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.min_rho.is_finite() && self.min_rho > 0.0) {
            return bad(format!("min_rho must be > 0, got {}", self.min_rho));
        }
        Ok(())
    }
}

/// Which single axis a candidate perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AxisTag {
    Keep,
    PlusRho,
    MinusRho,
    PlusTheta,
    MinusTheta,
    PlusPhi,
    MinusPhi,
}

impl AxisTag {
    pub const ORDER: [AxisTag; 7] = [
        AxisTag::Keep,
        AxisTag::PlusRho,
        AxisTag::MinusRho,
        AxisTag::PlusTheta,
        AxisTag::MinusTheta,
        AxisTag::PlusPhi,
        AxisTag::MinusPhi,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AxisTag::Keep => "keep",
            AxisTag::PlusRho => "+rho",
            AxisTag::MinusRho => "-rho",
            AxisTag::PlusTheta => "+theta",
            AxisTag::MinusTheta => "-theta",
            AxisTag::PlusPhi => "+phi",
            AxisTag::MinusPhi => "-phi",
        }
    }
}

impl fmt::Display for AxisTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for AxisTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for AxisTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        AxisTag::ORDER
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown axis tag `{s}`")))
    }
}

/// The base point plus its six single-axis neighbours, in [`AxisTag::ORDER`].
/// Perturbed values leaving the feasible set are projected back onto it.
pub fn gen_candidates(x: &SphericalCoord, cfg: &ReflectorConfig) -> Vec<(SphericalCoord, AxisTag)> {
    let (rho, theta, phi, anchor) = (x.rho(), x.theta(), x.phi(), x.anchor());
    let clamp_phi = |p: f64| p.clamp(-PHI_LIMIT, PHI_LIMIT);
    let clamp_rho = |r: f64| r.max(cfg.min_rho);
    AxisTag::ORDER
        .into_iter()
        .map(|tag| {
            let (r, t, p) = match tag {
                AxisTag::Keep => (rho, theta, phi),
                AxisTag::PlusRho => (clamp_rho(rho * (1.0 + cfg.alpha)), theta, phi),
                AxisTag::MinusRho => (clamp_rho(rho * (1.0 - cfg.alpha)), theta, phi),
                AxisTag::PlusTheta => (rho, theta + cfg.delta_theta, phi),
                AxisTag::MinusTheta => (rho, theta - cfg.delta_theta, phi),
                AxisTag::PlusPhi => (rho, theta, clamp_phi(phi + cfg.delta_phi)),
                AxisTag::MinusPhi => (rho, theta, clamp_phi(phi - cfg.delta_phi)),
            };
            // Projection keeps every field valid, so construction cannot fail.
            let c = SphericalCoord::new(r, t, p, anchor).unwrap_or(*x);
            (c, tag)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub iteration: usize,
    pub axis_tag: AxisTag,
    pub coord: SphericalCoord,
    pub pose: Pose,
    pub image_path: Option<String>,
    pub score: CritiqueScore,
    /// Score reused from an earlier evaluation of the same coordinates.
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub candidates: Vec<Candidate>,
    /// Index of the iteration's argmax within `candidates`.
    pub best: usize,
    pub gain: f64,
}

impl IterationRecord {
    pub fn best_candidate(&self) -> &Candidate {
        &self.candidates[self.best]
    }

    pub fn rationale(&self) -> &str {
        self.best_candidate().score.rationale()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    /// Score gain of the last iteration fell below ε.
    Converged,
    /// K iterations were spent.
    Budget,
    /// A candidate could not be turned into a camera pose.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReflectionTrace {
    pub iterations: Vec<IterationRecord>,
    pub termination: Option<Termination>,
    /// Number of critic calls actually made.
    pub critic_calls: usize,
}

impl ReflectionTrace {
    /// Highest-scoring candidate over every iteration; ties go to the earliest.
    pub fn global_best(&self) -> Option<&Candidate> {
        let mut best: Option<&Candidate> = None;
        for c in self.iterations.iter().flat_map(|it| &it.candidates) {
            if best.is_none_or(|b| c.score.value() > b.score.value()) {
                best = Some(c);
            }
        }
        best
    }
}

#[derive(Debug, Error)]
pub enum ReflectError {
    #[error("invalid reflector config: {0}")]
    InvalidConfig(String),
    #[error("CriticFailure at iteration {iteration}, candidate {axis_tag}: {source}")]
    CriticFailure {
        iteration: usize,
        axis_tag: AxisTag,
        #[source]
        source: CriticError,
    },
    #[error("RenderFailure: {0}")]
    RenderFailure(#[from] RenderError),
    #[error("cannot write trace {path}: {source}")]
    TraceIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One line of `trace.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub axis_tag: AxisTag,
    pub rho: f64,
    pub theta_deg: f64,
    pub phi_deg: f64,
    pub pose: [f64; 12],
    pub image_path: Option<String>,
    pub score: f64,
    pub rationale: String,
}

impl From<&Candidate> for TraceRecord {
    fn from(c: &Candidate) -> Self {
        Self {
            iteration: c.iteration,
            axis_tag: c.axis_tag,
            rho: c.coord.rho(),
            theta_deg: deg(c.coord.theta()),
            phi_deg: deg(c.coord.phi()),
            pose: c.pose.to_array(),
            image_path: c.image_path.clone(),
            score: c.score.value(),
            rationale: c.score.rationale().to_string(),
        }
    }
}

/// Destination for candidate images and trace records.
pub trait TraceSink {
    /// Stores a freshly rendered candidate view, returning where it went.
    fn save_image(&mut self, iteration: usize, index: usize, image: &Image) -> Result<Option<String>, ReflectError>;
    fn record(&mut self, record: &TraceRecord) -> Result<(), ReflectError>;
}

/// Keeps records in memory and discards images.
#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub records: Vec<TraceRecord>,
}

impl TraceSink for MemorySink {
    fn save_image(&mut self, _: usize, _: usize, _: &Image) -> Result<Option<String>, ReflectError> {
        Ok(None)
    }

    fn record(&mut self, record: &TraceRecord) -> Result<(), ReflectError> {
        self.records.push(record.clone());
        Ok(())
    }
}

/// Writes `view_<iter>_<candidate>.ppm` files and `trace.jsonl` into a directory.
#[derive(Debug)]
pub struct DirSink {
    dir: PathBuf,
    trace: File,
}

impl DirSink {
    pub const TRACE_FILE: &'static str = "trace.jsonl";

    pub fn create(dir: &Path) -> Result<Self, ReflectError> {
        let io = |source| ReflectError::TraceIo { path: dir.display().to_string(), source };
        std::fs::create_dir_all(dir).map_err(io)?;
        let path = dir.join(Self::TRACE_FILE);
        let trace = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| ReflectError::TraceIo { path: path.display().to_string(), source })?;
        Ok(Self { dir: dir.to_path_buf(), trace })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl TraceSink for DirSink {
    fn save_image(&mut self, iteration: usize, index: usize, image: &Image) -> Result<Option<String>, ReflectError> {
        let name = format!("view_{iteration}_{index}.ppm");
        write_image(image, &self.dir.join(&name))?;
        Ok(Some(name))
    }

    fn record(&mut self, record: &TraceRecord) -> Result<(), ReflectError> {
        let line = serde_json::to_string(record).expect("trace records always serialize");
        writeln!(self.trace, "{line}").map_err(|source| ReflectError::TraceIo {
            path: self.dir.join(Self::TRACE_FILE).display().to_string(),
            source,
        })
    }
}

/// Outcome of one [`Reflector::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepStatus {
    Continue,
    Finished(Termination),
}

/// Incremental form of the reflective loop, one iteration per [`step`](Self::step).
pub struct Reflector<'a> {
    scene: &'a Scene,
    instruction: &'a str,
    intrinsics: CameraIntrinsics,
    cfg: ReflectorConfig,
    base: SphericalCoord,
    prior_rationale: String,
    trace: ReflectionTrace,
}

impl<'a> Reflector<'a> {
    pub fn new(
        x0: SphericalCoord,
        scene: &'a Scene,
        instruction: &'a str,
        cfg: ReflectorConfig,
        intrinsics: CameraIntrinsics,
    ) -> Result<Self, ReflectError> {
        cfg.validate()?;
        Ok(Self {
            scene,
            instruction,
            intrinsics,
            cfg,
            base: x0,
            prior_rationale: String::new(),
            trace: ReflectionTrace { iterations: Vec::new(), termination: None, critic_calls: 0 },
        })
    }

    pub fn trace(&self) -> &ReflectionTrace {
        &self.trace
    }

    pub fn into_trace(self) -> ReflectionTrace {
        self.trace
    }

    pub fn is_finished(&self) -> bool {
        self.trace.termination.is_some()
    }

    /// Global best so far (falls back to the start point before any iteration).
    pub fn best_pose(&self) -> Result<Pose, ReflectError> {
        match self.trace.global_best() {
            Some(c) => Ok(c.pose),
            None => Ok(spherical_to_pose(&self.base)?),
        }
    }

    fn cached(&self, coord: &SphericalCoord) -> Option<&Candidate> {
        self.trace
            .iterations
            .iter()
            .flat_map(|it| &it.candidates)
            .find(|c| !c.cached && c.coord.approx_eq(coord, CACHE_TOL))
    }

    /// Runs one propose–render–critique–update iteration.
    pub fn step(&mut self, critic: &mut dyn Critic, sink: &mut dyn TraceSink) -> Result<StepStatus, ReflectError> {
        if let Some(t) = self.trace.termination {
            return Ok(StepStatus::Finished(t));
        }
        let iteration = self.trace.iterations.len();
        let mut candidates: Vec<Candidate> = Vec::with_capacity(7);
        // Previously scored coordinates from this iteration also count.
        let mut fresh: Vec<Candidate> = Vec::new();

        for (index, (coord, axis_tag)) in gen_candidates(&self.base, &self.cfg).into_iter().enumerate() {
            let previous = self.cached(&coord).or_else(|| fresh.iter().find(|c| c.coord.approx_eq(&coord, CACHE_TOL)));
            let candidate = if let Some(prev) = previous {
                Candidate { iteration, axis_tag, cached: true, coord, ..prev.clone() }
            } else {
                let pose = match spherical_to_pose(&coord) {
                    Ok(p) => p,
                    Err(_) => {
                        self.trace.termination = Some(Termination::Degenerate);
                        return Ok(StepStatus::Finished(Termination::Degenerate));
                    }
                };
                let image = render(self.scene, &pose, &self.intrinsics);
                let image_path = sink.save_image(iteration, index, &image)?;
                let structured = extract_structured_inputs(self.scene, &pose, &self.intrinsics);
                let ctx = EvaluationContext { instruction: self.instruction, scene: self.scene, pose: &pose, structured: &structured };
                self.trace.critic_calls += 1;
                let score = critic
                    .score(&image, &ctx, &self.prior_rationale)
                    .map_err(|source| ReflectError::CriticFailure { iteration, axis_tag, source })
                    .inspect_err(|_| {
                        // Persist what was scored before the failure.
                        for c in &candidates {
                            let _ = sink.record(&TraceRecord::from(c));
                        }
                    })?;
                let c = Candidate { iteration, axis_tag, coord, pose, image_path, score, cached: false };
                fresh.push(c.clone());
                c
            };
            candidates.push(candidate);
        }

        for c in &candidates {
            sink.record(&TraceRecord::from(c))?;
        }

        // Argmax; strict comparison keeps keep (index 0) and then earlier candidates on ties.
        let best = (1..candidates.len()).fold(0, |b, i| {
            if candidates[i].score.value() > candidates[b].score.value() {
                i
            } else {
                b
            }
        });
        let keep_score = candidates[0].score.value();
        let gain = candidates[best].score.value() - keep_score;
        let next_base = candidates[best].coord;
        self.prior_rationale = candidates[best].score.rationale().to_string();
        self.trace.iterations.push(IterationRecord { iteration, candidates, best, gain });

        if gain < self.cfg.epsilon {
            self.trace.termination = Some(Termination::Converged);
            return Ok(StepStatus::Finished(Termination::Converged));
        }
        self.base = next_base;
        if self.trace.iterations.len() >= self.cfg.max_iters {
            self.trace.termination = Some(Termination::Budget);
            return Ok(StepStatus::Finished(Termination::Budget));
        }
        Ok(StepStatus::Continue)
    }

    /// Runs to termination and returns the global argmax pose.
    pub fn run(mut self, critic: &mut dyn Critic, sink: &mut dyn TraceSink) -> Result<(Pose, ReflectionTrace), ReflectError> {
        while let StepStatus::Continue = self.step(critic, sink)? {}
        let pose = self.best_pose()?;
        Ok((pose, self.trace))
    }
}

/// Full reflective optimisation from `x0`, writing images and `trace.jsonl`
/// into `run_dir` when given.
pub fn reflect_optimize(
    x0: SphericalCoord,
    scene: &Scene,
    instruction: &str,
    critic: &mut dyn Critic,
    cfg: &ReflectorConfig,
    intrinsics: &CameraIntrinsics,
    run_dir: Option<&Path>,
) -> Result<(Pose, ReflectionTrace), ReflectError> {
    let reflector = Reflector::new(x0, scene, instruction, *cfg, *intrinsics)?;
    match run_dir {
        Some(dir) => reflector.run(critic, &mut DirSink::create(dir)?),
        None => reflector.run(critic, &mut MemorySink::default()),
    }
}
