//! Viewpoint solving for language-directed photography.
//!
//! Compositional constraints on a single anchor subject are turned into a
//! camera pose in closed form, refined by image-based visual servoing, and then
//! improved by a critic-guided reflective search over single-axis spherical
//! perturbations rendered by a deterministic splat renderer.

// Validation uses `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod critic;
pub mod geometry;
pub mod harness;
pub mod intent;
pub mod objective;
pub mod reflect;
pub mod render;
pub mod scene;
pub mod solver;

pub use geometry::{CameraIntrinsics, Pose, SphericalCoord, Vec3};
pub use render::{render, Image, Splat};
pub use scene::{extract_structured_inputs, load_scene, Scene, SceneObject, StructuredInputs};
pub use solver::{geometric_solve, ConstraintVector, ServoConfig};
pub use critic::{Critic, CritiqueScore, RuleCritic};
pub use intent::{IntentParser, ParsedIntent, RuleParser};
pub use objective::{Objective, Region};
pub use reflect::{gen_candidates, reflect_optimize, ReflectionTrace, ReflectorConfig};
pub use harness::{evaluate_success, run_task, Report, TaskSpec, TrialResult};
