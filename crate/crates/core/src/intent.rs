//! Instruction parsing into a constraint vector and an anchor object.
//!
//! [`RuleParser`] understands a small closed grammar; see `docs/grammar.md`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{position_to_spherical, rad, PHI_LIMIT};
use crate::render::Image;
use crate::scene::{ObjectObservation, StructuredInputs};
use crate::solver::{ConstraintVector, SolverError};

/// Close-up scale ratio.
pub const CLOSE_UP_SCALE: f64 = 2.0;
/// A full shot makes the anchor this fraction of the frame height.
pub const FULL_SHOT_HEIGHT: f64 = 0.6;
/// Azimuth swing for "from the left/right".
pub const SIDE_SWING_DEG: f64 = 45.0;
/// Elevation for "from above"/"top-down".
pub const ABOVE_ELEVATION_DEG: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntentError {
    #[error("NoAnchorMatch: no object label matches the instruction")]
    NoAnchorMatch,
    #[error("AmbiguousAnchor: instruction matches several objects equally well: {0:?}")]
    AmbiguousAnchor(Vec<String>),
    #[error("anchor `{0}` is not visible, cannot measure its current size")]
    AnchorNotVisible(String),
    #[error("parsed constraints are invalid: {0}")]
    Invalid(#[from] SolverError),
    #[error("intent parser failed: {0}")]
    External(String),
}

impl IntentError {
    /// Short machine-readable reason.
    pub fn reason(&self) -> &'static str {
        match self {
            IntentError::NoAnchorMatch => "NoAnchorMatch",
            IntentError::AmbiguousAnchor(_) => "AmbiguousAnchor",
            IntentError::AnchorNotVisible(_) => "AnchorNotVisible",
            IntentError::Invalid(_) => "ValidationError",
            IntentError::External(_) => "ExternalParserError",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedIntent {
    pub g: ConstraintVector,
    pub anchor_id: String,
    #[serde(default)]
    pub rationale: String,
}

pub trait IntentParser {
    fn parse(&mut self, instruction: &str, image: &Image, z: &StructuredInputs) -> Result<ParsedIntent, IntentError>;
}

/// Deterministic parser for the documented clause grammar.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleParser;

impl IntentParser for RuleParser {
    fn parse(&mut self, instruction: &str, _image: &Image, z: &StructuredInputs) -> Result<ParsedIntent, IntentError> {
        let (g, anchor_id) = parse_intent_rules(instruction, z)?;
        Ok(ParsedIntent { g, anchor_id, rationale: "rule grammar".into() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Clause {
    CloseUp,
    FullShot,
    Center,
    FromLeft,
    FromRight,
    FromAbove,
    ThirdsLeft,
    ThirdsRight,
}

/// Phrases in normalised form (lowercase, punctuation → spaces). Longer
/// phrases come first so "rule of thirds left" wins over shorter overlaps.
const CLAUSES: &[(&str, Clause)] = &[
    ("rule of thirds left", Clause::ThirdsLeft),
    ("rule of thirds right", Clause::ThirdsRight),
    ("from the left", Clause::FromLeft),
    ("from the right", Clause::FromRight),
    ("from above", Clause::FromAbove),
    ("top down", Clause::FromAbove),
    ("close up", Clause::CloseUp),
    ("closeup", Clause::CloseUp),
    ("full shot", Clause::FullShot),
    ("centered", Clause::Center),
    ("centred", Clause::Center),
    ("center", Clause::Center),
    ("centre", Clause::Center),
];

fn normalize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn find_phrase(tokens: &[String], used: &[bool], phrase: &[String]) -> Option<usize> {
    if phrase.is_empty() || phrase.len() > tokens.len() {
        return None;
    }
    (0..=tokens.len() - phrase.len())
        .find(|&i| (0..phrase.len()).all(|j| !used[i + j] && tokens[i + j] == phrase[j]))
}

/// Parses an instruction against the current perceptual inputs.
///
/// Unspecified fields keep the current view: s = 1, current azimuth and
/// elevation about the anchor, anchor at the principal point.
pub fn parse_intent_rules(instruction: &str, z: &StructuredInputs) -> Result<(ConstraintVector, String), IntentError> {
    let tokens = normalize(instruction);
    let mut used = vec![false; tokens.len()];

    // Clauses in the order they appear; later clauses override earlier ones.
    let mut clauses: Vec<(usize, Clause)> = Vec::new();
    for (phrase, clause) in CLAUSES {
        let words: Vec<String> = phrase.split(' ').map(str::to_string).collect();
        while let Some(at) = find_phrase(&tokens, &used, &words) {
            used[at..at + words.len()].iter_mut().for_each(|u| *u = true);
            clauses.push((at, *clause));
        }
    }
    clauses.sort_by_key(|(at, _)| *at);

    let anchor = select_anchor(&tokens, &mut used, z)?;
    let k = &z.intrinsics;

    let (mut theta, mut phi) = match position_to_spherical(&z.camera.position(), &anchor.world) {
        Ok(sc) => (sc.theta(), sc.phi()),
        // Camera directly above or below: azimuth undefined.
        Err(_) => (0.0, z.camera.position().z.total_cmp(&anchor.world.z) as i8 as f64 * PHI_LIMIT),
    };
    phi = phi.clamp(-PHI_LIMIT, PHI_LIMIT);
    let (mut u_star, mut v_star, mut s) = (k.cx, k.cy, 1.0);

    for (_, clause) in clauses {
        match clause {
            Clause::CloseUp => s = CLOSE_UP_SCALE,
            Clause::FullShot => {
                if !anchor.visible || anchor.pixel_height <= 0.0 {
                    return Err(IntentError::AnchorNotVisible(anchor.id.clone()));
                }
                s = FULL_SHOT_HEIGHT * k.height_f() / anchor.pixel_height;
            }
            Clause::Center => (u_star, v_star) = (k.cx, k.cy),
            Clause::FromLeft => theta -= rad(SIDE_SWING_DEG),
            Clause::FromRight => theta += rad(SIDE_SWING_DEG),
            Clause::FromAbove => phi = rad(ABOVE_ELEVATION_DEG),
            Clause::ThirdsLeft => (u_star, v_star) = (k.width_f() / 3.0, k.height_f() / 3.0),
            Clause::ThirdsRight => (u_star, v_star) = (2.0 * k.width_f() / 3.0, k.height_f() / 3.0),
        }
    }

    let g = ConstraintVector::new(u_star, v_star, s, theta, phi, k)?;
    Ok((g, anchor.id.clone()))
}

/// Longest whole-word label match; ties between objects are an error. With no
/// match, an instruction that names nothing ("the …") falls back to the
/// largest visible object.
fn select_anchor<'a>(tokens: &[String], used: &mut [bool], z: &'a StructuredInputs) -> Result<&'a ObjectObservation, IntentError> {
    let mut best_len = 0;
    let mut best: Vec<&ObjectObservation> = Vec::new();
    for o in &z.objects {
        let label = normalize(&o.label);
        if find_phrase(tokens, used, &label).is_none() {
            continue;
        }
        match label.len().cmp(&best_len) {
            std::cmp::Ordering::Greater => {
                best_len = label.len();
                best = vec![o];
            }
            std::cmp::Ordering::Equal => best.push(o),
            std::cmp::Ordering::Less => {}
        }
    }
    if !best.is_empty() {
        // Same label on visible and hidden objects: only the visible ones count.
        if best.iter().any(|o| o.visible) {
            best.retain(|o| o.visible);
        }
        if best.len() > 1 {
            return Err(IntentError::AmbiguousAnchor(best.iter().map(|o| o.id.clone()).collect()));
        }
        return Ok(best[0]);
    }
    let names_subject = tokens.iter().zip(used.iter()).any(|(t, u)| !u && t == "the");
    if names_subject {
        return Err(IntentError::NoAnchorMatch);
    }
    z.visible()
        .filter_map(|o| o.bbox.map(|b| (o, b.area())))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(o, _)| o)
        .ok_or(IntentError::NoAnchorMatch)
}
