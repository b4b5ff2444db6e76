//! Critics score a rendered view against an instruction on a continuous
//! 1–5 scale and explain the score in a short rationale.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;
use crate::objective::{distance_to_rect, Objective};
use crate::render::Image;
use crate::scene::{Scene, StructuredInputs};

pub const SCORE_MIN: f64 = 1.0;
pub const SCORE_MAX: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CriticError {
    #[error("object `{0}` referenced by the objective is not in the scene")]
    MissingObject(String),
    #[error("scripted critic has no scores left")]
    ScriptExhausted,
    #[error("score {0} outside [1, 5]")]
    OutOfRange(f64),
    #[error("malformed critic script: {0}")]
    Script(String),
    #[error("critic failed: {0}")]
    External(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CritiqueScore {
    value: f64,
    rationale: String,
}

impl CritiqueScore {
    pub fn new(value: f64, rationale: impl Into<String>) -> Result<Self, CriticError> {
        if !(SCORE_MIN..=SCORE_MAX).contains(&value) {
            return Err(CriticError::OutOfRange(value));
        }
        Ok(Self { value, rationale: rationale.into() })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn rationale(&self) -> &str {
        &self.rationale
    }
}

impl<'de> Deserialize<'de> for CritiqueScore {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Bare(f64),
            Full {
                #[serde(alias = "value")]
                score: f64,
                #[serde(default)]
                rationale: String,
            },
        }
        let (value, rationale) = match Raw::deserialize(d)? {
            Raw::Bare(v) => (v, String::new()),
            Raw::Full { score, rationale } => (score, rationale),
        };
        CritiqueScore::new(value, rationale).map_err(serde::de::Error::custom)
    }
}

/// Everything a critic may look at besides the image.
#[derive(Debug, Clone, Copy)]
pub struct EvaluationContext<'a> {
    pub instruction: &'a str,
    pub scene: &'a Scene,
    pub pose: &'a Pose,
    pub structured: &'a StructuredInputs,
}

pub trait Critic {
    /// Scores one rendered view. `prior_rationale` is the explanation attached
    /// to the previous iteration's best candidate (empty at the start).
    fn score(&mut self, image: &Image, ctx: &EvaluationContext<'_>, prior_rationale: &str) -> Result<CritiqueScore, CriticError>;
}

impl<C: Critic + ?Sized> Critic for Box<C> {
    fn score(&mut self, image: &Image, ctx: &EvaluationContext<'_>, prior_rationale: &str) -> Result<CritiqueScore, CriticError> {
        (**self).score(image, ctx, prior_rationale)
    }
}

/// Per-term satisfaction in [0, 1] behind a rule-critic score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermBreakdown {
    pub center: f64,
    pub scale: Option<f64>,
    pub regions: Vec<f64>,
}

/// Deterministic composition critic reading ground-truth geometry.
#[derive(Debug, Clone)]
pub struct RuleCritic {
    objective: Objective,
}

impl RuleCritic {
    pub fn new(objective: Objective) -> Self {
        Self { objective }
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    /// Geometry-only evaluation; the image is not needed.
    pub fn evaluate(&self, ctx: &EvaluationContext<'_>) -> Result<CritiqueScore, CriticError> {
        self.evaluate_terms(ctx).map(|(s, _)| s)
    }

    pub fn evaluate_terms(&self, ctx: &EvaluationContext<'_>) -> Result<(CritiqueScore, Option<TermBreakdown>), CriticError> {
        let obj = &self.objective;
        let z = ctx.structured;
        let k = &z.intrinsics;
        let anchor = z.object(&obj.anchor_id).ok_or_else(|| CriticError::MissingObject(obj.anchor_id.clone()))?;
        for c in &obj.secondary {
            if z.object(&c.object_id).is_none() {
                return Err(CriticError::MissingObject(c.object_id.clone()));
            }
        }
        if !anchor.centered_in_frame(k) {
            return Ok((CritiqueScore::new(SCORE_MIN, "anchor not visible")?, None));
        }
        let [u, v] = anchor.center.expect("visible anchor has a center");
        let w = obj.effective_weights();

        let [tu, tv] = obj.target_center;
        let center_dist = (u - tu).hypot(v - tv);
        let q_center = (1.0 - center_dist / (0.25 * k.width_f())).max(0.0);

        let q_scale = obj.target_scale.map(|frac| {
            let target_h = frac * k.height_f();
            if anchor.pixel_height <= 0.0 {
                0.0
            } else {
                (1.0 - (anchor.pixel_height / target_h).ln().abs() / std::f64::consts::LN_2).max(0.0)
            }
        });

        let mut regions = Vec::with_capacity(obj.secondary.len());
        let mut notes = Vec::with_capacity(obj.secondary.len());
        for c in &obj.secondary {
            let o = z.object(&c.object_id).expect("checked above");
            let subject = ctx.scene.object(&c.object_id).map(|_| (o, &z.camera));
            let q = match (o.visible, o.center, c.region.rect(k, subject)) {
                (true, Some([ou, ov]), Some(rect)) => {
                    let width = rect[2] - rect[0];
                    let d = distance_to_rect(ou, ov, &rect);
                    notes.push(if d > 0.0 {
                        format!("{} is {:.0} px outside {}", c.object_id, d, c.region)
                    } else {
                        format!("{} inside {}", c.object_id, c.region)
                    });
                    (1.0 - d / width).max(0.0)
                }
                (false, ..) | (_, None, _) => {
                    notes.push(format!("{} not visible", c.object_id));
                    0.0
                }
                (_, _, None) => {
                    notes.push(format!("{}: region {} undefined for this view", c.object_id, c.region));
                    0.0
                }
            };
            regions.push(q);
        }
        let q_region = if regions.is_empty() { 0.0 } else { regions.iter().sum::<f64>() / regions.len() as f64 };

        let total = w.center * q_center + w.scale * q_scale.unwrap_or(0.0) + w.region * q_region;
        let value = (1.0 + 4.0 * total).clamp(SCORE_MIN, SCORE_MAX);

        // Name the weakest weighted term.
        let mut terms: Vec<(f64, String)> = Vec::new();
        if w.center > 0.0 {
            terms.push((q_center, format!("center: anchor {center_dist:.1} px from target ({u:.0}, {v:.0}) vs ({tu:.0}, {tv:.0})")));
        }
        if let (Some(q), true) = (q_scale, w.scale > 0.0) {
            let target_h = obj.target_scale.unwrap_or(0.0) * k.height_f();
            let dir = if anchor.pixel_height < target_h { "too small" } else { "too large" };
            terms.push((q, format!("scale: anchor {dir} ({:.0} px vs {target_h:.0} px)", anchor.pixel_height)));
        }
        if w.region > 0.0 {
            for (q, note) in regions.iter().zip(&notes) {
                terms.push((*q, format!("region: {note}")));
            }
        }
        let rationale = match terms.iter().min_by(|a, b| a.0.total_cmp(&b.0)) {
            Some((q, text)) if *q < 1.0 - 1e-9 => format!("weakest term {text} (q = {q:.3})"),
            _ => "all terms satisfied".to_string(),
        };
        let breakdown = TermBreakdown { center: q_center, scale: q_scale, regions };
        Ok((CritiqueScore::new(value, rationale)?, Some(breakdown)))
    }
}

impl Critic for RuleCritic {
    fn score(&mut self, _image: &Image, ctx: &EvaluationContext<'_>, _prior: &str) -> Result<CritiqueScore, CriticError> {
        self.evaluate(ctx)
    }
}

/// Replays a fixed queue of scores, one per call.
#[derive(Debug, Clone, Default)]
pub struct ScriptedCritic {
    queue: VecDeque<CritiqueScore>,
    calls: usize,
}

impl ScriptedCritic {
    pub fn new(scores: impl IntoIterator<Item = CritiqueScore>) -> Self {
        Self { queue: scores.into_iter().collect(), calls: 0 }
    }

    /// Builds from bare values; any value outside [1, 5] is rejected.
    pub fn from_values(values: &[f64]) -> Result<Self, CriticError> {
        let scores = values.iter().map(|&v| CritiqueScore::new(v, "")).collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(scores))
    }

    /// JSON array of numbers or `{score, rationale}` objects.
    pub fn from_json_str(text: &str) -> Result<Self, CriticError> {
        let scores: Vec<CritiqueScore> = serde_json::from_str(text).map_err(|e| CriticError::Script(e.to_string()))?;
        Ok(Self::new(scores))
    }

    pub fn load(path: &Path) -> Result<Self, CriticError> {
        let text = std::fs::read_to_string(path).map_err(|e| CriticError::Script(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn remaining(&self) -> usize {
        self.queue.len()
    }

    pub fn calls(&self) -> usize {
        self.calls
    }

    pub fn next_score(&mut self) -> Result<CritiqueScore, CriticError> {
        let s = self.queue.pop_front().ok_or(CriticError::ScriptExhausted)?;
        self.calls += 1;
        Ok(s)
    }
}

impl Critic for ScriptedCritic {
    fn score(&mut self, _image: &Image, _ctx: &EvaluationContext<'_>, _prior: &str) -> Result<CritiqueScore, CriticError> {
        self.next_score()
    }
}
