//! Compositional objectives: where the anchor should sit, how large it should
//! appear, and which frame regions secondary objects should occupy.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Pose};
use crate::scene::{ObjectObservation, Scene};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("cannot read objective file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed objective: {0}")]
    Parse(String),
    #[error("invalid objective field `{field}`: {message}")]
    Validation { field: String, message: String },
}

/// Named frame region. Grid cells split the frame in thirds; quadrants in halves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Grid { row: u8, col: u8 },
    Quadrant { upper: bool, right: bool },
    /// Half frame behind the subject's facing direction, leaving open space in
    /// front of it.
    LookingRoom,
}

const ROWS: [&str; 3] = ["top", "middle", "bottom"];
const COLS: [&str; 3] = ["left", "center", "right"];

impl Region {
    /// Pixel rectangle `[u0, v0, u1, v1]`. `LookingRoom` needs the subject's
    /// observation and the camera pose to know which half applies.
    pub fn rect(&self, k: &CameraIntrinsics, subject: Option<(&ObjectObservation, &Pose)>) -> Option<[f64; 4]> {
        let (w, h) = (k.width_f(), k.height_f());
        match *self {
            Region::Grid { row, col } => {
                let (r, c) = (row as f64, col as f64);
                Some([c * w / 3.0, r * h / 3.0, (c + 1.0) * w / 3.0, (r + 1.0) * h / 3.0])
            }
            Region::Quadrant { upper, right } => {
                let (u0, u1) = if right { (k.cx, w) } else { (0.0, k.cx) };
                let (v0, v1) = if upper { (0.0, k.cy) } else { (k.cy, h) };
                Some([u0, v0, u1, v1])
            }
            Region::LookingRoom => {
                let (obs, pose) = subject?;
                let facing = obs.facing?;
                // Image-plane horizontal component of the facing direction.
                let dx = pose.right().dot(&facing);
                if dx.abs() < 1e-6 {
                    return None;
                }
                Some(if dx > 0.0 { [0.0, 0.0, k.cx, h] } else { [k.cx, 0.0, w, h] })
            }
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Region::Grid { row: 1, col: 1 } => f.write_str("center"),
            Region::Grid { row, col } => write!(f, "{}-{}", ROWS[row as usize], COLS[col as usize]),
            Region::Quadrant { upper, right } => write!(
                f,
                "quadrant({}-{})",
                if upper { "upper" } else { "lower" },
                if right { "right" } else { "left" }
            ),
            Region::LookingRoom => f.write_str("looking-room"),
        }
    }
}

impl FromStr for Region {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim().to_ascii_lowercase();
        if s == "center" || s == "middle-center" {
            return Ok(Region::Grid { row: 1, col: 1 });
        }
        if s == "looking-room" {
            return Ok(Region::LookingRoom);
        }
        if let Some(inner) = s.strip_prefix("quadrant(").and_then(|r| r.strip_suffix(')')) {
            return match inner {
                "upper-right" => Ok(Region::Quadrant { upper: true, right: true }),
                "upper-left" => Ok(Region::Quadrant { upper: true, right: false }),
                "lower-right" => Ok(Region::Quadrant { upper: false, right: true }),
                "lower-left" => Ok(Region::Quadrant { upper: false, right: false }),
                _ => Err(format!("unknown quadrant `{inner}`")),
            };
        }
        if let Some((r, c)) = s.split_once('-') {
            if let (Some(row), Some(col)) = (ROWS.iter().position(|x| *x == r), COLS.iter().position(|x| *x == c)) {
                return Ok(Region::Grid { row: row as u8, col: col as u8 });
            }
        }
        Err(format!("unknown region `{s}`"))
    }
}

impl Serialize for Region {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Region {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Euclidean distance from a point to a rectangle (0 inside).
pub fn distance_to_rect(u: f64, v: f64, rect: &[f64; 4]) -> f64 {
    let dx = (rect[0] - u).max(0.0).max(u - rect[2]);
    let dy = (rect[1] - v).max(0.0).max(v - rect[3]);
    dx.hypot(dy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionConstraint {
    pub object_id: String,
    pub region: Region,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub center: f64,
    pub scale: f64,
    pub region: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self { center: 1.0, scale: 1.0, region: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub anchor_id: String,
    /// Desired anchor pixel (u*, v*).
    pub target_center: [f64; 2],
    /// Desired anchor pixel height as a fraction of frame height.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_scale: Option<f64>,
    #[serde(default)]
    pub secondary: Vec<RegionConstraint>,
    #[serde(default)]
    pub weights: Weights,
}

impl Objective {
    /// Weights over the terms that are actually present, normalised to sum to 1.
    pub fn effective_weights(&self) -> Weights {
        let w = Weights {
            center: self.weights.center,
            scale: if self.target_scale.is_some() { self.weights.scale } else { 0.0 },
            region: if self.secondary.is_empty() { 0.0 } else { self.weights.region },
        };
        let total = w.center + w.scale + w.region;
        Weights { center: w.center / total, scale: w.scale / total, region: w.region / total }
    }

    pub fn validate(&self, scene: &Scene) -> Result<(), ObjectiveError> {
        let bad = |field: &str, message: String| Err(ObjectiveError::Validation { field: field.into(), message });
        if scene.object(&self.anchor_id).is_none() {
            return bad("anchor_id", format!("`{}` is not in the scene", self.anchor_id));
        }
        for (i, c) in self.secondary.iter().enumerate() {
            if scene.object(&c.object_id).is_none() {
                return bad(&format!("secondary[{i}].object_id"), format!("`{}` is not in the scene", c.object_id));
            }
        }
        if let Some(s) = self.target_scale {
            if !(s.is_finite() && s > 0.0) {
                return bad("target_scale", format!("must be > 0, got {s}"));
            }
        }
        let w = self.weights;
        if [w.center, w.scale, w.region].iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return bad("weights", "must be non-negative".into());
        }
        let e = self.effective_weights();
        if !(e.center + e.scale + e.region).is_finite() {
            return bad("weights", "active terms must have positive total weight".into());
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self, ObjectiveError> {
        serde_json::from_str(text).map_err(|e| ObjectiveError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ObjectiveError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ObjectiveError::Io { path: path.display().to_string(), source })?;
        Self::from_json_str(&text)
    }
}
