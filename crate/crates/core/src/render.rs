//! Deterministic CPU splat renderer.
//!
//! Isotropic Gaussian splats are projected through the pinhole model, sorted
//! far-to-near by centroid depth and alpha-composited over the background.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Pose, Vec3};
use crate::scene::Scene;

/// Splats are truncated at this many screen-space standard deviations.
pub const TRUNCATION_SIGMAS: f64 = 3.0;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("i/o error writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed image data: {0}")]
    Malformed(String),
}

/// Isotropic Gaussian with a world-space standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Splat {
    pub center: Vec3,
    pub sigma: f64,
    pub color: [u8; 3],
    pub opacity: f64,
}

impl Splat {
    pub fn validate(&self) -> Result<(), String> {
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err("center must be finite".into());
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(format!("sigma must be > 0, got {}", self.sigma));
        }
        if !(self.opacity > 0.0 && self.opacity <= 1.0) {
            return Err(format!("opacity must lie in (0, 1], got {}", self.opacity));
        }
        Ok(())
    }
}

/// Row-major RGB8 image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Image {
    pub fn filled(width: u32, height: u32, color: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(3 * n);
        for _ in 0..n {
            pixels.extend_from_slice(&color);
        }
        Self { width, height, pixels }
    }

    pub fn from_raw(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, RenderError> {
        if pixels.len() != 3 * width as usize * height as usize {
            return Err(RenderError::Malformed(format!(
                "buffer length {} does not match {}x{}x3",
                pixels.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Rec. 601 luma of one pixel.
    pub fn luminance(&self, x: u32, y: u32) -> f64 {
        let [r, g, b] = self.pixel(x, y);
        0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64
    }

    /// RGBA copy with opaque alpha, as expected by canvas `ImageData`.
    pub fn to_rgba(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() / 3 * 4);
        for px in self.pixels.chunks_exact(3) {
            out.extend_from_slice(px);
            out.push(255);
        }
        out
    }
}

struct ScreenSplat {
    depth: f64,
    index: usize,
    u: f64,
    v: f64,
    sigma_px: f64,
    color: [f64; 3],
    opacity: f64,
}

/// Renders the scene from `pose`. Pixel (x, y) samples image coordinate (x, y).
pub fn render(scene: &Scene, pose: &Pose, intrinsics: &CameraIntrinsics) -> Image {
    let (w, h) = (intrinsics.width as usize, intrinsics.height as usize);
    let mut projected = Vec::new();
    for (index, splat) in scene.splats().enumerate() {
        let c = pose.world_to_camera(&splat.center);
        if c.z <= 1e-9 {
            continue;
        }
        let u = intrinsics.cx + intrinsics.f * c.x / c.z;
        let v = intrinsics.cy + intrinsics.f * c.y / c.z;
        let sigma_px = intrinsics.f * splat.sigma / c.z;
        if !(u.is_finite() && v.is_finite() && sigma_px.is_finite()) {
            continue;
        }
        let r = TRUNCATION_SIGMAS * sigma_px;
        if u + r < 0.0 || v + r < 0.0 || u - r > (w - 1) as f64 || v - r > (h - 1) as f64 {
            continue;
        }
        projected.push(ScreenSplat {
            depth: c.z,
            index,
            u,
            v,
            sigma_px,
            color: splat.color.map(f64::from),
            opacity: splat.opacity,
        });
    }
    // Painter's order: far first; equal depths keep scene order.
    projected.sort_by(|a, b| b.depth.total_cmp(&a.depth).then(a.index.cmp(&b.index)));

    let bg = scene.background_color.map(f64::from);
    let mut acc = vec![0.0f64; 3 * w * h];
    for px in acc.chunks_exact_mut(3) {
        px.copy_from_slice(&bg);
    }

    for s in &projected {
        let r = TRUNCATION_SIGMAS * s.sigma_px;
        let r2 = r * r;
        let inv_two_var = 1.0 / (2.0 * s.sigma_px * s.sigma_px);
        let x0 = (s.u - r).ceil().max(0.0) as usize;
        let x1 = (s.u + r).floor().min((w - 1) as f64) as usize;
        let y0 = (s.v - r).ceil().max(0.0) as usize;
        let y1 = (s.v + r).floor().min((h - 1) as f64) as usize;
        for y in y0..=y1 {
            let dy = y as f64 - s.v;
            let row = &mut acc[3 * y * w..3 * (y + 1) * w];
            for x in x0..=x1 {
                let dx = x as f64 - s.u;
                let d2 = dx * dx + dy * dy;
                if d2 > r2 {
                    continue;
                }
                let alpha = s.opacity * (-d2 * inv_two_var).exp();
                let px = &mut row[3 * x..3 * x + 3];
                for ch in 0..3 {
                    px[ch] += alpha * (s.color[ch] - px[ch]);
                }
            }
        }
    }

    let pixels = acc.iter().map(|&c| c.round().clamp(0.0, 255.0) as u8).collect();
    Image { width: intrinsics.width, height: intrinsics.height, pixels }
}

/// Binary PPM (P6, maxval 255).
pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", image.width, image.height);
    let mut out = Vec::with_capacity(header.len() + image.pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&image.pixels);
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image, RenderError> {
    let malformed = |m: &str| RenderError::Malformed(m.to_string());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| malformed("non-ascii header"))?);
    }
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(malformed("expected P6 with maxval 255"));
    }
    let width: u32 = fields[1].parse().map_err(|_| malformed("bad width"))?;
    let height: u32 = fields[2].parse().map_err(|_| malformed("bad height"))?;
    Image::from_raw(width, height, bytes.get(pos + 1..).unwrap_or_default().to_vec())
}

pub fn write_image(image: &Image, path: &Path) -> Result<(), RenderError> {
    let io = |source| RenderError::Io { path: path.display().to_string(), source };
    let mut file = std::fs::File::create(path).map_err(io)?;
    file.write_all(&encode_ppm(image)).map_err(io)?;
    Ok(())
}
