//! Deterministic analytic sphere renderer.
//!
//! Per pixel: one ray through the pixel center, intersected with the unit
//! sphere at the origin, shaded with direct light only:
//! `sum_l f(l, v) (n.l) I_l + ambient * base_color`, then blended over the
//! background by opacity. There is no sampling, so output is bit-identical
//! for identical inputs regardless of scheduling.

use alloc::vec;
use alloc::vec::Vec;

use crate::brdf::{MaterialFull, ShadingModel};
use crate::error::{Error, Result};
use crate::math::Vec3;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Light {
    /// World-space direction towards the light; normalized before use.
    pub direction: [f64; 3],
    pub intensity: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    /// Camera sits on +z at this distance, looking at the origin with +y up.
    pub camera_distance: f64,
    /// Vertical field of view.
    pub fov_degrees: f64,
    pub lights: Vec<Light>,
    pub ambient: [f64; 3],
    pub background: [f64; 3],
    pub exposure: f64,
}

impl Default for RenderConfig {
    /// 224x224, three-point rig: key upper-left front, fill right, rim behind.
    fn default() -> Self {
        RenderConfig {
            width: 224,
            height: 224,
            camera_distance: 3.0,
            fov_degrees: 45.0,
            lights: vec![
                Light {
                    direction: [-1.0, 1.0, 1.0],
                    intensity: [2.5, 2.5, 2.5],
                },
                Light {
                    direction: [1.0, 0.2, 0.8],
                    intensity: [0.8, 0.8, 0.8],
                },
                Light {
                    direction: [0.3, 0.8, -1.0],
                    intensity: [1.5, 1.5, 1.5],
                },
            ],
            ambient: [0.03, 0.03, 0.03],
            background: [0.05, 0.05, 0.05],
            exposure: 1.0,
        }
    }
}

impl RenderConfig {
    pub fn with_size(width: usize, height: usize) -> Self {
        RenderConfig {
            width,
            height,
            ..RenderConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.width < 16 || self.height < 16 {
            return bad("render width and height must be at least 16");
        }
        if self.lights.is_empty() {
            return bad("at least one light is required");
        }
        for l in &self.lights {
            if l.intensity.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
                return bad("light intensities must be finite and non-negative");
            }
            let d = Vec3::from(l.direction);
            if !(d.length() > 0.0) || !d.is_finite() {
                return bad("light direction must be non-zero");
            }
        }
        if self
            .ambient
            .iter()
            .chain(&self.background)
            .any(|c| !(*c >= 0.0) || !c.is_finite())
        {
            return bad("ambient and background must be finite and non-negative");
        }
        if !(self.camera_distance > 1.0) {
            return bad("camera must be outside the unit sphere");
        }
        if !(self.fov_degrees > 0.0 && self.fov_degrees < 180.0) {
            return bad("field of view must lie in (0, 180) degrees");
        }
        if !(self.exposure > 0.0) || !self.exposure.is_finite() {
            return bad("exposure must be positive");
        }
        Ok(())
    }
}

/// Row-major linear RGB raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl ImageBuffer {
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        ImageBuffer {
            width,
            height,
            data: vec![rgb; width * height],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }
}

/// Row-major 8-bit sRGB raster, three bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Srgb8Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

struct Camera {
    origin: Vec3,
    scale_y: f64,
    scale_x: f64,
}

impl Camera {
    fn new(cfg: &RenderConfig) -> Self {
        let half = libm::tan(cfg.fov_degrees.to_radians() * 0.5);
        Camera {
            origin: Vec3::new(0.0, 0.0, cfg.camera_distance),
            scale_y: half,
            scale_x: half * cfg.width as f64 / cfg.height as f64,
        }
    }

    fn ray(&self, cfg: &RenderConfig, px: usize, py: usize) -> Vec3 {
        let sx = ((px as f64 + 0.5) / cfg.width as f64 * 2.0 - 1.0) * self.scale_x;
        let sy = (1.0 - (py as f64 + 0.5) / cfg.height as f64 * 2.0) * self.scale_y;
        Vec3::new(sx, sy, -1.0).normalized()
    }

    /// Nearest hit on the unit sphere, if any.
    fn hit(&self, dir: Vec3) -> Option<Vec3> {
        let b = self.origin.dot(dir);
        let c = self.origin.dot(self.origin) - 1.0;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let t = -b - libm::sqrt(disc);
        (t > 0.0).then(|| (self.origin + dir * t).normalized())
    }
}

fn tangent_frame(n: Vec3) -> (Vec3, Vec3) {
    let up = Vec3::new(0.0, 1.0, 0.0);
    let t = up.cross(n);
    let t = if t.length() > 1e-9 {
        t.normalized()
    } else {
        Vec3::new(1.0, 0.0, 0.0)
    };
    (t, n.cross(t))
}

/// Renders the unit sphere with `material` applied.
pub fn render_sphere(material: &MaterialFull, config: &RenderConfig) -> Result<ImageBuffer> {
    config.validate()?;
    let model = ShadingModel::new(material);
    let camera = Camera::new(config);
    let lights: Vec<(Vec3, Vec3)> = config
        .lights
        .iter()
        .map(|l| {
            (
                Vec3::from(l.direction).normalized(),
                Vec3::from(l.intensity),
            )
        })
        .collect();
    let base = Vec3::from(material.base_color);
    let ambient = Vec3::from(config.ambient).hadamard(base);
    let background = Vec3::from(config.background);
    let opacity = material.opacity;

    let mut data = Vec::with_capacity(config.width * config.height);
    for py in 0..config.height {
        for px in 0..config.width {
            let dir = camera.ray(config, px, py);
            let Some(n) = camera.hit(dir) else {
                data.push(config.background);
                continue;
            };
            let (t, b) = tangent_frame(n);
            let to_local = |w: Vec3| Vec3::new(w.dot(t), w.dot(b), w.dot(n));
            let wo = to_local(-dir);
            let mut radiance = ambient;
            if wo.z > 0.0 {
                for (l, intensity) in &lights {
                    let wi = to_local(*l);
                    if wi.z > 0.0 {
                        let f = model.eval(wi, wo);
                        radiance = radiance + f.hadamard(*intensity) * wi.z;
                    }
                }
            }
            let c = radiance * opacity + background * (1.0 - opacity);
            data.push(c.to_array());
        }
    }
    Ok(ImageBuffer {
        width: config.width,
        height: config.height,
        data,
    })
}

/// Standard sRGB transfer of a value in `[0, 1]`.
pub fn srgb_encode(v: f64) -> f64 {
    if v <= 0.003_130_8 {
        12.92 * v
    } else {
        1.055 * libm::pow(v, 1.0 / 2.4) - 0.055
    }
}

/// Reinhard `x / (1 + x)` after exposure scaling.
pub fn reinhard(v: f64, exposure: f64) -> f64 {
    let x = (v * exposure).max(0.0);
    x / (1.0 + x)
}

/// Exposure, Reinhard, sRGB transfer, then round-half-up to 8 bits.
pub fn tonemap(linear: &ImageBuffer, exposure: f64) -> Srgb8Image {
    let mut data = Vec::with_capacity(linear.data.len() * 3);
    for px in &linear.data {
        for &c in px {
            let s = srgb_encode(reinhard(c, exposure));
            data.push(libm::floor(s * 255.0 + 0.5).clamp(0.0, 255.0) as u8);
        }
    }
    Srgb8Image {
        width: linear.width,
        height: linear.height,
        data,
    }
}
