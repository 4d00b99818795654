//! Image distances.
//!
//! The built-in desk metric compares two linear images on a
//! luminance/chroma pyramid. Each pixel is Reinhard-compressed per channel
//! (exposure 1) and mapped to `Y = 0.2126 r + 0.7152 g + 0.0722 b`,
//! `U = b - Y`, `V = r - Y`. Level 0 is the full-resolution plane set; each
//! further level blurs the previous one with a separable `[1, 2, 1] / 4`
//! kernel (edges clamped) and averages 4x4 blocks, stopping before either
//! side drops below one pixel. The distance is the mean over levels of the
//! per-level mean of `(|dY| + |dU| + |dV|) / 3`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::render::{reinhard, ImageBuffer};

/// A non-negative image distance.
pub trait ImageMetric {
    fn distance(&self, a: &ImageBuffer, b: &ImageBuffer) -> Result<f64>;
}

impl<M: ImageMetric + ?Sized> ImageMetric for &M {
    fn distance(&self, a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
        (**self).distance(a, b)
    }
}

/// The zero-dependency pyramid metric.
#[derive(Debug, Clone, Copy, Default)]
pub struct DeskMetric;

impl ImageMetric for DeskMetric {
    fn distance(&self, a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
        image_distance(a, b)
    }
}

#[derive(Clone)]
struct Planes {
    w: usize,
    h: usize,
    // Y, U, V interleaved per pixel
    px: Vec<[f64; 3]>,
}

fn to_planes(img: &ImageBuffer) -> Planes {
    let px = img
        .data
        .iter()
        .map(|c| {
            let r = reinhard(c[0], 1.0);
            let g = reinhard(c[1], 1.0);
            let b = reinhard(c[2], 1.0);
            let y = 0.2126 * r + 0.7152 * g + 0.0722 * b;
            [y, b - y, r - y]
        })
        .collect();
    Planes {
        w: img.width,
        h: img.height,
        px,
    }
}

fn blur(p: &Planes) -> Planes {
    let (w, h) = (p.w, p.h);
    let tap = |a: [f64; 3], b: [f64; 3], c: [f64; 3]| {
        [
            0.25 * a[0] + 0.5 * b[0] + 0.25 * c[0],
            0.25 * a[1] + 0.5 * b[1] + 0.25 * c[1],
            0.25 * a[2] + 0.5 * b[2] + 0.25 * c[2],
        ]
    };
    let mut tmp = Vec::with_capacity(w * h);
    for y in 0..h {
        let row = &p.px[y * w..(y + 1) * w];
        for x in 0..w {
            tmp.push(tap(
                row[x.saturating_sub(1)],
                row[x],
                row[(x + 1).min(w - 1)],
            ));
        }
    }
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let up = y.saturating_sub(1);
        let down = (y + 1).min(h - 1);
        for x in 0..w {
            out.push(tap(tmp[up * w + x], tmp[y * w + x], tmp[down * w + x]));
        }
    }
    Planes { w, h, px: out }
}

fn downsample4(p: &Planes) -> Planes {
    let (w, h) = (p.w / 4, p.h / 4);
    let mut px = Vec::with_capacity(w * h);
    for by in 0..h {
        for bx in 0..w {
            let mut acc = [0.0; 3];
            for y in by * 4..by * 4 + 4 {
                for x in bx * 4..bx * 4 + 4 {
                    let v = p.px[y * p.w + x];
                    acc[0] += v[0];
                    acc[1] += v[1];
                    acc[2] += v[2];
                }
            }
            px.push(acc.map(|a| a / 16.0));
        }
    }
    Planes { w, h, px }
}

fn level_distance(a: &Planes, b: &Planes) -> f64 {
    let sum: f64 =
        a.px.iter()
            .zip(&b.px)
            .map(|(p, q)| ((p[0] - q[0]).abs() + (p[1] - q[1]).abs() + (p[2] - q[2]).abs()) / 3.0)
            .sum();
    sum / a.px.len() as f64
}

/// Desk perceptual distance between two equally sized linear images.
pub fn image_distance(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch {
            expected: a.width * a.height,
            found: b.width * b.height,
        });
    }
    if a.data.is_empty() {
        return Ok(0.0);
    }
    let mut pa = to_planes(a);
    let mut pb = to_planes(b);
    let mut total = level_distance(&pa, &pb);
    let mut levels = 1;
    while pa.w >= 4 && pa.h >= 4 {
        pa = downsample4(&blur(&pa));
        pb = downsample4(&blur(&pb));
        total += level_distance(&pa, &pb);
        levels += 1;
    }
    Ok(total / levels as f64)
}
