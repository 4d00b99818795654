//! Embedding providers: the contract and the built-in deterministic mock.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::brdf::MaterialFull;
use crate::embedding::Embedding;
use crate::error::{Error, ProviderError, Result};
use crate::render::{render_sphere, tonemap, RenderConfig, Srgb8Image};

/// Source of text and image embeddings sharing one space.
///
/// Implementations must be deterministic for identical input and always
/// return vectors of [`dim`](Self::dim) components.
pub trait EmbeddingProvider {
    fn dim(&self) -> usize;
    /// Identifier recorded in checkpoints and health reports.
    fn name(&self) -> String;
    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError>;
    /// The image is the tonemapped 8-bit raster (what a PNG preview carries).
    fn embed_image(&self, image: &Srgb8Image) -> Result<Embedding, ProviderError>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn name(&self) -> String {
        (**self).name()
    }
    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError> {
        (**self).embed_text(text)
    }
    fn embed_image(&self, image: &Srgb8Image) -> Result<Embedding, ProviderError> {
        (**self).embed_image(image)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for alloc::boxed::Box<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn name(&self) -> String {
        (**self).name()
    }
    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError> {
        (**self).embed_text(text)
    }
    fn embed_image(&self, image: &Srgb8Image) -> Result<Embedding, ProviderError> {
        (**self).embed_image(image)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for alloc::sync::Arc<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn name(&self) -> String {
        (**self).name()
    }
    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError> {
        (**self).embed_text(text)
    }
    fn embed_image(&self, image: &Srgb8Image) -> Result<Embedding, ProviderError> {
        (**self).embed_image(image)
    }
}

/// Side of the square grid of area-averaged image cells.
pub const MOCK_GRID: usize = 8;
const FEATURES: usize = MOCK_GRID * MOCK_GRID * 3;
const ADJECTIVE_WEIGHT: f64 = 0.6;
const BIGRAM_WEIGHT: f64 = 0.2;
// keeps the baseline image itself away from the zero vector
const BASELINE_OFFSET: f64 = 0.01;

fn seeded_rng(seed: u64, label: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

fn gaussian_vector(seed: u64, label: &str, dim: usize) -> Vec<f64> {
    let mut rng = seeded_rng(seed, label);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn to_unit(v: &[f64]) -> Result<Embedding, ProviderError> {
    let n = libm::sqrt(v.iter().map(|x| x * x).sum());
    if !(n > 0.0) || !n.is_finite() {
        return Err(ProviderError::Failed("degenerate embedding".into()));
    }
    Ok(Embedding::new(v.iter().map(|x| (x / n) as f32).collect()))
}

/// Deterministic stand-in for a joint text/image embedder.
///
/// Text: words are split on whitespace; each word maps to a Gaussian vector
/// keyed by `sha256(seed, word)`. The last word (the noun) has weight 1, the
/// others 0.6, and each adjacent word pair adds a 0.2-weighted bigram
/// vector, so word order matters slightly. The sum is normalized.
///
/// Image: the raster is area-averaged onto an 8x8 grid per channel (values
/// in `[0, 1]`), an optional baseline feature vector is subtracted (leaving a
/// 0.01 offset in every cell), and the
/// result is multiplied by a fixed Gaussian matrix and normalized.
///
/// A rigged mock additionally maps chosen prompts to the image embedding of
/// a chosen material's render, so text and image embeddings coincide for a
/// known prompt/material table.
#[derive(Debug, Clone)]
pub struct MockProvider {
    dim: usize,
    seed: u64,
    projection: Vec<f64>,
    baseline: Option<Vec<f64>>,
    rigged: BTreeMap<String, Embedding>,
}

impl MockProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        let scale = 1.0 / libm::sqrt(FEATURES as f64);
        let projection = gaussian_vector(seed, "\u{0}image-projection", dim * FEATURES)
            .into_iter()
            .map(|v| v * scale)
            .collect();
        MockProvider {
            dim,
            seed,
            projection,
            baseline: None,
            rigged: BTreeMap::new(),
        }
    }

    /// Centers image features on those of `image`.
    pub fn with_baseline(mut self, image: &Srgb8Image) -> Self {
        self.baseline = Some(grid_features(image));
        self
    }

    /// Mock whose text embedding for each prompt equals the image embedding
    /// of its material rendered with `config`. The baseline is the render of
    /// the default grey material.
    pub fn rigged(
        dim: usize,
        seed: u64,
        table: &[(String, MaterialFull)],
        config: &RenderConfig,
    ) -> Result<Self> {
        let baseline = tonemap(
            &render_sphere(&MaterialFull::default(), config)?,
            config.exposure,
        );
        let mut mock = MockProvider::new(dim, seed).with_baseline(&baseline);
        for (text, material) in table {
            let img = tonemap(&render_sphere(material, config)?, config.exposure);
            let e = mock.embed_image(&img)?;
            mock.rigged.insert(text.clone(), e);
        }
        Ok(mock)
    }

    pub fn is_rigged(&self, text: &str) -> bool {
        self.rigged.contains_key(text)
    }

    fn text_vector(&self, text: &str) -> Vec<f64> {
        let words: Vec<&str> = text.split_whitespace().collect();
        let mut acc = alloc::vec![0.0; self.dim];
        for (i, w) in words.iter().enumerate() {
            let weight = if i + 1 == words.len() {
                1.0
            } else {
                ADJECTIVE_WEIGHT
            };
            let g = gaussian_vector(self.seed, w, self.dim);
            acc.iter_mut().zip(g).for_each(|(a, v)| *a += weight * v);
        }
        for pair in words.windows(2) {
            let mut label = pair[0].to_string();
            label.push('\u{1}');
            label.push_str(pair[1]);
            let g = gaussian_vector(self.seed, &label, self.dim);
            acc.iter_mut()
                .zip(g)
                .for_each(|(a, v)| *a += BIGRAM_WEIGHT * v);
        }
        acc
    }
}

/// Area-averaged 8x8x3 grid of the raster, values in `[0, 1]`.
pub fn grid_features(image: &Srgb8Image) -> Vec<f64> {
    let mut out = Vec::with_capacity(FEATURES);
    for gy in 0..MOCK_GRID {
        let (y0, y1) = (
            gy * image.height / MOCK_GRID,
            (gy + 1) * image.height / MOCK_GRID,
        );
        for gx in 0..MOCK_GRID {
            let (x0, x1) = (
                gx * image.width / MOCK_GRID,
                (gx + 1) * image.width / MOCK_GRID,
            );
            let mut acc = [0.0f64; 3];
            let mut n = 0usize;
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = (y * image.width + x) * 3;
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += image.data[p + c] as f64;
                    }
                    n += 1;
                }
            }
            let n = n.max(1) as f64 * 255.0;
            out.extend(acc.iter().map(|a| a / n));
        }
    }
    out
}

impl EmbeddingProvider for MockProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> String {
        alloc::format!("mock-{}-{}", self.dim, self.seed)
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError> {
        if let Some(e) = self.rigged.get(text) {
            return Ok(e.clone());
        }
        if text.split_whitespace().next().is_none() {
            return Err(ProviderError::Failed("empty text".into()));
        }
        to_unit(&self.text_vector(text))
    }

    fn embed_image(&self, image: &Srgb8Image) -> Result<Embedding, ProviderError> {
        if image.width < MOCK_GRID
            || image.height < MOCK_GRID
            || image.data.len() != image.width * image.height * 3
        {
            return Err(ProviderError::Failed("image too small or malformed".into()));
        }
        let mut f = grid_features(image);
        if let Some(b) = &self.baseline {
            f.iter_mut()
                .zip(b)
                .for_each(|(x, y)| *x += BASELINE_OFFSET - y);
        }
        let mut v = alloc::vec![0.0; self.dim];
        for (row, out) in self.projection.chunks_exact(FEATURES).zip(v.iter_mut()) {
            *out = row.iter().zip(&f).map(|(a, b)| a * b).sum();
        }
        to_unit(&v)
    }
}

/// Embeds every prompt into a database with empty payloads.
pub fn embed_prompts<P: EmbeddingProvider + ?Sized>(
    provider: &P,
    prompts: &[String],
) -> Result<crate::vectordb::VectorDb> {
    let mut db = crate::vectordb::VectorDb::new(provider.dim(), 0);
    for p in prompts {
        let e = provider.embed_text(p)?;
        if e.dim() != provider.dim() {
            return Err(Error::DimensionMismatch {
                expected: provider.dim(),
                found: e.dim(),
            });
        }
        db.insert(p.clone(), &e, Vec::new())?;
    }
    Ok(db)
}
