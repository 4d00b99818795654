//! Exact nearest-neighbour vector database with value payloads, and the
//! retrieval of base color, IOR and opacity for a prompt.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::brdf::{MAX_IOR, MIN_IOR};
use crate::embedding::{cosine_sim, Embedding};
use crate::error::{Error, Result};
use crate::math::saturate;

/// Default exponent of the similarity weighting kernel.
pub const DEFAULT_BETA: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct VectorDbEntry {
    pub text: String,
    /// Unit length.
    pub embedding: Embedding,
    pub payload: Vec<f32>,
}

/// Immutable-after-build collection of normalized embeddings with payloads.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorDb {
    dim: usize,
    payload_width: usize,
    entries: Vec<VectorDbEntry>,
}

impl VectorDb {
    pub fn new(dim: usize, payload_width: usize) -> Self {
        VectorDb {
            dim,
            payload_width,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn payload_width(&self) -> usize {
        self.payload_width
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[VectorDbEntry] {
        &self.entries
    }

    /// Appends an entry; the embedding is normalized on the way in.
    pub fn insert(
        &mut self,
        text: impl Into<String>,
        embedding: &Embedding,
        payload: Vec<f32>,
    ) -> Result<()> {
        let text = text.into();
        if text.is_empty() {
            return Err(Error::EmptyInput("entry text"));
        }
        if embedding.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: embedding.dim(),
            });
        }
        if payload.len() != self.payload_width {
            return Err(Error::PayloadShape {
                expected: self.payload_width,
                found: payload.len(),
            });
        }
        self.entries.push(VectorDbEntry {
            text,
            embedding: embedding.normalized()?,
            payload,
        });
        Ok(())
    }

    /// Appends an entry whose embedding is already unit length (snapshot loading).
    pub fn insert_normalized(&mut self, entry: VectorDbEntry) -> Result<()> {
        if entry.embedding.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: entry.embedding.dim(),
            });
        }
        if entry.payload.len() != self.payload_width {
            return Err(Error::PayloadShape {
                expected: self.payload_width,
                found: entry.payload.len(),
            });
        }
        if entry.text.is_empty() {
            return Err(Error::EmptyInput("entry text"));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn position(&self, text: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.text == text)
    }

    /// Exact top-`k` by cosine similarity, descending; ties keep insertion order.
    pub fn query_topk(&self, query: &Embedding, k: usize) -> Result<Vec<(&VectorDbEntry, f64)>> {
        Ok(self
            .ranked(query, k)?
            .into_iter()
            .map(|(i, s)| (&self.entries[i], s))
            .collect())
    }

    /// Like [`query_topk`](Self::query_topk) but returns entry indices.
    pub fn ranked(&self, query: &Embedding, k: usize) -> Result<Vec<(usize, f64)>> {
        if self.entries.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        if k == 0 || k > self.entries.len() {
            return Err(Error::KOutOfRange {
                k,
                len: self.entries.len(),
            });
        }
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: query.dim(),
            });
        }
        let mut scored = Vec::with_capacity(self.entries.len());
        for (i, e) in self.entries.iter().enumerate() {
            scored.push((i, cosine_sim(query, &e.embedding)?));
        }
        if k == 1 {
            // first maximum, same as the stable sort below
            let best = scored
                .iter()
                .fold(scored[0], |best, &c| if c.1 > best.1 { c } else { best });
            return Ok(alloc::vec![best]);
        }
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal));
        scored.truncate(k);
        Ok(scored)
    }

    /// Similarity-weighted payload over the top `k` matches.
    ///
    /// Weights are `max(s_i, 0)^beta / sum_j max(s_j, 0)^beta`; when no
    /// similarity is positive the nearest payload is returned unchanged.
    pub fn weighted_value(&self, query: &Embedding, k: usize, beta: f64) -> Result<Vec<f64>> {
        let top = self.ranked(query, k)?;
        let weights: Vec<f64> = top
            .iter()
            .map(|(_, s)| libm::pow(s.max(0.0), beta))
            .collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Ok(self.entries[top[0].0]
                .payload
                .iter()
                .map(|&v| v as f64)
                .collect());
        }
        let mut out = alloc::vec![0.0; self.payload_width];
        for ((i, _), w) in top.iter().zip(&weights) {
            for (o, &v) in out.iter_mut().zip(&self.entries[*i].payload) {
                *o += w / total * v as f64;
            }
        }
        Ok(out)
    }
}

/// Retrieved appearance fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Appearance {
    pub base_color: [f64; 3],
    pub ior: f64,
    pub opacity: f64,
}

/// The three value databases consulted by [`post_process`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    pub color: VectorDb,
    pub ior: VectorDb,
    pub opacity: VectorDb,
}

/// Retrieves base color, IOR and opacity for a prompt embedding, clamped to
/// the material ranges.
pub fn post_process(
    prompt: &Embedding,
    tables: &ValueTables,
    k: usize,
    beta: f64,
) -> Result<Appearance> {
    if tables.color.payload_width() != 3 {
        return Err(Error::PayloadShape {
            expected: 3,
            found: tables.color.payload_width(),
        });
    }
    for db in [&tables.ior, &tables.opacity] {
        if db.payload_width() != 1 {
            return Err(Error::PayloadShape {
                expected: 1,
                found: db.payload_width(),
            });
        }
    }
    let clamp_k = |db: &VectorDb| k.min(db.len()).max(1);
    let c = tables
        .color
        .weighted_value(prompt, clamp_k(&tables.color), beta)?;
    let ior = tables
        .ior
        .weighted_value(prompt, clamp_k(&tables.ior), beta)?[0];
    let opacity = tables
        .opacity
        .weighted_value(prompt, clamp_k(&tables.opacity), beta)?[0];
    Ok(Appearance {
        base_color: [saturate(c[0]), saturate(c[1]), saturate(c[2])],
        ior: if ior.is_nan() {
            MIN_IOR
        } else {
            ior.clamp(MIN_IOR, MAX_IOR)
        },
        opacity: saturate(opacity),
    })
}
