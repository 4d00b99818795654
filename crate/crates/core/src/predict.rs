//! Prompt to material inference.

use alloc::string::String;

use crate::brdf::{MaterialFull, MaterialParams};
use crate::embedding::Embedding;
use crate::error::Result;
use crate::nn::Autoencoder;
use crate::provider::EmbeddingProvider;
use crate::train::encode_params;
use crate::vectordb::{post_process, Appearance, ValueTables, DEFAULT_BETA};

/// Where base color, IOR and opacity come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AppearanceMode {
    /// Retrieved from the value tables, neutral when none are loaded.
    #[default]
    Retrieved,
    /// Always grey base color, IOR 1.5 and full opacity.
    Grey,
}

/// Default number of neighbours blended during appearance retrieval.
pub const DEFAULT_RETRIEVAL_K: usize = 3;

/// Read-only inference bundle.
#[derive(Debug, Clone)]
pub struct Predictor<P> {
    model: Autoencoder<f32>,
    provider: P,
    tables: Option<ValueTables>,
    k: usize,
    beta: f64,
    mode: AppearanceMode,
}

/// A prediction with its intermediate values.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub prompt: String,
    pub z_text: Embedding,
    pub material: MaterialFull,
}

impl<P: EmbeddingProvider> Predictor<P> {
    pub fn new(model: Autoencoder<f32>, provider: P) -> Self {
        Predictor {
            model,
            provider,
            tables: None,
            k: DEFAULT_RETRIEVAL_K,
            beta: DEFAULT_BETA,
            mode: AppearanceMode::default(),
        }
    }

    pub fn with_tables(mut self, tables: ValueTables) -> Self {
        self.tables = Some(tables);
        self
    }

    pub fn with_retrieval(mut self, k: usize, beta: f64) -> Self {
        self.k = k.max(1);
        self.beta = beta;
        self
    }

    pub fn with_mode(mut self, mode: AppearanceMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn mode(&self) -> AppearanceMode {
        self.mode
    }

    pub fn model(&self) -> &Autoencoder<f32> {
        &self.model
    }

    pub fn provider(&self) -> &P {
        &self.provider
    }

    pub fn tables(&self) -> Option<&ValueTables> {
        self.tables.as_ref()
    }

    /// Unit-norm text embedding of `prompt`.
    pub fn embed(&self, prompt: &str) -> Result<Embedding> {
        self.provider.embed_text(prompt)?.normalized()
    }

    /// Encoder stage alone.
    pub fn encode(&self, z_text: &Embedding) -> Result<MaterialParams> {
        encode_params(&self.model, z_text)
    }

    /// Appearance stage alone.
    pub fn appearance(&self, z_text: &Embedding) -> Result<Appearance> {
        let neutral = Appearance {
            base_color: MaterialFull::NEUTRAL_BASE_COLOR,
            ior: MaterialFull::NEUTRAL_IOR,
            opacity: 1.0,
        };
        match (self.mode, &self.tables) {
            (AppearanceMode::Retrieved, Some(t)) => post_process(z_text, t, self.k, self.beta),
            _ => Ok(neutral),
        }
    }

    pub fn assemble(params: MaterialParams, appearance: Appearance) -> MaterialFull {
        MaterialFull {
            params,
            base_color: appearance.base_color,
            ior: appearance.ior,
            opacity: appearance.opacity,
        }
    }

    pub fn predict_embedding(&self, z_text: &Embedding) -> Result<MaterialFull> {
        Ok(Self::assemble(
            self.encode(z_text)?,
            self.appearance(z_text)?,
        ))
    }

    pub fn predict(&self, prompt: &str) -> Result<Prediction> {
        let z_text = self.embed(prompt)?;
        let material = self.predict_embedding(&z_text)?;
        Ok(Prediction {
            prompt: prompt.into(),
            z_text,
            material,
        })
    }
}
