//! Training losses.
//!
//! L1 terms are sums (not means) of absolute componentwise differences.

use crate::brdf::MaterialParams;
use crate::embedding::{cosine_sim, l1_distance, Embedding};
use crate::error::Result;

/// `1 - (sim(z_text, z_image_pred) - w)`.
pub fn clip_sim_loss(z_text: &Embedding, z_image_pred: &Embedding, w: f64) -> Result<f64> {
    Ok(clip_sim_from_similarity(
        cosine_sim(z_text, z_image_pred)?,
        w,
    ))
}

pub(crate) fn clip_sim_from_similarity(sim: f64, w: f64) -> f64 {
    1.0 - (sim - w)
}

pub fn params_l1(a: &MaterialParams, b: &MaterialParams) -> f64 {
    a.to_array()
        .iter()
        .zip(b.to_array())
        .map(|(x, y)| (x - y).abs())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SupervisedLoss {
    pub clip_sim: f64,
    pub text_recon: f64,
    pub image_recon: f64,
    pub material: f64,
}

impl SupervisedLoss {
    pub fn total(&self) -> f64 {
        self.clip_sim + self.text_recon + self.image_recon + self.material
    }
}

/// `CLIP_sim(z_T, z^_I, w) + |z^_T - z_T|_1 + |z^_I - z_I|_1 + |m^ - m|_1`.
pub fn supervised_loss(
    z_text: &Embedding,
    z_image: &Embedding,
    w: f64,
    m: &MaterialParams,
    z_text_pred: &Embedding,
    z_image_pred: &Embedding,
    m_pred: &MaterialParams,
) -> Result<SupervisedLoss> {
    Ok(SupervisedLoss {
        clip_sim: clip_sim_loss(z_text, z_image_pred, w)?,
        text_recon: l1_distance(z_text_pred, z_text)?,
        image_recon: l1_distance(z_image_pred, z_image)?,
        material: params_l1(m_pred, m),
    })
}

/// Which reading of the unsupervised objective drives the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum UnsupervisedForm {
    /// `(1 - sim(z_T, z^_I)) + |z^_T - z_T|_1`: minimizing pulls the render
    /// towards the prompt.
    #[default]
    Dissimilarity,
    /// `sim(z_T, z^_I) + |z^_T - z_T|_1` taken literally.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UnsupervisedLoss {
    pub similarity: f64,
    pub text_recon: f64,
}

impl UnsupervisedLoss {
    pub fn total(&self, form: UnsupervisedForm) -> f64 {
        match form {
            UnsupervisedForm::Dissimilarity => (1.0 - self.similarity) + self.text_recon,
            UnsupervisedForm::Literal => self.similarity + self.text_recon,
        }
    }
}

pub fn unsupervised_loss(
    z_text: &Embedding,
    z_text_pred: &Embedding,
    z_image_pred: &Embedding,
) -> Result<UnsupervisedLoss> {
    Ok(UnsupervisedLoss {
        similarity: cosine_sim(z_text, z_image_pred)?,
        text_recon: l1_distance(z_text_pred, z_text)?,
    })
}

/// Subgradient of `|x - target|` with 0 at the tie.
pub fn l1_subgradient(x: f64, target: f64) -> f64 {
    if x > target {
        1.0
    } else if x < target {
        -1.0
    } else {
        0.0
    }
}
