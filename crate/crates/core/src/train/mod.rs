//! Annotation of random materials and the semi-supervised training loop.
//!
//! Gradients reach the weights through the latent. Reconstruction terms and
//! the material L1 term are differentiated analytically; the terms that pass
//! through rendering and image embedding are differentiated by central finite
//! differences at the 8-dimensional latent.

mod gradient;
mod loss;

pub use gradient::{estimate_latent_gradient, DEFAULT_EPSILON};
pub use loss::{
    clip_sim_loss, l1_subgradient, params_l1, supervised_loss, unsupervised_loss, SupervisedLoss,
    UnsupervisedForm, UnsupervisedLoss,
};

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::brdf::{sample_random_material, MaterialFull, MaterialParams, PARAM_COUNT};
use crate::embedding::{cosine_sim, l1_distance, Embedding};
use crate::error::{Error, ProviderError, Result};
use crate::math::mix_seed;
use crate::nn::{Autoencoder, Gradients, Sgd};
use crate::provider::EmbeddingProvider;
use crate::render::{render_sphere, tonemap, RenderConfig};
use crate::vectordb::{post_process, ValueTables, VectorDb, DEFAULT_BETA};

/// One annotated training pair.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SupervisedSample {
    pub seed: u64,
    pub material: MaterialFull,
    pub prompt_text: String,
    /// Unit-norm embedding of `prompt_text`.
    pub z_text: Embedding,
    /// Embedding of the render of `material`.
    pub z_image: Embedding,
    /// Cosine similarity between `z_image` and `z_text`.
    pub w: f64,
}

/// Appearance of the random materials handed to the annotator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AnnotationAppearance {
    /// Base color, IOR and opacity drawn with the parameters.
    #[default]
    Sampled,
    /// Grey base color, IOR 1.5, fully opaque.
    Neutral,
}

fn embed_material<P: EmbeddingProvider + ?Sized>(
    provider: &P,
    material: &MaterialFull,
    config: &RenderConfig,
) -> Result<Embedding, ProviderError> {
    let linear = render_sphere(material, config)
        .map_err(|e| ProviderError::Failed(alloc::format!("{e}")))?;
    provider.embed_image(&tonemap(&linear, config.exposure))
}

/// Renders the material drawn from `seed` and labels it with the best
/// matching prompt of `prompt_db`.
pub fn annotate<P: EmbeddingProvider + ?Sized>(
    seed: u64,
    prompt_db: &VectorDb,
    config: &RenderConfig,
    provider: &P,
    appearance: AnnotationAppearance,
) -> Result<SupervisedSample> {
    if prompt_db.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let mut material = sample_random_material(seed);
    if appearance == AnnotationAppearance::Neutral {
        material = MaterialFull::with_neutral_appearance(material.params);
    }
    let z_image = embed_material(provider, &material, config)
        .map_err(|source| Error::Annotation { seed, source })?;
    let (index, w) = prompt_db.ranked(&z_image, 1)?[0];
    let entry = &prompt_db.entries()[index];
    Ok(SupervisedSample {
        seed,
        material,
        prompt_text: entry.text.clone(),
        z_text: entry.embedding.clone(),
        z_image,
        w,
    })
}

/// Per-term multipliers on the objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LossWeights {
    pub clip_sim: f64,
    pub text_recon: f64,
    pub image_recon: f64,
    pub material: f64,
    pub similarity: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            clip_sim: 1.0,
            text_recon: 1.0,
            image_recon: 1.0,
            material: 1.0,
            similarity: 1.0,
        }
    }
}

/// Order of supervised and unsupervised batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Schedule {
    /// One supervised batch followed by `ratio` unsupervised batches, repeated.
    Alternating {
        ratio: u32,
    },
    SupervisedOnly,
    /// Supervised for the first `supervised_steps` steps, unsupervised after.
    Sequential {
        supervised_steps: u64,
    },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Alternating { ratio: 1 }
    }
}

impl Schedule {
    pub fn kind_at(&self, step: u64) -> BatchKind {
        match *self {
            Schedule::SupervisedOnly => BatchKind::Supervised,
            Schedule::Alternating { ratio } => {
                if step.is_multiple_of(ratio as u64 + 1) {
                    BatchKind::Supervised
                } else {
                    BatchKind::Unsupervised
                }
            }
            Schedule::Sequential { supervised_steps } => {
                if step < supervised_steps {
                    BatchKind::Supervised
                } else {
                    BatchKind::Unsupervised
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BatchKind {
    Supervised,
    Unsupervised,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    /// Master seed; every step derives its own stream from it.
    pub seed: u64,
    pub steps: u64,
    pub supervised_batch: usize,
    pub unsupervised_batch: usize,
    pub schedule: Schedule,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epsilon: f64,
    pub weights: LossWeights,
    pub unsupervised_form: UnsupervisedForm,
    /// When false, only the analytic paths contribute gradients.
    pub image_terms: bool,
    pub annotation_appearance: AnnotationAppearance,
    pub render: RenderConfig,
    /// Neighbours blended by appearance retrieval during unsupervised steps.
    pub retrieval_k: usize,
    pub retrieval_beta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            steps: 2000,
            supervised_batch: 4,
            unsupervised_batch: 4,
            schedule: Schedule::default(),
            learning_rate: 1e-3,
            momentum: 0.9,
            epsilon: DEFAULT_EPSILON,
            weights: LossWeights::default(),
            unsupervised_form: UnsupervisedForm::default(),
            image_terms: true,
            annotation_appearance: AnnotationAppearance::default(),
            render: RenderConfig::with_size(64, 64),
            retrieval_k: 3,
            retrieval_beta: DEFAULT_BETA,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.supervised_batch == 0 || self.unsupervised_batch == 0 {
            return bad("batch sizes must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return bad("epsilon must lie in (0, 0.5)");
        }
        if self.retrieval_k == 0 {
            return bad("retrieval_k must be positive");
        }
        if let Schedule::Alternating { ratio: 0 } = self.schedule {
            return bad("alternating ratio must be positive");
        }
        self.render.validate()
    }
}

/// Losses of one step, averaged over the batch.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepMetrics {
    pub step: u64,
    pub kind: BatchKind,
    /// Weighted objective that drove the update.
    pub loss: f64,
    pub supervised: Option<SupervisedLoss>,
    pub unsupervised: Option<UnsupervisedLoss>,
    /// Unsupervised objective under both readings of the similarity term.
    pub unsupervised_dissimilarity: Option<f64>,
    pub unsupervised_literal: Option<f64>,
    pub w_mean: Option<f64>,
    pub w_min: Option<f64>,
    pub w_max: Option<f64>,
}

/// Gradient and losses of a single sample.
#[derive(Debug, Clone)]
pub struct SampleGradient {
    pub gradients: Gradients<f32>,
    /// Weighted objective.
    pub loss: f64,
    /// Gradient of the weighted objective at the latent.
    pub latent_gradient: [f64; PARAM_COUNT],
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn latent_params(latent: &[f32]) -> Result<MaterialParams> {
    if latent.len() != PARAM_COUNT {
        return Err(Error::DimensionMismatch {
            expected: PARAM_COUNT,
            found: latent.len(),
        });
    }
    let mut p = [0.0; PARAM_COUNT];
    for (d, s) in p.iter_mut().zip(latent) {
        *d = (*s as f64).clamp(0.0, 1.0);
    }
    MaterialParams::from_array(p)
}

fn output_grad(pred: &[f32], target: &Embedding, weight: f64) -> Vec<f32> {
    pred.iter()
        .zip(target.as_slice())
        .map(|(&p, &t)| (weight * l1_subgradient(p as f64, t as f64)) as f32)
        .collect()
}

/// Model weights, optimizer state and the data the loop draws from.
pub struct Trainer<P> {
    model: Autoencoder<f32>,
    optimizer: Sgd<f32>,
    config: TrainConfig,
    provider: P,
    prompt_db: VectorDb,
    prompts: Vec<String>,
    value_tables: Option<ValueTables>,
    annotations: Option<Vec<SupervisedSample>>,
    step: u64,
}

impl<P: EmbeddingProvider> Trainer<P> {
    /// `prompt_db` labels annotations; `prompts` feed unsupervised batches.
    pub fn new(
        model: Autoencoder<f32>,
        config: TrainConfig,
        provider: P,
        prompt_db: VectorDb,
        prompts: Vec<String>,
    ) -> Result<Self> {
        config.validate()?;
        if prompt_db.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        if prompts.is_empty() {
            return Err(Error::EmptyInput("prompts"));
        }
        let dim = model.shape().input_dim();
        for d in [prompt_db.dim(), provider.dim(), model.shape().output_dim()] {
            if d != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: d,
                });
            }
        }
        if model.shape().latent_dim() != PARAM_COUNT {
            return Err(Error::DimensionMismatch {
                expected: PARAM_COUNT,
                found: model.shape().latent_dim(),
            });
        }
        let optimizer = Sgd::new(&model, config.learning_rate as f32, config.momentum as f32);
        Ok(Trainer {
            model,
            optimizer,
            config,
            provider,
            prompt_db,
            prompts,
            value_tables: None,
            annotations: None,
            step: 0,
        })
    }

    /// Appearance retrieval for unsupervised renders; neutral otherwise.
    pub fn with_value_tables(mut self, tables: ValueTables) -> Self {
        self.value_tables = Some(tables);
        self
    }

    /// Draw supervised samples from a precomputed set instead of annotating
    /// online.
    pub fn with_annotations(mut self, samples: Vec<SupervisedSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("annotations"));
        }
        self.annotations = Some(samples);
        Ok(self)
    }

    /// Restores a saved step counter and optimizer velocity.
    pub fn resume(mut self, step: u64, velocity: Vec<f32>) -> Result<Self> {
        self.optimizer.set_velocity(velocity)?;
        self.step = step;
        Ok(self)
    }

    pub fn model(&self) -> &Autoencoder<f32> {
        &self.model
    }

    pub fn into_model(self) -> Autoencoder<f32> {
        self.model
    }

    pub fn velocity(&self) -> &[f32] {
        self.optimizer.velocity()
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn provider(&self) -> &P {
        &self.provider
    }

    fn render_embedding(&self, material: &MaterialFull) -> Result<Embedding, ProviderError> {
        embed_material(&self.provider, material, &self.config.render)
    }

    /// Image-dependent part of the supervised objective.
    fn supervised_image_loss(
        &self,
        sample: &SupervisedSample,
        params: &MaterialParams,
    ) -> Result<(f64, f64, Embedding), ProviderError> {
        let material = MaterialFull {
            params: *params,
            ..sample.material
        };
        let z = self.render_embedding(&material)?;
        let failed = |e: Error| ProviderError::Failed(alloc::format!("{e}"));
        let clip = clip_sim_loss(&sample.z_text, &z, sample.w).map_err(failed)?;
        let recon = l1_distance(&z, &sample.z_image).map_err(failed)?;
        Ok((clip, recon, z))
    }

    /// Gradient of the weighted supervised objective for one sample.
    pub fn supervised_gradient(
        &self,
        sample: &SupervisedSample,
    ) -> Result<(SampleGradient, SupervisedLoss)> {
        let w = self.config.weights;
        let x = sample.z_text.as_slice();
        let cache = self.model.forward(x)?;
        let params = latent_params(cache.latent())?;
        let z_text_pred = Embedding::new(cache.output().to_vec());
        let m = sample.material.params;

        let (clip, image_recon, _) = self.supervised_image_loss(sample, &params)?;
        let terms = SupervisedLoss {
            clip_sim: clip,
            text_recon: l1_distance(&z_text_pred, &sample.z_text)?,
            image_recon,
            material: params_l1(&params, &m),
        };

        let mut latent = [0.0; PARAM_COUNT];
        let (pa, ma) = (params.to_array(), m.to_array());
        for i in 0..PARAM_COUNT {
            latent[i] = w.material * l1_subgradient(pa[i], ma[i]);
        }
        if self.config.image_terms && (w.clip_sim != 0.0 || w.image_recon != 0.0) {
            let g = estimate_latent_gradient(
                &params,
                |p| {
                    let (c, r, _) = self.supervised_image_loss(sample, p)?;
                    Ok(w.clip_sim * c + w.image_recon * r)
                },
                self.config.epsilon,
            )?;
            latent.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        let grad_out = output_grad(cache.output(), &sample.z_text, w.text_recon);
        let gradients = self.model.backward(&cache, &to_f32(&latent), &grad_out)?;
        let loss = w.clip_sim * terms.clip_sim
            + w.text_recon * terms.text_recon
            + w.image_recon * terms.image_recon
            + w.material * terms.material;
        Ok((
            SampleGradient {
                gradients,
                loss,
                latent_gradient: latent,
            },
            terms,
        ))
    }

    fn unsupervised_material(
        &self,
        z_text: &Embedding,
        params: MaterialParams,
    ) -> Result<MaterialFull> {
        let mut m = MaterialFull::with_neutral_appearance(params);
        if let Some(tables) = &self.value_tables {
            let a = post_process(
                z_text,
                tables,
                self.config.retrieval_k,
                self.config.retrieval_beta,
            )?;
            m.base_color = a.base_color;
            m.ior = a.ior;
            m.opacity = a.opacity;
        }
        Ok(m)
    }

    fn similarity_at(
        &self,
        z_text: &Embedding,
        template: &MaterialFull,
        params: &MaterialParams,
    ) -> Result<f64, ProviderError> {
        let z = self.render_embedding(&MaterialFull {
            params: *params,
            ..*template
        })?;
        cosine_sim(z_text, &z).map_err(|e| ProviderError::Failed(alloc::format!("{e}")))
    }

    /// Gradient of the weighted unsupervised objective for one prompt.
    pub fn unsupervised_gradient(
        &self,
        prompt: &str,
    ) -> Result<(SampleGradient, UnsupervisedLoss)> {
        let w = self.config.weights;
        let z_text = self.provider.embed_text(prompt)?.normalized()?;
        let cache = self.model.forward(z_text.as_slice())?;
        let params = latent_params(cache.latent())?;
        let template = self.unsupervised_material(&z_text, params)?;
        let z_text_pred = Embedding::new(cache.output().to_vec());
        let terms = UnsupervisedLoss {
            similarity: self.similarity_at(&z_text, &template, &params)?,
            text_recon: l1_distance(&z_text_pred, &z_text)?,
        };
        let sign = match self.config.unsupervised_form {
            UnsupervisedForm::Dissimilarity => -1.0,
            UnsupervisedForm::Literal => 1.0,
        };
        let mut latent = [0.0; PARAM_COUNT];
        if self.config.image_terms && w.similarity != 0.0 {
            latent = estimate_latent_gradient(
                &params,
                |p| Ok(sign * w.similarity * self.similarity_at(&z_text, &template, p)?),
                self.config.epsilon,
            )?;
        }
        let grad_out = output_grad(cache.output(), &z_text, w.text_recon);
        let gradients = self.model.backward(&cache, &to_f32(&latent), &grad_out)?;
        let similarity_term = match self.config.unsupervised_form {
            UnsupervisedForm::Dissimilarity => 1.0 - terms.similarity,
            UnsupervisedForm::Literal => terms.similarity,
        };
        let loss = w.similarity * similarity_term + w.text_recon * terms.text_recon;
        Ok((
            SampleGradient {
                gradients,
                loss,
                latent_gradient: latent,
            },
            terms,
        ))
    }

    fn supervised_sample(&self, rng: &mut ChaCha8Rng) -> Result<SupervisedSample> {
        match &self.annotations {
            Some(samples) => Ok(samples[rng.random_range(0..samples.len())].clone()),
            None => annotate(
                rng.next_u64(),
                &self.prompt_db,
                &self.config.render,
                &self.provider,
                self.config.annotation_appearance,
            ),
        }
    }

    /// Runs one batch and applies the update. On error the weights, optimizer
    /// and step counter are left untouched, so the step can be retried.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let step = self.step;
        let kind = self.config.schedule.kind_at(step);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.config.seed, step));
        let mut total = Gradients::zeros_like(&self.model);
        let mut loss = 0.0;
        let mut metrics = StepMetrics {
            step,
            kind,
            loss: 0.0,
            supervised: None,
            unsupervised: None,
            unsupervised_dissimilarity: None,
            unsupervised_literal: None,
            w_mean: None,
            w_min: None,
            w_max: None,
        };
        let batch = match kind {
            BatchKind::Supervised => self.config.supervised_batch,
            BatchKind::Unsupervised => self.config.unsupervised_batch,
        };
        let inv = 1.0 / batch as f64;
        match kind {
            BatchKind::Supervised => {
                let mut sum = SupervisedLoss::default();
                let (mut w_sum, mut w_min, mut w_max) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
                for _ in 0..batch {
                    let sample = self.supervised_sample(&mut rng)?;
                    let (g, terms) = self.supervised_gradient(&sample)?;
                    total.accumulate(&g.gradients);
                    loss += g.loss;
                    sum.clip_sim += terms.clip_sim;
                    sum.text_recon += terms.text_recon;
                    sum.image_recon += terms.image_recon;
                    sum.material += terms.material;
                    w_sum += sample.w;
                    w_min = w_min.min(sample.w);
                    w_max = w_max.max(sample.w);
                }
                metrics.supervised = Some(SupervisedLoss {
                    clip_sim: sum.clip_sim * inv,
                    text_recon: sum.text_recon * inv,
                    image_recon: sum.image_recon * inv,
                    material: sum.material * inv,
                });
                metrics.w_mean = Some(w_sum * inv);
                metrics.w_min = Some(w_min);
                metrics.w_max = Some(w_max);
            }
            BatchKind::Unsupervised => {
                let mut sum = UnsupervisedLoss::default();
                for _ in 0..batch {
                    let prompt = &self.prompts[rng.random_range(0..self.prompts.len())];
                    let (g, terms) = self.unsupervised_gradient(prompt)?;
                    total.accumulate(&g.gradients);
                    loss += g.loss;
                    sum.similarity += terms.similarity;
                    sum.text_recon += terms.text_recon;
                }
                let mean = UnsupervisedLoss {
                    similarity: sum.similarity * inv,
                    text_recon: sum.text_recon * inv,
                };
                metrics.unsupervised_dissimilarity =
                    Some(mean.total(UnsupervisedForm::Dissimilarity));
                metrics.unsupervised_literal = Some(mean.total(UnsupervisedForm::Literal));
                metrics.unsupervised = Some(mean);
            }
        }
        total.scale(inv as f32);
        if !loss.is_finite() || !total.is_finite() {
            return Err(Error::Diverged { step });
        }
        self.optimizer.step(&mut self.model, &total);
        self.step += 1;
        metrics.loss = loss * inv;
        Ok(metrics)
    }

    /// Steps until the configured count, reporting each step to `observe`.
    pub fn run(&mut self, mut observe: impl FnMut(&StepMetrics)) -> Result<()> {
        while self.step < self.config.steps {
            let m = self.step()?;
            observe(&m);
        }
        Ok(())
    }
}

/// Outcome of a round-trip check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundTrip {
    pub hits: usize,
    pub total: usize,
}

impl RoundTrip {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.hits as f64 / self.total as f64
        }
    }
}

/// Counts prompts whose predicted material, rendered with the neutral
/// appearance, embeds nearest to the prompt itself in `prompt_db`.
pub fn round_trip_consistency<P: EmbeddingProvider + ?Sized>(
    model: &Autoencoder<f32>,
    provider: &P,
    prompt_db: &VectorDb,
    prompts: &[String],
    config: &RenderConfig,
) -> Result<RoundTrip> {
    let mut hits = 0;
    for prompt in prompts {
        let z = provider.embed_text(prompt)?.normalized()?;
        let params = latent_params(&model.encode(z.as_slice())?)?;
        let material = MaterialFull::with_neutral_appearance(params);
        let zi = embed_material(provider, &material, config)?;
        let (index, _) = prompt_db.ranked(&zi, 1)?[0];
        if prompt_db.entries()[index].text == *prompt {
            hits += 1;
        }
    }
    Ok(RoundTrip {
        hits,
        total: prompts.len(),
    })
}

/// Latent of a unit embedding read as material parameters.
pub fn encode_params(model: &Autoencoder<f32>, z: &Embedding) -> Result<MaterialParams> {
    latent_params(&model.encode(z.as_slice())?)
}
