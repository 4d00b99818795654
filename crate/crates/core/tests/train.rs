use std::collections::BTreeMap;

use matforge_core::brdf::{sample_random_material, MaterialFull, MaterialParams};
use matforge_core::embedding::{cosine_sim, Embedding};
use matforge_core::nn::{Autoencoder, ModelShape};
use matforge_core::provider::{embed_prompts, EmbeddingProvider, MockProvider};
use matforge_core::render::{render_sphere, tonemap, RenderConfig};
use matforge_core::text::build_prompt_corpus_range;
use matforge_core::train::*;
use matforge_core::vectordb::VectorDb;
use matforge_core::ProviderError;

fn cfg16() -> RenderConfig {
    RenderConfig::with_size(16, 16)
}

fn words(n: usize, prefix: &str) -> Vec<String> {
    (0..n)
        .map(|i| format!("{prefix}{}", (b'a' + (i % 26) as u8) as char).repeat(1) + &i.to_string())
        .collect()
}

#[test]
fn rigged_annotation_hits_exact_prompt() {
    let target = sample_random_material(77);
    let table = vec![
        ("gold".to_string(), target),
        ("slate".to_string(), sample_random_material(3)),
        ("velvet".to_string(), sample_random_material(4)),
    ];
    let provider = MockProvider::rigged(32, 1, &table, &cfg16()).unwrap();
    let prompts: Vec<String> = table.iter().map(|t| t.0.clone()).collect();
    let db = embed_prompts(&provider, &prompts).unwrap();
    let s = annotate(77, &db, &cfg16(), &provider, AnnotationAppearance::Sampled).unwrap();
    assert_eq!(s.prompt_text, "gold");
    assert!((s.w - 1.0).abs() < 1e-6, "{}", s.w);
    assert_eq!(s.material, target);
}

#[test]
fn annotation_frequencies_match_full_scan() {
    let provider = MockProvider::new(32, 8);
    let nouns = words(25, "n");
    let adjectives = words(10, "a");
    let prompts: Vec<String> = build_prompt_corpus_range(&nouns, &adjectives, 1, 1)
        .unwrap()
        .iter()
        .map(|p| p.full_text())
        .collect();
    assert_eq!(prompts.len(), 250);
    let db = embed_prompts(&provider, &prompts).unwrap();
    let mut got = BTreeMap::new();
    let mut scan = BTreeMap::new();
    for seed in 0..100 {
        let s = annotate(
            seed,
            &db,
            &cfg16(),
            &provider,
            AnnotationAppearance::Sampled,
        )
        .unwrap();
        assert!((-1.0..=1.0).contains(&s.w));
        *got.entry(s.prompt_text).or_insert(0) += 1;

        let m = sample_random_material(seed);
        let zi = provider
            .embed_image(&tonemap(&render_sphere(&m, &cfg16()).unwrap(), 1.0))
            .unwrap();
        let mut best = (f64::NEG_INFINITY, String::new());
        for p in &prompts {
            let sim = cosine_sim(&provider.embed_text(p).unwrap(), &zi).unwrap();
            if sim > best.0 {
                best = (sim, p.clone());
            }
        }
        *scan.entry(best.1).or_insert(0) += 1;
    }
    assert_eq!(got, scan);
}

struct Failing;

impl EmbeddingProvider for Failing {
    fn dim(&self) -> usize {
        4
    }
    fn name(&self) -> String {
        "failing".into()
    }
    fn embed_text(&self, _: &str) -> Result<Embedding, ProviderError> {
        Ok(Embedding::new(vec![1.0, 0.0, 0.0, 0.0]))
    }
    fn embed_image(&self, _: &matforge_core::Srgb8Image) -> Result<Embedding, ProviderError> {
        Err(ProviderError::Unavailable("down".into()))
    }
}

#[test]
fn annotation_failure_carries_seed() {
    let mut db = VectorDb::new(4, 0);
    db.insert("x", &Embedding::new(vec![1.0, 0.0, 0.0, 0.0]), vec![])
        .unwrap();
    let err = annotate(123, &db, &cfg16(), &Failing, AnnotationAppearance::Sampled).unwrap_err();
    assert!(
        matches!(err, matforge_core::Error::Annotation { seed: 123, .. }),
        "{err:?}"
    );
}

fn unit(v: &[f32]) -> Embedding {
    Embedding::new(v.to_vec()).normalized().unwrap()
}

#[test]
fn supervised_loss_matches_scripted_terms() {
    let zt = unit(&[0.3, -0.1, 0.8, 0.2]);
    let zi = unit(&[0.5, 0.5, -0.2, 0.1]);
    let zt_hat = Embedding::new(vec![0.25, -0.3, 0.7, 0.0]);
    let zi_hat = Embedding::new(vec![0.4, 0.6, 0.1, -0.3]);
    let m = MaterialParams::from_array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]).unwrap();
    let m_hat = MaterialParams::from_array([0.2, 0.2, 0.1, 0.9, 0.5, 0.0, 0.75, 0.3]).unwrap();
    let w = 0.35;
    let l = supervised_loss(&zt, &zi, w, &m, &zt_hat, &zi_hat, &m_hat).unwrap();

    let f = |e: &Embedding| e.as_slice().iter().map(|&v| v as f64).collect::<Vec<_>>();
    let (a, b) = (f(&zt), f(&zi_hat));
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let sim = dot
        / (a.iter().map(|x| x * x).sum::<f64>().sqrt()
            * b.iter().map(|x| x * x).sum::<f64>().sqrt());
    let l1 = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>();
    let expected = (1.0 - (sim - w))
        + l1(&f(&zt_hat), &f(&zt))
        + l1(&f(&zi_hat), &f(&zi))
        + l1(&m_hat.to_array(), &m.to_array());
    assert!((l.total() - expected).abs() < 1e-12);
    assert!((l.material - 1.95).abs() < 1e-12);
    assert!(l.total() >= l.clip_sim);

    let u = unsupervised_loss(&zt, &zt_hat, &zi_hat).unwrap();
    let scripted = (1.0 - sim) + l1(&f(&zt_hat), &f(&zt));
    assert!((u.total(UnsupervisedForm::Dissimilarity) - scripted).abs() < 1e-12);
    assert!((u.total(UnsupervisedForm::Literal) - (sim + l1(&f(&zt_hat), &f(&zt)))).abs() < 1e-12);
}

#[test]
fn perfect_reconstruction_sits_on_floor() {
    let zt = unit(&[0.3, -0.1, 0.8, 0.2]);
    let zi = unit(&[0.1, 0.9, 0.0, 0.1]);
    let w = cosine_sim(&zt, &zi).unwrap();
    let m = MaterialParams::splat(0.4);
    let l = supervised_loss(&zt, &zi, w, &m, &zt, &zi, &m).unwrap();
    assert_eq!(l.total(), 1.0);
}

#[test]
fn render_embed_gradient_matches_half_step_one_sided() {
    // 8-bit quantization noise scales as 1/(eps * pixels); curvature bias as eps^2
    let cfg = RenderConfig::with_size(256, 256);
    let provider = MockProvider::new(24, 2).with_baseline(&tonemap(
        &render_sphere(&MaterialFull::default(), &cfg).unwrap(),
        1.0,
    ));
    let target = provider.embed_text("brushed steel").unwrap();
    let loss = |p: &MaterialParams| -> Result<f64, ProviderError> {
        let img = tonemap(
            &render_sphere(&MaterialFull::with_neutral_appearance(*p), &cfg).unwrap(),
            1.0,
        );
        let z = provider.embed_image(&img)?;
        Ok(1.0 - cosine_sim(&target, &z).unwrap())
    };
    let at = MaterialParams::from_array([0.6, 0.4, 0.5, 0.3, 0.4, 0.5, 0.45, 0.55]).unwrap();
    let eps = 0.03;
    let g = estimate_latent_gradient(&at, loss, eps).unwrap();
    let base = loss(&at).unwrap();
    let arr = at.to_array();
    for i in 0..8 {
        let h = eps / 2.0;
        let mut fwd = arr;
        fwd[i] += h;
        let mut bwd = arr;
        bwd[i] -= h;
        let plus = loss(&MaterialParams::from_array(fwd).unwrap()).unwrap();
        let minus = loss(&MaterialParams::from_array(bwd).unwrap()).unwrap();
        let one_sided = 0.5 * ((plus - base) / h + (base - minus) / h);
        assert!(
            (g[i] - one_sided).abs() < 1e-2,
            "coordinate {i}: {} vs {one_sided}",
            g[i]
        );
    }
}

struct Toy {
    provider: MockProvider,
    db: VectorDb,
    prompts: Vec<String>,
}

fn toy() -> Toy {
    let render = RenderConfig::with_size(16, 16);
    let table: Vec<(String, MaterialFull)> = (0..20)
        .map(|i| {
            let m = sample_random_material(1000 + i);
            (
                format!("prompt{i}"),
                MaterialFull::with_neutral_appearance(m.params),
            )
        })
        .collect();
    let provider = MockProvider::rigged(32, 5, &table, &render).unwrap();
    let prompts: Vec<String> = table.iter().map(|t| t.0.clone()).collect();
    let db = embed_prompts(&provider, &prompts).unwrap();
    Toy {
        provider,
        db,
        prompts,
    }
}

fn toy_config(schedule: Schedule, steps: u64) -> TrainConfig {
    TrainConfig {
        seed: 99,
        steps,
        supervised_batch: 2,
        unsupervised_batch: 2,
        schedule,
        learning_rate: 0.02,
        render: RenderConfig::with_size(16, 16),
        annotation_appearance: AnnotationAppearance::Neutral,
        weights: LossWeights {
            text_recon: 1.0 / 32.0,
            image_recon: 1.0 / 32.0,
            ..LossWeights::default()
        },
        ..TrainConfig::default()
    }
}

fn toy_model() -> Autoencoder<f32> {
    Autoencoder::seeded(ModelShape::symmetric(&[32, 16, 8]), 3).unwrap()
}

#[test]
fn toy_run_lowers_supervised_loss() {
    let t = toy();
    let mut trainer = Trainer::new(
        toy_model(),
        toy_config(Schedule::SupervisedOnly, 50),
        &t.provider,
        t.db.clone(),
        t.prompts.clone(),
    )
    .unwrap();
    let mut losses = Vec::new();
    trainer.run(|m| losses.push(m.loss)).unwrap();
    assert_eq!(losses.len(), 50);
    let first: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let last: f64 = losses[40..].iter().sum::<f64>() / 10.0;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn resume_reproduces_metric_stream() {
    let t = toy();
    let cfg = toy_config(Schedule::Alternating { ratio: 1 }, 8);
    let mut full = Trainer::new(
        toy_model(),
        cfg.clone(),
        &t.provider,
        t.db.clone(),
        t.prompts.clone(),
    )
    .unwrap();
    let mut a = Vec::new();
    full.run(|m| a.push(m.clone())).unwrap();

    let mut first = Trainer::new(
        toy_model(),
        cfg.clone(),
        &t.provider,
        t.db.clone(),
        t.prompts.clone(),
    )
    .unwrap();
    let mut b = Vec::new();
    for _ in 0..3 {
        b.push(first.step().unwrap());
    }
    let (step, velocity) = (first.step_index(), first.velocity().to_vec());
    let mut resumed = Trainer::new(
        first.into_model(),
        cfg,
        &t.provider,
        t.db.clone(),
        t.prompts.clone(),
    )
    .unwrap()
    .resume(step, velocity)
    .unwrap();
    resumed.run(|m| b.push(m.clone())).unwrap();
    assert_eq!(a, b);
    assert_eq!(full.model(), resumed.model());
}

#[test]
fn schedule_only_changes_batch_composition() {
    let t = toy();
    let run = |schedule| {
        let mut tr = Trainer::new(
            toy_model(),
            toy_config(schedule, 4),
            &t.provider,
            t.db.clone(),
            t.prompts.clone(),
        )
        .unwrap();
        let mut log = Vec::new();
        tr.run(|m| log.push(m.clone())).unwrap();
        log
    };
    let sup = run(Schedule::SupervisedOnly);
    let alt = run(Schedule::Alternating { ratio: 1 });
    assert!(sup
        .iter()
        .all(|m| m.kind == BatchKind::Supervised && m.supervised.is_some()));
    let kinds: Vec<_> = alt.iter().map(|m| m.kind).collect();
    use BatchKind::*;
    assert_eq!(kinds, [Supervised, Unsupervised, Supervised, Unsupervised]);
    // step 0 sees identical weights and the same per-step stream
    assert_eq!(sup[0], alt[0]);
}

#[test]
fn analytic_path_alone_when_image_terms_disabled() {
    let t = toy();
    let cfg = TrainConfig {
        image_terms: false,
        ..toy_config(Schedule::SupervisedOnly, 1)
    };
    let trainer = Trainer::new(
        toy_model(),
        cfg.clone(),
        &t.provider,
        t.db.clone(),
        t.prompts.clone(),
    )
    .unwrap();
    let sample = annotate(
        5,
        &t.db,
        &cfg.render,
        &t.provider,
        AnnotationAppearance::Neutral,
    )
    .unwrap();
    let (g, _) = trainer.supervised_gradient(&sample).unwrap();

    let model = toy_model();
    let cache = model.forward(sample.z_text.as_slice()).unwrap();
    let m = sample.material.params.to_array();
    let grad_latent: Vec<f32> = cache
        .latent()
        .iter()
        .zip(m)
        .map(|(&p, t)| (cfg.weights.material * l1_subgradient(p as f64, t)) as f32)
        .collect();
    let grad_out: Vec<f32> = cache
        .output()
        .iter()
        .zip(sample.z_text.as_slice())
        .map(|(&p, &t)| (cfg.weights.text_recon * l1_subgradient(p as f64, t as f64)) as f32)
        .collect();
    let expected = model
        .backward(&cache, &grad_latent, &grad_out)
        .unwrap()
        .flatten();
    let got = g.gradients.flatten();
    let num: f64 = got
        .iter()
        .zip(&expected)
        .map(|(a, b)| ((a - b) as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    let den: f64 = expected
        .iter()
        .map(|b| (*b as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(num / den <= 1e-6, "{}", num / den);
}

#[test]
fn precomputed_annotations_are_used() {
    let t = toy();
    let cfg = toy_config(Schedule::SupervisedOnly, 3);
    let fixed = annotate(
        1,
        &t.db,
        &cfg.render,
        &t.provider,
        AnnotationAppearance::Neutral,
    )
    .unwrap();
    let mut tr = Trainer::new(
        toy_model(),
        cfg,
        &t.provider,
        t.db.clone(),
        t.prompts.clone(),
    )
    .unwrap()
    .with_annotations(vec![fixed.clone()])
    .unwrap();
    let m = tr.step().unwrap();
    assert_eq!(m.w_mean, Some(fixed.w));
    assert_eq!(m.w_min, m.w_max);
}

#[test]
fn divergence_is_reported_without_touching_weights() {
    let t = toy();
    let cfg = TrainConfig {
        learning_rate: 1e30,
        ..toy_config(Schedule::SupervisedOnly, 20)
    };
    let mut tr = Trainer::new(
        toy_model(),
        cfg,
        &t.provider,
        t.db.clone(),
        t.prompts.clone(),
    )
    .unwrap();
    let err = loop {
        let before = tr.model().clone();
        match tr.step() {
            Ok(_) => continue,
            Err(e) => {
                assert_eq!(tr.model(), &before);
                break e;
            }
        }
    };
    assert!(
        matches!(err, matforge_core::Error::Diverged { .. }),
        "{err:?}"
    );
}
