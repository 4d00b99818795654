//! Command-line entry point.
//!
//! Exit status: 0 on success, 1 on a usage error, 2 on a runtime error.

use std::ffi::OsString;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use matforge_core::eval::{
    draw_pairs, interpolation_study_fixed, interpolation_study_paired, w2v_perceptual_study,
    GroundTruth, StudyContext,
};
use matforge_core::predict::AppearanceMode;
use matforge_core::provider::embed_prompts;
use matforge_core::text::{build_prompt_corpus_range, extract_prompts};
use matforge_core::train::{annotate, SupervisedSample, Trainer};
use matforge_core::vectordb::VectorDb;
use matforge_core::{
    export_mdl, render_sphere, tonemap, DeskMetric, EmbeddingProvider, ImageMetric,
};
use serde::Serialize;

use crate::adapter::LpipsMetric;
use crate::app::{self, App, AppError, Result};
use crate::config::{AppConfig, CONFIG_ENV};
use crate::formats::{self, Checkpoint};
use crate::image::encode_png;
use crate::record::{MaterialDocument, MaterialRecord};
use crate::scene::build_scene;

#[derive(Debug, Parser)]
#[command(
    name = "matforge",
    version,
    about = "Text prompts to parametric materials"
)]
pub struct Cli {
    /// JSON configuration file (default: $MATFORGE_CONFIG).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the prompt corpus, one prompt per line.
    Corpus(CorpusArgs),
    /// Label random materials with their best-matching corpus prompt.
    Annotate(AnnotateArgs),
    /// Train the autoencoder and write a checkpoint.
    Train(TrainArgs),
    /// Predict the material of one prompt.
    Infer(InferArgs),
    /// Write an MDL file for a prompt or a saved material.
    Export(ExportArgs),
    /// Extract material prompts from a paragraph and export each as MDL.
    SceneInit(SceneArgs),
    /// Word-vector distance against image distance of predicted materials.
    EvalW2v(W2vArgs),
    /// Interpolation studies against annotated ground truth.
    EvalInterp(InterpArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    /// Noun list (default: configured or built-in).
    #[arg(long)]
    pub nouns: Option<PathBuf>,
    #[arg(long)]
    pub adjectives: Option<PathBuf>,
    /// Use only the first N nouns.
    #[arg(long)]
    pub top_nouns: Option<usize>,
    #[arg(long)]
    pub top_adjectives: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub min_adjectives: usize,
    #[arg(long, default_value_t = 2)]
    pub max_adjectives: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Where labelling prompts come from: a prompt file or the generated corpus.
#[derive(Debug, Clone, Args)]
pub struct PromptSource {
    /// One prompt per line; replaces the generated corpus.
    #[arg(long, value_name = "PATH")]
    pub prompts: Option<PathBuf>,
    #[arg(long)]
    pub top_nouns: Option<usize>,
    #[arg(long)]
    pub top_adjectives: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub max_adjectives: usize,
}

#[derive(Debug, Clone, Args)]
pub struct AnnotateArgs {
    #[command(flatten)]
    pub source: PromptSource,
    #[arg(long, default_value_t = 100)]
    pub count: u64,
    /// JSON lines output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: PromptSource,
    /// Precomputed annotations (JSON lines) instead of online labelling.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Free text whose extracted prompts feed unsupervised batches
    /// (default: the labelling prompts).
    #[arg(long)]
    pub text: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    /// Continue from this checkpoint's weights, step and optimizer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step losses as JSON lines.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Also save the checkpoint every N steps.
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub prompt: String,
    /// Material JSON (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub preview: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(
        long,
        conflicts_with = "material",
        required_unless_present = "material"
    )]
    pub prompt: Option<String>,
    /// Material JSON as written by `infer`.
    #[arg(long)]
    pub material: Option<PathBuf>,
    /// MDL output (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SceneArgs {
    /// Paragraph file.
    #[arg(long)]
    pub text: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct MetricArgs {
    /// Use the adapter's LPIPS instead of the built-in image distance.
    #[arg(long)]
    pub lpips: bool,
}

#[derive(Debug, Clone, Args)]
pub struct W2vArgs {
    #[command(flatten)]
    pub metric: MetricArgs,
    /// Force grey base color on every prediction.
    #[arg(long)]
    pub grey: bool,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub top_adjectives: usize,
    #[arg(long, default_value_t = 25)]
    pub top_nouns: usize,
    /// `x,y` pair dump.
    #[arg(long)]
    pub out: PathBuf,
    /// Pair dump with the words attached.
    #[arg(long)]
    pub detailed: Option<PathBuf>,
    /// Summary JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct InterpArgs {
    #[command(flatten)]
    pub metric: MetricArgs,
    #[command(flatten)]
    pub source: PromptSource,
    /// Ground truth (JSON lines annotations); generated when absent.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Annotations generated when none are given.
    #[arg(long, default_value_t = 200)]
    pub ground_truth: u64,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 21)]
    pub steps: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, value_parser = clap::value_parser!(u16).range(1024..))]
    pub port: Option<u16>,
}

/// Parses `args`, runs the command and returns the exit status.
pub fn run<I, T>(args: I, env: Vec<(String, String)>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli, env) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                AppError::Usage(_) => 1,
                _ => 2,
            }
        }
    }
}

pub fn load_config(cli: &Cli, env: Vec<(String, String)>) -> Result<AppConfig> {
    let path = cli.config.clone().or_else(|| {
        env.iter()
            .find(|(k, _)| k == CONFIG_ENV)
            .map(|(_, v)| PathBuf::from(v))
    });
    let mut cfg = AppConfig::load(path.as_deref(), env)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

pub fn execute(cli: Cli, env: Vec<(String, String)>) -> Result<()> {
    let cfg = load_config(&cli, env)?;
    match cli.command {
        Command::Corpus(a) => cmd_corpus(&cfg, &a),
        Command::Annotate(a) => cmd_annotate(&cfg, &a),
        Command::Train(a) => cmd_train(&cfg, &a),
        Command::Infer(a) => cmd_infer(cfg, &a),
        Command::Export(a) => cmd_export(cfg, &a),
        Command::SceneInit(a) => cmd_scene(cfg, &a),
        Command::EvalW2v(a) => cmd_w2v(cfg, &a),
        Command::EvalInterp(a) => cmd_interp(cfg, &a),
        Command::Serve(a) => cmd_serve(cfg, &a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| AppError::io(path, e))?,
    ))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(contents.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| AppError::io(path, e))
}

/// Writes to `out`, or stdout when absent.
fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, contents),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(contents.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| AppError::io(Path::new("<stdout>"), e))
        }
    }
}

fn truncate(mut v: Vec<String>, n: Option<usize>) -> Vec<String> {
    if let Some(n) = n {
        v.truncate(n);
    }
    v
}

fn corpus_lines(
    nouns: Vec<String>,
    adjectives: Vec<String>,
    top_nouns: Option<usize>,
    top_adjectives: Option<usize>,
    min: usize,
    max: usize,
) -> Result<Vec<String>> {
    let records = build_prompt_corpus_range(
        &truncate(nouns, top_nouns),
        &truncate(adjectives, top_adjectives),
        min,
        max,
    )?;
    Ok(records.iter().map(|r| r.full_text()).collect())
}

fn cmd_corpus(cfg: &AppConfig, a: &CorpusArgs) -> Result<()> {
    let (mut nouns, mut adjectives) = app::load_word_lists(cfg)?;
    if let Some(p) = &a.nouns {
        nouns = formats::parse_word_list(&formats::read_text(p)?, &p.display().to_string())?;
    }
    if let Some(p) = &a.adjectives {
        adjectives = formats::parse_word_list(&formats::read_text(p)?, &p.display().to_string())?;
    }
    let lines = corpus_lines(
        nouns,
        adjectives,
        a.top_nouns,
        a.top_adjectives,
        a.min_adjectives,
        a.max_adjectives,
    )?;
    let mut text = lines.join("\n");
    text.push('\n');
    emit(a.out.as_deref(), &text)
}

fn source_prompts(cfg: &AppConfig, s: &PromptSource) -> Result<Vec<String>> {
    let prompts = match &s.prompts {
        Some(p) => formats::parse_prompt_list(&formats::read_text(p)?),
        None => {
            let (nouns, adjectives) = app::load_word_lists(cfg)?;
            corpus_lines(
                nouns,
                adjectives,
                s.top_nouns,
                s.top_adjectives,
                0,
                s.max_adjectives,
            )?
        }
    };
    if prompts.is_empty() {
        return Err(AppError::Usage("no prompts to label with".into()));
    }
    Ok(prompts)
}

fn prompt_db(provider: &dyn EmbeddingProvider, prompts: &[String]) -> Result<VectorDb> {
    Ok(embed_prompts(provider, prompts)?)
}

fn read_annotations(path: &Path) -> Result<Vec<SupervisedSample>> {
    let text = formats::read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let s: SupervisedSample = serde_json::from_str(line).map_err(|e| {
            AppError::Format(formats::FormatError::Parse {
                file: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })?;
        out.push(s);
    }
    Ok(out)
}

fn generate_annotations(
    cfg: &AppConfig,
    provider: &dyn EmbeddingProvider,
    db: &VectorDb,
    count: u64,
) -> Result<Vec<SupervisedSample>> {
    (0..count)
        .map(|i| {
            annotate(
                cfg.seed.wrapping_add(i),
                db,
                &cfg.train.render,
                provider,
                cfg.train.annotation_appearance,
            )
            .map_err(AppError::from)
        })
        .collect()
}

fn cmd_annotate(cfg: &AppConfig, a: &AnnotateArgs) -> Result<()> {
    let providers = app::build_provider(cfg)?;
    let prompts = source_prompts(cfg, &a.source)?;
    let db = prompt_db(&*providers.provider, &prompts)?;
    let samples = generate_annotations(cfg, &*providers.provider, &db, a.count)?;
    let mut w = create(&a.out)?;
    for s in &samples {
        let line = serde_json::to_string(s).expect("sample serializes");
        writeln!(w, "{line}").map_err(|e| AppError::io(&a.out, e))?;
    }
    w.flush().map_err(|e| AppError::io(&a.out, e))
}

fn cmd_train(cfg: &AppConfig, a: &TrainArgs) -> Result<()> {
    let mut tc = cfg.train.clone();
    if let Some(steps) = a.steps {
        tc.steps = steps;
    }
    let providers = app::build_provider(cfg)?;
    let provider = providers.provider;
    let prompts = source_prompts(cfg, &a.source)?;
    let db = prompt_db(&*provider, &prompts)?;
    let unsupervised = match &a.text {
        Some(p) => {
            let text = formats::read_text(p)?;
            let lexicon = app::load_lexicon(cfg)?;
            let table = app::load_concreteness(cfg)?;
            let found: Vec<String> =
                extract_prompts(&text, &lexicon, &table, cfg.concreteness_threshold)?
                    .iter()
                    .map(|r| r.full_text())
                    .collect();
            if found.is_empty() {
                return Err(AppError::Usage(format!(
                    "{}: no material prompts found",
                    p.display()
                )));
            }
            found
        }
        None => prompts.clone(),
    };
    let (start, model) = match &a.resume {
        Some(p) => {
            let c = Checkpoint::load(p)?;
            (Some((c.step, c.momentum)), c.model)
        }
        None => (None, app::load_checkpoint(cfg, &*provider)?.model),
    };
    let tables = app::load_value_tables(cfg, &*provider)?;
    let mut trainer =
        Trainer::new(model, tc, provider.clone(), db, unsupervised)?.with_value_tables(tables);
    if let Some(p) = &a.annotations {
        trainer = trainer.with_annotations(read_annotations(p)?)?;
    }
    if let Some((step, momentum)) = start {
        let velocity = momentum.unwrap_or_else(|| vec![0.0; trainer.velocity().len()]);
        trainer = trainer.resume(step, velocity)?;
    }
    let mut metrics = match &a.metrics {
        Some(p) => {
            let f = OpenOptions::new()
                .create(true)
                .write(true)
                .append(a.resume.is_some())
                .truncate(a.resume.is_none())
                .open(p)
                .map_err(|e| AppError::io(p, e))?;
            Some((BufWriter::new(f), p.clone()))
        }
        None => None,
    };
    let save = |t: &Trainer<app::SharedProvider>| -> Result<()> {
        let mut c = Checkpoint::new(t.model().clone(), provider.name());
        c.step = t.step_index();
        c.momentum = Some(t.velocity().to_vec());
        c.save(&a.out)?;
        Ok(())
    };
    while trainer.step_index() < trainer.config().steps {
        let m = match trainer.step() {
            Ok(m) => m,
            Err(e) => {
                let e = AppError::from(e);
                if e.is_unavailable() {
                    save(&trainer)?;
                    eprintln!(
                        "provider outage at step {}; resumable checkpoint written to {}",
                        trainer.step_index(),
                        a.out.display()
                    );
                }
                return Err(e);
            }
        };
        if let Some((w, p)) = metrics.as_mut() {
            let line = serde_json::to_string(&m).expect("metrics serialize");
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|e| AppError::io(p, e))?;
        }
        if a.checkpoint_every
            .is_some_and(|n| n > 0 && trainer.step_index() % n == 0)
        {
            save(&trainer)?;
        }
    }
    save(&trainer)
}

fn cmd_infer(cfg: AppConfig, a: &InferArgs) -> Result<()> {
    let app = App::build(cfg)?;
    let m = app.predictor.predict(&a.prompt)?.material;
    if let Some(p) = &a.preview {
        let img = tonemap(
            &render_sphere(&m, &app.config.render)?,
            app.config.render.exposure,
        );
        formats::write_bytes(p, &encode_png(&img)?)?;
    }
    let mut json = serde_json::to_string_pretty(&MaterialDocument::new(&a.prompt, &m))
        .expect("document serializes");
    json.push('\n');
    emit(a.out.as_deref(), &json)
}

fn read_material(path: &Path) -> Result<matforge_core::MaterialFull> {
    let value: serde_json::Value = serde_json::from_str(&formats::read_text(path)?)
        .map_err(|e| AppError::Usage(format!("{}: {e}", path.display())))?;
    let record = value.get("material").cloned().unwrap_or(value);
    let record: MaterialRecord = serde_json::from_value(record)
        .map_err(|e| AppError::Usage(format!("{}: {e}", path.display())))?;
    Ok(record.to_material()?)
}

fn cmd_export(cfg: AppConfig, a: &ExportArgs) -> Result<()> {
    let (material, template) = match (&a.prompt, &a.material) {
        (Some(prompt), _) => {
            let app = App::build(cfg)?;
            (app.predictor.predict(prompt)?.material, app.mdl_template)
        }
        (None, Some(p)) => (read_material(p)?, app::load_mdl_template(&cfg)?),
        (None, None) => {
            return Err(AppError::Usage(
                "either --prompt or --material is required".into(),
            ))
        }
    };
    emit(a.out.as_deref(), &export_mdl(&material, &template)?)
}

fn cmd_scene(cfg: AppConfig, a: &SceneArgs) -> Result<()> {
    let app = App::build(cfg)?;
    let text = formats::read_text(&a.text)?;
    let scene = build_scene(&app, &text)?;
    scene.write(&a.out)?;
    println!("{}", scene.status);
    for m in &scene.materials {
        println!("{}\t{}", m.file, m.prompt);
    }
    Ok(())
}

fn metric(app: &App, lpips: bool) -> Result<Box<dyn ImageMetric + '_>> {
    if !lpips {
        return Ok(Box::new(DeskMetric));
    }
    let client = app
        .adapter
        .as_deref()
        .ok_or_else(|| AppError::Usage("--lpips needs an adapter provider".into()))?;
    Ok(Box::new(LpipsMetric {
        client,
        exposure: app.config.render.exposure,
    }))
}

#[derive(Serialize)]
struct W2vSummary {
    r: f64,
    p: f64,
    pairs: usize,
    skipped: Vec<String>,
    grey: bool,
    metric: &'static str,
}

fn cmd_w2v(mut cfg: AppConfig, a: &W2vArgs) -> Result<()> {
    if a.grey {
        cfg.appearance = AppearanceMode::Grey;
    }
    let app = App::build(cfg)?;
    let table = app::load_word_vectors(&app.config)?;
    let (nouns, adjectives) = app::load_word_lists(&app.config)?;
    let metric = metric(&app, a.metric.lpips)?;
    let ctx = StudyContext {
        predictor: &app.predictor,
        metric: &*metric,
        render: app.config.render.clone(),
    };
    let report = w2v_perceptual_study(
        &ctx,
        &truncate(adjectives, Some(a.top_adjectives)),
        &truncate(nouns, Some(a.top_nouns)),
        &table,
        app.lexicon.antonyms(),
        a.k,
    )?;
    if !report.skipped.is_empty() {
        log::warn!(
            "{} adjective(s) missing from the word vectors: {:?}",
            report.skipped.len(),
            report.skipped
        );
    }
    write_file(&a.out, &report.to_csv())?;
    if let Some(p) = &a.detailed {
        write_file(p, &report.to_detailed_csv())?;
    }
    let summary = W2vSummary {
        r: report.r,
        p: report.p,
        pairs: report.pairs.len(),
        skipped: report.skipped.clone(),
        grey: a.grey,
        metric: if a.metric.lpips { "lpips" } else { "desk" },
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    if let Some(p) = &a.report {
        write_file(p, &format!("{json}\n"))?;
    }
    println!(
        "r = {}, p = {}, pairs = {}, skipped = {}",
        report.r,
        report.p,
        summary.pairs,
        summary.skipped.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct InterpSummary {
    samples: usize,
    steps: usize,
    paired_mid_mean: f64,
    paired_endpoint_means: [f64; 2],
    fixed_a_trend: f64,
    fixed_b_trend: f64,
}

/// Ground truth from annotations, either loaded or generated.
pub fn ground_truth(samples: &[SupervisedSample]) -> Vec<GroundTruth> {
    samples
        .iter()
        .map(|s| GroundTruth {
            material: s.material,
            prompt: s.prompt_text.clone(),
        })
        .collect()
}

fn cmd_interp(cfg: AppConfig, a: &InterpArgs) -> Result<()> {
    let app = App::build(cfg)?;
    let annotations = match &a.annotations {
        Some(p) => read_annotations(p)?,
        None => {
            let prompts = source_prompts(&app.config, &a.source)?;
            let db = prompt_db(&**app.provider(), &prompts)?;
            generate_annotations(&app.config, &**app.provider(), &db, a.ground_truth)?
        }
    };
    let gt = ground_truth(&annotations);
    let pairs = draw_pairs(&gt, a.samples, app.config.seed)?;
    let metric = metric(&app, a.metric.lpips)?;
    let ctx = StudyContext {
        predictor: &app.predictor,
        metric: &*metric,
        render: app.config.render.clone(),
    };
    let paired = interpolation_study_paired(&ctx, &gt, &pairs, a.steps)?;
    let (fa, fb) = interpolation_study_fixed(&ctx, &gt, &pairs, a.steps)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| AppError::io(&a.out_dir, e))?;
    write_file(&a.out_dir.join("paired.csv"), &paired.to_csv())?;
    write_file(&a.out_dir.join("fixed_a.csv"), &fa.to_csv())?;
    write_file(&a.out_dir.join("fixed_b.csv"), &fb.to_csv())?;
    let n = paired.mean.len();
    let summary = InterpSummary {
        samples: pairs.len(),
        steps: a.steps,
        paired_mid_mean: paired.mean[n / 2],
        paired_endpoint_means: [paired.mean[0], paired.mean[n - 1]],
        fixed_a_trend: fa.trend()?,
        fixed_b_trend: fb.trend()?,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&a.out_dir.join("summary.json"), &format!("{json}\n"))?;
    println!("{json}");
    Ok(())
}

fn cmd_serve(mut cfg: AppConfig, a: &ServeArgs) -> Result<()> {
    if let Some(port) = a.port {
        cfg.port = port;
    }
    let port = cfg.port;
    let app = Arc::new(App::build(cfg)?);
    let rt = tokio::runtime::Runtime::new().map_err(|e| AppError::io(Path::new("<runtime>"), e))?;
    rt.block_on(crate::service::serve(app, port))
        .map_err(|e| AppError::io(Path::new("<listener>"), e))
}
