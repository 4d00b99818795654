//! Assembles the runtime pieces named by an [`AppConfig`].

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use matforge_core::brdf::PARAM_COUNT;
use matforge_core::eval::WordVectorTable;
use matforge_core::nn::{Autoencoder, ModelShape};
use matforge_core::predict::Predictor;
use matforge_core::text::{ConcretenessTable, Lexicon};
use matforge_core::vectordb::ValueTables;
use matforge_core::{EmbeddingProvider, MockProvider, ProviderError};

use crate::adapter::{AdapterClient, HttpTransport, StdioTransport, Transport};
use crate::config::{AppConfig, ConfigError, ProviderConfig};
use crate::data;
use crate::formats::{self, Checkpoint, FormatError};
use crate::retry::RetryingProvider;

pub type SharedProvider = Arc<dyn EmbeddingProvider + Send + Sync>;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Core(#[from] matforge_core::Error),
    #[error(transparent)]
    Png(#[from] crate::image::PngError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl From<ProviderError> for AppError {
    fn from(e: ProviderError) -> Self {
        AppError::Core(e.into())
    }
}

impl AppError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Whether the failure is an unreachable provider (a retryable outage).
    pub fn is_unavailable(&self) -> bool {
        use matforge_core::Error as E;
        let core = match self {
            AppError::Core(e) => e,
            AppError::Format(FormatError::Core(e)) => e,
            _ => return false,
        };
        matches!(
            core,
            E::Provider(ProviderError::Unavailable(_))
                | E::Annotation {
                    source: ProviderError::Unavailable(_),
                    ..
                }
                | E::Probe {
                    source: ProviderError::Unavailable(_),
                    ..
                }
        )
    }
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;

/// Contents of a configured file, or the built-in copy.
pub fn text_or_builtin(
    path: &Option<PathBuf>,
    builtin: &'static str,
    name: &str,
) -> Result<(String, String)> {
    match path {
        Some(p) => Ok((formats::read_text(p)?, p.display().to_string())),
        None => Ok((builtin.to_string(), format!("<built-in {name}>"))),
    }
}

/// The configured provider plus, for adapter providers, the raw client
/// (which also serves LPIPS).
pub struct Providers {
    pub provider: SharedProvider,
    pub adapter: Option<Arc<AdapterClient>>,
}

pub fn build_provider(config: &AppConfig) -> Result<Providers> {
    let transport: Box<dyn Transport> = match &config.provider {
        ProviderConfig::Mock { dim, seed } => {
            return Ok(Providers {
                provider: Arc::new(MockProvider::new(*dim, *seed)),
                adapter: None,
            })
        }
        ProviderConfig::Stdio { command } => Box::new(StdioTransport::spawn(command)?),
        ProviderConfig::Http { url, timeout_ms } => Box::new(HttpTransport::new(
            url.clone(),
            Duration::from_millis(*timeout_ms),
        )),
    };
    let client = Arc::new(AdapterClient::connect(transport)?);
    Ok(Providers {
        provider: Arc::new(RetryingProvider::new(client.clone(), config.retry)),
        adapter: Some(client),
    })
}

/// Fresh model for an embedding width: `dim -> hidden.. -> 8 -> ..hidden -> dim`.
pub fn default_shape(dim: usize, hidden: &[usize]) -> ModelShape {
    let mut widths = vec![dim];
    widths.extend_from_slice(hidden);
    widths.push(PARAM_COUNT);
    ModelShape::symmetric(&widths)
}

/// The configured checkpoint, or a seeded model at step 0.
pub fn load_checkpoint(config: &AppConfig, provider: &dyn EmbeddingProvider) -> Result<Checkpoint> {
    let ckpt = match &config.paths.checkpoint {
        Some(p) => Checkpoint::load(p)?,
        None => {
            let shape = default_shape(provider.dim(), &config.hidden_layers);
            Checkpoint::new(Autoencoder::seeded(shape, config.seed)?, provider.name())
        }
    };
    if ckpt.embedding_dim != provider.dim() {
        return Err(matforge_core::Error::DimensionMismatch {
            expected: ckpt.embedding_dim,
            found: provider.dim(),
        }
        .into());
    }
    Ok(ckpt)
}

pub fn load_lexicon(config: &AppConfig) -> Result<Lexicon> {
    let p = &config.paths;
    let (nouns, src) = text_or_builtin(&p.nouns, data::NOUNS, "nouns")?;
    let nouns = formats::parse_word_list(&nouns, &src)?;
    let (adjs, src) = text_or_builtin(&p.adjectives, data::ADJECTIVES, "adjectives")?;
    let adjectives = formats::parse_word_list(&adjs, &src)?;
    Ok(Lexicon::new(nouns, adjectives).with_antonyms(load_antonyms(config)?))
}

pub fn load_antonyms(
    config: &AppConfig,
) -> Result<std::collections::BTreeMap<String, Vec<String>>> {
    let (text, src) = text_or_builtin(&config.paths.antonyms, data::ANTONYMS, "antonyms")?;
    Ok(formats::parse_antonyms(&text, &src)?)
}

pub fn load_concreteness(config: &AppConfig) -> Result<ConcretenessTable> {
    let (text, src) = text_or_builtin(
        &config.paths.concreteness,
        data::CONCRETENESS,
        "concreteness",
    )?;
    Ok(formats::parse_concreteness(&text, &src)?)
}

pub fn load_word_vectors(config: &AppConfig) -> Result<WordVectorTable> {
    let (text, src) = text_or_builtin(
        &config.paths.word_vectors,
        data::WORD_VECTORS,
        "word vectors",
    )?;
    Ok(formats::parse_word_vectors(&text, &src)?)
}

/// Corpus noun and adjective lists in rank order.
pub fn load_word_lists(config: &AppConfig) -> Result<(Vec<String>, Vec<String>)> {
    let p = &config.paths;
    let (nouns, src) = text_or_builtin(&p.nouns, data::NOUNS, "nouns")?;
    let nouns = formats::parse_word_list(&nouns, &src)?;
    let (adjs, src) = text_or_builtin(&p.adjectives, data::ADJECTIVES, "adjectives")?;
    Ok((nouns, formats::parse_word_list(&adjs, &src)?))
}

pub fn load_value_tables(
    config: &AppConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<ValueTables> {
    let p = &config.paths;
    let color = text_or_builtin(&p.colors, data::COLORS, "colors")?;
    let ior = text_or_builtin(&p.ior, data::IOR, "ior")?;
    let opacity = text_or_builtin(&p.opacity, data::OPACITY, "opacity")?;
    Ok(formats::load_value_tables(
        (&color.0, &color.1),
        (&ior.0, &ior.1),
        (&opacity.0, &opacity.1),
        provider,
    )?)
}

pub fn load_mdl_template(config: &AppConfig) -> Result<String> {
    let (text, _) = text_or_builtin(
        &config.paths.mdl_template,
        data::MDL_TEMPLATE,
        "MDL template",
    )?;
    matforge_core::mdl::validate_template(&text)?;
    Ok(text)
}

/// Everything inference needs, immutable once built.
pub struct App {
    pub config: AppConfig,
    pub predictor: Predictor<SharedProvider>,
    pub adapter: Option<Arc<AdapterClient>>,
    pub lexicon: Lexicon,
    pub concreteness: ConcretenessTable,
    pub mdl_template: String,
    pub checkpoint_step: u64,
}

impl App {
    pub fn build(config: AppConfig) -> Result<Self> {
        let providers = build_provider(&config)?;
        Self::with_provider(config, providers)
    }

    pub fn with_provider(config: AppConfig, providers: Providers) -> Result<Self> {
        let provider = providers.provider;
        let ckpt = load_checkpoint(&config, &*provider)?;
        let tables = load_value_tables(&config, &*provider)?;
        let predictor = Predictor::new(ckpt.model, provider)
            .with_tables(tables)
            .with_retrieval(config.retrieval.k, config.retrieval.beta)
            .with_mode(config.appearance);
        Ok(App {
            lexicon: load_lexicon(&config)?,
            concreteness: load_concreteness(&config)?,
            mdl_template: load_mdl_template(&config)?,
            checkpoint_step: ckpt.step,
            adapter: providers.adapter,
            predictor,
            config,
        })
    }

    pub fn provider(&self) -> &SharedProvider {
        self.predictor.provider()
    }
}
