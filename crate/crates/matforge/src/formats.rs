//! On-disk formats: text tables, the model checkpoint and the vector
//! database snapshot.
//!
//! Checkpoint (`TXB1`), all integers and floats little-endian:
//!
//! ```text
//! magic        4 bytes  "TXB1"
//! version      u32      1
//! n_enc        u32      encoder width count, then n_enc x u32 widths
//! n_dec        u32      decoder width count, then n_dec x u32 widths
//! activations  3 x u8   hidden, latent, output ids; 1 pad byte
//! leaky_slope  f32
//! step         u64      training steps taken
//! embed_dim    u32      embedding dimension the model was trained on
//! provider     u32 length + UTF-8 name of the embedding provider
//! n_params     u64
//! weights      n_params x f32, layers encoder first, each layer's
//!              row-major weights (output-major) followed by its biases
//! has_momentum u8       0 or 1, then n_params x f32 optimizer velocity
//! ```
//!
//! Vector database snapshot (`TXVD`):
//!
//! ```text
//! magic 4 bytes "TXVD", version u32 1, dim u32, count u32, payload_width u32
//! embeddings  count x dim f32 (unit length)
//! payloads    count x payload_width f32
//! texts       count x (u32 length + UTF-8)
//! ```

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;

use matforge_core::eval::WordVectorTable;
use matforge_core::nn::{Activation, Autoencoder, ModelShape};
use matforge_core::text::ConcretenessTable;
use matforge_core::vectordb::{ValueTables, VectorDb, VectorDbEntry};
use matforge_core::{Embedding, EmbeddingProvider};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TXB1";
pub const SNAPSHOT_MAGIC: [u8; 4] = *b"TXVD";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("truncated {what}: need {needed} more bytes, {available} available")]
    Truncated {
        what: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("malformed file: {0}")]
    Structure(String),
    #[error(transparent)]
    Core(#[from] matforge_core::Error),
}

pub type Result<T, E = FormatError> = std::result::Result<T, E>;

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_error(source: &str, line: usize, message: impl Display) -> FormatError {
    FormatError::Parse {
        file: source.to_string(),
        line,
        message: message.to_string(),
    }
}

/// Non-blank, non-comment lines with their 1-based numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

/// One lowercase word per line, in rank order.
pub fn parse_word_list(text: &str, source: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (n, line) in content_lines(text) {
        let w = line.trim();
        if w.split_whitespace().count() != 1 {
            return Err(parse_error(
                source,
                n,
                format!("expected one word, found {w:?}"),
            ));
        }
        out.push(w.to_lowercase());
    }
    Ok(out)
}

/// One prompt per line; inner whitespace is collapsed.
pub fn parse_prompt_list(text: &str) -> Vec<String> {
    content_lines(text)
        .map(|(_, l)| l.split_whitespace().collect::<Vec<_>>().join(" "))
        .collect()
}

/// `text <TAB> v1[,v2,...]` rows with exactly `width` values.
pub fn parse_value_table(
    text: &str,
    source: &str,
    width: usize,
) -> Result<Vec<(String, Vec<f32>)>> {
    let mut out = Vec::new();
    for (n, line) in content_lines(text) {
        let (key, values) = line
            .split_once('\t')
            .ok_or_else(|| parse_error(source, n, "expected `text<TAB>values`"))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(parse_error(source, n, "empty text"));
        }
        let values: Vec<f32> = values
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f32>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_error(source, n, format!("bad number {:?}", v.trim())))
            })
            .collect::<Result<_>>()?;
        if values.len() != width {
            return Err(parse_error(
                source,
                n,
                format!("expected {width} value(s), found {}", values.len()),
            ));
        }
        out.push((key.to_string(), values));
    }
    Ok(out)
}

/// `word <TAB> rating` rows, ratings in `[1, 5]`.
pub fn parse_concreteness(text: &str, source: &str) -> Result<ConcretenessTable> {
    let mut table = ConcretenessTable::new();
    for (n, line) in content_lines(text) {
        let (word, rating) = line
            .split_once('\t')
            .ok_or_else(|| parse_error(source, n, "expected `word<TAB>rating`"))?;
        let rating: f64 = rating
            .trim()
            .parse()
            .map_err(|_| parse_error(source, n, format!("bad rating {:?}", rating.trim())))?;
        table
            .insert(word.trim(), rating)
            .map_err(|e| parse_error(source, n, e))?;
    }
    Ok(table)
}

/// Whitespace-separated `word v1 v2 ...` rows; an optional first line holds
/// `count dim`.
pub fn parse_word_vectors(text: &str, source: &str) -> Result<WordVectorTable> {
    let mut lines = content_lines(text).peekable();
    let mut declared: Option<(usize, usize)> = None;
    if let Some((_, first)) = lines.peek() {
        let parts: Vec<&str> = first.split_whitespace().collect();
        if parts.len() == 2 {
            if let (Ok(c), Ok(d)) = (parts[0].parse::<usize>(), parts[1].parse::<usize>()) {
                declared = Some((c, d));
                lines.next();
            }
        }
    }
    let mut table: Option<WordVectorTable> = declared.map(|(_, d)| WordVectorTable::new(d));
    for (n, line) in lines {
        let mut parts = line.split_whitespace();
        let word = parts.next().expect("content line is non-blank");
        let v: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| parse_error(source, n, format!("bad number {p:?}")))
            })
            .collect::<Result<_>>()?;
        let t = table.get_or_insert_with(|| WordVectorTable::new(v.len()));
        t.insert(word, v).map_err(|e| parse_error(source, n, e))?;
    }
    let table = table.unwrap_or_else(|| WordVectorTable::new(0));
    if let Some((count, _)) = declared {
        if count != table.len() {
            return Err(FormatError::Structure(format!(
                "{source}: header declares {count} vectors, found {}",
                table.len()
            )));
        }
    }
    Ok(table)
}

/// `word <TAB> antonym[,antonym...]` rows.
pub fn parse_antonyms(text: &str, source: &str) -> Result<BTreeMap<String, Vec<String>>> {
    let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (n, line) in content_lines(text) {
        let (word, list) = line
            .split_once('\t')
            .ok_or_else(|| parse_error(source, n, "expected `word<TAB>antonyms`"))?;
        let word = word.trim().to_lowercase();
        if word.is_empty() {
            return Err(parse_error(source, n, "empty word"));
        }
        let entry = map.entry(word).or_default();
        for a in list.split(',').map(str::trim).filter(|a| !a.is_empty()) {
            entry.push(a.to_lowercase());
        }
    }
    Ok(map)
}

/// Embeds the rows of a value table through `provider`.
pub fn build_value_db<P: EmbeddingProvider + ?Sized>(
    rows: &[(String, Vec<f32>)],
    width: usize,
    provider: &P,
) -> Result<VectorDb> {
    let mut db = VectorDb::new(provider.dim(), width);
    for (text, values) in rows {
        let e = provider
            .embed_text(text)
            .map_err(matforge_core::Error::from)?;
        db.insert(text.clone(), &e, values.clone())?;
    }
    Ok(db)
}

/// Parses and embeds the color (3 values), IOR and opacity tables.
pub fn load_value_tables<P: EmbeddingProvider + ?Sized>(
    color: (&str, &str),
    ior: (&str, &str),
    opacity: (&str, &str),
    provider: &P,
) -> Result<ValueTables> {
    Ok(ValueTables {
        color: build_value_db(&parse_value_table(color.0, color.1, 3)?, 3, provider)?,
        ior: build_value_db(&parse_value_table(ior.0, ior.1, 1)?, 1, provider)?,
        opacity: build_value_db(&parse_value_table(opacity.0, opacity.1, 1)?, 1, provider)?,
    })
}

/// A model with its training position.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Autoencoder<f32>,
    pub step: u64,
    pub embedding_dim: usize,
    pub provider: String,
    /// Optimizer velocity, present when training can resume exactly.
    pub momentum: Option<Vec<f32>>,
}

impl Checkpoint {
    pub fn new(model: Autoencoder<f32>, provider: impl Into<String>) -> Self {
        let embedding_dim = model.shape().input_dim();
        Checkpoint {
            model,
            step: 0,
            embedding_dim,
            provider: provider.into(),
            momentum: None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let shape = self.model.shape();
        let mut out = Vec::with_capacity(64 + self.model.param_count() * 8);
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        for widths in [&shape.encoder, &shape.decoder] {
            put_u32(&mut out, widths.len() as u32);
            for &w in widths.iter() {
                put_u32(&mut out, w as u32);
            }
        }
        out.extend_from_slice(&[shape.hidden.id(), shape.latent.id(), shape.output.id(), 0]);
        out.extend_from_slice(&shape.leaky_slope.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        put_u32(&mut out, self.embedding_dim as u32);
        put_str(&mut out, &self.provider);
        let flat = self.model.flatten();
        out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
        put_f32s(&mut out, &flat);
        match &self.momentum {
            Some(v) => {
                out.push(1);
                put_f32s(&mut out, v);
            }
            None => out.push(0),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(CHECKPOINT_MAGIC)?;
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(FormatError::Version(version));
        }
        let mut widths = [Vec::new(), Vec::new()];
        for w in &mut widths {
            let n = r.u32("layer count")? as usize;
            if n > 64 {
                return Err(FormatError::Structure(format!("{n} layer widths")));
            }
            for _ in 0..n {
                w.push(r.u32("layer width")? as usize);
            }
        }
        let ids = r.take(4, "activation ids")?;
        let act = |id: u8| {
            Activation::from_id(id)
                .ok_or_else(|| FormatError::Structure(format!("unknown activation id {id}")))
        };
        let [encoder, decoder] = widths;
        let shape = ModelShape {
            encoder,
            decoder,
            hidden: act(ids[0])?,
            latent: act(ids[1])?,
            output: act(ids[2])?,
            leaky_slope: r.f32("leaky slope")?,
        };
        shape
            .validate()
            .map_err(|e| FormatError::Structure(format!("layer widths: {e}")))?;
        let step = r.u64("step")?;
        let embedding_dim = r.u32("embedding dimension")? as usize;
        let provider = r.string("provider name")?;
        let n = r.u64("parameter count")? as usize;
        if n != shape.param_count() {
            return Err(FormatError::Structure(format!(
                "header declares {n} parameters, layer widths imply {}",
                shape.param_count()
            )));
        }
        if embedding_dim != shape.input_dim() {
            return Err(matforge_core::Error::DimensionMismatch {
                expected: shape.input_dim(),
                found: embedding_dim,
            }
            .into());
        }
        let weights = r.f32s(n, "weights")?;
        let mut model = Autoencoder::zeros(shape)?;
        model.load_flat(&weights)?;
        let momentum = match r.take(1, "momentum flag")?[0] {
            0 => None,
            1 => Some(r.f32s(n, "momentum")?),
            f => return Err(FormatError::Structure(format!("momentum flag {f}"))),
        };
        r.finish()?;
        Ok(Checkpoint {
            model,
            step,
            embedding_dim,
            provider,
            momentum,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_bytes(path)?)
    }
}

pub fn snapshot_to_bytes(db: &VectorDb) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&SNAPSHOT_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, db.dim() as u32);
    put_u32(&mut out, db.len() as u32);
    put_u32(&mut out, db.payload_width() as u32);
    for e in db.entries() {
        put_f32s(&mut out, e.embedding.as_slice());
    }
    for e in db.entries() {
        put_f32s(&mut out, &e.payload);
    }
    for e in db.entries() {
        put_str(&mut out, &e.text);
    }
    out
}

pub fn snapshot_from_bytes(bytes: &[u8]) -> Result<VectorDb> {
    let mut r = Reader::new(bytes);
    r.magic(SNAPSHOT_MAGIC)?;
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(FormatError::Version(version));
    }
    let dim = r.u32("dimension")? as usize;
    let count = r.u32("count")? as usize;
    let width = r.u32("payload width")? as usize;
    let embeddings = r.f32s(count.saturating_mul(dim), "embedding matrix")?;
    let payloads = r.f32s(count.saturating_mul(width), "payload block")?;
    let mut db = VectorDb::new(dim, width);
    for i in 0..count {
        let text = r.string("entry text")?;
        db.insert_normalized(VectorDbEntry {
            text,
            embedding: Embedding::new(embeddings[i * dim..(i + 1) * dim].to_vec()),
            payload: payloads[i * width..(i + 1) * width].to_vec(),
        })?;
    }
    r.finish()?;
    Ok(db)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                what,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found = self.take(4, "magic")?;
        if found != expected {
            return Err(FormatError::BadMagic {
                expected: String::from_utf8_lossy(&expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn f32(&mut self, what: &'static str) -> Result<f32> {
        Ok(f32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn f32s(&mut self, n: usize, what: &'static str) -> Result<Vec<f32>> {
        let raw = self.take(n.saturating_mul(4), what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn string(&mut self, what: &'static str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| FormatError::Structure(format!("{what} is not UTF-8")))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(FormatError::Structure(format!(
                "{} trailing bytes after payload",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}
