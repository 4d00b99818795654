//! Client for an external embedding adapter speaking line-delimited JSON.
//!
//! Request: `{"id": u64, "op": "embed_text"|"embed_image"|"lpips"|"info",
//! "payload": string}`. Image payloads are base64 PNG; `lpips` takes two of
//! them joined by a comma. Response: `{"id", "ok", "embedding"|"distance"|
//! "dim"|"error"}`. The adapter is reached over a child process's
//! stdin/stdout or by POSTing each request line to an HTTP endpoint.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use matforge_core::metric::ImageMetric;
use matforge_core::{
    tonemap, Embedding, EmbeddingProvider, ImageBuffer, ProviderError, Srgb8Image,
};
use serde::{Deserialize, Serialize};

use crate::image::encode_png;

/// Tolerance on the norm of returned embeddings.
const NORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: u64,
    pub op: String,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Carries one request line to the adapter and returns its response line.
pub trait Transport: Send + Sync {
    fn exchange(&self, line: &str) -> Result<String, ProviderError>;
    fn describe(&self) -> String;
}

struct Pipe {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// A child process serving requests on stdin/stdout, one line each way.
pub struct StdioTransport {
    command: Vec<String>,
    pipe: Mutex<Option<Pipe>>,
}

impl StdioTransport {
    pub fn spawn(command: &[String]) -> Result<Self, ProviderError> {
        let t = StdioTransport {
            command: command.to_vec(),
            pipe: Mutex::new(None),
        };
        *t.pipe.lock().expect("fresh mutex") = Some(t.start()?);
        Ok(t)
    }

    fn start(&self) -> Result<Pipe, ProviderError> {
        let (program, args) = self
            .command
            .split_first()
            .ok_or_else(|| ProviderError::Unavailable("empty adapter command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ProviderError::Unavailable(format!("spawning {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Pipe {
            child,
            stdin,
            stdout,
        })
    }
}

impl Transport for StdioTransport {
    fn exchange(&self, line: &str) -> Result<String, ProviderError> {
        let mut guard = self
            .pipe
            .lock()
            .map_err(|_| ProviderError::Unavailable("adapter lock poisoned".into()))?;
        if guard.is_none() {
            *guard = Some(self.start()?);
        }
        let pipe = guard.as_mut().expect("started above");
        let result = (|| {
            pipe.stdin.write_all(line.as_bytes())?;
            pipe.stdin.write_all(b"\n")?;
            pipe.stdin.flush()?;
            let mut resp = String::new();
            if pipe.stdout.read_line(&mut resp)? == 0 {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::UnexpectedEof,
                    "adapter closed its output",
                ));
            }
            Ok(resp)
        })();
        match result {
            Ok(r) => Ok(r),
            Err(e) => {
                // restart on the next request
                if let Some(mut p) = guard.take() {
                    let _ = p.child.kill();
                    let _ = p.child.wait();
                }
                Err(ProviderError::Unavailable(format!("adapter process: {e}")))
            }
        }
    }

    fn describe(&self) -> String {
        format!("stdio:{}", self.command.join(" "))
    }
}

impl Drop for StdioTransport {
    fn drop(&mut self) {
        if let Ok(mut guard) = self.pipe.lock() {
            if let Some(mut p) = guard.take() {
                drop(p.stdin);
                let _ = p.child.kill();
                let _ = p.child.wait();
            }
        }
    }
}

/// Each request line is POSTed as the body; the response body is the reply.
pub struct HttpTransport {
    url: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpTransport {
            url: url.into(),
            agent,
        }
    }
}

impl Transport for HttpTransport {
    fn exchange(&self, line: &str) -> Result<String, ProviderError> {
        let mut resp = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(line)
            .map_err(|e| ProviderError::Unavailable(format!("{}: {e}", self.url)))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Unavailable(format!("{}: {e}", self.url)))?;
        match status {
            200..=299 => Ok(body),
            500..=599 => Err(ProviderError::Unavailable(format!(
                "{}: HTTP {status}",
                self.url
            ))),
            _ => Err(ProviderError::Failed(format!(
                "{}: HTTP {status}",
                self.url
            ))),
        }
    }

    fn describe(&self) -> String {
        format!("http:{}", self.url)
    }
}

/// Embedding provider and LPIPS source backed by an adapter.
pub struct AdapterClient {
    transport: Box<dyn Transport>,
    next_id: AtomicU64,
    dim: usize,
}

impl AdapterClient {
    /// Connects and asks the adapter for its embedding dimension.
    pub fn connect(transport: Box<dyn Transport>) -> Result<Self, ProviderError> {
        let mut client = AdapterClient {
            transport,
            next_id: AtomicU64::new(1),
            dim: 0,
        };
        let info = client.call("info", String::new())?;
        client.dim = info
            .dim
            .filter(|d| *d > 0)
            .ok_or_else(|| ProviderError::Failed("info response without a dimension".into()))?;
        Ok(client)
    }

    pub fn call(&self, op: &str, payload: String) -> Result<WireResponse, ProviderError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let req = WireRequest {
            id,
            op: op.to_string(),
            payload,
        };
        let line = serde_json::to_string(&req).expect("request serializes");
        let raw = self.transport.exchange(&line)?;
        let resp: WireResponse = serde_json::from_str(raw.trim())
            .map_err(|e| ProviderError::Failed(format!("malformed adapter response: {e}")))?;
        if resp.id != id {
            return Err(ProviderError::Failed(format!(
                "response id {} for request {id}",
                resp.id
            )));
        }
        if !resp.ok {
            return Err(ProviderError::Failed(
                resp.error.unwrap_or_else(|| "adapter error".into()),
            ));
        }
        Ok(resp)
    }

    fn embedding(&self, resp: WireResponse) -> Result<Embedding, ProviderError> {
        let v = resp
            .embedding
            .ok_or_else(|| ProviderError::Failed("response without an embedding".into()))?;
        if v.len() != self.dim {
            return Err(ProviderError::Failed(format!(
                "embedding of dimension {}, expected {}",
                v.len(),
                self.dim
            )));
        }
        let e = Embedding::new(v);
        if !e.is_finite() || (e.norm() - 1.0).abs() > NORM_TOLERANCE {
            return Err(ProviderError::Failed(format!(
                "embedding norm {} is not 1",
                e.norm()
            )));
        }
        Ok(e)
    }

    /// Perceptual distance between two rasters.
    pub fn lpips(&self, a: &Srgb8Image, b: &Srgb8Image) -> Result<f64, ProviderError> {
        let payload = format!("{},{}", png_base64(a)?, png_base64(b)?);
        let resp = self.call("lpips", payload)?;
        resp.distance
            .filter(|d| d.is_finite() && *d >= 0.0)
            .ok_or_else(|| ProviderError::Failed("response without a valid distance".into()))
    }
}

fn png_base64(image: &Srgb8Image) -> Result<String, ProviderError> {
    let png = encode_png(image).map_err(|e| ProviderError::Failed(e.to_string()))?;
    Ok(STANDARD.encode(png))
}

impl EmbeddingProvider for AdapterClient {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> String {
        format!("adapter-{}-{}", self.dim, self.transport.describe())
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError> {
        let resp = self.call("embed_text", text.to_string())?;
        self.embedding(resp)
    }

    fn embed_image(&self, image: &Srgb8Image) -> Result<Embedding, ProviderError> {
        let resp = self.call("embed_image", png_base64(image)?)?;
        self.embedding(resp)
    }
}

/// LPIPS through the adapter on tonemapped renders.
pub struct LpipsMetric<'a> {
    pub client: &'a AdapterClient,
    pub exposure: f64,
}

impl ImageMetric for LpipsMetric<'_> {
    fn distance(&self, a: &ImageBuffer, b: &ImageBuffer) -> matforge_core::Result<f64> {
        let d = self
            .client
            .lpips(&tonemap(a, self.exposure), &tonemap(b, self.exposure))?;
        Ok(d)
    }
}
