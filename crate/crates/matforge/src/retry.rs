//! Retry with exponential backoff around a provider.

use std::time::Duration;

use matforge_core::{Embedding, EmbeddingProvider, ProviderError, Srgb8Image};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Total tries per request, including the first.
    pub attempts: u32,
    pub initial_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 4,
            initial_delay_ms: 200,
            max_delay_ms: 5_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `n` (0-based): doubling, capped.
    pub fn delay(&self, n: u32) -> Duration {
        let ms = self.initial_delay_ms.saturating_mul(1u64 << n.min(32));
        Duration::from_millis(ms.min(self.max_delay_ms))
    }
}

/// Retries [`ProviderError::Unavailable`] failures; other errors pass through.
pub struct RetryingProvider<P> {
    inner: P,
    policy: RetryPolicy,
    sleep: fn(Duration),
}

impl<P: EmbeddingProvider> RetryingProvider<P> {
    pub fn new(inner: P, policy: RetryPolicy) -> Self {
        RetryingProvider {
            inner,
            policy,
            sleep: std::thread::sleep,
        }
    }

    /// Replaces the sleep function (tests record delays instead).
    pub fn with_sleep(mut self, sleep: fn(Duration)) -> Self {
        self.sleep = sleep;
        self
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    fn retry<T>(
        &self,
        mut f: impl FnMut() -> Result<T, ProviderError>,
    ) -> Result<T, ProviderError> {
        let attempts = self.policy.attempts.max(1);
        let mut n = 0;
        loop {
            match f() {
                Err(ProviderError::Unavailable(_)) if n + 1 < attempts => {
                    (self.sleep)(self.policy.delay(n));
                    n += 1;
                }
                Err(ProviderError::Unavailable(msg)) => {
                    return Err(ProviderError::Unavailable(format!(
                        "{msg} (after {attempts} attempts)"
                    )))
                }
                other => return other,
            }
        }
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for RetryingProvider<P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn name(&self) -> String {
        self.inner.name()
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError> {
        self.retry(|| self.inner.embed_text(text))
    }

    fn embed_image(&self, image: &Srgb8Image) -> Result<Embedding, ProviderError> {
        self.retry(|| self.inner.embed_image(image))
    }
}
