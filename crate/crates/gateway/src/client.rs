//! Outbound calls to model APIs.
//!
//! A [`Gateway`] owns the HTTP client, the in-flight request cap and the
//! retry policy. It hands out [`PredictorHandle`]s: opaque predictors bound
//! to one model whose only capability is `predict_batch`.

use std::fmt;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use probekit_core::model::{HttpMethod, ModelSpec};
use probekit_core::{Outcome, PredictError, Predictor, Sample};
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{GatewayError, Result};
use crate::template::{extract_predictions, render_request};

pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;
pub const DEFAULT_RETRY_DELAYS_MS: [u64; 3] = [200, 800, 3200];
const MAX_ERROR_BODY: usize = 200;

#[derive(Clone, Debug)]
pub struct GatewayConfig {
    pub max_in_flight: usize,
    /// Wait before each retry; the number of entries is the retry count.
    pub retry_delays: Vec<Duration>,
    pub timeout: Duration,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            retry_delays: DEFAULT_RETRY_DELAYS_MS.iter().map(|ms| Duration::from_millis(*ms)).collect(),
            timeout: Duration::from_secs(30),
        }
    }
}

/// Counting semaphore for blocking callers.
struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

struct Shared {
    http: reqwest::blocking::Client,
    semaphore: Semaphore,
    config: GatewayConfig,
}

#[derive(Clone)]
pub struct Gateway {
    shared: Arc<Shared>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway").field("config", &self.shared.config).finish()
    }
}

impl Gateway {
    /// Builds the HTTP client. Must not be called from inside an async runtime.
    pub fn new(config: GatewayConfig) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(Gateway {
            shared: Arc::new(Shared {
                http,
                semaphore: Semaphore::new(config.max_in_flight),
                config,
            }),
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.shared.config
    }

    /// Binds a validated model spec into an opaque predictor.
    pub fn handle(&self, spec: ModelSpec) -> Result<PredictorHandle> {
        spec.validate().map_err(|e| GatewayError::Spec(e.to_string()))?;
        crate::jsonpath::JsonPath::parse(&spec.label_path)?;
        if let Some(p) = &spec.confidence_path {
            crate::jsonpath::JsonPath::parse(p)?;
        }
        Ok(PredictorHandle {
            inner: Arc::new(Bound {
                spec,
                shared: self.shared.clone(),
            }),
        })
    }

    /// Checks that the endpoint answers HTTP at all; any status counts.
    pub fn probe(&self, spec: &ModelSpec) -> Result<()> {
        self.shared
            .http
            .get(&spec.endpoint_url)
            .timeout(Duration::from_secs(5))
            .send()
            .map(|_| ())
            .map_err(|e| GatewayError::Transport(e.without_url().to_string()))
    }
}

struct Bound {
    spec: ModelSpec,
    shared: Arc<Shared>,
}

impl Bound {
    fn send_once(&self, body: &str) -> Result<String> {
        let _permit = self.shared.semaphore.acquire();
        let mut request = match self.spec.http_method {
            HttpMethod::Post => self.shared.http.post(&self.spec.endpoint_url),
            HttpMethod::Get => self.shared.http.get(&self.spec.endpoint_url),
        };
        for (name, value) in &self.spec.headers {
            request = request.header(name.as_str(), value.as_str());
        }
        let response = request
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string())
            .send()
            .map_err(|e| GatewayError::Transport(e.without_url().to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| GatewayError::Transport(e.without_url().to_string()))?;
        if !status.is_success() {
            let mut body: String = text.chars().take(MAX_ERROR_BODY).collect();
            if body.len() < text.len() {
                body.push_str("...");
            }
            return Err(GatewayError::Status {
                status: status.as_u16(),
                body,
            });
        }
        Ok(text)
    }

    fn send_with_retry(&self, body: &str) -> Result<String> {
        let mut delays = self.shared.config.retry_delays.iter();
        loop {
            match self.send_once(body) {
                Err(e) if e.is_retryable() => match delays.next() {
                    Some(d) => std::thread::sleep(*d),
                    None => return Err(e),
                },
                other => return other,
            }
        }
    }

    fn predict_chunk(&self, chunk: &[Sample]) -> Result<Vec<Outcome>> {
        let body = render_request(&self.spec, chunk)?;
        let text = self.send_with_retry(&body)?;
        Ok(extract_predictions(&text, &self.spec, chunk.len())?
            .into_iter()
            .map(Ok)
            .collect())
    }
}

/// A model bound for prediction. Exposes neither the endpoint's headers nor
/// any other part of the model spec beyond the model name and batch size.
#[derive(Clone)]
pub struct PredictorHandle {
    inner: Arc<Bound>,
}

impl PredictorHandle {
    pub fn model_name(&self) -> &str {
        &self.inner.spec.name
    }

    pub fn batch_limit(&self) -> usize {
        self.inner.spec.effective_batch_limit()
    }
}

impl fmt::Debug for PredictorHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PredictorHandle")
            .field("model", &self.model_name())
            .field("batch_limit", &self.batch_limit())
            .finish()
    }
}

impl Serialize for PredictorHandle {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("PredictorHandle", 2)?;
        st.serialize_field("model", self.model_name())?;
        st.serialize_field("batch_limit", &self.batch_limit())?;
        st.end()
    }
}

impl Predictor for PredictorHandle {
    /// Chunks by the batch limit; a failed chunk yields one error per sample.
    fn predict_batch(&self, samples: &[Sample]) -> Vec<Outcome> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(self.batch_limit()) {
            match self.inner.predict_chunk(chunk) {
                Ok(outcomes) => out.extend(outcomes),
                Err(e) => {
                    let err = PredictError::new(e.to_string());
                    out.extend(chunk.iter().map(|_| Err(err.clone())));
                }
            }
        }
        out
    }
}
