//! Blocking HTTP client for a model service speaking the `/v1/*` protocol.

use std::io::Read;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use super::wire;
use super::{
    BackendError, BackendResult, DetectionRequest, DetectionResponse, Detector, ScoreRequest, ScoreResponse, Scorer,
    SegmentationRequest, SegmentationResponse, Segmenter,
};

/// Environment variable that overrides the configured service URL.
pub const BACKEND_URL_ENV: &str = "UBDD_BACKEND_URL";

const MAX_BODY_BYTES: u64 = 256 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    pub timeout: Duration,
    /// Retries after the first attempt, transport failures only.
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_in_flight: usize,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            timeout: Duration::from_secs(120),
            max_retries: 3,
            initial_backoff: Duration::from_millis(100),
            max_in_flight: 8,
        }
    }
}

struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.active.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteClient {
    config: RemoteConfig,
    agent: ureq::Agent,
    gate: InFlight,
}

impl std::fmt::Debug for RemoteClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteClient").field("config", &self.config).finish()
    }
}

fn is_timeout(err: &ureq::Transport) -> bool {
    let mut source = std::error::Error::source(err);
    while let Some(s) = source {
        if let Some(io) = s.downcast_ref::<std::io::Error>() {
            if matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) {
                return true;
            }
        }
        source = s.source();
    }
    err.to_string().contains("timed out")
}

impl RemoteClient {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(config.timeout)
            .max_idle_connections_per_host(config.max_in_flight.max(1))
            .build();
        let gate = InFlight { limit: config.max_in_flight.max(1), active: Mutex::new(0), freed: Condvar::new() };
        Self { config, agent, gate }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn post_once(&self, url: &str, body: &[u8]) -> BackendResult<Vec<u8>> {
        let _slot = self.gate.acquire();
        let resp = self
            .agent
            .post(url)
            .set("Content-Type", "application/json")
            .send_bytes(body);
        match resp {
            Ok(r) => {
                let mut buf = Vec::new();
                r.into_reader()
                    .take(MAX_BODY_BYTES)
                    .read_to_end(&mut buf)
                    .map_err(|e| {
                        if e.kind() == std::io::ErrorKind::TimedOut {
                            BackendError::Timeout(e.to_string())
                        } else {
                            BackendError::Transport(e.to_string())
                        }
                    })?;
                Ok(buf)
            }
            Err(ureq::Error::Status(status, r)) => {
                let body = r.into_string().unwrap_or_default();
                Err(BackendError::Status { status, body })
            }
            Err(ureq::Error::Transport(t)) => {
                if is_timeout(&t) {
                    Err(BackendError::Timeout(t.to_string()))
                } else {
                    Err(BackendError::Transport(t.to_string()))
                }
            }
        }
    }

    /// POST with bounded exponential backoff on transport failures.
    pub fn post(&self, path: &str, body: &[u8]) -> BackendResult<Vec<u8>> {
        let url = format!("{}{}", self.config.base_url, path);
        let mut backoff = self.config.initial_backoff;
        let mut attempt = 0;
        loop {
            match self.post_once(&url, body) {
                Err(e) if e.is_retryable() && attempt < self.config.max_retries => {
                    log::warn!("{url}: {e}; retrying in {backoff:?}");
                    std::thread::sleep(backoff);
                    backoff *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

impl Detector for RemoteClient {
    fn detect(&self, req: &DetectionRequest<'_>) -> BackendResult<DetectionResponse> {
        let body = wire::encode_detect_request(req)?;
        let bytes = self.post(wire::DETECT_PATH, &body)?;
        wire::decode_detect_response(&bytes, req)
    }
}

impl Segmenter for RemoteClient {
    fn segment(&self, req: &SegmentationRequest<'_>) -> BackendResult<SegmentationResponse> {
        let body = wire::encode_segment_request(req)?;
        let bytes = self.post(wire::SEGMENT_PATH, &body)?;
        wire::decode_segment_response(&bytes, req)
    }
}

impl Scorer for RemoteClient {
    fn score_prompts(&self, req: &ScoreRequest<'_>) -> BackendResult<ScoreResponse> {
        req.check()?;
        let body = wire::encode_score_request(req)?;
        let bytes = self.post(wire::SCORE_PATH, &body)?;
        wire::decode_score_response(&bytes, req)
    }
}
