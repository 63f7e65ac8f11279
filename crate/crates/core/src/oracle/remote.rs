use std::time::Duration;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MameError, Result};

#[derive(Serialize)]
struct PredictRequest<'a> {
    instances: &'a [Vec<f64>],
}

#[derive(Deserialize)]
struct PredictResponse {
    predictions: Vec<f64>,
}

#[derive(Deserialize)]
struct ErrorResponse {
    error: String,
}

/// Client for a model served over `POST {base}/predict`.
#[derive(Debug, Clone)]
pub struct RemoteOracle {
    base_url: String,
    timeout: Duration,
    batch_size: usize,
    max_attempts: u32,
    agent: ureq::Agent,
}

impl RemoteOracle {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self::with_options(base_url, Duration::from_millis(30_000), 256)
    }

    pub fn with_options(base_url: impl Into<String>, timeout: Duration, batch_size: usize) -> Self {
        let base_url = base_url.into().trim_end_matches('/').to_owned();
        Self {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            base_url,
            timeout,
            batch_size: batch_size.max(1),
            max_attempts: 3,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// `GET {base}/health`; true when the server answers `{"status":"ok"}`.
    pub fn health(&self) -> Result<bool> {
        let resp = self
            .agent
            .get(&format!("{}/health", self.base_url))
            .call()
            .map_err(|e| MameError::Transport {
                attempts: 1,
                message: e.to_string(),
            })?;
        let body: serde_json::Value = resp.into_json()?;
        Ok(body.get("status").and_then(|s| s.as_str()) == Some("ok"))
    }

    pub(crate) fn predict(&self, z: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let rows: Vec<Vec<f64>> = z.rows().into_iter().map(|r| r.to_vec()).collect();
        let chunks: Vec<Vec<f64>> = rows
            .par_chunks(self.batch_size)
            .map(|chunk| self.predict_chunk(chunk))
            .collect::<Result<_>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }

    fn predict_chunk(&self, chunk: &[Vec<f64>]) -> Result<Vec<f64>> {
        let url = format!("{}/predict", self.base_url);
        let body = serde_json::to_value(PredictRequest { instances: chunk })?;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.agent.post(&url).send_json(body.clone()) {
                Ok(resp) => {
                    let text = resp.into_string().map_err(|e| MameError::Transport {
                        attempts,
                        message: e.to_string(),
                    })?;
                    let parsed: PredictResponse = serde_json::from_str(&text)
                        .map_err(|e| MameError::OracleResponse(format!("malformed body: {e}")))?;
                    if parsed.predictions.len() != chunk.len() {
                        return Err(MameError::OracleResponse(format!(
                            "expected {} predictions, got {}",
                            chunk.len(),
                            parsed.predictions.len()
                        )));
                    }
                    return Ok(parsed.predictions);
                }
                Err(ureq::Error::Status(code, resp)) => {
                    let detail = resp
                        .into_string()
                        .ok()
                        .and_then(|t| serde_json::from_str::<ErrorResponse>(&t).ok())
                        .map(|e| e.error)
                        .unwrap_or_default();
                    // 4xx answers are deterministic; only server-side failures are retried.
                    if code < 500 || attempts >= self.max_attempts {
                        return Err(MameError::Transport {
                            attempts,
                            message: format!("HTTP {code}: {detail}"),
                        });
                    }
                }
                Err(e) => {
                    if attempts >= self.max_attempts {
                        return Err(MameError::Transport {
                            attempts,
                            message: e.to_string(),
                        });
                    }
                }
            }
            std::thread::sleep(Duration::from_millis(50 * u64::from(attempts)));
        }
    }
}
