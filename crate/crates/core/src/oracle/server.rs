//! Minimal in-process HTTP server exposing a built-in [`Oracle`] over the
//! JSON prediction protocol. Used to exercise [`RemoteOracle`] end to end
//! and to check recorded protocol fixtures.
//!
//! [`RemoteOracle`]: super::RemoteOracle

use std::sync::Arc;
use std::thread::JoinHandle;

use ndarray::Array2;
use serde::Deserialize;
use serde_json::json;

use super::Oracle;
use crate::error::{MameError, Result};

#[derive(Deserialize)]
struct PredictRequest {
    instances: Vec<Vec<f64>>,
}

/// Answer for a single protocol request: status code and JSON body.
pub fn handle(oracle: &Oracle, method: &str, path: &str, body: &str) -> (u16, serde_json::Value) {
    match (method, path) {
        ("GET", "/health") => (200, json!({"status": "ok"})),
        ("POST", "/predict") => match predict(oracle, body) {
            Ok(predictions) => (200, json!({ "predictions": predictions })),
            Err(e) => (400, json!({ "error": e.to_string() })),
        },
        _ => (404, json!({ "error": format!("no route for {method} {path}") })),
    }
}

fn predict(oracle: &Oracle, body: &str) -> Result<Vec<f64>> {
    let req: PredictRequest =
        serde_json::from_str(body).map_err(|e| MameError::invalid(format!("malformed request: {e}")))?;
    if req.instances.is_empty() {
        return Ok(Vec::new());
    }
    let width = req.instances[0].len();
    if req.instances.iter().any(|r| r.len() != width) {
        return Err(MameError::invalid("instances have differing widths"));
    }
    let flat: Vec<f64> = req.instances.into_iter().flatten().collect();
    let z = Array2::from_shape_vec((flat.len() / width.max(1), width), flat)
        .map_err(|e| MameError::invalid(e.to_string()))?;
    Ok(oracle.predict_batch(z.view())?.to_vec())
}

/// Background server; stops when dropped.
pub struct OracleServer {
    server: Arc<tiny_http::Server>,
    url: String,
    worker: Option<JoinHandle<()>>,
}

impl OracleServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and starts serving.
    pub fn start(oracle: Oracle, addr: &str) -> Result<Self> {
        let server = tiny_http::Server::http(addr)
            .map_err(|e| MameError::Io(std::io::Error::new(std::io::ErrorKind::Other, e.to_string())))?;
        let server = Arc::new(server);
        let bound = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| MameError::invalid("server did not bind an IP address"))?;
        let url = format!("http://{bound}");
        let worker = {
            let server = Arc::clone(&server);
            std::thread::spawn(move || {
                for mut request in server.incoming_requests() {
                    let mut body = String::new();
                    let (code, value) = match request.as_reader().read_to_string(&mut body) {
                        Ok(_) => handle(&oracle, request.method().as_str(), request.url(), &body),
                        Err(e) => (400, json!({ "error": e.to_string() })),
                    };
                    let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
                        .expect("static header");
                    let response = tiny_http::Response::from_string(value.to_string())
                        .with_status_code(code)
                        .with_header(header);
                    let _ = request.respond(response);
                }
            })
        };
        Ok(Self {
            server,
            url,
            worker: Some(worker),
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl Drop for OracleServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}
