//! Minimal `/v1/*` HTTP server around any [`Backends`] set. Used to expose
//! the mock over the wire for client integration tests.

use std::io::Read;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use tiny_http::{Header, Method, Request, Response, Server};

use super::wire;
use super::{BackendError, Backends, DetectionRequest, ScoreRequest, SegmentationRequest};
use crate::error::{Error, Result};

const MAX_REQUEST_BYTES: u64 = 128 * 1024 * 1024;

pub struct ServerHandle {
    server: Arc<Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Block until the server is shut down from elsewhere.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Bind `addr` (port 0 picks a free port) and serve with `workers` threads.
pub fn serve(addr: &str, backends: Backends, workers: usize) -> Result<ServerHandle> {
    let server = Server::http(addr).map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
    let bound = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| Error::Config("server bound to a non-IP socket".into()))?;
    let server = Arc::new(server);
    let workers = (0..workers.max(1))
        .map(|_| {
            let server = Arc::clone(&server);
            let backends = backends.clone();
            std::thread::spawn(move || {
                while let Ok(req) = server.recv() {
                    handle(req, &backends);
                }
            })
        })
        .collect();
    Ok(ServerHandle { server, addr: bound, workers })
}

fn json_header() -> Header {
    Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header")
}

fn reply(req: Request, status: u16, body: Vec<u8>) {
    let resp = Response::from_data(body).with_status_code(status).with_header(json_header());
    if let Err(e) = req.respond(resp) {
        log::warn!("failed to send response: {e}");
    }
}

fn backend_status(e: &BackendError) -> u16 {
    match e {
        BackendError::InvalidRequest(_) => 400,
        _ => 500,
    }
}

fn handle(mut req: Request, backends: &Backends) {
    let path = req.url().split('?').next().unwrap_or("").to_string();
    if *req.method() == Method::Get && path == wire::HEALTH_PATH {
        return reply(req, 200, br#"{"status":"ok"}"#.to_vec());
    }
    if *req.method() != Method::Post {
        return reply(req, 405, wire::encode_error("method not allowed"));
    }
    let mut body = Vec::new();
    if let Err(e) = req.as_reader().take(MAX_REQUEST_BYTES).read_to_end(&mut body) {
        return reply(req, 400, wire::encode_error(&e.to_string()));
    }
    let outcome: std::result::Result<Vec<u8>, (u16, String)> = match path.as_str() {
        wire::DETECT_PATH => wire::decode_detect_request(&body)
            .map_err(|e| (400, e))
            .and_then(|(image, prompt, threshold)| {
                let r = DetectionRequest { image: &image, text_prompt: &prompt, box_threshold: threshold };
                backends
                    .detector
                    .detect(&r)
                    .map(|resp| wire::encode_detect_response(&resp))
                    .map_err(|e| (backend_status(&e), e.to_string()))
            }),
        wire::SEGMENT_PATH => wire::decode_segment_request(&body)
            .map_err(|e| (400, e))
            .and_then(|(image, prompt)| {
                let r = SegmentationRequest { image: &image, prompt };
                backends
                    .segmenter
                    .segment(&r)
                    .and_then(|resp| wire::encode_segment_response(&resp))
                    .map_err(|e| (backend_status(&e), e.to_string()))
            }),
        wire::SCORE_PATH => wire::decode_score_request(&body)
            .map_err(|e| (400, e))
            .and_then(|(image, prompts)| {
                let r = ScoreRequest { image: &image, prompts: &prompts };
                backends
                    .scorer
                    .score_prompts(&r)
                    .map(|resp| wire::encode_score_response(&resp))
                    .map_err(|e| (backend_status(&e), e.to_string()))
            }),
        _ => Err((404, format!("no route for {path}"))),
    };
    match outcome {
        Ok(bytes) => reply(req, 200, bytes),
        Err((status, msg)) => reply(req, status, wire::encode_error(&msg)),
    }
}
