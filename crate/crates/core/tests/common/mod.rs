//! In-process encoder service backed by the toy encoder.
#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use sen2pro::augment::{augment_n, Vocab};
use sen2pro::encoder::{EncoderConfig, ToyEncoder};
use sen2pro::service::{EmbedRequest, EmbedResponse, HealthInfo, WireMode};
use tiny_http::{Header, Response, Server};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behavior {
    Conforming,
    /// Replies with `text/plain`.
    WrongContentType,
    /// `/health` reports one more dimension than `/embed` returns.
    DimMismatch,
    /// Every request fails with status 500.
    ServerError,
}

pub struct MockService {
    server: Arc<Server>,
    handle: Option<JoinHandle<()>>,
    embed_calls: Arc<AtomicUsize>,
    pub url: String,
}

impl MockService {
    pub fn start(config: EncoderConfig, vocab: Vocab, behavior: Behavior) -> Self {
        let server = Arc::new(Server::http("127.0.0.1:0").expect("bind mock server"));
        let port = server.server_addr().to_ip().expect("ip listener").port();
        let embed_calls = Arc::new(AtomicUsize::new(0));
        let handle = {
            let server = Arc::clone(&server);
            let calls = Arc::clone(&embed_calls);
            std::thread::spawn(move || serve(&server, &config, &vocab, behavior, &calls))
        };
        MockService {
            server,
            handle: Some(handle),
            embed_calls,
            url: format!("http://127.0.0.1:{port}"),
        }
    }

    pub fn conforming(vocab: Vocab) -> Self {
        MockService::start(EncoderConfig::default(), vocab, Behavior::Conforming)
    }

    pub fn embed_calls(&self) -> usize {
        self.embed_calls.load(Ordering::SeqCst)
    }
}

impl Drop for MockService {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn json_response(body: String, behavior: Behavior) -> Response<std::io::Cursor<Vec<u8>>> {
    let ct = if behavior == Behavior::WrongContentType {
        "text/plain"
    } else {
        "application/json"
    };
    Response::from_string(body).with_header(Header::from_bytes("Content-Type", ct).unwrap())
}

fn embed(
    req: &EmbedRequest,
    config: &EncoderConfig,
    vocab: &Vocab,
) -> Result<EmbedResponse, String> {
    req.validate().map_err(|e| e.to_string())?;
    let encoder = ToyEncoder::new(EncoderConfig {
        pooling: req.pooling,
        ..config.clone()
    })
    .map_err(|e| e.to_string())?;
    let embeddings = req
        .sentences
        .iter()
        .enumerate()
        .map(|(i, s)| match req.mode {
            WireMode::Plain => Ok(vec![encoder.encode(s, None).map_err(|e| e.to_string())?]),
            WireMode::McDropout => encoder
                .encode_mc(&i.to_string(), s, req.n, req.seed)
                .map(|set| set.into_samples())
                .map_err(|e| e.to_string()),
            WireMode::Augment => augment_n(s, req.n, req.seed, vocab)
                .map_err(|e| e.to_string())?
                .iter()
                .map(|v| encoder.encode(v, None).map_err(|e| e.to_string()))
                .collect(),
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(EmbedResponse {
        dim: encoder.dim(),
        embeddings,
    })
}

fn serve(
    server: &Server,
    config: &EncoderConfig,
    vocab: &Vocab,
    behavior: Behavior,
    calls: &AtomicUsize,
) {
    for mut request in server.incoming_requests() {
        if behavior == Behavior::ServerError {
            let _ = request.respond(Response::from_string("model exploded").with_status_code(500));
            continue;
        }
        let path = request.url().to_string();
        let response = match path.as_str() {
            "/health" => {
                let dim = config.d_model + usize::from(behavior == Behavior::DimMismatch);
                let info = HealthInfo {
                    model: "toy".into(),
                    dim,
                };
                json_response(serde_json::to_string(&info).unwrap(), behavior)
            }
            "/embed" => {
                calls.fetch_add(1, Ordering::SeqCst);
                let mut body = String::new();
                let _ = request.as_reader().read_to_string(&mut body);
                match serde_json::from_str::<EmbedRequest>(&body)
                    .map_err(|e| e.to_string())
                    .and_then(|r| embed(&r, config, vocab))
                {
                    Ok(resp) => json_response(serde_json::to_string(&resp).unwrap(), behavior),
                    Err(e) => {
                        json_response(serde_json::json!({ "error": e }).to_string(), behavior)
                            .with_status_code(400)
                    }
                }
            }
            _ => Response::from_string("not found").with_status_code(404),
        };
        let _ = request.respond(response);
    }
}
