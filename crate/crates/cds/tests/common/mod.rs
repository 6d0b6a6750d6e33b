//! Loopback HTTP server speaking the model wire protocol.

#![allow(dead_code)]

pub mod fixture;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use cds::remote::{DistributionRequest, DistributionResponse, TokenizeRequest, TokenizeResponse, WireEntry};
use cds_core::{LanguageModel, TokenId};
use serde_json::json;

pub type Handler = dyn Fn(&str, &str, &str) -> (u16, String) + Send + Sync;

pub struct TestServer {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
    server: Arc<tiny_http::Server>,
    thread: Option<JoinHandle<()>>,
}

impl TestServer {
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Serves `handler(method, path, body) -> (status, json body)` on a free
/// loopback port.
pub fn serve(handler: Box<Handler>) -> TestServer {
    let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind loopback"));
    let port = server.server_addr().to_ip().expect("ip listener").port();
    let hits = Arc::new(AtomicUsize::new(0));
    let (srv, counter) = (server.clone(), hits.clone());
    let thread = thread::spawn(move || {
        for mut req in srv.incoming_requests() {
            counter.fetch_add(1, Ordering::SeqCst);
            let mut body = String::new();
            let _ = req.as_reader().read_to_string(&mut body);
            let (status, text) = handler(req.method().as_str(), req.url(), &body);
            let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
            let _ = req.respond(tiny_http::Response::from_string(text).with_status_code(status).with_header(header));
        }
    });
    TestServer { url: format!("http://127.0.0.1:{port}"), hits, server, thread: Some(thread) }
}

fn error(status: u16, msg: &str) -> (u16, String) {
    (status, json!({ "error": msg }).to_string())
}

/// The top `top_k` entries of `model`'s distribution, highest first, with
/// the rest as residual mass.
pub fn wire_distribution(model: &dyn LanguageModel, context: &[TokenId], top_k: usize) -> DistributionResponse {
    let dist = model.next_distribution(context).expect("distribution");
    let vocab = model.vocabulary();
    let mut ranked: Vec<(usize, f64)> = dist.probs().iter().copied().enumerate().filter(|&(_, p)| p > 0.0).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(top_k);
    let listed: f64 = ranked.iter().map(|&(_, p)| p).sum();
    let residual = 1.0 - listed;
    DistributionResponse {
        entries: ranked
            .iter()
            .map(|&(i, p)| WireEntry { token: vocab.tokens()[i].clone(), logprob: p.ln() })
            .collect(),
        residual_logprob: (residual > 1e-12).then(|| residual.ln()),
    }
}

/// Wire handler exposing `model` the way a model server would.
pub fn model_handler(model: Arc<dyn LanguageModel + Send + Sync>) -> Box<Handler> {
    Box::new(move |method, path, body| {
        let vocab = model.vocabulary();
        match (method, path) {
            ("GET", "/v1/health") => (200, json!({"status": "ok", "model": "fixture"}).to_string()),
            ("GET", "/v1/vocab") => (200, serde_json::to_string(vocab).unwrap()),
            ("POST", "/v1/tokenize") => match serde_json::from_str::<TokenizeRequest>(body) {
                Ok(r) => {
                    let tokens = r.text.split_whitespace().map(String::from).collect();
                    (200, serde_json::to_string(&TokenizeResponse { tokens }).unwrap())
                }
                Err(e) => error(400, &e.to_string()),
            },
            ("POST", "/v1/distribution") => {
                let req: DistributionRequest = match serde_json::from_str(body) {
                    Ok(r) => r,
                    Err(e) => return error(400, &e.to_string()),
                };
                let strings = match (req.context_tokens, req.context_text) {
                    (Some(t), None) => t,
                    (None, Some(text)) => text.split_whitespace().map(String::from).collect(),
                    _ => return error(400, "need exactly one of context_tokens and context_text"),
                };
                let ids: Option<Vec<TokenId>> = strings.iter().map(|s| vocab.id(s)).collect();
                match ids {
                    Some(ids) => {
                        let resp = wire_distribution(model.as_ref(), &ids, req.top_k);
                        (200, serde_json::to_string(&resp).unwrap())
                    }
                    None => error(400, "unknown token in context"),
                }
            }
            _ => error(404, "no such endpoint"),
        }
    })
}
