use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use lrexplain_core::data::PromptRegime;
use lrexplain_core::embedding::Embedder;
use lrexplain_core::prompts::RenderedPrompt;
use lrexplain_providers::cache::{CachedEmbedder, EmbeddingCache};
use lrexplain_providers::chat::{ChatClient, GenerationConfig};
use lrexplain_providers::embed::{EmbeddingConfig, OfflineHashEmbedder, RemoteEmbedder};
use lrexplain_providers::throttle::{Clock, RateLimiter};
use lrexplain_providers::transport::{HttpRequest, HttpResponse, HttpTransport, TransportError};
use lrexplain_providers::{embed_batch, ProviderError};
use serde_json::json;

/// Replays scripted outcomes and records every request it receives. Once
/// the script runs out it keeps returning `fallback`.
struct Scripted {
    script: Mutex<VecDeque<Result<HttpResponse, TransportError>>>,
    fallback: Result<HttpResponse, TransportError>,
    requests: Mutex<Vec<HttpRequest>>,
}

impl Scripted {
    fn new(script: Vec<Result<HttpResponse, TransportError>>, fallback: Result<HttpResponse, TransportError>) -> Arc<Self> {
        Arc::new(Self {
            script: Mutex::new(script.into()),
            fallback,
            requests: Mutex::new(Vec::new()),
        })
    }

    fn calls(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

impl HttpTransport for Scripted {
    fn post_json(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        self.requests.lock().unwrap().push(request.clone());
        self.script.lock().unwrap().pop_front().unwrap_or_else(|| self.fallback.clone())
    }
}

fn ok(body: serde_json::Value) -> Result<HttpResponse, TransportError> {
    Ok(HttpResponse { status: 200, body: body.to_string() })
}

fn status(code: u16) -> Result<HttpResponse, TransportError> {
    Ok(HttpResponse { status: code, body: "{\"error\":\"x\"}".into() })
}

fn completion(text: &str) -> Result<HttpResponse, TransportError> {
    ok(json!({"choices": [{"message": {"role": "assistant", "content": text}}]}))
}

/// Virtual time: sleeping advances the clock instantly.
struct VirtualClock {
    base: Instant,
    offset: Mutex<Duration>,
}

impl VirtualClock {
    fn new() -> Arc<Self> {
        Arc::new(Self { base: Instant::now(), offset: Mutex::new(Duration::ZERO) })
    }

    fn elapsed(&self) -> Duration {
        *self.offset.lock().unwrap()
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Instant {
        self.base + *self.offset.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        *self.offset.lock().unwrap() += d;
    }
}

fn gen_cfg() -> GenerationConfig {
    GenerationConfig {
        base_url: "http://mllm.test/v1".into(),
        model_name: "vision-model".into(),
        ..Default::default()
    }
}

fn prompt() -> RenderedPrompt {
    RenderedPrompt {
        regime: PromptRegime::NoScore,
        system: "You are a forensic face examiner.".into(),
        user: "Compare the two faces.".into(),
    }
}

fn limiter() -> Arc<RateLimiter> {
    Arc::new(RateLimiter::per_minute(1000))
}

fn keys() -> HashMap<String, String> {
    [("LREXPLAIN_API_KEY".to_string(), "sk-test".to_string())].into()
}

#[test]
fn chat_request_shape_and_response() {
    let t = Scripted::new(vec![completion("Match Verdict: Match\nSimilarities: eyes")], status(500));
    let client = ChatClient::new(gen_cfg(), t.clone(), "sk-test", limiter()).unwrap();
    let text = client.generate_explanation(&prompt(), ("http://img/a.jpg", "http://img/b.jpg")).unwrap();
    assert!(text.contains("Match Verdict:"));

    let reqs = t.requests.lock().unwrap();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].url, "http://mllm.test/v1/chat/completions");
    assert!(reqs[0].headers.contains(&("Authorization".into(), "Bearer sk-test".into())));
    let body = &reqs[0].body;
    assert_eq!(body["model"], "vision-model");
    assert_eq!(body["temperature"], 0.7);
    assert_eq!(body["messages"][0]["role"], "system");
    let parts = body["messages"][1]["content"].as_array().unwrap();
    assert_eq!(parts[0]["text"], "Compare the two faces.");
    assert_eq!(parts[1]["image_url"]["url"], "http://img/a.jpg");
    assert_eq!(parts[2]["image_url"]["url"], "http://img/b.jpg");
}

#[test]
fn rate_limited_then_success() {
    let clock = VirtualClock::new();
    let t = Scripted::new(vec![status(429), completion("Match Verdict: Non-match")], status(500));
    let client = ChatClient::new(gen_cfg(), t.clone(), "k", limiter()).unwrap().with_clock(clock.clone());
    let text = client.generate_explanation(&prompt(), ("a", "b")).unwrap();
    assert_eq!(text, "Match Verdict: Non-match");
    assert_eq!(t.calls(), 2);
    assert_eq!(clock.elapsed(), Duration::from_millis(500));
}

#[test]
fn missing_credential_fails_before_any_request() {
    let t = Scripted::new(vec![], completion("never"));
    let err = ChatClient::from_lookup(gen_cfg(), t.clone(), limiter(), |_| None).err().unwrap();
    assert!(matches!(err, ProviderError::MissingCredential(ref v) if v == "LREXPLAIN_API_KEY"));
    assert!(err.is_auth());
    let err = RemoteEmbedder::from_lookup(
        EmbeddingConfig { base_url: "http://e".into(), ..Default::default() },
        t.clone(),
        limiter(),
        |_| None,
    )
    .err()
    .unwrap();
    assert!(matches!(err, ProviderError::MissingCredential(ref v) if v == "LREXPLAIN_EMBED_API_KEY"));
    assert_eq!(t.calls(), 0);

    let k = keys();
    assert!(ChatClient::from_lookup(gen_cfg(), t.clone(), limiter(), |v| k.get(v).cloned()).is_ok());
}

#[test]
fn error_kinds_are_distinct() {
    let clock = VirtualClock::new();
    let client = |t: Arc<Scripted>| {
        ChatClient::new(GenerationConfig { max_retries: 2, ..gen_cfg() }, t, "k", limiter())
            .unwrap()
            .with_clock(clock.clone())
    };

    let t = Scripted::new(vec![], status(401));
    assert!(matches!(client(t.clone()).generate_explanation(&prompt(), ("a", "b")), Err(ProviderError::Auth { status: 401, .. })));
    assert_eq!(t.calls(), 1, "auth failures are not retried");

    let t = Scripted::new(vec![], Err(TransportError::Timeout));
    assert!(matches!(client(t.clone()).generate_explanation(&prompt(), ("a", "b")), Err(ProviderError::Timeout { attempts: 3 })));
    assert_eq!(t.calls(), 3);

    let t = Scripted::new(vec![], ok(json!({"unexpected": true})));
    assert!(matches!(client(t.clone()).generate_explanation(&prompt(), ("a", "b")), Err(ProviderError::MalformedResponse(_))));

    let t = Scripted::new(vec![], Ok(HttpResponse { status: 200, body: "<html>".into() }));
    assert!(matches!(client(t).generate_explanation(&prompt(), ("a", "b")), Err(ProviderError::MalformedResponse(_))));

    let t = Scripted::new(vec![], status(503));
    assert!(matches!(client(t).generate_explanation(&prompt(), ("a", "b")), Err(ProviderError::Unavailable { attempts: 3, .. })));

    let t = Scripted::new(vec![], status(400));
    assert!(matches!(client(t.clone()).generate_explanation(&prompt(), ("a", "b")), Err(ProviderError::Http { status: 400, .. })));
    assert_eq!(t.calls(), 1);
}

#[test]
fn throttle_holds_over_a_minute_window() {
    let clock = VirtualClock::new();
    let t = Scripted::new(vec![], completion("Match Verdict: Match"));
    let cfg = GenerationConfig { requests_per_minute: 4, ..gen_cfg() };
    let client = ChatClient::new(cfg, t.clone(), "k", Arc::new(RateLimiter::per_minute(4)))
        .unwrap()
        .with_clock(clock.clone());
    let mut starts = Vec::new();
    for _ in 0..10 {
        client.generate_explanation(&prompt(), ("a", "b")).unwrap();
        starts.push(clock.elapsed());
        clock.sleep(Duration::from_secs(1));
    }
    for (i, s) in starts.iter().enumerate() {
        let n = starts[i..].iter().filter(|&&x| x - *s < Duration::from_secs(60)).count();
        assert!(n <= 4);
    }
    assert!(starts[9] >= Duration::from_secs(120));
}

fn embedding_response(dim: usize, fill: f64) -> Result<HttpResponse, TransportError> {
    ok(json!({"data": [{"embedding": vec![fill; dim], "index": 0}], "model": "text-embedding-3-small"}))
}

#[test]
fn remote_embedder_wire_format_and_dimension() {
    let t = Scripted::new(vec![embedding_response(1536, 0.01), embedding_response(8, 0.1)], status(500));
    let cfg = EmbeddingConfig { base_url: "http://emb.test/v1/".into(), ..Default::default() };
    let e = RemoteEmbedder::new(cfg, t.clone(), "k", limiter()).unwrap();
    let v = e.embed_text("Match Verdict: Match").unwrap();
    assert_eq!(v.dim(), 1536);
    assert_eq!(v.provider_tag(), "remote:text-embedding-3-small");
    {
        let reqs = t.requests.lock().unwrap();
        assert_eq!(reqs[0].url, "http://emb.test/v1/embeddings");
        assert_eq!(reqs[0].body["input"], "Match Verdict: Match");
    }
    assert!(matches!(e.embed_text("short"), Err(ProviderError::MalformedResponse(_))));
    assert!(matches!(e.embed_text("  "), Err(ProviderError::EmptyText)));
    assert_eq!(t.calls(), 2);
}

#[test]
fn cache_hit_makes_no_network_call() {
    let dir = tempfile::tempdir().unwrap();
    let t = Scripted::new(vec![], embedding_response(1536, 0.02));
    let cfg = EmbeddingConfig { base_url: "http://emb.test/v1".into(), ..Default::default() };
    let cache = Arc::new(EmbeddingCache::open(dir.path().join("m.jsonl.embeddings.jsonl")).unwrap());
    let e = CachedEmbedder::new(RemoteEmbedder::new(cfg.clone(), t.clone(), "k", limiter()).unwrap(), cache);
    let first = e.embed("the same explanation").unwrap();
    assert_eq!(t.calls(), 1);
    let second = e.embed("the same explanation").unwrap();
    assert_eq!(t.calls(), 1);
    assert_eq!(first, second);

    // A fresh process reading the same file is free too.
    let reopened = Arc::new(EmbeddingCache::open(dir.path().join("m.jsonl.embeddings.jsonl")).unwrap());
    let t2 = Scripted::new(vec![], status(500));
    let e2 = CachedEmbedder::new(RemoteEmbedder::new(cfg, t2.clone(), "k", limiter()).unwrap(), reopened);
    assert_eq!(e2.embed("the same explanation").unwrap(), first);
    assert_eq!(t2.calls(), 0);
}

/// Counts calls to the wrapped embedder.
struct Counting<E> {
    inner: E,
    calls: AtomicUsize,
}

impl<E: Embedder> Embedder for Counting<E> {
    fn provider_tag(&self) -> &str {
        self.inner.provider_tag()
    }

    fn embed(&self, text: &str) -> Result<lrexplain_core::EmbeddingVector, lrexplain_core::embedding::EmbedError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.embed(text)
    }
}

#[test]
fn training_scale_batch_is_fully_cached() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.jsonl.embeddings.jsonl");
    let texts: Vec<String> = (0..13_200)
        .map(|i| format!("Match Verdict: {} similar nose {i}", if i % 2 == 0 { "Match" } else { "Non-match" }))
        .collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();

    let cache = Arc::new(EmbeddingCache::open(&path).unwrap());
    let e = CachedEmbedder::new(Counting { inner: OfflineHashEmbedder, calls: AtomicUsize::new(0) }, cache);
    let out = embed_batch(&refs, &e, 8).unwrap();
    assert_eq!(out.len(), 13_200);
    assert_eq!(out[7], OfflineHashEmbedder.embed_text(&texts[7]).unwrap());

    let cache = Arc::new(EmbeddingCache::open(&path).unwrap());
    assert_eq!(cache.len(), 13_200);
    let again = CachedEmbedder::new(Counting { inner: OfflineHashEmbedder, calls: AtomicUsize::new(0) }, cache);
    let out2 = embed_batch(&refs, &again, 8).unwrap();
    assert_eq!(out, out2);
    assert_eq!(again.inner().calls.load(Ordering::SeqCst), 0);
}
