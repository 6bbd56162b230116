use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::parse::parse_completion;
use super::prompt::PromptTemplate;
use super::{ExpandError, ExpandedQueries, GenerationParams};
use crate::data::Passage;

/// Anything that turns a prompt into a raw completion.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String, ExpandError>;

    /// Recorded as `generator` in expansion files, e.g. `remote:my-model`.
    fn generator_name(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: String,
    /// Model name recorded in outputs (and sent as `model` when set).
    #[serde(default)]
    pub model: Option<String>,
    /// Environment variable holding a bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
    pub timeout_secs: f64,
    /// Retries after the first attempt.
    pub retries: u32,
    /// First backoff delay; doubles per retry.
    pub backoff_ms: u64,
    /// Global request rate ceiling across workers.
    #[serde(default)]
    pub rate_limit_per_sec: Option<f64>,
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: None,
            auth_env: None,
            timeout_secs: 60.0,
            retries: 3,
            backoff_ms: 500,
            rate_limit_per_sec: None,
        }
    }
}

/// Request counters, safe to read while requests are in flight.
#[derive(Debug, Default)]
pub struct Metrics {
    pub requests: AtomicU64,
    pub retries: AtomicU64,
    pub failures: AtomicU64,
}

/// Spaces request start times at least `interval` apart across threads.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    pub fn new(per_sec: f64) -> Self {
        Self {
            interval: Duration::from_secs_f64(1.0 / per_sec.max(1e-9)),
            next: Mutex::new(Instant::now()),
        }
    }

    pub fn acquire(&self) {
        let slot = {
            let mut next = self.next.lock().expect("rate limiter poisoned");
            let slot = (*next).max(Instant::now());
            *next = slot + self.interval;
            slot
        };
        let now = Instant::now();
        if slot > now {
            std::thread::sleep(slot - now);
        }
    }
}

/// Minimal completion client: one JSON POST per prompt with body
/// `{prompt, top_p, top_k, temperature, max_tokens}`; the completion is
/// read from `text` (or `choices[0].text`).
pub struct HttpCompletion {
    config: EndpointConfig,
    agent: ureq::Agent,
    token: Option<String>,
    limiter: Option<RateLimiter>,
    pub metrics: Metrics,
}

#[derive(Serialize)]
struct RequestBody<'a> {
    prompt: &'a str,
    top_p: f64,
    top_k: usize,
    temperature: f64,
    max_tokens: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
}

impl HttpCompletion {
    pub fn new(config: EndpointConfig) -> Result<Self, ExpandError> {
        if !(config.timeout_secs > 0.0) {
            return Err(ExpandError::Config("timeout_secs must be positive".into()));
        }
        let token = match &config.auth_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| ExpandError::Config(format!("auth token variable {var} is not set")))?,
            ),
            None => None,
        };
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build();
        let limiter = config.rate_limit_per_sec.map(RateLimiter::new);
        Ok(Self {
            config,
            agent,
            token,
            limiter,
            metrics: Metrics::default(),
        })
    }

    pub fn request_body(&self, prompt: &str, params: &GenerationParams) -> serde_json::Value {
        serde_json::to_value(RequestBody {
            prompt,
            top_p: params.top_p,
            top_k: params.top_k,
            temperature: params.temperature,
            max_tokens: params.max_new_tokens,
            model: self.config.model.as_deref(),
        })
        .expect("request serializes")
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String, Attempt> {
        if let Some(l) = &self.limiter {
            l.acquire();
        }
        self.metrics.requests.fetch_add(1, Ordering::Relaxed);
        let mut req = self.agent.post(&self.config.url);
        if let Some(t) = &self.token {
            req = req.set("Authorization", &format!("Bearer {t}"));
        }
        match req.send_json(body) {
            Ok(resp) => {
                let text = resp
                    .into_string()
                    .map_err(|e| Attempt::Fatal(ExpandError::Parse(format!("reading body: {e}"))))?;
                extract_text(&text).map_err(Attempt::Fatal)
            }
            Err(ureq::Error::Status(code, resp)) => {
                let message = resp.into_string().unwrap_or_default();
                let err = ExpandError::Endpoint {
                    status: code,
                    message: message.chars().take(200).collect(),
                };
                if code >= 500 || code == 429 {
                    Err(Attempt::Retry(err))
                } else {
                    Err(Attempt::Fatal(err))
                }
            }
            Err(ureq::Error::Transport(t)) => {
                let timed_out = std::error::Error::source(&t)
                    .and_then(|s| s.downcast_ref::<std::io::Error>())
                    .is_some_and(|e| matches!(e.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock))
                    || t.to_string().contains("timed out");
                Err(Attempt::Retry(if timed_out {
                    ExpandError::Timeout(self.config.timeout_secs)
                } else {
                    ExpandError::Transport(t.to_string())
                }))
            }
        }
    }
}

enum Attempt {
    Retry(ExpandError),
    Fatal(ExpandError),
}

fn extract_text(body: &str) -> Result<String, ExpandError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| ExpandError::Parse(format!("response is not JSON: {e}")))?;
    v.get("text")
        .or_else(|| v.pointer("/choices/0/text"))
        .and_then(|t| t.as_str())
        .map(str::to_string)
        .ok_or_else(|| ExpandError::Parse("response has no `text` or `choices[0].text` string".into()))
}

impl CompletionBackend for HttpCompletion {
    /// Retries transport failures, timeouts, 5xx and 429 up to the retry
    /// budget with exponential backoff; other statuses fail immediately.
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String, ExpandError> {
        let body = self.request_body(prompt, params);
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => {
                    self.metrics.failures.fetch_add(1, Ordering::Relaxed);
                    return Err(e);
                }
                Err(Attempt::Retry(e)) => {
                    if attempt >= self.config.retries {
                        self.metrics.failures.fetch_add(1, Ordering::Relaxed);
                        return Err(e);
                    }
                    attempt += 1;
                    self.metrics.retries.fetch_add(1, Ordering::Relaxed);
                    std::thread::sleep(delay);
                    delay = delay.saturating_mul(2);
                }
            }
        }
    }

    fn generator_name(&self) -> String {
        format!("remote:{}", self.config.model.as_deref().unwrap_or("default"))
    }
}

/// Outcome of expanding a corpus through a backend.
#[derive(Debug)]
pub struct RemoteExpansion {
    /// In corpus order.
    pub records: Vec<ExpandedQueries>,
    /// Passages whose completions contained no queries.
    pub empty: Vec<String>,
}

/// Expands `passages` with `workers` threads. Results are keyed by passage
/// and returned in input order regardless of completion order. The first
/// endpoint, timeout or parse error aborts the run.
pub fn expand_remote(
    backend: &dyn CompletionBackend,
    template: &PromptTemplate,
    passages: &[Passage],
    params: &GenerationParams,
    workers: usize,
    created_at: &str,
) -> Result<RemoteExpansion, ExpandError> {
    params.validate()?;
    template.validate()?;
    let next = AtomicUsize::new(0);
    let failed = Mutex::new(None::<ExpandError>);
    let results: Mutex<Vec<Option<Result<Vec<String>, ()>>>> = Mutex::new(vec![None; passages.len()]);
    std::thread::scope(|s| {
        for _ in 0..workers.max(1) {
            s.spawn(|| loop {
                if failed.lock().expect("poisoned").is_some() {
                    return;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(p) = passages.get(i) else { return };
                let outcome = template
                    .render(&p.text, params.n_queries)
                    .and_then(|prompt| backend.complete(&prompt, params))
                    .and_then(|raw| parse_completion(&raw));
                let slot = match outcome {
                    Ok(q) => Ok(q),
                    Err(ExpandError::EmptyExpansion) => Err(()),
                    Err(e) => {
                        failed.lock().expect("poisoned").get_or_insert(e);
                        return;
                    }
                };
                results.lock().expect("poisoned")[i] = Some(slot);
            });
        }
    });
    if let Some(e) = failed.into_inner().expect("poisoned") {
        return Err(e);
    }
    let mut records = Vec::new();
    let mut empty = Vec::new();
    let generator = backend.generator_name();
    let echo = serde_json::to_value(params).expect("params serialize");
    for (p, r) in passages.iter().zip(results.into_inner().expect("poisoned")) {
        match r.expect("every passage processed") {
            Ok(queries) => records.push(ExpandedQueries {
                passage_id: p.id.clone(),
                queries,
                generator: generator.clone(),
                params: echo.clone(),
                created_at: created_at.to_string(),
            }),
            Err(()) => empty.push(p.id.clone()),
        }
    }
    Ok(RemoteExpansion { records, empty })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    /// Serves canned `(status, body)` responses in order, recording request
    /// bodies.
    fn mock(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>, std::thread::JoinHandle<()>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/completions", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        let handle = std::thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                log.lock().unwrap().push(String::from_utf8(buf).unwrap());
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        (url, seen, handle)
    }

    fn fast(url: &str, retries: u32) -> HttpCompletion {
        let mut cfg = EndpointConfig::new(url);
        cfg.retries = retries;
        cfg.backoff_ms = 1;
        cfg.timeout_secs = 5.0;
        HttpCompletion::new(cfg).unwrap()
    }

    #[test]
    fn passthrough_and_request_body() {
        let (url, seen, h) = mock(vec![(200, r#"{"text": "1. q"}"#.into())]);
        let client = fast(&url, 0);
        let raw = client.complete("hello", &GenerationParams::default()).unwrap();
        h.join().unwrap();
        assert_eq!(raw, "1. q");
        let body: serde_json::Value = serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
        assert_eq!(body["prompt"], "hello");
        assert_eq!(body["top_p"], 0.95);
        assert_eq!(body["top_k"], 50);
        assert_eq!(body["temperature"], 0.7);
        assert_eq!(body["max_tokens"], 128);
    }

    #[test]
    fn choices_fallback() {
        assert_eq!(extract_text(r#"{"choices": [{"text": "a"}]}"#).unwrap(), "a");
        assert!(matches!(extract_text("nope"), Err(ExpandError::Parse(_))));
        assert!(matches!(extract_text(r#"{"x": 1}"#), Err(ExpandError::Parse(_))));
    }

    #[test]
    fn server_errors_exhaust_the_retry_budget() {
        let (url, seen, h) = mock(vec![(500, "{}".into()), (500, "{}".into()), (500, "{}".into())]);
        let client = fast(&url, 2);
        let err = client.complete("p", &GenerationParams::default()).unwrap_err();
        h.join().unwrap();
        assert!(matches!(err, ExpandError::Endpoint { status: 500, .. }), "{err}");
        assert_eq!(seen.lock().unwrap().len(), 3);
        assert_eq!(client.metrics.retries.load(Ordering::Relaxed), 2);
        assert_eq!(client.metrics.requests.load(Ordering::Relaxed), 3);
    }

    #[test]
    fn retry_then_success_and_client_errors_fail_fast() {
        let (url, _, h) = mock(vec![(503, "{}".into()), (200, r#"{"text": "ok"}"#.into())]);
        assert_eq!(fast(&url, 2).complete("p", &GenerationParams::default()).unwrap(), "ok");
        h.join().unwrap();
        let (url, seen, h) = mock(vec![(400, "bad".into())]);
        let err = fast(&url, 5).complete("p", &GenerationParams::default()).unwrap_err();
        h.join().unwrap();
        assert!(matches!(err, ExpandError::Endpoint { status: 400, .. }));
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn malformed_body_is_a_parse_error() {
        let (url, _, h) = mock(vec![(200, "not json".into())]);
        let err = fast(&url, 3).complete("p", &GenerationParams::default()).unwrap_err();
        h.join().unwrap();
        assert!(matches!(err, ExpandError::Parse(_)));
    }

    #[test]
    fn timeout_is_reported() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", listener.local_addr().unwrap());
        let h = std::thread::spawn(move || {
            let (_stream, _) = listener.accept().unwrap();
            std::thread::sleep(Duration::from_millis(600));
        });
        let mut cfg = EndpointConfig::new(url);
        cfg.retries = 0;
        cfg.timeout_secs = 0.2;
        let err = HttpCompletion::new(cfg).unwrap().complete("p", &GenerationParams::default()).unwrap_err();
        h.join().unwrap();
        assert!(matches!(err, ExpandError::Timeout(_)), "{err}");
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let l = RateLimiter::new(50.0);
        let start = Instant::now();
        for _ in 0..6 {
            l.acquire();
        }
        assert!(start.elapsed() >= Duration::from_millis(95));
    }

    struct Fake;
    impl CompletionBackend for Fake {
        fn complete(&self, prompt: &str, _: &GenerationParams) -> Result<String, ExpandError> {
            if prompt.contains("EMPTY") {
                return Ok("\n".into());
            }
            let tail = prompt.lines().rev().find(|l| l.starts_with("Input: ")).unwrap_or("").to_string();
            Ok(format!("1. {tail}\n2. {}", tail.to_uppercase()))
        }
        fn generator_name(&self) -> String {
            "remote:fake".into()
        }
    }

    #[test]
    fn pool_preserves_corpus_order_and_skips_empty() {
        let passages: Vec<Passage> = (0..40)
            .map(|i| Passage {
                id: format!("p{i}"),
                text: if i == 7 { "EMPTY".into() } else { format!("text {i}") },
            })
            .collect();
        let out = expand_remote(
            &Fake,
            &PromptTemplate::few_shot(),
            &passages,
            &GenerationParams::default(),
            4,
            "2024-01-01T00:00:00Z",
        )
        .unwrap();
        assert_eq!(out.empty, vec!["p7"]);
        assert_eq!(out.records.len(), 39);
        for (r, i) in out.records.iter().zip((0..40).filter(|&i| i != 7)) {
            assert_eq!(r.passage_id, format!("p{i}"));
            assert_eq!(r.queries, vec![format!("Input: text {i}")]);
            assert_eq!(r.generator, "remote:fake");
        }
    }
}
