use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{BrainBackend, BrainError};

/// Environment variable holding the bearer token for the endpoint.
pub const API_KEY_ENV: &str = "BBSEA_API_KEY";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: f64,
    /// Retries after the first attempt on transient failures.
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub backoff_ms: u64,
    /// Cap on HTTP attempts over the backend's lifetime.
    pub max_requests: Option<usize>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4".into(),
            temperature: 0.0,
            timeout_secs: 60.0,
            max_retries: 4,
            backoff_ms: 500,
            max_requests: None,
        }
    }
}

pub struct RemoteBackend {
    cfg: RemoteConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    attempts: AtomicUsize,
}

enum Failure {
    Transient(BrainError),
    Fatal(BrainError),
}

impl RemoteBackend {
    pub fn new(cfg: RemoteConfig) -> Result<Self, BrainError> {
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_key(cfg, api_key)
    }

    pub fn with_key(cfg: RemoteConfig, api_key: Option<String>) -> Result<Self, BrainError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs.max(0.001)))
            .build()
            .map_err(|e| BrainError::Transport(e.to_string()))?;
        Ok(Self {
            cfg,
            api_key,
            client,
            attempts: AtomicUsize::new(0),
        })
    }

    /// HTTP attempts made so far, retries included.
    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }

    fn take_budget(&self) -> Result<(), BrainError> {
        let n = self.attempts.fetch_add(1, Ordering::SeqCst);
        match self.cfg.max_requests {
            Some(cap) if n >= cap => {
                self.attempts.fetch_sub(1, Ordering::SeqCst);
                Err(BrainError::BudgetExceeded)
            }
            _ => Ok(()),
        }
    }

    fn attempt(&self, body: &str) -> Result<String, Failure> {
        let mut req = self
            .client
            .post(&self.cfg.endpoint)
            .header("content-type", "application/json")
            .body(body.to_string());
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                Failure::Transient(BrainError::Timeout)
            } else {
                Failure::Transient(BrainError::Transport(e.to_string()))
            }
        })?;
        let status = resp.status().as_u16();
        if status == 429 || (500..600).contains(&status) {
            return Err(Failure::Transient(BrainError::HttpError(status)));
        }
        if !(200..300).contains(&status) {
            return Err(Failure::Fatal(BrainError::HttpError(status)));
        }
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                Failure::Transient(BrainError::Timeout)
            } else {
                Failure::Transient(BrainError::Transport(e.to_string()))
            }
        })?;
        let v: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Failure::Fatal(BrainError::BadResponse(e.to_string())))?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| Failure::Fatal(BrainError::BadResponse("no choices[0].message.content".into())))
    }
}

impl BrainBackend for RemoteBackend {
    fn query(&self, prompt: &str) -> Result<String, BrainError> {
        let body = json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
        })
        .to_string();
        let mut delay = Duration::from_millis(self.cfg.backoff_ms);
        let mut retries = 0;
        loop {
            self.take_budget()?;
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient(e)) => {
                    if retries >= self.cfg.max_retries {
                        return Err(e);
                    }
                    warn!("transient failure ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                    retries += 1;
                }
            }
        }
    }

    fn identity(&self) -> String {
        format!("remote:{}", self.cfg.model)
    }
}

/// Content address of a prompt for a given model.
pub fn cache_key(prompt: &str, model: &str) -> String {
    let mut h = Sha256::new();
    h.update(prompt.as_bytes());
    h.update(model.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    model: String,
    prompt: String,
    response: String,
}

/// Directory of `<key>.json` files. Writes go through a temp file and a
/// rename, so readers never see a partial entry.
pub struct CacheStore {
    dir: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl CacheStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, BrainError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| BrainError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir,
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    fn lock(&self, key: &str) -> Arc<Mutex<()>> {
        self.locks
            .lock()
            .unwrap()
            .entry(key.to_string())
            .or_default()
            .clone()
    }

    pub fn get(&self, prompt: &str, model: &str) -> Result<Option<String>, BrainError> {
        let path = self.path(&cache_key(prompt, model));
        match fs::read_to_string(&path) {
            Ok(text) => {
                let e: CacheEntry = serde_json::from_str(&text)
                    .map_err(|e| BrainError::Cache(format!("{}: {e}", path.display())))?;
                Ok(Some(e.response))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(BrainError::Cache(format!("{}: {e}", path.display()))),
        }
    }

    pub fn put(&self, prompt: &str, model: &str, response: &str) -> Result<(), BrainError> {
        let path = self.path(&cache_key(prompt, model));
        let entry = CacheEntry {
            model: model.to_string(),
            prompt: prompt.to_string(),
            response: response.to_string(),
        };
        let err = |e: std::io::Error| BrainError::Cache(format!("{}: {e}", path.display()));
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(err)?;
        serde_json::to_writer_pretty(&mut tmp, &entry).map_err(|e| BrainError::Cache(e.to_string()))?;
        tmp.flush().map_err(err)?;
        tmp.persist(&path).map_err(|e| err(e.error))?;
        Ok(())
    }

    /// Hit, or compute under the key's lock and store.
    pub fn get_or_insert_with<F>(&self, prompt: &str, model: &str, f: F) -> Result<String, BrainError>
    where
        F: FnOnce() -> Result<String, BrainError>,
    {
        let lock = self.lock(&cache_key(prompt, model));
        let _guard = lock.lock().unwrap();
        if let Some(hit) = self.get(prompt, model)? {
            debug!("cache hit");
            return Ok(hit);
        }
        let response = f()?;
        self.put(prompt, model, &response)?;
        Ok(response)
    }
}

/// Serves from the cache and falls through to `inner` on a miss, storing
/// every fresh response.
pub struct CachedBackend<B> {
    inner: B,
    store: CacheStore,
    model: String,
}

impl<B: BrainBackend> CachedBackend<B> {
    pub fn new(inner: B, store: CacheStore, model: &str) -> Self {
        Self {
            inner,
            store,
            model: model.to_string(),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: BrainBackend> BrainBackend for CachedBackend<B> {
    fn query(&self, prompt: &str) -> Result<String, BrainError> {
        self.store
            .get_or_insert_with(prompt, &self.model, || self.inner.query(prompt))
    }

    fn identity(&self) -> String {
        self.inner.identity()
    }
}

/// Cache-only replay of earlier remote sessions; a miss is an error.
pub struct ReplayBackend {
    store: CacheStore,
    model: String,
}

impl ReplayBackend {
    pub fn new(store: CacheStore, model: &str) -> Self {
        Self {
            store,
            model: model.to_string(),
        }
    }
}

impl BrainBackend for ReplayBackend {
    fn query(&self, prompt: &str) -> Result<String, BrainError> {
        self.store.get(prompt, &self.model)?.ok_or(BrainError::CacheMiss)
    }

    fn identity(&self) -> String {
        format!("cached-remote:{}", self.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read};
    use std::net::TcpListener;

    /// Serves one scripted (status, body) per connection and records the
    /// request bodies.
    fn mock_server(script: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in script {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn ok_body(text: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
    }

    fn cfg(endpoint: &str) -> RemoteConfig {
        RemoteConfig {
            endpoint: endpoint.into(),
            model: "m".into(),
            timeout_secs: 5.0,
            max_retries: 3,
            backoff_ms: 1,
            ..RemoteConfig::default()
        }
    }

    #[test]
    fn retries_transient_failures() {
        let script = vec![
            (503, "{}".to_string()),
            (429, "{}".to_string()),
            (200, ok_body(" - open the drawer")),
        ];
        let (url, server) = mock_server(script);
        let b = RemoteBackend::with_key(cfg(&url), Some("k".into())).unwrap();
        assert_eq!(b.query("p").unwrap(), " - open the drawer");
        assert_eq!(b.attempts(), 3);
        let bodies = server.join().unwrap();
        let req: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(req["model"], "m");
        assert_eq!(req["temperature"], 0.0);
        assert_eq!(req["messages"][0]["role"], "user");
        assert_eq!(req["messages"][0]["content"], "p");
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, server) = mock_server(vec![(401, "{}".to_string())]);
        let b = RemoteBackend::with_key(cfg(&url), None).unwrap();
        assert_eq!(b.query("p"), Err(BrainError::HttpError(401)));
        assert_eq!(b.attempts(), 1);
        server.join().unwrap();
    }

    #[test]
    fn retries_are_bounded() {
        let script = vec![(500, "{}".to_string()); 4];
        let (url, server) = mock_server(script);
        let b = RemoteBackend::with_key(cfg(&url), None).unwrap();
        assert_eq!(b.query("p"), Err(BrainError::HttpError(500)));
        assert_eq!(b.attempts(), 4);
        server.join().unwrap();
    }

    #[test]
    fn zero_budget() {
        let b = RemoteBackend::with_key(
            RemoteConfig {
                max_requests: Some(0),
                ..cfg("http://127.0.0.1:9/")
            },
            None,
        )
        .unwrap();
        assert_eq!(b.query("p"), Err(BrainError::BudgetExceeded));
        assert_eq!(b.attempts(), 0);
    }

    #[test]
    fn cache_hit_skips_network() {
        let dir = tempfile::tempdir().unwrap();
        let (url, server) = mock_server(vec![(200, ok_body("first"))]);
        let remote = RemoteBackend::with_key(cfg(&url), None).unwrap();
        let cached = CachedBackend::new(remote, CacheStore::open(dir.path()).unwrap(), "m");
        assert_eq!(cached.query("p").unwrap(), "first");
        assert_eq!(cached.query("p").unwrap(), "first");
        assert_eq!(cached.inner().attempts(), 1);
        server.join().unwrap();

        let replay = ReplayBackend::new(CacheStore::open(dir.path()).unwrap(), "m");
        assert_eq!(replay.query("p").unwrap(), "first");
        assert_eq!(replay.query("other"), Err(BrainError::CacheMiss));
        let other_model = ReplayBackend::new(CacheStore::open(dir.path()).unwrap(), "n");
        assert_eq!(other_model.query("p"), Err(BrainError::CacheMiss));
    }

    #[test]
    fn cache_is_safe_under_contention() {
        let dir = tempfile::tempdir().unwrap();
        let store = CacheStore::open(dir.path()).unwrap();
        let calls = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    let r = store
                        .get_or_insert_with("p", "m", || {
                            calls.fetch_add(1, Ordering::SeqCst);
                            Ok("r".into())
                        })
                        .unwrap();
                    assert_eq!(r, "r");
                });
            }
        });
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        let files: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(files.len(), 1);
    }

    #[test]
    fn key_is_content_addressed() {
        assert_eq!(cache_key("a", "m"), cache_key("a", "m"));
        assert_ne!(cache_key("a", "m"), cache_key("a", "n"));
        assert_eq!(cache_key("a", "m").len(), 64);
    }
}
