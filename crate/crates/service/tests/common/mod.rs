#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Duration;

use probekit_gateway::GatewayConfig;
use probekit_service::ApiServer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

pub const BIN: &str = env!("CARGO_BIN_EXE_probekit");

/// Kills the child process on drop.
pub struct ChildGuard(pub std::process::Child);

impl Drop for ChildGuard {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

/// Spawns the binary and waits for its `listening on URL` line.
pub fn spawn_listening(args: &[&str]) -> (ChildGuard, String) {
    let mut child = Command::new(BIN)
        .args(args)
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .expect("spawn probekit");
    let stdout = child.stdout.take().expect("stdout");
    let guard = ChildGuard(child);
    let mut line = String::new();
    BufReader::new(stdout).read_line(&mut line).expect("read banner");
    let url = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
        .to_string();
    (guard, url)
}

/// Runs one CLI command in JSON mode against `server`.
pub fn cli(server: &str, args: &[&str]) -> Result<Value, String> {
    let out = Command::new(BIN)
        .arg("--server")
        .arg(server)
        .arg("--json")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "probekit {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    serde_json::from_slice(&out.stdout).map_err(|e| format!("bad JSON from {}: {e}", args.join(" ")))
}

pub fn fast_gateway() -> GatewayConfig {
    GatewayConfig {
        max_in_flight: 8,
        retry_delays: vec![Duration::from_millis(5); 3],
        timeout: Duration::from_secs(10),
    }
}

pub fn start_api(store: &Path) -> ApiServer {
    let orchestrator = probekit_service::build(store, fast_gateway()).expect("build service");
    ApiServer::start(orchestrator, "127.0.0.1:0".parse().unwrap()).expect("start api")
}

/// Favorable iff privileged group or score above 0.5.
pub fn planted_rule(protected: &str, score: f64) -> bool {
    protected == "A" || score > 0.5
}

/// Seeded table `protected,score,age,label` with gold labels from the
/// planted rule, flipped on roughly one row in ten.
pub fn tabular_csv(rows: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("protected,score,age,label\n");
    for _ in 0..rows {
        let group = ["A", "B", "C"][rng.gen_range(0..3)];
        let score = (rng.gen::<f64>() * 100.0).round() / 100.0;
        let age = rng.gen_range(18..70);
        let mut fav = planted_rule(group, score);
        if rng.gen_bool(0.1) {
            fav = !fav;
        }
        let label = if fav { "favorable" } else { "unfavorable" };
        out.push_str(&format!("{group},{score},{age},{label}\n"));
    }
    out
}

pub fn keyword_corpus() -> String {
    [
        "the food was good and the staff friendly",
        "a good movie with a weak ending",
        "service was slow and the room was cold",
        "really good value for the money spent",
        "nothing special about this place at all",
        "the plot was thin but the acting was good",
        "terrible experience from start to finish",
        "good coffee and quiet tables near windows",
        "would not recommend this product to anyone",
        "pretty good overall though a little pricey",
        "the manual was confusing and incomplete",
        "good battery life and a bright screen",
    ]
    .join("\n")
}

/// Simple blocking JSON client for the API.
pub struct Api {
    pub base: String,
    http: reqwest::blocking::Client,
}

impl Api {
    pub fn new(base: &str) -> Self {
        Api {
            base: base.trim_end_matches('/').to_string(),
            http: reqwest::blocking::Client::new(),
        }
    }

    pub fn call(&self, method: reqwest::Method, path: &str, body: Option<&Value>) -> (u16, Value, String) {
        let mut req = self.http.request(method, format!("{}{}", self.base, path));
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().expect("api reachable");
        let status = resp.status().as_u16();
        let text = resp.text().unwrap_or_default();
        let value = serde_json::from_str(&text).unwrap_or(Value::Null);
        (status, value, text)
    }

    pub fn get(&self, path: &str) -> (u16, Value, String) {
        self.call(reqwest::Method::GET, path, None)
    }

    pub fn post(&self, path: &str, body: &Value) -> (u16, Value, String) {
        self.call(reqwest::Method::POST, path, Some(body))
    }

    pub fn delete(&self, path: &str) -> (u16, Value, String) {
        self.call(reqwest::Method::DELETE, path, None)
    }

    /// Polls collection status until it is terminal.
    pub fn wait(&self, collection: &str, timeout: Duration) -> Value {
        let deadline = std::time::Instant::now() + timeout;
        loop {
            let (_, s, _) = self.get(&format!("/collections/{collection}/status"));
            let state = s["state"].as_str().unwrap_or("");
            if matches!(state, "completed" | "cancelled" | "errored") {
                return s;
            }
            assert!(std::time::Instant::now() < deadline, "collection did not finish: {s}");
            std::thread::sleep(Duration::from_millis(25));
        }
    }
}

pub fn model_body(name: &str, url: &str, headers: Value) -> Value {
    serde_json::json!({
        "name": name,
        "endpoint_url": url,
        "headers": headers,
        "request_template": "{\"instances\": {{SAMPLES}}}",
        "label_path": "$.predictions[*].label",
        "confidence_path": "$.predictions[*].confidence",
        "batch_limit": 50,
    })
}

/// Snapshot arithmetic: executed = passed + failed + errored <= generated.
pub fn snapshot_consistent(s: &Value) -> bool {
    let n = |k: &str| s[k].as_u64().unwrap_or(u64::MAX);
    n("executed") == n("passed") + n("failed") + n("errored") && n("executed") <= n("generated")
}
