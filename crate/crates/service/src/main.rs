use std::collections::BTreeMap;
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::AtomicUsize;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use probekit_core::model::{HttpMethod, Modality};
use probekit_gateway::{Faults, GatewayConfig, MockModel};
use serde_json::{json, Map, Value};

#[derive(Parser)]
#[command(name = "probekit", version, about = "Black-box property testing for model APIs")]
struct Cli {
    /// Base URL of the API server.
    #[arg(long, global = true, env = "PROBEKIT_SERVER", default_value = "http://127.0.0.1:8080")]
    server: String,
    /// Print machine-readable JSON.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the API server.
    Serve {
        #[arg(long, default_value = "probekit-data")]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long, default_value_t = probekit_gateway::client::DEFAULT_MAX_IN_FLIGHT)]
        max_in_flight: usize,
    },
    #[command(subcommand)]
    Properties(PropertiesCmd),
    #[command(subcommand)]
    Project(ProjectCmd),
    #[command(subcommand)]
    Model(ModelCmd),
    #[command(subcommand)]
    Config(ConfigCmd),
    #[command(subcommand)]
    Run(RunCmd),
    #[command(subcommand, name = "mock-model")]
    MockModel(MockCmd),
}

#[derive(Subcommand)]
enum PropertiesCmd {
    List,
}

#[derive(Subcommand)]
enum ProjectCmd {
    Create { name: String },
    List,
}

#[derive(Subcommand)]
enum ModelCmd {
    /// Register a model API with its training data as a test subject.
    Register(RegisterArgs),
}

#[derive(Args)]
struct RegisterArgs {
    #[arg(long)]
    project: String,
    #[arg(long)]
    name: String,
    #[arg(long, value_parser = parse_modality)]
    modality: Modality,
    #[arg(long)]
    endpoint: String,
    /// Request body with one `{{SAMPLES}}` or `{{SAMPLE}}` placeholder.
    #[arg(long, default_value = "{\"instances\": {{SAMPLES}}}")]
    template: String,
    #[arg(long, default_value = "$.predictions[*].label")]
    label_path: String,
    #[arg(long)]
    confidence_path: Option<String>,
    /// `Name: value`; repeatable.
    #[arg(long = "header")]
    headers: Vec<String>,
    #[arg(long, default_value_t = 32)]
    batch_limit: usize,
    #[arg(long, default_value = "POST", value_parser = parse_method)]
    method: HttpMethod,
    #[arg(long)]
    training: PathBuf,
    #[arg(long)]
    labeled_eval: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ConfigCmd {
    Create(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    subject: String,
    /// Comma-separated property ids.
    #[arg(long, value_delimiter = ',', required = true)]
    properties: Vec<String>,
    /// `property.parameter=value`; the value is JSON or a bare string.
    #[arg(long = "param")]
    params: Vec<String>,
    /// `key=value` data-specific input; the value is JSON or a bare string.
    #[arg(long = "data")]
    data: Vec<String>,
    #[arg(long, default_value_t = 100)]
    generation_limit: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum RunCmd {
    /// Start a run collection for a configuration.
    Exec {
        #[arg(long)]
        config: String,
        #[arg(long)]
        idempotency_key: Option<String>,
        /// Skip the endpoint reachability probe.
        #[arg(long)]
        force: bool,
        /// Poll until the collection finishes.
        #[arg(long)]
        wait: bool,
        #[arg(long, default_value_t = 600)]
        timeout_secs: u64,
    },
    Status { collection: String },
    Metrics { run: String },
    Failures {
        run: String,
        #[arg(long, default_value_t = 0)]
        offset: usize,
        #[arg(long, default_value_t = 50)]
        limit: usize,
    },
    Compare {
        #[arg(long)]
        project: String,
        #[arg(long, value_delimiter = ',', required = true)]
        collections: Vec<String>,
    },
    Cancel { collection: String },
    Reevaluate { run: String },
}

#[derive(Subcommand)]
enum MockCmd {
    /// Serve a deterministic mock model over HTTP.
    Serve {
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 0)]
        port: u16,
        /// `name=value` model parameter; repeatable.
        #[arg(long = "param")]
        params: Vec<String>,
        /// Fault injection settings as JSON.
        #[arg(long)]
        faults: Option<String>,
    },
}

fn parse_modality(s: &str) -> Result<Modality, String> {
    serde_json::from_value(Value::from(s)).map_err(|_| format!("unknown modality {s:?}"))
}

fn parse_method(s: &str) -> Result<HttpMethod, String> {
    serde_json::from_value(Value::from(s.to_uppercase())).map_err(|_| format!("unknown method {s:?}"))
}

/// JSON if it parses, otherwise the raw text as a string.
fn loose_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn split_pair<'a>(raw: &'a str, sep: char, what: &str) -> anyhow::Result<(&'a str, &'a str)> {
    raw.split_once(sep)
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| anyhow!("{what} {raw:?} is missing {sep:?}"))
}

struct Client {
    base: String,
    http: reqwest::blocking::Client,
}

impl Client {
    fn new(base: &str) -> anyhow::Result<Self> {
        Ok(Client {
            base: base.trim_end_matches('/').to_string(),
            http: reqwest::blocking::Client::builder().timeout(Duration::from_secs(600)).build()?,
        })
    }

    fn call(&self, method: reqwest::Method, path: &str, body: Option<&Value>) -> anyhow::Result<Value> {
        let mut req = self.http.request(method, format!("{}{}", self.base, path));
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().with_context(|| format!("cannot reach {}", self.base))?;
        let status = resp.status();
        let text = resp.text()?;
        let value: Value = if text.is_empty() { Value::Null } else { serde_json::from_str(&text)? };
        if !status.is_success() {
            let msg = value.get("message").and_then(Value::as_str).unwrap_or(&text);
            bail!("{status}: {msg}");
        }
        Ok(value)
    }

    fn get(&self, path: &str) -> anyhow::Result<Value> {
        self.call(reqwest::Method::GET, path, None)
    }

    fn post(&self, path: &str, body: &Value) -> anyhow::Result<Value> {
        self.call(reqwest::Method::POST, path, Some(body))
    }
}

fn emit(json_mode: bool, value: &Value, human: impl FnOnce(&Value) -> String) {
    if json_mode {
        println!("{value}");
    } else {
        println!("{}", human(value));
    }
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).unwrap_or_default()
}

fn field<'a>(v: &'a Value, name: &str) -> &'a str {
    v.get(name).and_then(Value::as_str).unwrap_or("")
}

fn serve_api(store: PathBuf, bind: SocketAddr, max_in_flight: usize) -> anyhow::Result<()> {
    let orchestrator = probekit_service::build(
        &store,
        GatewayConfig {
            max_in_flight,
            ..GatewayConfig::default()
        },
    )?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(bind).await?;
        println!("listening on http://{}", listener.local_addr()?);
        std::io::stdout().flush()?;
        axum::serve(listener, probekit_service::api::router(orchestrator.clone()))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    })?;
    drop(runtime);
    drop(orchestrator);
    Ok(())
}

fn serve_mock(kind: &str, port: u16, params: &[String], faults: Option<&str>) -> anyhow::Result<()> {
    let mut map = Map::new();
    for p in params {
        let (k, v) = split_pair(p, '=', "parameter")?;
        map.insert(k.to_string(), loose_value(v));
    }
    let model = MockModel::from_kind(kind, map)?;
    let faults: Faults = match faults {
        Some(raw) => serde_json::from_str(raw).context("faults must be a JSON object")?,
        None => Faults::default(),
    };
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
        println!("listening on http://{}/predict", listener.local_addr()?);
        std::io::stdout().flush()?;
        let app = probekit_gateway::server::router(model, faults, Arc::new(AtomicUsize::new(0)));
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    })
}

fn read_upload(path: &PathBuf) -> anyhow::Result<Value> {
    let content = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(json!({"file_name": name, "content": content}))
}

fn register(client: &Client, a: &RegisterArgs) -> anyhow::Result<Value> {
    let mut headers = BTreeMap::new();
    for h in &a.headers {
        let (k, v) = split_pair(h, ':', "header")?;
        headers.insert(k.to_string(), v.to_string());
    }
    let mut body = json!({
        "modality": a.modality,
        "model": {
            "name": a.name,
            "endpoint_url": a.endpoint,
            "http_method": a.method,
            "headers": headers,
            "request_template": a.template,
            "label_path": a.label_path,
            "confidence_path": a.confidence_path,
            "batch_limit": a.batch_limit,
        },
        "training": read_upload(&a.training)?,
    });
    if let Some(eval) = &a.labeled_eval {
        body["labeled_eval"] = read_upload(eval)?;
    }
    client.post(&format!("/projects/{}/subjects", a.project), &body)
}

fn create_config(client: &Client, a: &ConfigArgs) -> anyhow::Result<Value> {
    let mut params: BTreeMap<String, Map<String, Value>> = BTreeMap::new();
    for p in &a.params {
        let (key, v) = split_pair(p, '=', "parameter")?;
        let (property, name) = key
            .rsplit_once('.')
            .ok_or_else(|| anyhow!("parameter {key:?} must be property.name"))?;
        params
            .entry(property.to_string())
            .or_default()
            .insert(name.to_string(), loose_value(v));
    }
    let mut data = Map::new();
    for d in &a.data {
        let (k, v) = split_pair(d, '=', "data input")?;
        data.insert(k.to_string(), loose_value(v));
    }
    client.post(
        &format!("/subjects/{}/configs", a.subject),
        &json!({
            "selected_properties": a.properties,
            "parameter_values": params,
            "data_specific": data,
            "generation_limit": a.generation_limit,
            "seed": a.seed,
        }),
    )
}

fn status_line(v: &Value) -> String {
    let mut out = format!("collection {} {}", field(v, "collection_id"), field(v, "state"));
    for r in v.get("runs").and_then(Value::as_array).into_iter().flatten() {
        let s = &r["status"];
        out.push_str(&format!(
            "\n  {} {} {}: generated {} executed {} passed {} failed {} errored {}",
            field(r, "run_id"),
            field(r, "property_id"),
            field(r, "state"),
            s["generated"],
            s["executed"],
            s["passed"],
            s["failed"],
            s["errored"],
        ));
    }
    out
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let j = cli.json;
    let client = || Client::new(&cli.server);
    match &cli.command {
        Command::Serve {
            store,
            bind,
            max_in_flight,
        } => serve_api(store.clone(), *bind, *max_in_flight)?,
        Command::MockModel(MockCmd::Serve {
            kind,
            port,
            params,
            faults,
        }) => serve_mock(kind, *port, params, faults.as_deref())?,
        Command::Properties(PropertiesCmd::List) => {
            let v = client()?.get("/properties")?;
            emit(j, &v, |v| {
                v.as_array()
                    .into_iter()
                    .flatten()
                    .map(|p| format!("{}\t{}\t{}", field(p, "id"), field(p, "modality"), field(p, "title")))
                    .collect::<Vec<_>>()
                    .join("\n")
            });
        }
        Command::Project(ProjectCmd::Create { name }) => {
            let v = client()?.post("/projects", &json!({ "name": name }))?;
            emit(j, &v, |v| format!("project {} {}", field(v, "id"), field(v, "name")));
        }
        Command::Project(ProjectCmd::List) => {
            let v = client()?.get("/projects")?;
            emit(j, &v, |v| {
                v.as_array()
                    .into_iter()
                    .flatten()
                    .map(|p| format!("{}\t{}", field(p, "id"), field(p, "name")))
                    .collect::<Vec<_>>()
                    .join("\n")
            });
        }
        Command::Model(ModelCmd::Register(a)) => {
            let v = register(&client()?, a)?;
            emit(j, &v, |v| format!("subject {} model {}", field(v, "id"), field(v, "model_id")));
        }
        Command::Config(ConfigCmd::Create(a)) => {
            let v = create_config(&client()?, a)?;
            emit(j, &v, |v| format!("config {}", field(v, "id")));
        }
        Command::Run(cmd) => run_command(&client()?, j, cmd)?,
    }
    Ok(())
}

fn run_command(c: &Client, j: bool, cmd: &RunCmd) -> anyhow::Result<()> {
    match cmd {
        RunCmd::Exec {
            config,
            idempotency_key,
            force,
            wait,
            timeout_secs,
        } => {
            let v = c.post(
                &format!("/configs/{config}/run"),
                &json!({"idempotency_key": idempotency_key, "force": force}),
            )?;
            if !wait {
                emit(j, &v, |v| format!("collection {} started", field(v, "id")));
                return Ok(());
            }
            let id = field(&v, "id").to_string();
            let deadline = Instant::now() + Duration::from_secs(*timeout_secs);
            loop {
                let s = c.get(&format!("/collections/{id}/status"))?;
                let terminal = matches!(field(&s, "state"), "completed" | "cancelled" | "errored");
                if terminal {
                    emit(j, &s, status_line);
                    return Ok(());
                }
                if Instant::now() >= deadline {
                    bail!("collection {id} still running after {timeout_secs} s");
                }
                std::thread::sleep(Duration::from_millis(200));
            }
        }
        RunCmd::Status { collection } => {
            emit(j, &c.get(&format!("/collections/{collection}/status"))?, status_line);
        }
        RunCmd::Metrics { run } => {
            let v = c.get(&format!("/runs/{run}/metrics"))?;
            emit(j, &v, |v| {
                let mut out = format!("{} {}\n{}", field(v, "property_id"), field(v, "state"), field(v, "explanation"));
                for m in v["metrics"].as_array().into_iter().flatten() {
                    out.push_str(&format!("\n  {} = {} ({})", field(m, "name"), m["value"], field(m, "verdict")));
                    let rec = field(m, "recommendation");
                    if !rec.is_empty() {
                        out.push_str(&format!("\n    {rec}"));
                    }
                }
                out
            });
        }
        RunCmd::Failures { run, offset, limit } => {
            let v = c.get(&format!("/runs/{run}/failures?offset={offset}&limit={limit}"))?;
            emit(j, &v, pretty);
        }
        RunCmd::Compare { project, collections } => {
            let v = c.get(&format!("/projects/{project}/compare?collections={}", collections.join(",")))?;
            emit(j, &v, pretty);
        }
        RunCmd::Cancel { collection } => {
            let v = c.call(reqwest::Method::DELETE, &format!("/collections/{collection}"), None)?;
            emit(j, &v, |v| format!("collection {collection}: {}", field(v, "outcome")));
        }
        RunCmd::Reevaluate { run } => {
            let v = c.post(&format!("/runs/{run}/reevaluate"), &json!({}))?;
            emit(j, &v, |v| {
                format!(
                    "run {} re-evaluated {} cases: {}",
                    field(v, "run_id"),
                    v["cases"],
                    if v["identical"] == Value::Bool(true) { "identical" } else { "changed" }
                )
            });
        }
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run(Cli::parse())
}
