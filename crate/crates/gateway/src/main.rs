use std::io::Read;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use impliance::appliance::Appliance;
use impliance::config::ApplianceConfig;
use impliance::workload::parse_script;
use impliance_gateway::client::{Client, Reply};
use impliance_gateway::server;

#[derive(Parser)]
#[command(name = "impliance", version, about = "Information appliance: store, discover, query")]
struct Cli {
    #[command(subcommand)]
    command: Verb,
}

#[derive(clap::Args)]
struct Remote {
    /// Gateway base URL.
    #[arg(long, env = "IMPLIANCE_URL", default_value = "http://127.0.0.1:8080")]
    url: String,
}

#[derive(Subcommand)]
enum Verb {
    /// Build the appliance from a config file and serve the HTTP API.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Ingest files (`-` reads stdin).
    Ingest {
        #[command(flatten)]
        remote: Remote,
        /// relational_row, delimited, json_like, xml_like or plain_text.
        #[arg(long)]
        format: String,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Keyword search, or re-run a serialized drill state.
    Search {
        #[command(flatten)]
        remote: Remote,
        terms: Vec<String>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long = "facet")]
        facets: Vec<String>,
        #[arg(long)]
        entity_facets: bool,
        /// A drill state as returned by an earlier search.
        #[arg(long, conflicts_with = "terms")]
        state: Option<String>,
    },
    /// Apply a drill action to a state.
    Drill {
        #[command(flatten)]
        remote: Remote,
        #[arg(long)]
        state: String,
        #[command(subcommand)]
        action: DrillVerb,
    },
    /// Grouped aggregate; the argument is a JSON body or @file.
    Aggregate {
        #[command(flatten)]
        remote: Remote,
        request: String,
    },
    /// Connection paths between two documents.
    Connect {
        #[command(flatten)]
        remote: Remote,
        a: String,
        b: String,
        #[arg(long)]
        max_hops: Option<usize>,
    },
    /// Show nodes, groups and partition placement.
    Topo {
        #[command(flatten)]
        remote: Remote,
    },
    /// Run a workload script in-process and write the reports.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        script: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Metrics report destination; stdout when absent.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DrillVerb {
    /// Narrow by a facet value, given as a typed JSON value.
    Down { facet: String, value: String },
    /// Switch facets, keeping constraints.
    Across {
        #[arg(required = true)]
        facets: Vec<String>,
    },
    /// Remove the constraint at a breadcrumb position.
    Undo { index: usize },
}

fn read_input(path: &Path) -> Result<String, String> {
    if path == Path::new("-") {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).map_err(|e| e.to_string())?;
        return Ok(s);
    }
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn json_arg(text: &str) -> Result<Value, String> {
    let text = match text.strip_prefix('@') {
        Some(path) => read_input(Path::new(path))?,
        None => text.to_string(),
    };
    serde_json::from_str(&text).map_err(|e| format!("invalid JSON argument: {e}"))
}

fn print(reply: Result<Reply, String>) -> Result<(), String> {
    let reply = reply?;
    if reply.status >= 400 {
        return Err(reply.body.trim_end().to_string());
    }
    print!("{}", reply.body);
    Ok(())
}

fn load_appliance(config: &Path, seed: u64) -> Result<Appliance, String> {
    let config = ApplianceConfig::load(config).map_err(|e| e.to_string())?;
    Appliance::new(config, seed).map_err(|e| e.to_string())
}

fn run(verb: Verb) -> Result<(), String> {
    match verb {
        Verb::Serve { config, addr, seed } => {
            let app = load_appliance(&config, seed)?;
            let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            runtime
                .block_on(server::serve(app, addr, |bound| eprintln!("impliance listening on http://{bound}")))
                .map_err(|e| e.to_string())
        }
        Verb::Ingest { remote, format, files } => {
            let client = Client::new(&remote.url);
            for file in files {
                let payload = read_input(&file)?;
                print(client.post("/docs", &json!({ "format": format, "payload": payload }).to_string()))?;
            }
            Ok(())
        }
        Verb::Search { remote, terms, k, facets, entity_facets, state } => {
            let body = match state {
                Some(s) => json!({ "state": json_arg(&s)? }),
                None => json!({ "terms": terms, "k": k, "facets": facets, "entity_facets": entity_facets }),
            };
            print(Client::new(&remote.url).post("/search", &body.to_string()))
        }
        Verb::Drill { remote, state, action } => {
            let action = match action {
                DrillVerb::Down { facet, value } => json!({ "down": { "facet": facet, "value": json_arg(&value)? } }),
                DrillVerb::Across { facets } => json!({ "across": { "facets": facets } }),
                DrillVerb::Undo { index } => json!({ "undo": { "index": index } }),
            };
            let body = json!({ "state": json_arg(&state)?, "action": action });
            print(Client::new(&remote.url).post("/drill", &body.to_string()))
        }
        Verb::Aggregate { remote, request } => {
            print(Client::new(&remote.url).post("/aggregate", &json_arg(&request)?.to_string()))
        }
        Verb::Connect { remote, a, b, max_hops } => {
            let mut target = format!("/connect?a={a}&b={b}");
            if let Some(h) = max_hops {
                target.push_str(&format!("&max_hops={h}"));
            }
            print(Client::new(&remote.url).get(&target))
        }
        Verb::Topo { remote } => print(Client::new(&remote.url).get("/topology")),
        Verb::Simulate { config, script, seed, metrics, trace } => {
            let mut app = load_appliance(&config, seed)?;
            let script = parse_script(&read_input(&script)?).map_err(|e| e.to_string())?;
            app.run_script(&script).map_err(|e| e.to_string())?;
            let report = app.metrics_report();
            match metrics {
                Some(path) => std::fs::write(&path, report).map_err(|e| format!("{}: {e}", path.display()))?,
                None => print!("{report}"),
            }
            if let Some(path) = trace {
                std::fs::write(&path, app.trace_report()).map_err(|e| format!("{}: {e}", path.display()))?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("impliance: {message}");
            ExitCode::FAILURE
        }
    }
}
