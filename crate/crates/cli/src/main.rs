use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fedlake_cli::auth::TokenTable;
use fedlake_cli::error::ErrorBody;
use fedlake_cli::gateway::{self, GatewayState, TrainSummary};
use fedlake_cli::node_server::{self, NodeState};
use fedlake_cli::remote::HttpNode;
use fedlake_core::datanode::{ingest_csv, CacheSettings, NodeDescriptor};
use fedlake_core::mlcore::TrainConfig;
use fedlake_core::synthcohort::{default_cohort_spec, generate, CohortSpec};
use fedlake_core::{
    load_catalog, AggregationMode, CatalogStore, Coordinator, DataNode, FederationConfig, FederationError,
    NodeClient, Pattern, TrainingJob,
};

#[derive(Parser)]
#[command(name = "fedlake", version, about = "Federated analytics over autonomous data nodes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct FederationArgs {
    /// Catalog JSON with the global schema and node mappings.
    #[arg(long, env = "FEDLAKE_CATALOG")]
    catalog: PathBuf,
    /// Shared secret sent to data nodes.
    #[arg(long, env = "FEDLAKE_NODE_TOKEN")]
    node_token: Option<String>,
    /// Per-request deadline for node calls.
    #[arg(long, default_value_t = 30_000)]
    round_timeout_ms: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Run the coordinator gateway.
    Serve {
        #[command(flatten)]
        federation: FederationArgs,
        /// Token file: {"<token>": "doctor" | "admin"}.
        #[arg(long, env = "FEDLAKE_TOKENS")]
        tokens: PathBuf,
        #[arg(long, env = "FEDLAKE_PORT", default_value_t = 8080)]
        port: u16,
    },
    /// Data node commands.
    Node {
        #[command(subcommand)]
        command: NodeCommand,
    },
    /// Run one analytical query and print the aggregated result.
    Query {
        text: String,
        #[command(flatten)]
        federation: FederationArgs,
    },
    /// Train a prediction pattern and print the model summary.
    Train {
        #[arg(long)]
        pattern: String,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<AggregationMode>,
        /// JSON file with training hyperparameters.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        federation: FederationArgs,
    },
    /// Generate a synthetic multi-node cohort.
    GenCohort {
        /// Cohort spec JSON; the built-in three-node spec when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Give node i the base URL http://127.0.0.1:<base-port + i> in catalog.json.
        #[arg(long)]
        base_port: Option<u16>,
    },
}

#[derive(Subcommand)]
enum NodeCommand {
    /// Serve one node's CSV over HTTP.
    Serve {
        #[arg(long)]
        data: PathBuf,
        /// Node descriptor JSON (columns and value mapping).
        #[arg(long)]
        mapping: PathBuf,
        #[arg(long)]
        port: u16,
        #[arg(long, env = "FEDLAKE_NODE_TOKEN")]
        node_token: Option<String>,
    },
}

/// A failure caused by the caller's input; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn parse_mode(s: &str) -> Result<AggregationMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown mode {s}; expected unweighted or sample_weighted"))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn coordinator(args: &FederationArgs) -> Result<Coordinator> {
    let catalog = load_catalog(&read(&args.catalog)?).map_err(|e| UsageError(e.to_string()))?;
    let timeout = Duration::from_millis(args.round_timeout_ms);
    let mut clients: Vec<Arc<dyn NodeClient>> = Vec::new();
    for (id, mapping) in catalog.mappings() {
        let Some(url) = &mapping.base_url else {
            bail!(UsageError(format!("node {id} has no base_url in the catalog")));
        };
        clients.push(Arc::new(HttpNode::new(id, url, args.node_token.clone(), timeout)));
    }
    let config = FederationConfig {
        round_timeout_ms: args.round_timeout_ms,
        ..FederationConfig::default()
    };
    Ok(Coordinator::new(Arc::new(catalog), clients, config))
}

fn pattern(slug: &str) -> Result<Pattern> {
    Pattern::from_slug(slug).ok_or_else(|| UsageError(format!("unknown pattern {slug}")).into())
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

async fn serve(router: axum::Router, port: u16) -> Result<()> {
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    log::info!("listening on {addr}");
    axum::serve(listener, router).await?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Serve {
            federation,
            tokens,
            port,
        } => {
            let tokens = TokenTable::from_json(&read(&tokens)?).map_err(|e| UsageError(format!("token file: {e}")))?;
            let state = GatewayState::new(coordinator(&federation)?, tokens);
            tokio::runtime::Runtime::new()?.block_on(serve(gateway::router(state), port))
        }
        Command::Node {
            command:
                NodeCommand::Serve {
                    data,
                    mapping,
                    port,
                    node_token,
                },
        } => {
            let descriptor: NodeDescriptor =
                serde_json::from_str(&read(&mapping)?).map_err(|e| UsageError(format!("mapping: {e}")))?;
            let (dataset, report) = ingest_csv(&data, &descriptor.table, &descriptor.local_columns)?;
            log::info!(
                "{}: ingested {} rows, dropped {}",
                descriptor.node_id,
                report.rows_read,
                report.dropped.len()
            );
            let state = NodeState {
                node: Arc::new(DataNode::with_dataset(descriptor, dataset)),
                token: node_token,
            };
            tokio::runtime::Runtime::new()?.block_on(serve(node_server::router(state), port))
        }
        Command::Query { text, federation } => print_json(&coordinator(&federation)?.run_federated_query(&text)?),
        Command::Train {
            pattern: slug,
            rounds,
            mode,
            config,
            federation,
        } => {
            let train_config: TrainConfig = match config {
                Some(p) => serde_json::from_str(&read(&p)?).map_err(|e| UsageError(format!("config: {e}")))?,
                None => TrainConfig::default(),
            };
            let job = TrainingJob {
                rounds,
                mode,
                train_config,
                cache: CacheSettings::default(),
            };
            let model = coordinator(&federation)?.run_federated_training(pattern(&slug)?, &job)?;
            print_json(&TrainSummary::from(model.as_ref()))
        }
        Command::GenCohort { spec, out, base_port } => {
            let spec: CohortSpec = match spec {
                Some(p) => serde_json::from_str(&read(&p)?).map_err(|e| UsageError(format!("spec: {e}")))?,
                None => default_cohort_spec(),
            };
            let cohort = generate(&spec).map_err(|e| UsageError(e.to_string()))?;
            let mut files = cohort.write_to_dir(&out)?;
            if let Some(base) = base_port {
                let mut mappings: Vec<_> = cohort.nodes.iter().map(|n| n.descriptor.mapping()).collect();
                for (i, m) in mappings.iter_mut().enumerate() {
                    m.base_url = Some(format!("http://127.0.0.1:{}", base as usize + i));
                }
                let catalog = CatalogStore::new(cohort.schema.clone(), mappings)?;
                let path = out.join("catalog.json");
                std::fs::write(&path, catalog.to_json())?;
                files.retain(|f| f != &path);
                files.push(path);
            }
            print_json(&serde_json::json!({
                "files": files,
                "rows": cohort.nodes.iter().map(|n| (n.descriptor.node_id.clone(), n.records.len())).collect::<std::collections::BTreeMap<_, _>>(),
                "oracle_accuracy": cohort.manifest.oracle_accuracy(),
            }))
        }
    }
}

fn is_usage(e: &anyhow::Error) -> bool {
    e.downcast_ref::<UsageError>().is_some() || e.downcast_ref::<FederationError>().is_some_and(|f| f.is_user_error())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e
                .downcast_ref::<FederationError>()
                .map_or(if is_usage(&e) { "usage" } else { "error" }, |f| f.code());
            let body = ErrorBody {
                code: code.into(),
                message: format!("{e:#}"),
            };
            eprintln!("{}", serde_json::to_string(&body).unwrap_or_else(|_| e.to_string()));
            if is_usage(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
