use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use ballot_audit::riskeval::DEFAULT_EXACT_BALLOT_CAP;
use ballot_audit::Execution;
use ballot_audit_service::{router, AppState, ServiceConfig, Store};
use clap::Parser;
use tracing_subscriber::EnvFilter;

/// HTTP service for ballot-polling audits.
#[derive(Parser)]
#[command(version)]
struct Args {
    #[arg(long, env = "BALLOT_AUDIT_LISTEN", default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    /// Directory for the session log. Without it sessions live in memory only.
    #[arg(long, env = "BALLOT_AUDIT_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Seconds allowed for one table build or risk evaluation.
    #[arg(long, env = "BALLOT_AUDIT_COMPUTE_TIMEOUT", default_value_t = 60)]
    compute_timeout: u64,
    #[arg(long, env = "BALLOT_AUDIT_EXACT_CAP", default_value_t = DEFAULT_EXACT_BALLOT_CAP)]
    exact_cap: u64,
    #[arg(long, env = "BALLOT_AUDIT_MAX_TRIALS", default_value_t = 1_000_000)]
    max_trials: u64,
    /// Worker threads for computations (0 = one per core).
    #[arg(long, env = "BALLOT_AUDIT_JOBS", default_value_t = 0)]
    jobs: usize,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();
    ballot_audit::par::configure_global_jobs(args.jobs);
    let store = match &args.data_dir {
        Some(dir) => Store::open(dir)?,
        None => Store::in_memory(),
    };
    let state = Arc::new(AppState {
        store,
        config: ServiceConfig {
            compute_timeout: Duration::from_secs(args.compute_timeout),
            exact_ballot_cap: args.exact_cap,
            max_trials: args.max_trials,
            exec: Execution::default(),
        },
    });
    let listener = tokio::net::TcpListener::bind(args.listen).await?;
    tracing::info!(addr = %listener.local_addr()?, persistent = args.data_dir.is_some(), "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
