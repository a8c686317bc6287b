use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::Parser;
use modelport::registry::load_api_keys;
use modelport::runner::{run_if_requested, Isolation, WorkerCommand};
use modelport::service::{Service, ServiceConfig};
use tracing_subscriber::EnvFilter;

/// Model publishing and execution service.
#[derive(Parser)]
#[command(version)]
struct Args {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    #[arg(long, default_value = "./modelport-data")]
    data_dir: PathBuf,
    /// HMAC secret for upload URLs and state tokens.
    #[arg(long, env = "MODELPORT_SIGNING_SECRET")]
    signing_secret: String,
    /// File of `owner:api-key` lines.
    #[arg(long)]
    api_keys_file: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    step_timeout_seconds: u64,
    /// Base URL put into signed upload URLs.
    #[arg(long)]
    public_url: Option<String>,
    /// Command that runs `sdk-code` bundles inside the worker.
    #[arg(long, num_args = 1.., value_delimiter = ' ')]
    sdk_command: Option<Vec<String>>,
    #[arg(long, default_value_t = 8)]
    pool_size: usize,
    /// Run handlers without Landlock and seccomp (development only).
    #[arg(long)]
    no_sandbox: bool,
    /// Do not return handler logs to callers.
    #[arg(long)]
    hide_logs: bool,
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Worker mode must start before any runtime threads exist.
    run_if_requested();
    tokio::runtime::Runtime::new()?.block_on(daemon())
}

async fn daemon() -> Result<(), Box<dyn std::error::Error>> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();

    let mut config = ServiceConfig::new(&args.data_dir, args.signing_secret.into_bytes(), WorkerCommand::current_exe()?);
    if let Some(path) = &args.api_keys_file {
        config.api_keys = load_api_keys(path)?;
    }
    config.public_url = args
        .public_url
        .unwrap_or_else(|| format!("http://{}:{}", args.bind, args.port));
    config.step_timeout = Duration::from_secs(args.step_timeout_seconds);
    config.sdk_command = args.sdk_command;
    config.pool_size = args.pool_size;
    config.expose_logs = !args.hide_logs;
    if args.no_sandbox {
        config.isolation = Isolation::Disabled;
    }
    let service = Arc::new(tokio::task::spawn_blocking(move || Service::open(config)).await??);

    let listener = tokio::net::TcpListener::bind((args.bind.as_str(), args.port)).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    modelport::server::serve(listener, service).await?;
    Ok(())
}
