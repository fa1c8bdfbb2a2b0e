use std::net::SocketAddr;
use std::process::ExitCode;

use clap::Parser;
use forge_evolve::clients::{self, ClientConfig};
use forge_evolve_server::{router, AppState};
use tracing_subscriber::EnvFilter;

/// Serve the model protocol from mock (or proxied) backends.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Policy backend.
    #[arg(long, default_value = "mock:scripted")]
    policy: String,
    /// Teacher backend.
    #[arg(long, default_value = "mock:cosine-to-target")]
    teacher: String,
    /// Embedder backend.
    #[arg(long, default_value = "mock:hashing")]
    embedder: String,
    /// Seed for the mock backends.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_env("FORGE_EVOLVE_LOG").unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();

    let config = |endpoint: &str| ClientConfig {
        seed: args.seed,
        ..ClientConfig::new(endpoint)
    };
    // Blocking HTTP backends must be built outside the async runtime.
    let state = match (|| {
        Ok::<_, clients::ClientError>(AppState {
            policy: clients::build_policy(&config(&args.policy))?,
            teacher: clients::build_teacher(&config(&args.teacher))?,
            embedder: clients::build_embedder(&config(&args.embedder))?,
        })
    })() {
        Ok(state) => state,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.bind).await?;
        tracing::info!(addr = %listener.local_addr()?, "listening");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
