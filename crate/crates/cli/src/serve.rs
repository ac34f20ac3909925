use std::path::PathBuf;

use clap::Args;
use pmcausal_service::{serve, ServiceConfig, QUEUE_CAPACITY};
use tokio::net::TcpListener;

use crate::exit::{CliResult, Failure, OTHER, SERVE};

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// TCP port, 0 picks a free one.
    #[arg(long, default_value = "8080", allow_hyphen_values = true)]
    port: String,
    /// Worker threads per run (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Runs that may wait in the queue before submissions are refused.
    #[arg(long, default_value_t = QUEUE_CAPACITY)]
    queue: usize,
    /// Persist scenarios, runs and results here.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Serve a built web UI from this directory.
    #[arg(long)]
    static_dir: Option<PathBuf>,
}

fn service_config(args: ServeArgs) -> CliResult<(u16, ServiceConfig)> {
    let port: u16 = args
        .port
        .parse()
        .map_err(|_| Failure::msg(SERVE, format!("invalid port {:?}", args.port)))?;
    if args.queue == 0 {
        return Err(Failure::msg(SERVE, "--queue must be at least 1"));
    }
    Ok((
        port,
        ServiceConfig {
            workers: args.workers,
            queue_capacity: args.queue,
            data_dir: args.data_dir,
            static_dir: args.static_dir,
        },
    ))
}

pub fn run(args: ServeArgs) -> CliResult {
    let host = args.host.clone();
    let (port, config) = service_config(args)?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::new(OTHER, e))?;
    rt.block_on(async {
        let listener = TcpListener::bind((host.as_str(), port))
            .await
            .map_err(|e| Failure::msg(SERVE, format!("cannot bind {host}:{port}: {e}")))?;
        if let Ok(addr) = listener.local_addr() {
            eprintln!("listening on http://{addr}");
        }
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        };
        serve(listener, &config, shutdown).await.map_err(|e| Failure::new(SERVE, e))
    })?;
    // Runs still executing are abandoned; persisted ones are marked failed on restart.
    rt.shutdown_background();
    Ok(())
}
