use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use phasefd_service::{AppState, Catalog};

#[derive(Debug, Parser)]
#[command(name = "phasefd-service", version, about = "HTTP job service for phasefd")]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    /// Directory for write-through persistence; in-memory when absent.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Jobs allowed to solve at the same time.
    #[arg(long)]
    workers: Option<usize>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let catalog = match &args.data_dir {
        Some(dir) => Catalog::open(dir).with_context(|| format!("opening {}", dir.display()))?,
        None => Catalog::in_memory(),
    };
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(2, |n| n.get()));
    let listener = tokio::net::TcpListener::bind(&args.addr)
        .await
        .with_context(|| format!("binding {}", args.addr))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    phasefd_service::serve(listener, AppState::new(catalog, workers)).await?;
    Ok(())
}
