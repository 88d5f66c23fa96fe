use std::path::PathBuf;

use clap::Parser;
use typeshift_service::{serve, ServeConfig};

#[derive(Parser)]
#[command(about = "Serve type swaps and interpolations over HTTP")]
struct Args {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Trained checkpoint; without it only catalog routes work.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Sprite manifest CSV.
    #[arg(long)]
    catalog: Option<PathBuf>,
}

fn main() -> anyhow::Result<()> {
    typeshift_core::tensor::ensure_blas_kernels();
    tracing_subscriber::fmt::init();
    let args = Args::parse();
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(serve(ServeConfig {
        host: args.host,
        port: args.port,
        checkpoint: args.checkpoint,
        catalog: args.catalog,
    }))
}
