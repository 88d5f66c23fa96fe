use clap::Parser;

fn main() -> anyhow::Result<()> {
    typeshift_cli::ensure_blas_kernels();
    typeshift_cli::run(typeshift_cli::Cli::parse())
}
