use std::net::SocketAddr;
use std::path::PathBuf;

use agfsync_testkit::server::{router, MockState};
use agfsync_testkit::JudgeMode;
use anyhow::Context;
use clap::Parser;

/// Serve the deterministic mock backends over HTTP.
#[derive(Parser)]
#[command(version)]
struct Args {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8808)]
    port: u16,
    /// parity or position-invariant
    #[arg(long, default_value = "parity")]
    judge_mode: JudgeMode,
    /// Write exemplar files for every category without built-in exemplars
    /// into DIR and exit
    #[arg(long, value_name = "DIR")]
    write_exemplars: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    if let Some(dir) = &args.write_exemplars {
        agfsync_testkit::fixtures::write_exemplar_fixtures(dir).with_context(|| format!("writing {}", dir.display()))?;
        return Ok(());
    }
    let addr: SocketAddr = format!("{}:{}", args.host, args.port).parse().context("bad listen address")?;
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    eprintln!("mockserve listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(MockState::with_judge(args.judge_mode)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
