//! Runs one shard of a cluster until killed.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;
use tensorfleet::routing::ClusterTopology;
use tensorfleet::{Server, ShardConfig};

#[derive(Debug, Parser)]
#[command(version, about = "Serve one shard of a tensorfleet cluster")]
struct Args {
    /// Address to listen on, e.g. 127.0.0.1:6780.
    #[arg(long)]
    listen: String,
    /// This shard's id in the topology.
    #[arg(long)]
    shard_id: u32,
    /// Topology JSON file shared by every shard.
    #[arg(long)]
    topology: PathBuf,
    /// Inference worker threads.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

fn main() -> Result<()> {
    tensorfleet_cli::init_logging();
    let args = Args::parse();
    let text = std::fs::read_to_string(&args.topology)
        .with_context(|| format!("reading {}", args.topology.display()))?;
    let topology = ClusterTopology::from_json(&text).context("parsing topology")?;
    let config = ShardConfig { shard_id: args.shard_id, topology, workers: args.workers };
    let server = Server::bind(&args.listen, config).with_context(|| format!("binding {}", args.listen))?;
    tracing::info!(addr = %server.local_addr()?, shard = args.shard_id, "serving");
    server.run()?;
    Ok(())
}
