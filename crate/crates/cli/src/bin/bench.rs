//! Scaling benchmark driver.

use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use tensorfleet::client::ClientHandle;
use tensorfleet::scaling::{
    client_loop, emit, run_matrix, summarize, Api, BenchConfig, Cell, ClientRunner, ClusterProvider,
    InProcessClusters, ProcessClients, ProcessClusters, ThreadClients, READY_LINE,
};
use tensorfleet_cli::{parse_counts, sibling_exe};

#[derive(Debug, Parser)]
#[command(version, about = "Time client calls against clusters of varying size")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run the full clients x shards matrix.
    Run {
        /// Comma-separated client counts.
        #[arg(long, default_value = "2,8,32")]
        clients: String,
        /// Comma-separated shard counts.
        #[arg(long, default_value = "1,2,4")]
        shards: String,
        #[arg(long, default_value_t = 10)]
        iters: usize,
        /// Repeat short cells on fresh clusters until each has this many
        /// samples per api.
        #[arg(long, default_value_t = 200)]
        min_samples: usize,
        #[arg(long, default_value = "bench-out")]
        out: PathBuf,
        /// First port of each cell's shard processes.
        #[arg(long, default_value_t = 7400)]
        base_port: u16,
        /// Run shards and clients as threads of this process.
        #[arg(long)]
        threads: bool,
    },
    /// One benchmark client; prints a JSON record per line.
    #[command(hide = true)]
    Client {
        #[arg(long)]
        seed: String,
        #[arg(long)]
        id: usize,
        #[arg(long)]
        clients: usize,
        #[arg(long)]
        shards: usize,
        #[arg(long)]
        iters: usize,
    },
}

fn main() -> Result<()> {
    tensorfleet_cli::init_logging();
    match Args::parse().command {
        Cmd::Run { clients, shards, iters, min_samples, out, base_port, threads } => {
            let mut config = BenchConfig::new(parse_counts(&clients)?, parse_counts(&shards)?, iters);
            config.min_samples = min_samples;
            config.out_dir = Some(out.clone());
            let (mut clusters, runner): (Box<dyn ClusterProvider>, Box<dyn ClientRunner>) = if threads {
                (Box::new(InProcessClusters::default()), Box::new(ThreadClients))
            } else {
                let me = std::env::current_exe()?;
                (
                    Box::new(ProcessClusters::new(sibling_exe("shard-server")?, base_port, out.join("clusters"))),
                    Box::new(ProcessClients { exe: me, args: vec!["client".into()] }),
                )
            };
            let result = run_matrix(&config, clusters.as_mut(), runner.as_ref())?;
            let records = result.records();
            let summary = summarize(&records)?;
            emit(&summary, &records, &out)?;
            println!("{:>8} {:>7} {:>14} {:>12} {:>12} {:>12}", "clients", "shards", "api", "mean_s", "median_s", "max_s");
            for row in &summary {
                let s = &row.stats;
                println!(
                    "{:>8} {:>7} {:>14} {:>12.3e} {:>12.3e} {:>12.3e}",
                    row.cell.clients, row.cell.shards, row.api, s.mean, s.median, s.max
                );
            }
            println!("clusters launched: {}; results in {}", result.clusters_launched, out.display());
            let failed = result.failed();
            if !failed.is_empty() {
                bail!("failed cells: {failed:?}");
            }
            Ok(())
        }
        Cmd::Client { seed, id, clients, shards, iters } => {
            let config = BenchConfig::new(vec![clients], vec![shards], iters);
            let mut handle = ClientHandle::connect(&seed)?;
            // Announce readiness and wait for the driver's go signal.
            {
                let mut stdout = std::io::stdout().lock();
                writeln!(stdout, "{READY_LINE}")?;
                stdout.flush()?;
            }
            let mut go = String::new();
            std::io::stdin().read_line(&mut go)?;
            let records = client_loop(&mut handle, &config, Cell { clients, shards }, id)?;
            debug_assert_eq!(records.len(), iters * Api::ALL.len());
            let mut out = BufWriter::new(std::io::stdout().lock());
            for r in &records {
                serde_json::to_writer(&mut out, r)?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
            Ok(())
        }
    }
}
