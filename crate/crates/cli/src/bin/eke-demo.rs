//! Runs the EKE inference demo on a synthetic grid through an in-process
//! cluster and checks it against the local pipeline.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Parser;
use tensorfleet::client::ClientHandle;
use tensorfleet::eke::{demo_inference, demo_params, local_pipeline, setup_demo, stub_eke_model, synthetic_grid, DemoConfig};
use tensorfleet::LocalCluster;

/// Largest accepted relative difference from the local pipeline.
const TOLERANCE: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(version, about = "EKE inference demo against a local cluster")]
struct Args {
    /// Grid size as NX,NY.
    #[arg(long, default_value = "64,64", value_parser = tensorfleet_cli::parse_grid)]
    grid: (usize, usize),
    #[arg(long, default_value_t = 2)]
    shards: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for the params sidecar and the field CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    tensorfleet_cli::init_logging();
    let args = Args::parse();
    let (nx, ny) = args.grid;
    let grid = synthetic_grid(nx, ny, args.seed);
    let params = demo_params(&grid)?;
    let model = stub_eke_model();
    let cfg = DemoConfig::default();

    let cluster = LocalCluster::start(args.shards).context("starting cluster")?;
    let mut client = ClientHandle::connect(&cluster.seed())?;
    setup_demo(&mut client, &params, &model, &cfg)?;
    let field = demo_inference(&mut client, &grid, &params, &cfg)?;
    let local = local_pipeline(&grid, &params, &model)?;

    let max_rel = field
        .iter()
        .zip(&local)
        .map(|(a, b)| ((a - b) / b).abs())
        .fold(0.0, f64::max);
    let (min, max) = field.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mean = field.iter().sum::<f64>() / field.len() as f64;
    println!("grid {nx}x{ny}, {} shards, seed {}", args.shards, args.seed);
    println!("eke min {min:e} max {max:e} mean {mean:e}");
    println!("max relative difference from local pipeline: {max_rel:e}");

    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        params.save(&dir.join("params.json"))?;
        let mut csv = String::from("x,y,eke\n");
        for (i, v) in field.iter().enumerate() {
            csv.push_str(&format!("{},{},{v:e}\n", i % nx, i / nx));
        }
        std::fs::write(dir.join("eke.csv"), csv)?;
    }

    if field.iter().any(|&v| !(v > 0.0)) {
        bail!("non-positive EKE value in field");
    }
    if !(max_rel <= TOLERANCE) {
        bail!("cluster result differs from local pipeline by {max_rel:e}");
    }
    println!("ok");
    Ok(())
}
