//! Runs, inspects and stops launcher experiments.

use std::path::PathBuf;
use std::thread;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use tensorfleet::launcher::{
    launch_orchestrator, pid_alive, Ensemble, signal_terminate, Entity, Experiment, Manifest, ManifestSource,
    OrchestratorConfig, Status,
};
use tensorfleet_cli::{sibling_exe, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(version, about = "Launch ensembles of local processes")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Generate, start and wait for every ensemble in a TOML config.
    Run {
        config: PathBuf,
        /// Seconds between manifest updates.
        #[arg(long, default_value_t = 0.2)]
        poll: f64,
    },
    /// Print member statuses from an experiment's manifest.
    Status { dir: PathBuf },
    /// Send SIGTERM to every running member of an experiment.
    Stop { dir: PathBuf },
}

fn main() -> Result<()> {
    tensorfleet_cli::init_logging();
    match Args::parse().command {
        Cmd::Run { config, poll } => run(&config, Duration::from_secs_f64(poll)),
        Cmd::Status { dir } => status(&dir),
        Cmd::Stop { dir } => stop(&dir),
    }
}

fn run(path: &std::path::Path, poll: Duration) -> Result<()> {
    let config = ExperimentConfig::load(path)?;
    let mut ensembles = config.ensembles()?;
    let exp = Experiment::new(&config.root)?;

    let orchestrator = match &config.orchestrator {
        Some(o) => {
            let exe = match &o.server_exe {
                Some(p) => p.clone(),
                None => sibling_exe("shard-server")?,
            };
            let mut oc = OrchestratorConfig::new(exe, o.shards, o.base_port, exp.root().join("orchestrator"));
            oc.workers = o.workers.unwrap_or(1);
            Some(launch_orchestrator(&oc).context("starting orchestrator")?)
        }
        None => None,
    };
    if let Some(orch) = &orchestrator {
        // Members find the cluster through the environment.
        for ens in &mut ensembles {
            for member in ens.members_mut() {
                member.run_settings.env.insert("TENSORFLEET_SEED".into(), orch.seed().to_string());
            }
        }
        println!("orchestrator: {} shards, seed {}", orch.topology().len(), orch.seed());
    }

    for ens in &mut ensembles {
        exp.generate(ens)?;
    }
    exp.write_manifest(sources(&ensembles))?;
    for ens in &mut ensembles {
        let report = exp.start(ens, false)?;
        for (name, pids) in report.started {
            println!("started {name} {pids:?}");
        }
    }
    loop {
        exp.write_manifest(sources(&ensembles))?;
        let done = ensembles.iter_mut().all(|e| exp.poll(e).iter().all(|(_, s)| s.is_terminal()));
        if done {
            break;
        }
        thread::sleep(poll);
    }
    exp.write_manifest(sources(&ensembles))?;
    drop(orchestrator);

    let mut failed = 0;
    for ens in &ensembles {
        for m in ens.members() {
            println!("{} {:?}", m.name, m.status());
            failed += usize::from(m.status() == Status::Failed);
        }
    }
    if failed > 0 {
        bail!("{failed} member(s) failed");
    }
    Ok(())
}

fn sources(ens: &[Ensemble]) -> Vec<&dyn ManifestSource> {
    ens.iter().map(|e| e as &dyn ManifestSource).collect()
}

fn status(dir: &std::path::Path) -> Result<()> {
    let manifest = Manifest::load(dir).with_context(|| format!("reading manifest in {}", dir.display()))?;
    for entity in &manifest.entities {
        for m in &entity.members {
            let note = if m.status == Status::Running && !m.pids.iter().any(|&p| pid_alive(p)) {
                " (no live process)"
            } else {
                ""
            };
            println!("{}/{} {:?}{note}", entity.name, m.name, m.status);
        }
    }
    Ok(())
}

fn stop(dir: &std::path::Path) -> Result<()> {
    let manifest = Manifest::load(dir).with_context(|| format!("reading manifest in {}", dir.display()))?;
    let mut signalled = 0;
    for m in manifest.entities.iter().flat_map(|e| &e.members) {
        if m.status == Status::Running {
            for &pid in &m.pids {
                if pid_alive(pid) && signal_terminate(pid) {
                    signalled += 1;
                }
            }
        }
    }
    println!("signalled {signalled} process(es)");
    Ok(())
}
