use std::fs::{self, File};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use tracing::info;

use super::{signal_terminate, LaunchError, Result};
use crate::client;
use crate::routing::{plan_topology, ClusterTopology};

/// Where and how to start the shard processes.
#[derive(Debug, Clone)]
pub struct OrchestratorConfig {
    pub server_exe: PathBuf,
    pub shards: usize,
    pub host: String,
    pub base_port: u16,
    pub workers: usize,
    pub dir: PathBuf,
    pub ready_timeout: Duration,
}

impl OrchestratorConfig {
    pub fn new(server_exe: impl Into<PathBuf>, shards: usize, base_port: u16, dir: impl Into<PathBuf>) -> Self {
        OrchestratorConfig {
            server_exe: server_exe.into(),
            shards,
            host: "127.0.0.1".into(),
            base_port,
            workers: 1,
            dir: dir.into(),
            ready_timeout: Duration::from_secs(10),
        }
    }
}

/// Running shard processes. Terminated on drop.
#[derive(Debug)]
pub struct Orchestrator {
    topology: ClusterTopology,
    topology_file: PathBuf,
    children: Vec<Child>,
}

impl Orchestrator {
    pub fn topology(&self) -> &ClusterTopology {
        &self.topology
    }

    pub fn topology_file(&self) -> &Path {
        &self.topology_file
    }

    pub fn seed(&self) -> &str {
        &self.topology.shards()[0].address
    }

    pub fn pids(&self) -> Vec<u32> {
        self.children.iter().map(Child::id).collect()
    }

    pub fn stop(&mut self) {
        for c in &self.children {
            signal_terminate(c.id());
        }
        let deadline = Instant::now() + Duration::from_secs(5);
        for c in &mut self.children {
            loop {
                match c.try_wait() {
                    Ok(Some(_)) | Err(_) => break,
                    Ok(None) if Instant::now() >= deadline => {
                        let _ = c.kill();
                        let _ = c.wait();
                        break;
                    }
                    Ok(None) => thread::sleep(Duration::from_millis(10)),
                }
            }
        }
        self.children.clear();
    }
}

impl Drop for Orchestrator {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Starts `shards` server processes on consecutive ports and waits until
/// each answers PING.
pub fn launch_orchestrator(config: &OrchestratorConfig) -> Result<Orchestrator> {
    if config.shards == 0 {
        return Err(LaunchError::InvalidParams("orchestrator needs at least one shard".into()));
    }
    let ports: Vec<u16> = (0..config.shards)
        .map(|i| {
            u16::try_from(config.base_port as usize + i)
                .map_err(|_| LaunchError::InvalidParams("port range exceeds 65535".into()))
        })
        .collect::<Result<_>>()?;
    for &port in &ports {
        TcpListener::bind((config.host.as_str(), port)).map_err(|_| LaunchError::PortInUse(port))?;
    }
    let addrs: Vec<String> = ports.iter().map(|p| format!("{}:{p}", config.host)).collect();
    let topology = plan_topology(config.shards, &addrs)
        .map_err(|e| LaunchError::InvalidParams(e.to_string()))?;
    fs::create_dir_all(&config.dir)?;
    let topology_file = config.dir.join("topology.json");
    fs::write(&topology_file, topology.to_json())?;

    let mut orch = Orchestrator { topology, topology_file, children: Vec::new() };
    for (i, addr) in addrs.iter().enumerate() {
        let log = File::create(config.dir.join(format!("shard_{i}.log")))?;
        let child = Command::new(&config.server_exe)
            .arg("--listen")
            .arg(addr)
            .arg("--shard-id")
            .arg(i.to_string())
            .arg("--topology")
            .arg(&orch.topology_file)
            .arg("--workers")
            .arg(config.workers.to_string())
            .stdin(Stdio::null())
            .stdout(log.try_clone()?)
            .stderr(log)
            .spawn()
            .map_err(|source| LaunchError::SpawnFailed { member: format!("shard_{i}"), source })?;
        orch.children.push(child);
    }

    let deadline = Instant::now() + config.ready_timeout;
    for (i, addr) in addrs.iter().enumerate() {
        loop {
            if client::ping(addr).is_ok() {
                break;
            }
            if let Ok(Some(status)) = orch.children[i].try_wait() {
                return Err(LaunchError::ShardStartTimeout {
                    shard: i as u32,
                    detail: format!("process exited early with {status}"),
                });
            }
            if Instant::now() >= deadline {
                return Err(LaunchError::ShardStartTimeout {
                    shard: i as u32,
                    detail: format!("no PING reply within {:?}", config.ready_timeout),
                });
            }
            thread::sleep(Duration::from_millis(20));
        }
    }
    info!(shards = config.shards, "orchestrator ready");
    Ok(orch)
}
