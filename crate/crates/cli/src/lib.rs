//! Shared pieces of the command-line tools: argument parsers, the
//! experiment config file, and logging setup.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use tensorfleet::launcher::{create_ensemble, Ensemble, RunSettings, Strategy};

/// Logs to stderr; `RUST_LOG` overrides the default `warn` level.
pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

/// Parses `"2,8,32"` into positive integers.
pub fn parse_counts(s: &str) -> Result<Vec<usize>> {
    let counts = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().with_context(|| format!("bad count {p:?}")))
        .collect::<Result<Vec<_>>>()?;
    if counts.is_empty() || counts.contains(&0) {
        bail!("counts must be positive");
    }
    Ok(counts)
}

/// Parses `"NX,NY"`.
pub fn parse_grid(s: &str) -> Result<(usize, usize)> {
    match parse_counts(s)?.as_slice() {
        &[nx, ny] => Ok((nx, ny)),
        _ => bail!("grid must be NX,NY"),
    }
}

/// Experiment description read from TOML.
///
/// ```toml
/// root = "runs/sweep"
///
/// [orchestrator]
/// shards = 2
/// base_port = 6780
///
/// [[ensemble]]
/// name = "ocean"
/// strategy = "all-permutations"   # or "step", or { replicas = 12 }
/// executable = "/bin/sh"
/// args = ["-c", "cat input.nml"]
/// templates = ["input.nml"]
///
/// [ensemble.params]
/// steps = ["10", "20"]
/// ```
///
/// Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub root: PathBuf,
    #[serde(default)]
    pub orchestrator: Option<OrchestratorSection>,
    #[serde(default)]
    pub ensemble: Vec<EnsembleSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrchestratorSection {
    pub shards: usize,
    pub base_port: u16,
    /// Defaults to the `shard-server` binary next to the running one.
    #[serde(default)]
    pub server_exe: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub name: String,
    pub strategy: Strategy,
    pub executable: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
    #[serde(default)]
    pub templates: Vec<PathBuf>,
    #[serde(default)]
    pub params: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub processes: Option<usize>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config: ExperimentConfig =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve(base);
        Ok(config)
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.root);
        if let Some(o) = &mut self.orchestrator {
            if let Some(exe) = &mut o.server_exe {
                join(exe);
            }
        }
        for e in &mut self.ensemble {
            e.templates.iter_mut().for_each(join);
            // Bare command names are looked up on PATH, not resolved.
            if e.executable.components().count() > 1 {
                join(&mut e.executable);
            }
        }
    }

    pub fn ensembles(&self) -> Result<Vec<Ensemble>> {
        self.ensemble
            .iter()
            .map(|e| {
                let mut settings = RunSettings::new(&e.executable).args(e.args.clone());
                settings.env = e.env.clone();
                settings.processes = e.processes.unwrap_or(1);
                create_ensemble(&e.name, &e.params, e.strategy, settings, e.templates.clone())
                    .with_context(|| format!("ensemble {}", e.name))
            })
            .collect()
    }
}

/// Path of a sibling binary installed next to the running executable.
pub fn sibling_exe(name: &str) -> Result<PathBuf> {
    let me = std::env::current_exe().context("locating current executable")?;
    let dir = me.parent().context("executable has no parent directory")?;
    Ok(dir.join(format!("{name}{}", std::env::consts::EXE_SUFFIX)))
}
