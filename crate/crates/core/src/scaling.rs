//! Synthetic scaling benchmark: many clients against a few shards, each
//! client timing put / run_script / run_model / get in a loop.
//!
//! Output files, all CSV with a header row:
//!
//! - `summary.csv`: `clients,shards,api,count,mean,median,q1,q3,min,max`,
//!   one row per (cell, api). Times are seconds.
//! - `whiskers.csv`: `clients,shards,api,whisker_low,q1,median,q3,whisker_high,outliers`,
//!   box-plot data with Tukey whiskers at 1.5 IQR; `outliers` counts the
//!   samples beyond them.
//! - `records.csv`: `clients,shards,trial,client,iteration,api,elapsed`,
//!   every raw sample.
//!
//! A cell whose `clients x iterations` falls short of
//! [`BenchConfig::min_samples`] is repeated on fresh clusters (trials)
//! until it has enough samples per api.
//!
//! Quantiles use linear interpolation between closest ranks (type 7).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdout, Command, Stdio};
use std::str::FromStr;
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::client::{ClientError, ClientHandle};
use crate::exec::{encode_model, Device, Finalize, Layer, ScriptOp, ScriptSpec, Step, Target};
use crate::launcher::{launch_orchestrator, Orchestrator, OrchestratorConfig};
use crate::server::LocalCluster;
use crate::tensor::Tensor;

pub const BENCH_MODEL: &str = "bench_mlp";
pub const BENCH_SCRIPT: &str = "bench_prep";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench config: {0}")]
    InvalidConfig(String),
    #[error("no samples for {0}")]
    EmptyGroup(String),
    #[error("cell {cell} failed: {reason}")]
    CellFailed { cell: Cell, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub clients: usize,
    pub shards: usize,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} clients x {} shards", self.clients, self.shards)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Api {
    PutTensor,
    RunScript,
    RunModel,
    UnpackTensor,
}

impl Api {
    pub const ALL: [Api; 4] = [Api::PutTensor, Api::RunScript, Api::RunModel, Api::UnpackTensor];

    pub fn as_str(self) -> &'static str {
        match self {
            Api::PutTensor => "put_tensor",
            Api::RunScript => "run_script",
            Api::RunModel => "run_model",
            Api::UnpackTensor => "unpack_tensor",
        }
    }
}

impl fmt::Display for Api {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Api {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Api::ALL.into_iter().find(|a| a.as_str() == s).ok_or_else(|| format!("unknown api {s:?}"))
    }
}

/// One timed client call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub cell: Cell,
    #[serde(default)]
    pub trial: usize,
    pub client: usize,
    pub iteration: usize,
    pub api: Api,
    /// Seconds, from a monotonic clock.
    pub elapsed: f64,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub clients: Vec<usize>,
    pub shards: Vec<usize>,
    pub iterations: usize,
    /// Shape of the tensor each client puts; `[rows, width]`.
    pub tensor_shape: Vec<usize>,
    pub model: Vec<u8>,
    pub model_batch_size: u32,
    pub script: ScriptSpec,
    /// Samples per (cell, api) to collect, by repeating the cell.
    pub min_samples: usize,
    pub out_dir: Option<PathBuf>,
}

impl BenchConfig {
    /// The default workload: a 16-wide MLP with one hidden layer of 64.
    pub fn new(clients: Vec<usize>, shards: Vec<usize>, iterations: usize) -> Self {
        BenchConfig {
            clients,
            shards,
            iterations,
            tensor_shape: vec![8, 16],
            model: bench_model(16, 64),
            model_batch_size: 32,
            script: bench_script(),
            min_samples: 0,
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::InvalidConfig(m.into()));
        if self.clients.is_empty() || self.clients.contains(&0) {
            return bad("client counts must be non-empty and positive");
        }
        if self.shards.is_empty() || self.shards.contains(&0) {
            return bad("shard counts must be non-empty and positive");
        }
        if self.iterations == 0 {
            return bad("iterations must be positive");
        }
        if self.tensor_shape.len() != 2 || self.tensor_shape.contains(&0) {
            return bad("tensor shape must be [rows, width] with positive sizes");
        }
        self.script.validate().map_err(|e| BenchError::InvalidConfig(e.to_string()))
    }

    pub fn cells(&self) -> Vec<Cell> {
        self.clients
            .iter()
            .flat_map(|&clients| self.shards.iter().map(move |&shards| Cell { clients, shards }))
            .collect()
    }

    /// Fresh-cluster repetitions of `cell` needed to reach `min_samples`.
    pub fn trials(&self, cell: Cell) -> usize {
        let per_trial = cell.clients * self.iterations;
        self.min_samples.div_ceil(per_trial).max(1)
    }

    fn input_tensor(&self, client: usize) -> Tensor {
        let n: usize = self.tensor_shape.iter().product();
        let data: Vec<f32> = (0..n).map(|i| ((i + client) % 17) as f32 / 17.0 - 0.5).collect();
        Tensor::from_f32(self.tensor_shape.clone(), &data).expect("validated shape")
    }
}

/// Deterministic `width -> hidden -> width` ReLU network.
pub fn bench_model(width: usize, hidden: usize) -> Vec<u8> {
    let w = |n: usize, salt: usize| -> Vec<f32> {
        (0..n).map(|i| (((i * 31 + salt) % 19) as f32 - 9.0) / 90.0).collect()
    };
    encode_model(&[
        Layer::dense(width, hidden, w(width * hidden, 1), w(hidden, 2)),
        Layer::Relu,
        Layer::dense(hidden, width, w(hidden * width, 3), w(width, 4)),
    ])
}

pub fn bench_script() -> ScriptSpec {
    ScriptSpec {
        name: BENCH_SCRIPT.into(),
        arity: 1,
        steps: vec![
            Step { target: Target::Input(0), op: ScriptOp::Affine { a: 2.0, b: -0.25 } },
            Step { target: Target::Input(0), op: ScriptOp::Clamp { lo: -4.0, hi: 4.0 } },
        ],
        finalize: Finalize::Single,
        output_dtype: None,
    }
}

/// Registers the bench model and script on every shard.
pub fn preset(client: &mut ClientHandle, config: &BenchConfig) -> Result<(), ClientError> {
    client.set_script(BENCH_SCRIPT, &config.script)?;
    client.set_model(BENCH_MODEL, &config.model, config.model_batch_size, Device::Cpu)
}

/// The per-client main loop. Keys carry a per-client hash tag so each
/// client's tensors stay on one shard.
pub fn client_loop(
    client: &mut ClientHandle,
    config: &BenchConfig,
    cell: Cell,
    client_id: usize,
) -> Result<Vec<TimingRecord>, ClientError> {
    let input = config.input_tensor(client_id);
    let tag = format!("{{c{client_id}}}");
    let (k_in, k_mid, k_out) = (format!("{tag}in"), format!("{tag}prep"), format!("{tag}out"));
    let mut records = Vec::with_capacity(config.iterations * 4);
    for iteration in 0..config.iterations {
        let mut timed = |api: Api, f: &mut dyn FnMut(&mut ClientHandle) -> Result<(), ClientError>| {
            let start = Instant::now();
            f(client)?;
            let elapsed = start.elapsed().as_secs_f64();
            records.push(TimingRecord { cell, trial: 0, client: client_id, iteration, api, elapsed });
            Ok::<(), ClientError>(())
        };
        timed(Api::PutTensor, &mut |c| c.put_tensor(&k_in, &input))?;
        timed(Api::RunScript, &mut |c| c.run_script(BENCH_SCRIPT, &[&k_in], &k_mid))?;
        timed(Api::RunModel, &mut |c| c.run_model(BENCH_MODEL, &[&k_mid], &[&k_out]))?;
        timed(Api::UnpackTensor, &mut |c| c.get_tensor(&k_out).map(drop))?;
    }
    for key in [&k_in, &k_mid, &k_out] {
        let _ = client.delete(key);
    }
    Ok(records)
}

/// A running cluster for one cell; torn down on drop.
pub trait RunningCluster {
    fn seed(&self) -> String;
}

impl RunningCluster for LocalCluster {
    fn seed(&self) -> String {
        LocalCluster::seed(self)
    }
}

impl RunningCluster for Orchestrator {
    fn seed(&self) -> String {
        Orchestrator::seed(self).to_string()
    }
}

/// Launches a fresh cluster per cell.
pub trait ClusterProvider {
    fn launch(&mut self, shards: usize) -> Result<Box<dyn RunningCluster>, String>;
}

/// Shards as threads of the current process.
#[derive(Debug, Default)]
pub struct InProcessClusters {
    pub workers: usize,
}

impl ClusterProvider for InProcessClusters {
    fn launch(&mut self, shards: usize) -> Result<Box<dyn RunningCluster>, String> {
        LocalCluster::start_with_workers(shards, self.workers.max(1))
            .map(|c| Box::new(c) as Box<dyn RunningCluster>)
            .map_err(|e| e.to_string())
    }
}

/// Shards as separate server processes.
#[derive(Debug)]
pub struct ProcessClusters {
    pub server_exe: PathBuf,
    pub base_port: u16,
    pub dir: PathBuf,
    launched: usize,
}

impl ProcessClusters {
    pub fn new(server_exe: impl Into<PathBuf>, base_port: u16, dir: impl Into<PathBuf>) -> Self {
        ProcessClusters { server_exe: server_exe.into(), base_port, dir: dir.into(), launched: 0 }
    }
}

impl ClusterProvider for ProcessClusters {
    fn launch(&mut self, shards: usize) -> Result<Box<dyn RunningCluster>, String> {
        let dir = self.dir.join(format!("cluster_{}", self.launched));
        self.launched += 1;
        let config = OrchestratorConfig::new(&self.server_exe, shards, self.base_port, dir);
        launch_orchestrator(&config).map(|o| Box::new(o) as Box<dyn RunningCluster>).map_err(|e| e.to_string())
    }
}

/// Runs every client of a cell concurrently and gathers their records.
pub trait ClientRunner {
    fn run_cell(&self, seed: &str, config: &BenchConfig, cell: Cell) -> Result<Vec<TimingRecord>, String>;
}

/// Clients as threads, released together by a barrier.
#[derive(Debug, Default)]
pub struct ThreadClients;

impl ClientRunner for ThreadClients {
    fn run_cell(&self, seed: &str, config: &BenchConfig, cell: Cell) -> Result<Vec<TimingRecord>, String> {
        let barrier = Arc::new(Barrier::new(cell.clients));
        let results: Vec<Result<Vec<TimingRecord>, String>> = thread::scope(|s| {
            let handles: Vec<_> = (0..cell.clients)
                .map(|id| {
                    let barrier = Arc::clone(&barrier);
                    s.spawn(move || {
                        let client = ClientHandle::connect(seed);
                        barrier.wait();
                        let mut client = client.map_err(|e| format!("client {id}: {e}"))?;
                        client_loop(&mut client, config, cell, id).map_err(|e| format!("client {id}: {e}"))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err("client thread panicked".into())))
                .collect()
        });
        let mut all = Vec::new();
        for r in results {
            all.extend(r?);
        }
        Ok(all)
    }
}

/// Clients as child processes running
/// `<exe> <args..> --seed ADDR --id N --clients C --shards S --iters I`.
///
/// Each child connects, prints `ready`, waits for a line on stdin, then
/// runs its loop and prints one JSON record per line on stdout. The
/// driver releases all children at once after every one is ready.
#[derive(Debug, Clone)]
pub struct ProcessClients {
    pub exe: PathBuf,
    pub args: Vec<String>,
}

/// Line a client process prints once it is connected.
pub const READY_LINE: &str = "ready";

impl ClientRunner for ProcessClients {
    fn run_cell(&self, seed: &str, config: &BenchConfig, cell: Cell) -> Result<Vec<TimingRecord>, String> {
        let mut children = Vec::with_capacity(cell.clients);
        let kill_all = |children: &mut Vec<(Child, BufReader<ChildStdout>)>| {
            for (c, _) in children.iter_mut() {
                let _ = c.kill();
                let _ = c.wait();
            }
        };
        for id in 0..cell.clients {
            let spawned = Command::new(&self.exe)
                .args(&self.args)
                .args(["--seed", seed])
                .args(["--id", &id.to_string()])
                .args(["--clients", &cell.clients.to_string()])
                .args(["--shards", &cell.shards.to_string()])
                .args(["--iters", &config.iterations.to_string()])
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn();
            match spawned {
                Ok(mut child) => {
                    let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
                    children.push((child, stdout));
                }
                Err(e) => {
                    kill_all(&mut children);
                    return Err(format!("spawn client {id}: {e}"));
                }
            }
        }
        for (id, (_, stdout)) in children.iter_mut().enumerate() {
            let mut line = String::new();
            let ready = stdout.read_line(&mut line).is_ok() && line.trim() == READY_LINE;
            if !ready {
                kill_all(&mut children);
                return Err(format!("client {id} did not become ready"));
            }
        }
        for (child, _) in children.iter_mut() {
            // Dropping stdin after the go line also unblocks the child.
            if let Some(mut stdin) = child.stdin.take() {
                let _ = stdin.write_all(b"go\n");
            }
        }
        let mut all = Vec::new();
        let mut failure = None;
        for (id, (mut child, stdout)) in children.into_iter().enumerate() {
            for line in stdout.lines() {
                match line.map_err(|e| e.to_string()).and_then(|l| {
                    serde_json::from_str::<TimingRecord>(&l).map_err(|e| format!("bad record {l:?}: {e}"))
                }) {
                    Ok(r) => all.push(r),
                    Err(e) => {
                        failure.get_or_insert(format!("client {id}: {e}"));
                    }
                }
            }
            match child.wait() {
                Ok(s) if s.success() => {}
                Ok(s) => {
                    failure.get_or_insert(format!("client {id} exited with {s}"));
                }
                Err(e) => {
                    failure.get_or_insert(format!("client {id}: {e}"));
                }
            }
        }
        match failure {
            Some(e) => Err(e),
            None => Ok(all),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub cell: Cell,
    pub records: Vec<TimingRecord>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct MatrixResult {
    pub cells: Vec<CellOutcome>,
    pub clusters_launched: usize,
}

impl MatrixResult {
    /// Records of every successful cell.
    pub fn records(&self) -> Vec<TimingRecord> {
        self.cells.iter().filter(|c| c.error.is_none()).flat_map(|c| c.records.iter().copied()).collect()
    }

    pub fn failed(&self) -> Vec<Cell> {
        self.cells.iter().filter(|c| c.error.is_some()).map(|c| c.cell).collect()
    }
}

/// Runs each cell on a fresh cluster, one cell at a time. A failing cell
/// is recorded and the matrix continues.
pub fn run_matrix(
    config: &BenchConfig,
    clusters: &mut dyn ClusterProvider,
    clients: &dyn ClientRunner,
) -> Result<MatrixResult, BenchError> {
    config.validate()?;
    let mut result = MatrixResult::default();
    for cell in config.cells() {
        let mut outcome = Ok(Vec::new());
        for trial in 0..config.trials(cell) {
            let run = run_cell(config, clusters, clients, cell, &mut result.clusters_launched);
            match (&mut outcome, run) {
                (Ok(all), Ok(records)) => {
                    all.extend(records.into_iter().map(|r| TimingRecord { trial, ..r }))
                }
                (_, Err(e)) => {
                    outcome = Err(format!("trial {trial}: {e}"));
                    break;
                }
                (Err(_), Ok(_)) => unreachable!("loop stops at the first failure"),
            }
        }
        let (records, error) = match outcome {
            Ok(records) => (records, None),
            Err(e) => {
                warn!(%cell, error = %e, "cell failed");
                (Vec::new(), Some(e))
            }
        };
        info!(%cell, records = records.len(), "cell done");
        result.cells.push(CellOutcome { cell, records, error });
    }
    Ok(result)
}

fn run_cell(
    config: &BenchConfig,
    clusters: &mut dyn ClusterProvider,
    clients: &dyn ClientRunner,
    cell: Cell,
    launched: &mut usize,
) -> Result<Vec<TimingRecord>, String> {
    let cluster = clusters.launch(cell.shards)?;
    *launched += 1;
    let seed = cluster.seed();
    let mut admin = ClientHandle::connect(&seed).map_err(|e| e.to_string())?;
    preset(&mut admin, config).map_err(|e| e.to_string())?;
    let records = clients.run_cell(&seed, config, cell)?;
    let expected = cell.clients * config.iterations * Api::ALL.len();
    if records.len() != expected {
        return Err(format!("expected {expected} records, got {}", records.len()));
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

/// Type-7 quantile of sorted data: `h = (n - 1) p`, interpolating
/// between the neighbouring order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn stats(samples: &[f64]) -> Option<Stats> {
    if samples.is_empty() {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(Stats {
        count: sorted.len(),
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        median: quantile(&sorted, 0.5),
        q1: quantile(&sorted, 0.25),
        q3: quantile(&sorted, 0.75),
        min: sorted[0],
        max: sorted[sorted.len() - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub cell: Cell,
    pub api: Api,
    pub stats: Stats,
}

fn group(records: &[TimingRecord]) -> BTreeMap<(Cell, Api), Vec<f64>> {
    let mut groups: BTreeMap<(Cell, Api), Vec<f64>> = BTreeMap::new();
    for r in records {
        groups.entry((r.cell, r.api)).or_default().push(r.elapsed);
    }
    groups
}

/// Per (cell, api) statistics, ordered by cell then api.
pub fn summarize(records: &[TimingRecord]) -> Result<Vec<SummaryRow>, BenchError> {
    if records.is_empty() {
        return Err(BenchError::EmptyGroup("record set".into()));
    }
    group(records)
        .into_iter()
        .map(|((cell, api), samples)| {
            let stats = stats(&samples).ok_or_else(|| BenchError::EmptyGroup(format!("{cell} {api}")))?;
            Ok(SummaryRow { cell, api, stats })
        })
        .collect()
}

pub const SUMMARY_HEADER: [&str; 10] =
    ["clients", "shards", "api", "count", "mean", "median", "q1", "q3", "min", "max"];
pub const WHISKER_HEADER: [&str; 9] =
    ["clients", "shards", "api", "whisker_low", "q1", "median", "q3", "whisker_high", "outliers"];
pub const RECORD_HEADER: [&str; 7] =
    ["clients", "shards", "trial", "client", "iteration", "api", "elapsed"];

/// Writes `summary.csv`, `whiskers.csv` and `records.csv` into `dir`.
/// Output depends only on the input, so re-emitting is byte-identical.
pub fn emit(summary: &[SummaryRow], records: &[TimingRecord], dir: &Path) -> Result<(), BenchError> {
    fs::create_dir_all(dir)?;
    let num = |x: f64| format!("{x:e}");

    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(SUMMARY_HEADER)?;
    for row in summary {
        let s = &row.stats;
        w.write_record([
            row.cell.clients.to_string(),
            row.cell.shards.to_string(),
            row.api.to_string(),
            s.count.to_string(),
            num(s.mean),
            num(s.median),
            num(s.q1),
            num(s.q3),
            num(s.min),
            num(s.max),
        ])?;
    }
    w.flush()?;

    let groups = group(records);
    let mut w = csv::Writer::from_path(dir.join("whiskers.csv"))?;
    w.write_record(WHISKER_HEADER)?;
    for row in summary {
        let s = &row.stats;
        let iqr = s.q3 - s.q1;
        let (lo_fence, hi_fence) = (s.q1 - 1.5 * iqr, s.q3 + 1.5 * iqr);
        let samples = groups.get(&(row.cell, row.api)).map(Vec::as_slice).unwrap_or(&[]);
        let inside = samples.iter().copied().filter(|&x| x >= lo_fence && x <= hi_fence);
        let low = inside.clone().fold(f64::INFINITY, f64::min);
        let high = inside.fold(f64::NEG_INFINITY, f64::max);
        let (low, high) = if low.is_finite() { (low, high) } else { (s.min, s.max) };
        let outliers = samples.iter().filter(|&&x| x < lo_fence || x > hi_fence).count();
        w.write_record([
            row.cell.clients.to_string(),
            row.cell.shards.to_string(),
            row.api.to_string(),
            num(low),
            num(s.q1),
            num(s.median),
            num(s.q3),
            num(high),
            outliers.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("records.csv"))?;
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record([
            r.cell.clients.to_string(),
            r.cell.shards.to_string(),
            r.trial.to_string(),
            r.client.to_string(),
            r.iteration.to_string(),
            r.api.to_string(),
            num(r.elapsed),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean of one api's samples in one cell.
pub fn mean_latency(summary: &[SummaryRow], cell: Cell, api: Api) -> Option<f64> {
    summary.iter().find(|r| r.cell == cell && r.api == api).map(|r| r.stats.mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(cell: Cell, api: Api, elapsed: f64) -> TimingRecord {
        TimingRecord { cell, trial: 0, client: 0, iteration: 0, api, elapsed }
    }

    #[test]
    fn type7_quantiles() {
        let s = stats(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.median, s.q1, s.q3), (2.5, 1.75, 3.25));
        assert_eq!((s.min, s.max, s.mean), (1.0, 4.0, 2.5));
        let one = stats(&[5.0]).unwrap();
        assert!([one.mean, one.median, one.q1, one.q3, one.min, one.max].iter().all(|&v| v == 5.0));
        assert!(stats(&[]).is_none());
    }

    #[test]
    fn summarize_groups_and_errors() {
        assert!(matches!(summarize(&[]), Err(BenchError::EmptyGroup(_))));
        let mut records = Vec::new();
        for clients in [1, 4, 16] {
            for shards in [1, 2] {
                for api in Api::ALL {
                    records.push(rec(Cell { clients, shards }, api, 0.001));
                }
            }
        }
        let summary = summarize(&records).unwrap();
        assert_eq!(summary.len(), 24);
    }

    #[test]
    fn emit_is_deterministic() {
        let cell = Cell { clients: 2, shards: 1 };
        let records: Vec<_> =
            (0..20).map(|i| rec(cell, Api::ALL[i % 4], 1e-4 * (i as f64 + 1.0))).collect();
        let summary = summarize(&records).unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit(&summary, &records, dir.path()).unwrap();
        let read = |f: &str| fs::read(dir.path().join(f)).unwrap();
        let first = (read("summary.csv"), read("whiskers.csv"), read("records.csv"));
        emit(&summary, &records, dir.path()).unwrap();
        assert_eq!(first, (read("summary.csv"), read("whiskers.csv"), read("records.csv")));
        let text = String::from_utf8(first.0).unwrap();
        assert_eq!(text.lines().next().unwrap(), SUMMARY_HEADER.join(","));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn cells_and_validation() {
        let c = BenchConfig::new(vec![1, 4, 16], vec![1, 2], 10);
        assert_eq!(c.cells().len(), 6);
        c.validate().unwrap();
        assert!(BenchConfig::new(vec![0], vec![1], 1).validate().is_err());
        assert!(BenchConfig::new(vec![1], vec![1], 0).validate().is_err());
    }

    #[test]
    fn api_names_round_trip() {
        for api in Api::ALL {
            assert_eq!(api.as_str().parse::<Api>().unwrap(), api);
        }
    }
}
