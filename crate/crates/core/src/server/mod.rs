//! A single shard: keyspace, request handling, inference queue and
//! statistics. Networking lives in [`net`].

mod net;
mod worker;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crossbeam_channel::{bounded, unbounded, Sender};
use parking_lot::RwLock;
use tracing::debug;

use crate::dataset::Dataset;
use crate::exec::{load_named_model, Device, ModelSpec, ScriptSpec};
use crate::protocol::{encode_topology, ErrorReply, Reply, Request, ShardStats, Status};
use crate::routing::{key_slot, ClusterTopology, ShardInfo};
use crate::tensor::{DType, Tensor};

pub use net::{LocalCluster, Server, ServerHandle};
use worker::Job;

/// Configuration for one shard process.
#[derive(Debug, Clone)]
pub struct ShardConfig {
    pub shard_id: u32,
    pub topology: ClusterTopology,
    /// Number of inference worker threads draining the model queue.
    pub workers: usize,
}

#[derive(Debug, Clone)]
enum Value {
    Tensor(Arc<Tensor>),
    /// Canonical dataset encoding, validated on write.
    Dataset(Arc<Vec<u8>>),
    Model(Arc<ModelSpec>),
    Script(Arc<ScriptSpec>),
}

impl Value {
    fn kind(&self) -> &'static str {
        match self {
            Value::Tensor(_) => "tensor",
            Value::Dataset(_) => "dataset",
            Value::Model(_) => "model",
            Value::Script(_) => "script",
        }
    }
}

#[derive(Default)]
struct Counters {
    puts: AtomicU64,
    gets: AtomicU64,
    model_runs: AtomicU64,
    script_runs: AtomicU64,
    batch_executions: AtomicU64,
    bytes_in: AtomicU64,
    bytes_out: AtomicU64,
}

fn bump(c: &AtomicU64, by: u64) {
    c.fetch_add(by, Ordering::Relaxed);
}

/// State of one shard, shared by its connection handlers and workers.
pub struct Shard {
    id: u32,
    topology: ClusterTopology,
    owned: ShardInfo,
    keyspace: RwLock<HashMap<String, Value>>,
    counters: Counters,
    queue: Sender<Job>,
}

fn malformed(e: impl std::fmt::Display) -> ErrorReply {
    ErrorReply::new(Status::Malformed, e.to_string())
}

fn exec_error(e: impl std::fmt::Display) -> ErrorReply {
    ErrorReply::new(Status::ExecError, e.to_string())
}

impl Shard {
    /// Creates the shard and starts its inference workers.
    pub fn start(config: ShardConfig) -> Result<Arc<Shard>, String> {
        let owned = config
            .topology
            .shard(config.shard_id)
            .cloned()
            .ok_or_else(|| format!("shard id {} is not in the topology", config.shard_id))?;
        let (tx, rx) = unbounded();
        let shard = Arc::new(Shard {
            id: config.shard_id,
            topology: config.topology,
            owned,
            keyspace: RwLock::new(HashMap::new()),
            counters: Counters::default(),
            queue: tx,
        });
        for n in 0..config.workers.max(1) {
            worker::spawn(n, Arc::downgrade(&shard), rx.clone());
        }
        Ok(shard)
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn topology(&self) -> &ClusterTopology {
        &self.topology
    }

    pub fn stats(&self) -> ShardStats {
        let c = &self.counters;
        ShardStats {
            shard_id: self.id,
            puts: c.puts.load(Ordering::Relaxed),
            gets: c.gets.load(Ordering::Relaxed),
            model_runs: c.model_runs.load(Ordering::Relaxed),
            script_runs: c.script_runs.load(Ordering::Relaxed),
            batch_executions: c.batch_executions.load(Ordering::Relaxed),
            bytes_in: c.bytes_in.load(Ordering::Relaxed),
            bytes_out: c.bytes_out.load(Ordering::Relaxed),
            keys_resident: self.keyspace.read().len() as u64,
        }
    }

    pub(crate) fn record_io(&self, bytes_in: usize, bytes_out: usize) {
        bump(&self.counters.bytes_in, bytes_in as u64);
        bump(&self.counters.bytes_out, bytes_out as u64);
    }

    pub(crate) fn record_batch(&self, size: usize) {
        bump(&self.counters.model_runs, size as u64);
        bump(&self.counters.batch_executions, 1);
    }

    fn check_owned(&self, key: &str) -> Result<(), ErrorReply> {
        let slot = key_slot(key).map_err(malformed)?;
        if self.owned.owns(slot) {
            Ok(())
        } else {
            Err(ErrorReply::wrong_shard(self.topology.slot_owner(slot), key))
        }
    }

    fn lookup(&self, key: &str) -> Option<Value> {
        self.keyspace.read().get(key).cloned()
    }

    fn store(&self, key: &str, value: Value) {
        self.keyspace.write().insert(key.to_string(), value);
    }

    fn tensor_input(&self, key: &str) -> Result<Arc<Tensor>, ErrorReply> {
        match self.lookup(key) {
            Some(Value::Tensor(t)) => Ok(t),
            Some(other) => Err(ErrorReply::new(
                Status::WrongKind,
                format!("input {key:?} holds a {}", other.kind()),
            )),
            None => Err(ErrorReply::new(Status::InputMissing, format!("input {key:?} not found"))),
        }
    }

    /// Serves one decoded request.
    pub fn handle(&self, req: Request) -> Reply {
        match req {
            Request::PutTensor { key, tensor } => {
                self.check_owned(&key)?;
                let t = Tensor::from_bytes(&tensor).map_err(malformed)?;
                self.store(&key, Value::Tensor(Arc::new(t)));
                bump(&self.counters.puts, 1);
                Ok(Vec::new())
            }
            Request::GetTensor { key } => {
                self.check_owned(&key)?;
                bump(&self.counters.gets, 1);
                match self.lookup(&key) {
                    Some(Value::Tensor(t)) => Ok(t.to_bytes()),
                    Some(other) => Err(ErrorReply::new(
                        Status::WrongKind,
                        format!("key {key:?} holds a {}", other.kind()),
                    )),
                    None => Err(ErrorReply::new(Status::NotFound, format!("key {key:?} not found"))),
                }
            }
            Request::Del { key } => {
                self.check_owned(&key)?;
                let removed = self.keyspace.write().remove(&key).is_some();
                Ok(vec![u8::from(removed)])
            }
            Request::PutDataset { key, dataset } => {
                self.check_owned(&key)?;
                Dataset::from_bytes(key.as_str(), &dataset).map_err(malformed)?;
                self.store(&key, Value::Dataset(Arc::new(dataset)));
                bump(&self.counters.puts, 1);
                Ok(Vec::new())
            }
            Request::GetDataset { key } => {
                self.check_owned(&key)?;
                bump(&self.counters.gets, 1);
                match self.lookup(&key) {
                    Some(Value::Dataset(d)) => Ok(d.as_ref().clone()),
                    Some(other) => Err(ErrorReply::new(
                        Status::WrongKind,
                        format!("key {key:?} holds a {}", other.kind()),
                    )),
                    None => Err(ErrorReply::new(Status::NotFound, format!("key {key:?} not found"))),
                }
            }
            Request::SetModel { name, batch_size, device, blob } => {
                if name.is_empty() {
                    return Err(malformed("empty model name"));
                }
                let device = Device::parse(&device)
                    .ok_or_else(|| ErrorReply::new(Status::BadModel, format!("unsupported device {device:?}")))?;
                let model = load_named_model(&name, &blob, batch_size as usize, device)
                    .map_err(|e| ErrorReply::new(Status::BadModel, e.to_string()))?;
                debug!(shard = self.id, model = %name, "model set");
                self.store(&name, Value::Model(Arc::new(model)));
                Ok(Vec::new())
            }
            Request::SetScript { name, blob } => {
                if name.is_empty() {
                    return Err(malformed("empty script name"));
                }
                let mut script = ScriptSpec::from_blob(&blob)
                    .map_err(|e| ErrorReply::new(Status::BadModel, e.to_string()))?;
                script.name = name.clone();
                self.store(&name, Value::Script(Arc::new(script)));
                Ok(Vec::new())
            }
            Request::RunModel { name, inputs, outputs } => self.run_model(&name, &inputs, &outputs),
            Request::RunScript { name, inputs, output } => self.run_script(&name, &inputs, &output),
            Request::ClusterSlots => Ok(encode_topology(&self.topology)),
            Request::Ping => Ok(Vec::new()),
            Request::Info => Ok(self.stats().encode()),
        }
    }

    fn run_model(&self, name: &str, inputs: &[String], outputs: &[String]) -> Reply {
        let model = match self.lookup(name) {
            Some(Value::Model(m)) => m,
            _ => {
                return Err(ErrorReply::new(Status::ModelNotFound, format!("model {name:?} not set")))
            }
        };
        if inputs.is_empty() {
            return Err(exec_error("model run needs at least one input"));
        }
        if outputs.len() != 1 {
            return Err(exec_error(format!("models produce one output, {} keys given", outputs.len())));
        }
        for key in inputs.iter().chain(outputs) {
            self.check_owned(key)?;
        }
        let tensors = inputs
            .iter()
            .map(|k| self.tensor_input(k))
            .collect::<Result<Vec<_>, _>>()?;
        let input = concat_columns(&tensors).map_err(exec_error)?;
        model.check_input(&input).map_err(exec_error)?;
        let (tx, rx) = bounded(1);
        self.queue
            .send(Job { model, input, reply: tx })
            .map_err(|_| exec_error("inference workers stopped"))?;
        let output = rx
            .recv()
            .map_err(|_| exec_error("inference worker dropped the request"))?
            .map_err(exec_error)?;
        self.store(&outputs[0], Value::Tensor(Arc::new(output)));
        Ok(Vec::new())
    }

    fn run_script(&self, name: &str, inputs: &[String], output: &str) -> Reply {
        let script = match self.lookup(name) {
            Some(Value::Script(s)) => s,
            _ => return Err(ErrorReply::new(Status::NotFound, format!("script {name:?} not set"))),
        };
        if inputs.len() != script.arity {
            return Err(exec_error(format!(
                "ArityMismatch: script expects {} inputs, got {}",
                script.arity,
                inputs.len()
            )));
        }
        for key in inputs.iter().map(String::as_str).chain([output]) {
            self.check_owned(key)?;
        }
        let tensors = inputs
            .iter()
            .map(|k| self.tensor_input(k).map(|t| t.as_ref().clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let result = script.run(&tensors).map_err(exec_error)?;
        bump(&self.counters.script_runs, 1);
        self.store(output, Value::Tensor(Arc::new(result)));
        Ok(Vec::new())
    }
}

/// Joins f32 matrices with equal row counts side by side. A single input
/// passes through unchanged.
fn concat_columns(inputs: &[Arc<Tensor>]) -> Result<Tensor, String> {
    if let [only] = inputs {
        return Ok(only.as_ref().clone());
    }
    let mut rows = None;
    let mut parts = Vec::with_capacity(inputs.len());
    for t in inputs {
        if t.dtype() != DType::F32 {
            return Err(format!("model inputs must be f32, got {}", t.dtype()));
        }
        let &[r, w] = t.shape() else {
            return Err(format!("model inputs must be 2-D, got {:?}", t.shape()));
        };
        if *rows.get_or_insert(r) != r {
            return Err(format!("inputs disagree on row count: {} vs {r}", rows.unwrap()));
        }
        parts.push((w, t.to_f32_vec().expect("f32 checked")));
    }
    let rows = rows.expect("non-empty");
    let width: usize = parts.iter().map(|(w, _)| w).sum();
    let mut data = Vec::with_capacity(rows * width);
    for r in 0..rows {
        for (w, values) in &parts {
            data.extend_from_slice(&values[r * w..(r + 1) * w]);
        }
    }
    Tensor::from_f32(vec![rows, width], &data).map_err(|e| e.to_string())
}
