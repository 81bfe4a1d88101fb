//! Cluster-aware client.
//!
//! The client fetches the topology once, routes every key to its owning
//! shard, broadcasts models and scripts to all shards, and stages data so
//! that a model or script runs where its first input lives:
//!
//! 1. the executing shard is the owner of the first input key;
//! 2. inputs owned elsewhere are copied to temporaries that hash to the
//!    executing shard (`{tag}tmp.<client>.<seq>.in.<i>`);
//! 3. outputs whose canonical owner is elsewhere are produced under
//!    temporaries and then moved to their owners;
//! 4. every temporary is deleted, on success and on failure.

use std::collections::BTreeMap;
use std::io::{self, BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::thread;
use std::time::Duration;

use thiserror::Error;

use crate::dataset::{Dataset, DatasetError};
use crate::exec::{Device, ScriptSpec};
use crate::protocol::{
    decode_response, decode_topology, encode_request, read_frame, write_frame, Command, ErrorReply,
    ProtocolError, Request, ShardStats, Status,
};
use crate::routing::{tag_for_slot, ClusterTopology, RoutingError};
use crate::tensor::{Tensor, TensorError};

const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach {address}: {source}")]
    Unreachable { address: String, source: io::Error },
    #[error("server speaks protocol version {0}")]
    ProtocolVersionMismatch(u16),
    #[error("protocol error: {0}")]
    Protocol(ProtocolError),
    #[error("{status:?}: {message}")]
    Server { status: Status, owner: Option<u32>, message: String },
    #[error("broadcast failed on shards {failed:?}")]
    PartialBroadcast { failed: Vec<u32> },
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

impl From<ProtocolError> for ClientError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::VersionMismatch(v) => ClientError::ProtocolVersionMismatch(v),
            other => ClientError::Protocol(other),
        }
    }
}

impl From<ErrorReply> for ClientError {
    fn from(e: ErrorReply) -> Self {
        ClientError::Server { status: e.status, owner: e.owner, message: e.message }
    }
}

impl ClientError {
    /// Status code of a server-side error, if this is one.
    pub fn status(&self) -> Option<Status> {
        match self {
            ClientError::Server { status, .. } => Some(*status),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

/// Instrumentation counters kept by a handle.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClientCounters {
    /// Frames sent, per command.
    pub frames: BTreeMap<Command, u64>,
    /// Inputs copied to a temporary on the executing shard.
    pub input_transfers: u64,
    /// Outputs moved from the executing shard to their owner.
    pub output_transfers: u64,
    /// WrongShard replies that triggered a topology refresh.
    pub redirects: u64,
}

impl ClientCounters {
    pub fn frames_for(&self, cmd: Command) -> u64 {
        self.frames.get(&cmd).copied().unwrap_or(0)
    }
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Connection {
    fn open(address: &str) -> Result<Connection> {
        let unreachable = |source| ClientError::Unreachable { address: address.to_string(), source };
        let addr = address
            .to_socket_addrs()
            .map_err(unreachable)?
            .next()
            .ok_or_else(|| unreachable(io::Error::from(io::ErrorKind::AddrNotAvailable)))?;
        let stream = TcpStream::connect_timeout(&addr, CONNECT_TIMEOUT).map_err(unreachable)?;
        stream.set_nodelay(true).map_err(unreachable)?;
        let reader = BufReader::new(stream.try_clone().map_err(unreachable)?);
        Ok(Connection { reader, writer: BufWriter::new(stream) })
    }

    fn call(&mut self, id: u32, req: &Request) -> Result<std::result::Result<Vec<u8>, ErrorReply>> {
        write_frame(&mut self.writer, &encode_request(id, req)).map_err(ProtocolError::from)?;
        let frame = read_frame(&mut self.reader)?
            .ok_or_else(|| ProtocolError::Io(io::Error::from(io::ErrorKind::UnexpectedEof)))?;
        let resp = decode_response(&frame)?;
        if resp.header.id != id {
            return Err(ClientError::Invalid(format!(
                "response id {} does not match request {id}",
                resp.header.id
            )));
        }
        Ok(resp.reply)
    }
}

/// A connection to a sharded cluster. Not shared between threads; give
/// each worker its own handle.
pub struct ClientHandle {
    topology: ClusterTopology,
    connections: Vec<Option<Connection>>,
    prefix: String,
    nonce: String,
    next_id: u32,
    next_run: u64,
    counters: ClientCounters,
}

impl ClientHandle {
    /// Connects to any one shard and fetches the cluster topology.
    pub fn connect(seed: &str) -> Result<ClientHandle> {
        let mut conn = Connection::open(seed)?;
        let body = conn.call(1, &Request::ClusterSlots)??;
        let topology = decode_topology(&body)?;
        let mut connections: Vec<Option<Connection>> = topology.shards().iter().map(|_| None).collect();
        if let Some(i) = topology.shards().iter().position(|s| s.address == seed) {
            connections[i] = Some(conn);
        }
        let mut counters = ClientCounters::default();
        counters.frames.insert(Command::ClusterSlots, 1);
        Ok(ClientHandle {
            topology,
            connections,
            prefix: String::new(),
            nonce: format!("{:x}{:x}", std::process::id(), rand::random::<u32>()),
            next_id: 2,
            next_run: 0,
            counters,
        })
    }

    /// Namespaces every key this handle touches with `prefix`.
    pub fn with_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.prefix = prefix.into();
        self
    }

    pub fn topology(&self) -> &ClusterTopology {
        &self.topology
    }

    pub fn counters(&self) -> &ClientCounters {
        &self.counters
    }

    pub fn reset_counters(&mut self) {
        self.counters = ClientCounters::default();
    }

    fn key(&self, name: &str) -> String {
        format!("{}{name}", self.prefix)
    }

    fn owner_index(&self, key: &str) -> Result<usize> {
        Ok(self.topology.owner_index(crate::routing::key_slot(key)?))
    }

    /// Sends one request to the shard at `index` in the topology.
    fn call(&mut self, index: usize, req: &Request) -> Result<Vec<u8>> {
        if self.connections[index].is_none() {
            let address = self.topology.shards()[index].address.clone();
            self.connections[index] = Some(Connection::open(&address)?);
        }
        let id = self.next_id;
        self.next_id = self.next_id.wrapping_add(1);
        *self.counters.frames.entry(req.command()).or_default() += 1;
        let result = self.connections[index].as_mut().expect("opened above").call(id, req);
        match result {
            Ok(reply) => Ok(reply?),
            Err(e) => {
                // The stream is in an unknown state; reconnect next time.
                self.connections[index] = None;
                Err(e)
            }
        }
    }

    /// Re-reads the topology from any reachable shard.
    pub fn refresh_topology(&mut self) -> Result<()> {
        let mut last = None;
        for index in 0..self.topology.len() {
            match self.call(index, &Request::ClusterSlots).and_then(|b| Ok(decode_topology(&b)?)) {
                Ok(topo) => {
                    if topo != self.topology {
                        self.connections = topo.shards().iter().map(|_| None).collect();
                        self.topology = topo;
                    }
                    return Ok(());
                }
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("topology has shards"))
    }

    /// Sends a keyed request to the key's owner, refreshing the topology and
    /// retrying once if the shard redirects.
    fn call_routed(&mut self, key: &str, req: &Request) -> Result<Vec<u8>> {
        let index = self.owner_index(key)?;
        match self.call(index, req) {
            Err(ClientError::Server { status: Status::WrongShard, owner, .. }) => {
                self.counters.redirects += 1;
                self.refresh_topology()?;
                let index = owner
                    .and_then(|id| self.topology.shards().iter().position(|s| s.id == id))
                    .map_or_else(|| self.owner_index(key), Ok)?;
                self.call(index, req)
            }
            other => other,
        }
    }

    pub fn put_tensor(&mut self, name: &str, t: &Tensor) -> Result<()> {
        let key = self.key(name);
        let req = Request::PutTensor { key: key.clone(), tensor: t.to_bytes() };
        self.call_routed(&key, &req).map(drop)
    }

    pub fn get_tensor(&mut self, name: &str) -> Result<Tensor> {
        let key = self.key(name);
        let body = self.call_routed(&key, &Request::GetTensor { key: key.clone() })?;
        Ok(Tensor::from_bytes(&body)?)
    }

    /// Deletes a key; returns whether it existed.
    pub fn delete(&mut self, name: &str) -> Result<bool> {
        let key = self.key(name);
        let body = self.call_routed(&key, &Request::Del { key: key.clone() })?;
        Ok(body.first() == Some(&1))
    }

    pub fn put_dataset(&mut self, ds: &Dataset) -> Result<()> {
        let key = self.key(ds.name());
        let req = Request::PutDataset { key: key.clone(), dataset: ds.to_bytes() };
        self.call_routed(&key, &req).map(drop)
    }

    pub fn get_dataset(&mut self, name: &str) -> Result<Dataset> {
        let key = self.key(name);
        let body = self.call_routed(&key, &Request::GetDataset { key: key.clone() })?;
        Ok(Dataset::from_bytes(name, &body)?)
    }

    pub fn tensor_exists(&mut self, name: &str) -> Result<bool> {
        match self.get_tensor(name) {
            Ok(_) => Ok(true),
            Err(ClientError::Server { status: Status::NotFound, .. }) => Ok(false),
            Err(e) => Err(e),
        }
    }

    /// Checks for `name` up to `tries` times, sleeping `interval` between
    /// unsuccessful checks.
    pub fn poll_tensor(&mut self, name: &str, interval: Duration, tries: usize) -> Result<bool> {
        for attempt in 0..tries {
            if self.tensor_exists(name)? {
                return Ok(true);
            }
            if attempt + 1 < tries {
                thread::sleep(interval);
            }
        }
        Ok(false)
    }

    fn broadcast(&mut self, req: &Request) -> Result<()> {
        let mut failed = Vec::new();
        let mut rejection = None;
        for index in 0..self.topology.len() {
            match self.call(index, req) {
                Ok(_) => {}
                Err(e @ ClientError::Server { .. }) => {
                    failed.push(self.topology.shards()[index].id);
                    rejection.get_or_insert(e);
                }
                Err(_) => failed.push(self.topology.shards()[index].id),
            }
        }
        match (failed.is_empty(), rejection) {
            (true, _) => Ok(()),
            // A shard that answered and refused the artifact reports why.
            (false, Some(e)) if failed.len() == self.topology.len() => Err(e),
            _ => Err(ClientError::PartialBroadcast { failed }),
        }
    }

    /// Stores a model on every shard.
    pub fn set_model(&mut self, name: &str, blob: &[u8], batch_size: u32, device: Device) -> Result<()> {
        let req = Request::SetModel {
            name: self.key(name),
            batch_size,
            device: device.as_str().to_string(),
            blob: blob.to_vec(),
        };
        self.broadcast(&req)
    }

    /// Stores a script on every shard.
    pub fn set_script(&mut self, name: &str, script: &ScriptSpec) -> Result<()> {
        let req = Request::SetScript { name: self.key(name), blob: script.to_blob() };
        self.broadcast(&req)
    }

    /// Hash tag that lands on the lowest slot of shard `index`.
    fn exec_tag(&self, index: usize) -> String {
        tag_for_slot(self.topology.shards()[index].slots.0)
    }

    /// Runs a stored model. Inputs and outputs are moved as needed so the
    /// caller never sees where execution happened.
    pub fn run_model(&mut self, name: &str, inputs: &[&str], outputs: &[&str]) -> Result<()> {
        let model = self.key(name);
        self.run_staged(inputs, outputs, |inputs, mut outputs| Request::RunModel {
            name: model.clone(),
            inputs,
            outputs: std::mem::take(&mut outputs),
        })
    }

    /// Runs a stored script with the same data movement as [`run_model`].
    ///
    /// [`run_model`]: ClientHandle::run_model
    pub fn run_script(&mut self, name: &str, inputs: &[&str], output: &str) -> Result<()> {
        let script = self.key(name);
        self.run_staged(inputs, &[output], |inputs, mut outputs| Request::RunScript {
            name: script.clone(),
            inputs,
            output: outputs.pop().expect("one output"),
        })
    }

    fn run_staged(
        &mut self,
        inputs: &[&str],
        outputs: &[&str],
        build: impl Fn(Vec<String>, Vec<String>) -> Request,
    ) -> Result<()> {
        let Some(first) = inputs.first() else {
            return Err(ClientError::Invalid("at least one input key is required".into()));
        };
        let exec = self.owner_index(&self.key(first))?;
        let mut remote = false;
        for name in inputs.iter().chain(outputs) {
            remote |= self.owner_index(&self.key(name))? != exec;
        }
        // The tag search is only paid for when something has to move.
        let tag = if remote { self.exec_tag(exec) } else { String::new() };
        let run = self.next_run;
        self.next_run += 1;
        let nonce = self.nonce.clone();
        let temp = |kind: &str, i: usize| format!("{{{tag}}}tmp.{nonce}.{run}.{kind}.{i}");

        let mut temporaries: Vec<String> = Vec::new();
        let result = (|| {
            let mut in_keys = Vec::with_capacity(inputs.len());
            for (i, name) in inputs.iter().enumerate() {
                let key = self.key(name);
                let owner = self.owner_index(&key)?;
                if owner == exec {
                    in_keys.push(key);
                    continue;
                }
                let bytes = self.call(owner, &Request::GetTensor { key })?;
                let tmp = temp("in", i);
                temporaries.push(tmp.clone());
                self.call(exec, &Request::PutTensor { key: tmp.clone(), tensor: bytes })?;
                self.counters.input_transfers += 1;
                in_keys.push(tmp);
            }
            let mut out_keys = Vec::with_capacity(outputs.len());
            let mut moves = Vec::new();
            for (i, name) in outputs.iter().enumerate() {
                let key = self.key(name);
                let owner = self.owner_index(&key)?;
                if owner == exec {
                    out_keys.push(key);
                } else {
                    let tmp = temp("out", i);
                    temporaries.push(tmp.clone());
                    out_keys.push(tmp.clone());
                    moves.push((tmp, key, owner));
                }
            }
            self.call(exec, &build(in_keys, out_keys))?;
            for (tmp, key, owner) in moves {
                let bytes = self.call(exec, &Request::GetTensor { key: tmp })?;
                self.call(owner, &Request::PutTensor { key, tensor: bytes })?;
                self.counters.output_transfers += 1;
            }
            Ok(())
        })();
        let mut cleanup = Ok(());
        for tmp in temporaries {
            if let Err(e) = self.call(exec, &Request::Del { key: tmp }) {
                cleanup = Err(e);
            }
        }
        result.and(cleanup)
    }

    /// Statistics of the shard at `index` in the topology.
    pub fn info(&mut self, index: usize) -> Result<ShardStats> {
        ShardStats::decode(&self.call(index, &Request::Info)?).map_err(Into::into)
    }

    /// Statistics of every shard, in topology order.
    pub fn info_all(&mut self) -> Result<Vec<ShardStats>> {
        (0..self.topology.len()).map(|i| self.info(i)).collect()
    }

    pub fn ping(&mut self, index: usize) -> Result<()> {
        self.call(index, &Request::Ping).map(drop)
    }

    /// Index of the shard that stores `name` (after prefixing).
    pub fn shard_of(&self, name: &str) -> Result<usize> {
        self.owner_index(&self.key(name))
    }
}

/// Sends a single PING to `address`.
pub fn ping(address: &str) -> Result<()> {
    let mut conn = Connection::open(address)?;
    conn.call(1, &Request::Ping)??;
    Ok(())
}
