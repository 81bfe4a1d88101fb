use std::io::{self, BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use parking_lot::Mutex;
use tracing::{debug, warn};

use super::{Shard, ShardConfig};
use crate::protocol::{
    decode_request, encode_response, peek_header, read_frame, write_frame, ErrorReply, ProtocolError,
    Status,
};
use crate::routing::{plan_topology, ClusterTopology};

/// A bound shard server.
pub struct Server {
    listener: TcpListener,
    shard: Arc<Shard>,
    stop: Arc<AtomicBool>,
    conns: Arc<Mutex<Vec<TcpStream>>>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, config: ShardConfig) -> io::Result<Server> {
        Server::from_listener(TcpListener::bind(addr)?, config)
    }

    pub fn from_listener(listener: TcpListener, config: ShardConfig) -> io::Result<Server> {
        let shard = Shard::start(config).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        Ok(Server {
            listener,
            shard,
            stop: Arc::new(AtomicBool::new(false)),
            conns: Arc::new(Mutex::new(Vec::new())),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn shard(&self) -> &Arc<Shard> {
        &self.shard
    }

    /// Accepts connections until stopped, one handler thread each.
    pub fn run(&self) -> io::Result<()> {
        for stream in self.listener.incoming() {
            if self.stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    warn!(error = %e, "accept failed");
                    continue;
                }
            };
            let _ = stream.set_nodelay(true);
            if let Ok(clone) = stream.try_clone() {
                let mut conns = self.conns.lock();
                conns.retain(|c| c.peer_addr().is_ok());
                conns.push(clone);
            }
            let shard = Arc::clone(&self.shard);
            thread::Builder::new()
                .name(format!("shard{}-conn", shard.id()))
                .spawn(move || {
                    if let Err(e) = serve_connection(&shard, stream) {
                        debug!(error = %e, "connection closed with error");
                    }
                })?;
        }
        Ok(())
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::clone(&self.stop);
        let conns = Arc::clone(&self.conns);
        let shard = Arc::clone(&self.shard);
        let thread = thread::Builder::new()
            .name(format!("shard{}-accept", shard.id()))
            .spawn(move || {
                let _ = self.run();
            })?;
        Ok(ServerHandle { addr, stop, conns, shard, thread: Some(thread) })
    }
}

fn serve_connection(shard: &Shard, stream: TcpStream) -> Result<(), ProtocolError> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    while let Some(frame) = read_frame(&mut reader)? {
        let header = peek_header(&frame)?;
        let reply = match decode_request(&frame) {
            Ok((_, req)) => shard.handle(req),
            Err(e) => Err(ErrorReply::new(Status::Malformed, e.to_string())),
        };
        let out = encode_response(header, &reply);
        shard.record_io(frame.len() + 4, out.len());
        write_frame(&mut writer, &out)?;
    }
    Ok(())
}

/// A server running on a background thread. Stops on drop.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    conns: Arc<Mutex<Vec<TcpStream>>>,
    shard: Arc<Shard>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shard(&self) -> &Arc<Shard> {
        &self.shard
    }

    pub fn stop(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // Wake the accept loop so it observes the flag.
        let _ = TcpStream::connect(self.addr);
        for c in self.conns.lock().drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// An in-process cluster of shards on loopback ports.
pub struct LocalCluster {
    topology: ClusterTopology,
    servers: Vec<Option<ServerHandle>>,
}

impl LocalCluster {
    pub fn start(n_shards: usize) -> io::Result<LocalCluster> {
        Self::start_with_workers(n_shards, 1)
    }

    pub fn start_with_workers(n_shards: usize, workers: usize) -> io::Result<LocalCluster> {
        let listeners = (0..n_shards)
            .map(|_| TcpListener::bind("127.0.0.1:0"))
            .collect::<io::Result<Vec<_>>>()?;
        let addrs = listeners
            .iter()
            .map(|l| l.local_addr().map(|a| a.to_string()))
            .collect::<io::Result<Vec<_>>>()?;
        let topology = plan_topology(n_shards, &addrs)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
        let servers = listeners
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                let config = ShardConfig { shard_id: i as u32, topology: topology.clone(), workers };
                Server::from_listener(l, config)?.spawn().map(Some)
            })
            .collect::<io::Result<Vec<_>>>()?;
        Ok(LocalCluster { topology, servers })
    }

    pub fn topology(&self) -> &ClusterTopology {
        &self.topology
    }

    /// Address of the first live shard.
    pub fn seed(&self) -> String {
        self.servers
            .iter()
            .flatten()
            .next()
            .map(|s| s.addr().to_string())
            .expect("cluster has a live shard")
    }

    pub fn address(&self, index: usize) -> String {
        self.topology.shards()[index].address.clone()
    }

    pub fn shard(&self, index: usize) -> Option<&Arc<Shard>> {
        self.servers[index].as_ref().map(ServerHandle::shard)
    }

    /// Stops one shard, leaving the rest running.
    pub fn kill(&mut self, index: usize) {
        if let Some(mut s) = self.servers[index].take() {
            s.stop();
        }
    }

    /// Total keys resident across live shards.
    pub fn keys_resident(&self) -> u64 {
        self.servers.iter().flatten().map(|s| s.shard().stats().keys_resident).sum()
    }
}
