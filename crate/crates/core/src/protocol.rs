//! Binary request/response protocol spoken between clients and shards.
//!
//! Every frame starts with a u32 length counting the bytes that follow
//! it. All integers are little-endian.
//!
//! ```text
//! request:  len u32 | version u16 | command u8 | request id u32 | body
//! response: len u32 | version u16 | command u8 | request id u32 | status u8 | body
//! ```
//!
//! Strings are a u16 byte length plus UTF-8; key lists are a u16 count
//! plus strings; blobs are a u32 length plus bytes. An error response
//! body is a message string, except `WrongShard` which first carries the
//! owning shard id as a u32.
//!
//! | command | request body | OK response body |
//! |---|---|---|
//! | `PUT_TENSOR` | key, tensor bytes | empty |
//! | `GET_TENSOR` | key | tensor bytes |
//! | `DEL` | key | u8 (1 if a key was removed) |
//! | `PUT_DATASET` | key, dataset bytes | empty |
//! | `GET_DATASET` | key | dataset bytes |
//! | `SET_MODEL` | name, batch size u32, device string, blob | empty |
//! | `RUN_MODEL` | name, input keys, output keys | empty |
//! | `SET_SCRIPT` | name, blob | empty |
//! | `RUN_SCRIPT` | name, input keys, output key | empty |
//! | `CLUSTER_SLOTS` | empty | u16 count, (id u32, address, lo u16, hi u16)* |
//! | `PING` | empty | empty |
//! | `INFO` | empty | shard id u32, eight u64 counters |

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::routing::{ClusterTopology, RoutingError, ShardInfo, SlotId};
use crate::wire::{self, DecodeError, Reader};

pub const PROTOCOL_VERSION: u16 = 1;
/// Upper bound on a single frame, to reject garbage lengths early.
pub const MAX_FRAME_LEN: usize = 1 << 30;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds limit")]
    FrameTooLarge(usize),
    #[error("unsupported protocol version {0}")]
    VersionMismatch(u16),
    #[error("unknown command 0x{0:02x}")]
    UnknownCommand(u8),
    #[error("unknown status {0}")]
    UnknownStatus(u8),
    #[error("malformed frame: {0}")]
    Malformed(#[from] DecodeError),
    #[error("bad topology: {0}")]
    Topology(#[from] RoutingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Command {
    PutTensor = 0x01,
    GetTensor = 0x02,
    Del = 0x03,
    PutDataset = 0x04,
    GetDataset = 0x05,
    SetModel = 0x06,
    RunModel = 0x07,
    SetScript = 0x08,
    RunScript = 0x09,
    ClusterSlots = 0x0A,
    Ping = 0x0B,
    Info = 0x0C,
}

impl Command {
    pub const ALL: [Command; 12] = [
        Command::PutTensor,
        Command::GetTensor,
        Command::Del,
        Command::PutDataset,
        Command::GetDataset,
        Command::SetModel,
        Command::RunModel,
        Command::SetScript,
        Command::RunScript,
        Command::ClusterSlots,
        Command::Ping,
        Command::Info,
    ];

    pub fn from_code(code: u8) -> Result<Self, ProtocolError> {
        Command::ALL
            .into_iter()
            .find(|c| *c as u8 == code)
            .ok_or(ProtocolError::UnknownCommand(code))
    }

    pub fn name(self) -> &'static str {
        match self {
            Command::PutTensor => "PUT_TENSOR",
            Command::GetTensor => "GET_TENSOR",
            Command::Del => "DEL",
            Command::PutDataset => "PUT_DATASET",
            Command::GetDataset => "GET_DATASET",
            Command::SetModel => "SET_MODEL",
            Command::RunModel => "RUN_MODEL",
            Command::SetScript => "SET_SCRIPT",
            Command::RunScript => "RUN_SCRIPT",
            Command::ClusterSlots => "CLUSTER_SLOTS",
            Command::Ping => "PING",
            Command::Info => "INFO",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    NotFound = 1,
    WrongShard = 2,
    Malformed = 3,
    WrongKind = 4,
    ModelNotFound = 5,
    ExecError = 6,
    InputMissing = 7,
    BadModel = 8,
}

impl Status {
    pub fn from_code(code: u8) -> Result<Self, ProtocolError> {
        Ok(match code {
            0 => Status::Ok,
            1 => Status::NotFound,
            2 => Status::WrongShard,
            3 => Status::Malformed,
            4 => Status::WrongKind,
            5 => Status::ModelNotFound,
            6 => Status::ExecError,
            7 => Status::InputMissing,
            8 => Status::BadModel,
            other => return Err(ProtocolError::UnknownStatus(other)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    PutTensor { key: String, tensor: Vec<u8> },
    GetTensor { key: String },
    Del { key: String },
    PutDataset { key: String, dataset: Vec<u8> },
    GetDataset { key: String },
    SetModel { name: String, batch_size: u32, device: String, blob: Vec<u8> },
    RunModel { name: String, inputs: Vec<String>, outputs: Vec<String> },
    SetScript { name: String, blob: Vec<u8> },
    RunScript { name: String, inputs: Vec<String>, output: String },
    ClusterSlots,
    Ping,
    Info,
}

impl Request {
    pub fn command(&self) -> Command {
        match self {
            Request::PutTensor { .. } => Command::PutTensor,
            Request::GetTensor { .. } => Command::GetTensor,
            Request::Del { .. } => Command::Del,
            Request::PutDataset { .. } => Command::PutDataset,
            Request::GetDataset { .. } => Command::GetDataset,
            Request::SetModel { .. } => Command::SetModel,
            Request::RunModel { .. } => Command::RunModel,
            Request::SetScript { .. } => Command::SetScript,
            Request::RunScript { .. } => Command::RunScript,
            Request::ClusterSlots => Command::ClusterSlots,
            Request::Ping => Command::Ping,
            Request::Info => Command::Info,
        }
    }

    fn encode_body(&self, out: &mut Vec<u8>) {
        match self {
            Request::PutTensor { key, tensor } => {
                wire::put_str(out, key);
                out.extend_from_slice(tensor);
            }
            Request::GetTensor { key } | Request::Del { key } | Request::GetDataset { key } => {
                wire::put_str(out, key)
            }
            Request::PutDataset { key, dataset } => {
                wire::put_str(out, key);
                out.extend_from_slice(dataset);
            }
            Request::SetModel { name, batch_size, device, blob } => {
                wire::put_str(out, name);
                wire::put_u32(out, *batch_size);
                wire::put_str(out, device);
                wire::put_blob(out, blob);
            }
            Request::RunModel { name, inputs, outputs } => {
                wire::put_str(out, name);
                wire::put_str_list(out, inputs);
                wire::put_str_list(out, outputs);
            }
            Request::SetScript { name, blob } => {
                wire::put_str(out, name);
                wire::put_blob(out, blob);
            }
            Request::RunScript { name, inputs, output } => {
                wire::put_str(out, name);
                wire::put_str_list(out, inputs);
                wire::put_str(out, output);
            }
            Request::ClusterSlots | Request::Ping | Request::Info => {}
        }
    }

    fn decode_body(command: Command, body: &[u8]) -> Result<Request, DecodeError> {
        let mut r = Reader::new(body);
        let req = match command {
            Command::PutTensor => {
                let key = r.string()?;
                Request::PutTensor { key, tensor: r.take(r.remaining().len())?.to_vec() }
            }
            Command::GetTensor => Request::GetTensor { key: r.string()? },
            Command::Del => Request::Del { key: r.string()? },
            Command::PutDataset => {
                let key = r.string()?;
                Request::PutDataset { key, dataset: r.take(r.remaining().len())?.to_vec() }
            }
            Command::GetDataset => Request::GetDataset { key: r.string()? },
            Command::SetModel => Request::SetModel {
                name: r.string()?,
                batch_size: r.u32()?,
                device: r.string()?,
                blob: r.blob()?.to_vec(),
            },
            Command::RunModel => Request::RunModel {
                name: r.string()?,
                inputs: r.string_list()?,
                outputs: r.string_list()?,
            },
            Command::SetScript => Request::SetScript { name: r.string()?, blob: r.blob()?.to_vec() },
            Command::RunScript => Request::RunScript {
                name: r.string()?,
                inputs: r.string_list()?,
                output: r.string()?,
            },
            Command::ClusterSlots => Request::ClusterSlots,
            Command::Ping => Request::Ping,
            Command::Info => Request::Info,
        };
        r.finish()?;
        Ok(req)
    }
}

fn finish_frame(mut frame: Vec<u8>) -> Vec<u8> {
    let len = (frame.len() - 4) as u32;
    frame[..4].copy_from_slice(&len.to_le_bytes());
    frame
}

/// Full request frame, including the length prefix.
pub fn encode_request(id: u32, req: &Request) -> Vec<u8> {
    encode_request_versioned(PROTOCOL_VERSION, id, req)
}

pub fn encode_request_versioned(version: u16, id: u32, req: &Request) -> Vec<u8> {
    let mut out = vec![0u8; 4];
    wire::put_u16(&mut out, version);
    out.push(req.command() as u8);
    wire::put_u32(&mut out, id);
    req.encode_body(&mut out);
    finish_frame(out)
}

/// Header fields common to requests and responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub version: u16,
    pub command: u8,
    pub id: u32,
}

fn read_header(r: &mut Reader<'_>) -> Result<FrameHeader, DecodeError> {
    Ok(FrameHeader { version: r.u16()?, command: r.u8()?, id: r.u32()? })
}

/// Parses the header only; lets a server answer frames whose body or
/// version it cannot understand.
pub fn peek_header(frame: &[u8]) -> Result<FrameHeader, ProtocolError> {
    Ok(read_header(&mut Reader::new(frame))?)
}

/// Decodes a request frame given without its length prefix.
pub fn decode_request(frame: &[u8]) -> Result<(FrameHeader, Request), ProtocolError> {
    let mut r = Reader::new(frame);
    let header = read_header(&mut r)?;
    if header.version != PROTOCOL_VERSION {
        return Err(ProtocolError::VersionMismatch(header.version));
    }
    let command = Command::from_code(header.command)?;
    Ok((header, Request::decode_body(command, r.remaining())?))
}

/// Error carried by a non-OK response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorReply {
    pub status: Status,
    /// Owning shard, only for `WrongShard`.
    pub owner: Option<u32>,
    pub message: String,
}

impl ErrorReply {
    pub fn new(status: Status, message: impl Into<String>) -> Self {
        ErrorReply { status, owner: None, message: message.into() }
    }

    pub fn wrong_shard(owner: u32, key: &str) -> Self {
        ErrorReply {
            status: Status::WrongShard,
            owner: Some(owner),
            message: format!("key {key:?} belongs to shard {owner}"),
        }
    }
}

pub type Reply = Result<Vec<u8>, ErrorReply>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub header: FrameHeader,
    pub reply: Reply,
}

pub fn encode_response(header: FrameHeader, reply: &Reply) -> Vec<u8> {
    let mut out = vec![0u8; 4];
    wire::put_u16(&mut out, PROTOCOL_VERSION);
    out.push(header.command);
    wire::put_u32(&mut out, header.id);
    match reply {
        Ok(body) => {
            out.push(Status::Ok as u8);
            out.extend_from_slice(body);
        }
        Err(e) => {
            out.push(e.status as u8);
            if e.status == Status::WrongShard {
                wire::put_u32(&mut out, e.owner.unwrap_or(u32::MAX));
            }
            let msg = truncate_utf8(&e.message, u16::MAX as usize);
            wire::put_str(&mut out, msg);
        }
    }
    finish_frame(out)
}

fn truncate_utf8(s: &str, max: usize) -> &str {
    if s.len() <= max {
        return s;
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    &s[..end]
}

/// Decodes a response frame given without its length prefix.
pub fn decode_response(frame: &[u8]) -> Result<Response, ProtocolError> {
    let mut r = Reader::new(frame);
    let header = read_header(&mut r)?;
    if header.version != PROTOCOL_VERSION {
        return Err(ProtocolError::VersionMismatch(header.version));
    }
    let status = Status::from_code(r.u8()?)?;
    let reply = if status == Status::Ok {
        Ok(r.remaining().to_vec())
    } else {
        let owner = if status == Status::WrongShard { Some(r.u32()?) } else { None };
        let message = r.string()?;
        r.finish()?;
        Err(ErrorReply { status, owner, message })
    };
    Ok(Response { header, reply })
}

/// Reads one frame body (without the length prefix). Returns `None` on a
/// clean end of stream before any byte of a new frame.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>, ProtocolError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_FRAME_LEN {
        return Err(ProtocolError::FrameTooLarge(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

pub fn write_frame<W: Write>(w: &mut W, frame: &[u8]) -> io::Result<()> {
    w.write_all(frame)?;
    w.flush()
}

/// Runtime counters reported by `INFO`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ShardStats {
    pub shard_id: u32,
    pub puts: u64,
    pub gets: u64,
    pub model_runs: u64,
    pub script_runs: u64,
    pub batch_executions: u64,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub keys_resident: u64,
}

impl ShardStats {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(68);
        wire::put_u32(&mut out, self.shard_id);
        for v in [
            self.puts,
            self.gets,
            self.model_runs,
            self.script_runs,
            self.batch_executions,
            self.bytes_in,
            self.bytes_out,
            self.keys_resident,
        ] {
            wire::put_u64(&mut out, v);
        }
        out
    }

    pub fn decode(body: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(body);
        let stats = ShardStats {
            shard_id: r.u32()?,
            puts: r.u64()?,
            gets: r.u64()?,
            model_runs: r.u64()?,
            script_runs: r.u64()?,
            batch_executions: r.u64()?,
            bytes_in: r.u64()?,
            bytes_out: r.u64()?,
            keys_resident: r.u64()?,
        };
        r.finish()?;
        Ok(stats)
    }
}

pub fn encode_topology(topo: &ClusterTopology) -> Vec<u8> {
    let mut out = Vec::new();
    wire::put_u16(&mut out, topo.len() as u16);
    for s in topo.shards() {
        wire::put_u32(&mut out, s.id);
        wire::put_str(&mut out, &s.address);
        wire::put_u16(&mut out, s.slots.0.get());
        wire::put_u16(&mut out, s.slots.1.get());
    }
    out
}

pub fn decode_topology(body: &[u8]) -> Result<ClusterTopology, ProtocolError> {
    let mut r = Reader::new(body);
    let n = r.u16()?;
    let mut shards = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let id = r.u32()?;
        let address = r.string()?;
        let lo = SlotId::new(r.u16()? as u32)?;
        let hi = SlotId::new(r.u16()? as u32)?;
        shards.push(ShardInfo { id, address, slots: (lo, hi) });
    }
    r.finish()?;
    Ok(ClusterTopology::new(shards)?)
}
