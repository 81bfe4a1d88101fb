//! Sharded in-memory tensor store with on-demand model and script
//! execution.
//!
//! Keys are hashed to one of 16384 slots and each shard owns a
//! contiguous slot range. Shards store tensors, datasets, SSNN-v1 models
//! and preprocessing scripts, and run models through a batching inference
//! queue. [`client::ClientHandle`] hides routing and stages inputs that
//! live on other shards. The [`launcher`] starts ensembles of local
//! processes, [`scaling`] times client calls against clusters of varying
//! size, and [`eke`] holds the feature engineering of the EKE inference
//! pipeline.

pub mod client;
pub mod dataset;
pub mod eke;
pub mod exec;
pub mod launcher;
pub mod protocol;
pub mod routing;
pub mod scaling;
pub mod server;
pub mod tensor;
pub mod wire;

pub use client::{ClientError, ClientHandle};
pub use dataset::{Dataset, DatasetError, MetaValues};
pub use exec::{Device, Layer, ModelError, ModelSpec, ScriptError, ScriptSpec};
pub use protocol::{Command, ShardStats, Status, PROTOCOL_VERSION};
pub use routing::{hash_tag, key_slot, ClusterTopology, ShardInfo, SlotId, SLOT_COUNT};
pub use server::{LocalCluster, Server, ServerHandle, ShardConfig};
pub use tensor::{DType, Tensor, TensorError};
