//! Stored executables: SSNN-v1 models, preprocessing scripts, and the
//! batching used to run models for many concurrent callers.

pub mod batch;
pub mod model;
pub mod script;

pub use batch::{batch_collect, execute_batch, InferenceRequest};
pub use model::{
    encode_model, load_model, load_named_model, run_model_exec, Device, Layer, ModelError, ModelSpec,
};
pub use script::{run_script_exec, Finalize, ScriptError, ScriptOp, ScriptSpec, Step, Target};
