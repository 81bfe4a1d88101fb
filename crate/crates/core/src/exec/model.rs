//! Sequential mini neural networks and the SSNN-v1 blob format.
//!
//! ```text
//! "SSNN" | version u16 = 1 | layer count u16 | layers
//! layer: kind u8 (1 Dense, 2 ReLU, 3 Tanh, 4 Affine)
//!   Dense:  in u32, out u32, weights f32 × (out·in) row-major, bias f32 × out
//!   Affine: scale f32, shift f32
//! ```

use std::fmt;

use thiserror::Error;

use crate::tensor::{DType, Tensor};
use crate::wire::{self, DecodeError, Reader};

pub const SSNN_MAGIC: &[u8; 4] = b"SSNN";
pub const SSNN_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("bad magic, expected \"SSNN\"")]
    BadMagic,
    #[error("unsupported model version {0}")]
    BadVersion(u16),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("truncated model blob")]
    Truncated,
    #[error("unknown layer kind {0}")]
    BadLayer(u8),
    #[error("batch size must be >= 1")]
    BadBatchSize,
    #[error("input width {actual} does not match model input width {expected}")]
    WidthMismatch { expected: usize, actual: usize },
    #[error("model input must be f32, got {0}")]
    DTypeMismatch(DType),
    #[error("model input must be 2-D, got shape {0:?}")]
    NotMatrix(Vec<usize>),
}

impl From<DecodeError> for ModelError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::Truncated { .. } => ModelError::Truncated,
            other => ModelError::DimMismatch(other.to_string()),
        }
    }
}

#[derive(Clone, PartialEq)]
pub enum Layer {
    /// `y = x·Wᵀ + b`, `weights` is `out × in` row-major.
    Dense { inputs: usize, outputs: usize, weights: Vec<f32>, bias: Vec<f32> },
    Relu,
    Tanh,
    Affine { scale: f32, shift: f32 },
}

impl fmt::Debug for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Dense { inputs, outputs, .. } => write!(f, "Dense({inputs}->{outputs})"),
            Layer::Relu => f.write_str("ReLU"),
            Layer::Tanh => f.write_str("Tanh"),
            Layer::Affine { scale, shift } => write!(f, "Affine({scale}, {shift})"),
        }
    }
}

impl Layer {
    pub fn dense(inputs: usize, outputs: usize, weights: Vec<f32>, bias: Vec<f32>) -> Self {
        Layer::Dense { inputs, outputs, weights, bias }
    }

    fn kind_code(&self) -> u8 {
        match self {
            Layer::Dense { .. } => 1,
            Layer::Relu => 2,
            Layer::Tanh => 3,
            Layer::Affine { .. } => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Device {
    #[default]
    Cpu,
}

impl Device {
    pub fn parse(s: &str) -> Option<Device> {
        s.eq_ignore_ascii_case("cpu").then_some(Device::Cpu)
    }

    pub fn as_str(self) -> &'static str {
        "cpu"
    }
}

/// A validated model ready for execution.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    layers: Vec<Layer>,
    pub batch_size: usize,
    pub device: Device,
}

fn validate_layers(layers: &[Layer]) -> Result<(), ModelError> {
    let mut width: Option<usize> = None;
    for (i, layer) in layers.iter().enumerate() {
        if let Layer::Dense { inputs, outputs, weights, bias } = layer {
            if *inputs == 0 || *outputs == 0 {
                return Err(ModelError::DimMismatch(format!("layer {i}: zero-width Dense")));
            }
            if weights.len() != inputs * outputs || bias.len() != *outputs {
                return Err(ModelError::DimMismatch(format!(
                    "layer {i}: Dense({inputs}->{outputs}) has {} weights and {} biases",
                    weights.len(),
                    bias.len()
                )));
            }
            if let Some(w) = width {
                if w != *inputs {
                    return Err(ModelError::DimMismatch(format!(
                        "layer {i}: expects width {inputs} but previous Dense emits {w}"
                    )));
                }
            }
            width = Some(*outputs);
        }
    }
    Ok(())
}

impl ModelSpec {
    pub fn new(
        name: impl Into<String>,
        layers: Vec<Layer>,
        batch_size: usize,
        device: Device,
    ) -> Result<Self, ModelError> {
        validate_layers(&layers)?;
        if batch_size == 0 {
            return Err(ModelError::BadBatchSize);
        }
        Ok(ModelSpec { name: name.into(), layers, batch_size, device })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Width required of input rows, or `None` for purely elementwise models.
    pub fn input_width(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match l {
            Layer::Dense { inputs, .. } => Some(*inputs),
            _ => None,
        })
    }

    /// Output width given an input width.
    pub fn output_width(&self, input: usize) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Dense { outputs, .. } => Some(*outputs),
                _ => None,
            })
            .unwrap_or(input)
    }

    pub fn to_blob(&self) -> Vec<u8> {
        encode_model(&self.layers)
    }

    /// Checks that `batch` is an f32 matrix this model accepts and
    /// returns its `(rows, width)`.
    pub fn check_input(&self, batch: &Tensor) -> Result<(usize, usize), ModelError> {
        if batch.dtype() != DType::F32 {
            return Err(ModelError::DTypeMismatch(batch.dtype()));
        }
        let &[rows, width] = batch.shape() else {
            return Err(ModelError::NotMatrix(batch.shape().to_vec()));
        };
        if let Some(expected) = self.input_width() {
            if expected != width {
                return Err(ModelError::WidthMismatch { expected, actual: width });
            }
        }
        Ok((rows, width))
    }

    /// Runs the layers over row-major `rows × width` data.
    ///
    /// Each Dense output element accumulates `x[i]·w[o][i]` in f32 for
    /// increasing `i`, starting from zero, and adds the bias last. Rows
    /// never interact, so stacking requests cannot change any result bit.
    pub fn forward(&self, mut data: Vec<f32>, rows: usize, mut width: usize) -> Vec<f32> {
        for layer in &self.layers {
            match layer {
                Layer::Dense { inputs, outputs, weights, bias } => {
                    debug_assert_eq!(*inputs, width);
                    let mut next = vec![0f32; rows * outputs];
                    for (x, y) in data.chunks_exact(width).zip(next.chunks_exact_mut(*outputs)) {
                        for (o, out) in y.iter_mut().enumerate() {
                            let w = &weights[o * inputs..(o + 1) * inputs];
                            let mut acc = 0f32;
                            for (xi, wi) in x.iter().zip(w) {
                                acc += xi * wi;
                            }
                            *out = acc + bias[o];
                        }
                    }
                    data = next;
                    width = *outputs;
                }
                Layer::Relu => data.iter_mut().for_each(|v| *v = v.max(0.0)),
                Layer::Tanh => data.iter_mut().for_each(|v| *v = v.tanh()),
                Layer::Affine { scale, shift } => {
                    data.iter_mut().for_each(|v| *v = *v * scale + shift)
                }
            }
        }
        data
    }

    pub fn run(&self, batch: &Tensor) -> Result<Tensor, ModelError> {
        let (rows, width) = self.check_input(batch)?;
        let x = batch.to_f32_vec().expect("dtype checked");
        let out_width = self.output_width(width);
        let y = self.forward(x, rows, width);
        Ok(Tensor::from_f32(vec![rows, out_width], &y).expect("shape follows from layers"))
    }
}

pub fn encode_model(layers: &[Layer]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(SSNN_MAGIC);
    wire::put_u16(&mut out, SSNN_VERSION);
    wire::put_u16(&mut out, u16::try_from(layers.len()).expect("too many layers"));
    for layer in layers {
        out.push(layer.kind_code());
        match layer {
            Layer::Dense { inputs, outputs, weights, bias } => {
                wire::put_u32(&mut out, *inputs as u32);
                wire::put_u32(&mut out, *outputs as u32);
                weights.iter().chain(bias).for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            }
            Layer::Affine { scale, shift } => {
                out.extend_from_slice(&scale.to_le_bytes());
                out.extend_from_slice(&shift.to_le_bytes());
            }
            Layer::Relu | Layer::Tanh => {}
        }
    }
    out
}

fn decode_layers(blob: &[u8]) -> Result<Vec<Layer>, ModelError> {
    let mut r = Reader::new(blob);
    if r.take(4).map_err(|_| ModelError::Truncated)? != SSNN_MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = r.u16()?;
    if version != SSNN_VERSION {
        return Err(ModelError::BadVersion(version));
    }
    let count = r.u16()?;
    let mut layers = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let layer = match r.u8()? {
            1 => {
                let inputs = r.u32()? as usize;
                let outputs = r.u32()? as usize;
                let n = inputs
                    .checked_mul(outputs)
                    .ok_or_else(|| ModelError::DimMismatch("Dense size overflows".into()))?;
                // Bound the allocation by what the blob can actually hold.
                if r.remaining().len() / 4 < n.saturating_add(outputs) {
                    return Err(ModelError::Truncated);
                }
                let weights = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
                let bias = (0..outputs).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
                Layer::Dense { inputs, outputs, weights, bias }
            }
            2 => Layer::Relu,
            3 => Layer::Tanh,
            4 => Layer::Affine { scale: r.f32()?, shift: r.f32()? },
            other => return Err(ModelError::BadLayer(other)),
        };
        layers.push(layer);
    }
    r.finish().map_err(|e| ModelError::DimMismatch(e.to_string()))?;
    validate_layers(&layers)?;
    Ok(layers)
}

/// Parses an SSNN-v1 blob into an unnamed model with batch size 1.
pub fn load_model(blob: &[u8]) -> Result<ModelSpec, ModelError> {
    ModelSpec::new("", decode_layers(blob)?, 1, Device::Cpu)
}

/// Parses a blob and attaches serving parameters.
pub fn load_named_model(
    name: &str,
    blob: &[u8],
    batch_size: usize,
    device: Device,
) -> Result<ModelSpec, ModelError> {
    ModelSpec::new(name, decode_layers(blob)?, batch_size, device)
}

pub fn run_model_exec(m: &ModelSpec, batch: &Tensor) -> Result<Tensor, ModelError> {
    m.run(batch)
}
