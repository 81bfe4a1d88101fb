//! Dense n-dimensional tensors and their canonical binary layout.
//!
//! Wire layout (little-endian throughout):
//!
//! ```text
//! dtype code u8 | ndim u8 | dims u32 × ndim | row-major payload
//! ```

use std::fmt;

use thiserror::Error;

/// Maximum number of dimensions a tensor may carry.
pub const MAX_DIMS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("payload is {actual} bytes but shape requires {expected}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("unknown dtype code {0}")]
    BadDType(u8),
    #[error("truncated input: needed {needed} bytes, had {available}")]
    Truncated { needed: usize, available: usize },
    #[error("expected dtype {expected}, found {actual}")]
    DTypeMismatch { expected: DType, actual: DType },
}

/// Element type of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum DType {
    F32 = 1,
    F64 = 2,
    I32 = 3,
    I64 = 4,
    U8 = 5,
}

impl DType {
    pub const ALL: [DType; 5] = [DType::F32, DType::F64, DType::I32, DType::I64, DType::U8];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self, TensorError> {
        match code {
            1 => Ok(DType::F32),
            2 => Ok(DType::F64),
            3 => Ok(DType::I32),
            4 => Ok(DType::I64),
            5 => Ok(DType::U8),
            other => Err(TensorError::BadDType(other)),
        }
    }

    /// Width of one element in bytes.
    pub fn width(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::F64 | DType::I64 => 8,
            DType::U8 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
            DType::I32 => "i32",
            DType::I64 => "i64",
            DType::U8 => "u8",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A validated, contiguous, row-major tensor.
///
/// Construction always goes through [`Tensor::new`] (or one of the typed
/// helpers), so every `Tensor` value satisfies
/// `data.len() == product(shape) * dtype.width()`.
#[derive(Clone, PartialEq, Eq)]
pub struct Tensor {
    dtype: DType,
    shape: Vec<usize>,
    data: Vec<u8>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("dtype", &self.dtype)
            .field("shape", &self.shape)
            .field("bytes", &self.data.len())
            .finish()
    }
}

fn check_shape(shape: &[usize]) -> Result<usize, TensorError> {
    if shape.is_empty() {
        return Err(TensorError::BadShape("zero-dimensional tensors are not allowed".into()));
    }
    if shape.len() > MAX_DIMS {
        return Err(TensorError::BadShape(format!(
            "{} dimensions exceeds the maximum of {MAX_DIMS}",
            shape.len()
        )));
    }
    let mut count: usize = 1;
    for &d in shape {
        if d == 0 {
            return Err(TensorError::BadShape(format!("dimension of size 0 in {shape:?}")));
        }
        if d > u32::MAX as usize {
            return Err(TensorError::BadShape(format!("dimension {d} does not fit in u32")));
        }
        count = count
            .checked_mul(d)
            .ok_or_else(|| TensorError::BadShape(format!("element count overflows for {shape:?}")))?;
    }
    Ok(count)
}

impl Tensor {
    /// Validates `shape` and `data` against `dtype` and builds a tensor.
    pub fn new(dtype: DType, shape: Vec<usize>, data: Vec<u8>) -> Result<Self, TensorError> {
        let count = check_shape(&shape)?;
        let expected = count
            .checked_mul(dtype.width())
            .ok_or_else(|| TensorError::BadShape(format!("byte size overflows for {shape:?}")))?;
        if data.len() != expected {
            return Err(TensorError::ShapeMismatch { expected, actual: data.len() });
        }
        Ok(Tensor { dtype, shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, values: &[f32]) -> Result<Self, TensorError> {
        Self::new(DType::F32, shape, values.iter().flat_map(|v| v.to_le_bytes()).collect())
    }

    pub fn from_f64(shape: Vec<usize>, values: &[f64]) -> Result<Self, TensorError> {
        Self::new(DType::F64, shape, values.iter().flat_map(|v| v.to_le_bytes()).collect())
    }

    pub fn from_i32(shape: Vec<usize>, values: &[i32]) -> Result<Self, TensorError> {
        Self::new(DType::I32, shape, values.iter().flat_map(|v| v.to_le_bytes()).collect())
    }

    pub fn from_i64(shape: Vec<usize>, values: &[i64]) -> Result<Self, TensorError> {
        Self::new(DType::I64, shape, values.iter().flat_map(|v| v.to_le_bytes()).collect())
    }

    pub fn from_u8(shape: Vec<usize>, values: &[u8]) -> Result<Self, TensorError> {
        Self::new(DType::U8, shape, values.to_vec())
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    /// Always false: empty tensors cannot be constructed.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Raw little-endian payload.
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_parts(self) -> (DType, Vec<usize>, Vec<u8>) {
        (self.dtype, self.shape, self.data)
    }

    fn expect(&self, dtype: DType) -> Result<(), TensorError> {
        if self.dtype != dtype {
            return Err(TensorError::DTypeMismatch { expected: dtype, actual: self.dtype });
        }
        Ok(())
    }

    pub fn to_f32_vec(&self) -> Result<Vec<f32>, TensorError> {
        self.expect(DType::F32)?;
        Ok(self
            .data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn to_f64_vec(&self) -> Result<Vec<f64>, TensorError> {
        self.expect(DType::F64)?;
        Ok(self
            .data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn to_i32_vec(&self) -> Result<Vec<i32>, TensorError> {
        self.expect(DType::I32)?;
        Ok(self
            .data
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn to_i64_vec(&self) -> Result<Vec<i64>, TensorError> {
        self.expect(DType::I64)?;
        Ok(self
            .data
            .chunks_exact(8)
            .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    /// Converts float tensors to f64 values; integer dtypes are rejected.
    pub fn float_values(&self) -> Result<Vec<f64>, TensorError> {
        match self.dtype {
            DType::F32 => Ok(self.to_f32_vec()?.into_iter().map(f64::from).collect()),
            DType::F64 => self.to_f64_vec(),
            other => Err(TensorError::DTypeMismatch { expected: DType::F64, actual: other }),
        }
    }

    /// Number of bytes [`Tensor::to_bytes`] will produce.
    pub fn encoded_len(&self) -> usize {
        2 + 4 * self.shape.len() + self.data.len()
    }

    /// Appends the canonical encoding to `out`.
    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.reserve(self.encoded_len());
        out.push(self.dtype.code());
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.data);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.write_to(&mut out);
        out
    }

    /// Decodes one tensor from the front of `bytes`, returning it together
    /// with the number of bytes consumed.
    pub fn read_from(bytes: &[u8]) -> Result<(Tensor, usize), TensorError> {
        if bytes.len() < 2 {
            return Err(TensorError::Truncated { needed: 2, available: bytes.len() });
        }
        let dtype = DType::from_code(bytes[0])?;
        let ndim = bytes[1] as usize;
        if ndim == 0 || ndim > MAX_DIMS {
            return Err(TensorError::BadShape(format!("ndim {ndim} outside 1..={MAX_DIMS}")));
        }
        let header = 2 + 4 * ndim;
        if bytes.len() < header {
            return Err(TensorError::Truncated { needed: header, available: bytes.len() });
        }
        let shape: Vec<usize> = bytes[2..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let count = check_shape(&shape)?;
        let payload = count
            .checked_mul(dtype.width())
            .ok_or_else(|| TensorError::BadShape(format!("byte size overflows for {shape:?}")))?;
        let total = header + payload;
        if bytes.len() < total {
            return Err(TensorError::Truncated { needed: total, available: bytes.len() });
        }
        let data = bytes[header..total].to_vec();
        Ok((Tensor { dtype, shape, data }, total))
    }

    /// Decodes a buffer holding exactly one tensor. Trailing bytes are an error.
    pub fn from_bytes(bytes: &[u8]) -> Result<Tensor, TensorError> {
        let (t, used) = Self::read_from(bytes)?;
        if used != bytes.len() {
            return Err(TensorError::ShapeMismatch { expected: used, actual: bytes.len() });
        }
        Ok(t)
    }
}

/// Builds a validated tensor.
pub fn make_tensor(dtype: DType, shape: &[usize], data: &[u8]) -> Result<Tensor, TensorError> {
    Tensor::new(dtype, shape.to_vec(), data.to_vec())
}

pub fn serialize_tensor(t: &Tensor) -> Vec<u8> {
    t.to_bytes()
}

pub fn deserialize_tensor(bytes: &[u8]) -> Result<Tensor, TensorError> {
    Tensor::from_bytes(bytes)
}
