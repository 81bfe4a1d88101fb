//! Named groups of tensors plus metadata, stored under a single key.
//!
//! Encoded form:
//!
//! ```text
//! u16 tensor count | (u16 name len, name, tensor bytes)*
//! u16 meta count   | (u16 name len, name, kind u8, u32 count, values)*
//! ```
//!
//! Meta kinds are 1 = f64 scalars, 2 = i64 scalars, 3 = string list
//! (each string u16-length-prefixed). Tensors and fields are written in
//! name order so the encoding is canonical.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};
use crate::wire::{self, DecodeError, Reader};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("name {0:?} already present in dataset")]
    DuplicateName(String),
    #[error("names must be non-empty and at most 65535 bytes")]
    BadName,
    #[error("meta field {name:?} holds {actual}, not {requested}")]
    WrongMetaKind { name: String, requested: &'static str, actual: &'static str },
    #[error("no entry named {0:?}")]
    Missing(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// Homogeneous list of metadata values.
#[derive(Debug, Clone, PartialEq)]
pub enum MetaValues {
    F64(Vec<f64>),
    I64(Vec<i64>),
    Strings(Vec<String>),
}

impl MetaValues {
    fn kind_code(&self) -> u8 {
        match self {
            MetaValues::F64(_) => 1,
            MetaValues::I64(_) => 2,
            MetaValues::Strings(_) => 3,
        }
    }

    fn kind_name(&self) -> &'static str {
        match self {
            MetaValues::F64(_) => "scalar-f64",
            MetaValues::I64(_) => "scalar-i64",
            MetaValues::Strings(_) => "string-list",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaField {
    pub name: String,
    pub values: MetaValues,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    name: String,
    tensors: BTreeMap<String, Tensor>,
    meta: BTreeMap<String, MetaField>,
}

fn check_name(name: &str) -> Result<(), DatasetError> {
    if name.is_empty() || name.len() > u16::MAX as usize {
        return Err(DatasetError::BadName);
    }
    Ok(())
}

impl Dataset {
    pub fn new(name: impl Into<String>) -> Self {
        Dataset { name: name.into(), ..Default::default() }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn add_tensor(&mut self, name: impl Into<String>, t: Tensor) -> Result<(), DatasetError> {
        let name = name.into();
        check_name(&name)?;
        if self.tensors.contains_key(&name) {
            return Err(DatasetError::DuplicateName(name));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn tensor_count(&self) -> usize {
        self.tensors.len()
    }

    fn meta_entry(&mut self, name: &str, fresh: MetaValues) -> Result<&mut MetaValues, DatasetError> {
        check_name(name)?;
        let field = self
            .meta
            .entry(name.to_string())
            .or_insert_with(|| MetaField { name: name.to_string(), values: fresh.clone() });
        if field.values.kind_code() != fresh.kind_code() {
            return Err(DatasetError::WrongMetaKind {
                name: name.to_string(),
                requested: fresh.kind_name(),
                actual: field.values.kind_name(),
            });
        }
        Ok(&mut field.values)
    }

    /// Appends a scalar to the f64 field `name`, creating it if needed.
    pub fn add_meta_scalar(&mut self, name: &str, v: f64) -> Result<(), DatasetError> {
        if let MetaValues::F64(vs) = self.meta_entry(name, MetaValues::F64(Vec::new()))? {
            vs.push(v);
        }
        Ok(())
    }

    pub fn add_meta_int(&mut self, name: &str, v: i64) -> Result<(), DatasetError> {
        if let MetaValues::I64(vs) = self.meta_entry(name, MetaValues::I64(Vec::new()))? {
            vs.push(v);
        }
        Ok(())
    }

    pub fn add_meta_string(&mut self, name: &str, v: impl Into<String>) -> Result<(), DatasetError> {
        if let MetaValues::Strings(vs) = self.meta_entry(name, MetaValues::Strings(Vec::new()))? {
            vs.push(v.into());
        }
        Ok(())
    }

    pub fn meta(&self, name: &str) -> Option<&MetaField> {
        self.meta.get(name)
    }

    pub fn meta_fields(&self) -> impl Iterator<Item = &MetaField> {
        self.meta.values()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        wire::put_u16(&mut out, self.tensors.len() as u16);
        for (name, t) in &self.tensors {
            wire::put_str(&mut out, name);
            t.write_to(&mut out);
        }
        wire::put_u16(&mut out, self.meta.len() as u16);
        for field in self.meta.values() {
            wire::put_str(&mut out, &field.name);
            out.push(field.values.kind_code());
            match &field.values {
                MetaValues::F64(vs) => {
                    wire::put_u32(&mut out, vs.len() as u32);
                    vs.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
                }
                MetaValues::I64(vs) => {
                    wire::put_u32(&mut out, vs.len() as u32);
                    vs.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
                }
                MetaValues::Strings(vs) => {
                    wire::put_u32(&mut out, vs.len() as u32);
                    vs.iter().for_each(|s| wire::put_str(&mut out, s));
                }
            }
        }
        out
    }

    /// Decodes a dataset blob; the name is carried by the key, not the blob.
    pub fn from_bytes(name: impl Into<String>, bytes: &[u8]) -> Result<Dataset, DatasetError> {
        let mut ds = Dataset::new(name);
        let mut r = Reader::new(bytes);
        let n_tensors = r.u16()?;
        for _ in 0..n_tensors {
            let tname = r.string()?;
            let (t, used) = Tensor::read_from(r.remaining())?;
            r.skip(used)?;
            ds.add_tensor(tname, t)?;
        }
        let n_meta = r.u16()?;
        for _ in 0..n_meta {
            let fname = r.string()?;
            check_name(&fname)?;
            if ds.meta.contains_key(&fname) {
                return Err(DatasetError::DuplicateName(fname));
            }
            let kind = r.u8()?;
            let count = r.u32()? as usize;
            let values = match kind {
                1 => MetaValues::F64((0..count).map(|_| r.f64()).collect::<Result<_, _>>()?),
                2 => MetaValues::I64((0..count).map(|_| r.i64()).collect::<Result<_, _>>()?),
                3 => MetaValues::Strings((0..count).map(|_| r.string()).collect::<Result<_, _>>()?),
                other => {
                    return Err(DecodeError::Invalid(format!("unknown meta kind {other}")).into())
                }
            };
            ds.meta.insert(fname.clone(), MetaField { name: fname, values });
        }
        r.finish()?;
        Ok(ds)
    }
}

/// Adds `t` under `name`, consuming and returning the dataset.
pub fn dataset_add_tensor(mut ds: Dataset, name: &str, t: Tensor) -> Result<Dataset, DatasetError> {
    ds.add_tensor(name, t)?;
    Ok(ds)
}
