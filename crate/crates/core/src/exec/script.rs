//! Elementwise preprocessing pipelines.
//!
//! A script is a JSON document:
//!
//! ```json
//! {
//!   "name": "prep",
//!   "arity": 2,
//!   "steps": [
//!     {"target": 0, "op": {"ln": {}}},
//!     {"target": "all", "op": {"standardize": {"mean": 1.0, "std": 2.0}}}
//!   ],
//!   "finalize": "stack",
//!   "output_dtype": "f32"
//! }
//! ```
//!
//! Arithmetic is carried out in f64 whatever the input dtype; the result
//! is cast to `output_dtype`, which defaults to the input dtype.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eke::{fp, fp_inv, DEFAULT_EPSILON};
use crate::tensor::{DType, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScriptError {
    #[error("script expects {expected} inputs, got {actual}")]
    ArityMismatch { expected: usize, actual: usize },
    #[error("input shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("inputs must be f32 or f64, got {0}")]
    BadDType(DType),
    #[error("invalid script: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Input(usize),
    All(AllInputs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllInputs {
    All,
}

impl Target {
    pub const ALL: Target = Target::All(AllInputs::All);

    fn applies_to(self, index: usize) -> bool {
        match self {
            Target::Input(i) => i == index,
            Target::All(_) => true,
        }
    }
}

fn zero() -> f64 {
    0.0
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptOp {
    Ln {},
    Exp {},
    /// Signed log with offset `c`. Values with `|x| < epsilon` are zeroed
    /// first; the default epsilon of 0 applies the bare transform.
    Fp {
        c: f64,
        #[serde(default = "zero")]
        epsilon: f64,
    },
    /// Inverse of `fp`; values in the gap left by the cutoff are errors.
    FpInv {
        c: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    Standardize { mean: f64, std: f64 },
    Affine { a: f64, b: f64 },
    Clamp { lo: f64, hi: f64 },
}

impl ScriptOp {
    fn validate(&self) -> Result<(), ScriptError> {
        match *self {
            ScriptOp::Standardize { std, .. } if !(std > 0.0) => {
                Err(ScriptError::DomainError(format!("standardize with std {std}")))
            }
            ScriptOp::Clamp { lo, hi } if !(lo <= hi) => {
                Err(ScriptError::Invalid(format!("clamp bounds {lo} > {hi}")))
            }
            ScriptOp::Fp { epsilon, .. } | ScriptOp::FpInv { epsilon, .. } if !(epsilon >= 0.0) => {
                Err(ScriptError::Invalid(format!("negative epsilon {epsilon}")))
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, x: f64) -> Result<f64, ScriptError> {
        match *self {
            ScriptOp::Ln {} => {
                if x > 0.0 {
                    Ok(x.ln())
                } else {
                    Err(ScriptError::DomainError(format!("ln of non-positive value {x}")))
                }
            }
            ScriptOp::Exp {} => Ok(x.exp()),
            ScriptOp::Fp { c, epsilon } => Ok(fp(if x.abs() < epsilon { 0.0 } else { x }, c)),
            ScriptOp::FpInv { c, epsilon } => {
                fp_inv(x, c, epsilon).map_err(|e| ScriptError::DomainError(e.to_string()))
            }
            ScriptOp::Standardize { mean, std } => {
                if std > 0.0 {
                    Ok((x - mean) / std)
                } else {
                    Err(ScriptError::DomainError(format!("standardize with std {std}")))
                }
            }
            ScriptOp::Affine { a, b } => Ok(a * x + b),
            ScriptOp::Clamp { lo, hi } => Ok(x.clamp(lo, hi)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub target: Target,
    pub op: ScriptOp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Finalize {
    /// Stack the transformed inputs along a new trailing axis.
    Stack,
    /// Pass the single transformed input through.
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptSpec {
    pub name: String,
    pub arity: usize,
    pub steps: Vec<Step>,
    pub finalize: Finalize,
    #[serde(default, with = "dtype_name", skip_serializing_if = "Option::is_none")]
    pub output_dtype: Option<DType>,
}

mod dtype_name {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::tensor::DType;

    pub fn serialize<S: Serializer>(d: &Option<DType>, s: S) -> Result<S::Ok, S::Error> {
        match d {
            Some(d) => s.serialize_str(d.name()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DType>, D::Error> {
        let name: Option<String> = Option::deserialize(d)?;
        match name.as_deref() {
            None => Ok(None),
            Some("f32") => Ok(Some(DType::F32)),
            Some("f64") => Ok(Some(DType::F64)),
            Some(other) => Err(serde::de::Error::custom(format!(
                "output_dtype must be f32 or f64, got {other:?}"
            ))),
        }
    }
}

impl ScriptSpec {
    pub fn validate(&self) -> Result<(), ScriptError> {
        if self.arity == 0 {
            return Err(ScriptError::Invalid("arity must be >= 1".into()));
        }
        if self.finalize == Finalize::Single && self.arity != 1 {
            return Err(ScriptError::Invalid("finalize=single requires arity 1".into()));
        }
        for step in &self.steps {
            if let Target::Input(i) = step.target {
                if i >= self.arity {
                    return Err(ScriptError::Invalid(format!(
                        "step targets input {i} but arity is {}",
                        self.arity
                    )));
                }
            }
            step.op.validate()?;
        }
        Ok(())
    }

    /// Canonical stored form.
    pub fn to_blob(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("script serializes")
    }

    pub fn from_blob(blob: &[u8]) -> Result<Self, ScriptError> {
        let spec: ScriptSpec =
            serde_json::from_slice(blob).map_err(|e| ScriptError::Invalid(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn run(&self, inputs: &[Tensor]) -> Result<Tensor, ScriptError> {
        if inputs.len() != self.arity {
            return Err(ScriptError::ArityMismatch { expected: self.arity, actual: inputs.len() });
        }
        let first = &inputs[0];
        let mut columns = Vec::with_capacity(inputs.len());
        for t in inputs {
            if t.dtype() != DType::F32 && t.dtype() != DType::F64 {
                return Err(ScriptError::BadDType(t.dtype()));
            }
            if t.shape() != first.shape() {
                return Err(ScriptError::ShapeMismatch(first.shape().to_vec(), t.shape().to_vec()));
            }
            columns.push(t.float_values().expect("float dtype checked"));
        }
        for step in &self.steps {
            for (index, values) in columns.iter_mut().enumerate() {
                if step.target.applies_to(index) {
                    for v in values.iter_mut() {
                        *v = step.op.apply(*v)?;
                    }
                }
            }
        }
        let out_dtype = self.output_dtype.unwrap_or(first.dtype());
        let (shape, values) = match self.finalize {
            Finalize::Single => (first.shape().to_vec(), columns.pop().expect("arity 1")),
            Finalize::Stack => {
                let k = columns.len();
                let n = columns[0].len();
                let mut stacked = Vec::with_capacity(n * k);
                for i in 0..n {
                    stacked.extend(columns.iter().map(|c| c[i]));
                }
                let mut shape = first.shape().to_vec();
                shape.push(k);
                if shape.len() > crate::tensor::MAX_DIMS {
                    return Err(ScriptError::Invalid("stacked output exceeds 8 dimensions".into()));
                }
                (shape, stacked)
            }
        };
        let out = match out_dtype {
            DType::F32 => {
                let v: Vec<f32> = values.iter().map(|&x| x as f32).collect();
                Tensor::from_f32(shape, &v)
            }
            _ => Tensor::from_f64(shape, &values),
        };
        Ok(out.expect("shape derived from inputs"))
    }
}

pub fn run_script_exec(s: &ScriptSpec, inputs: &[Tensor]) -> Result<Tensor, ScriptError> {
    s.run(inputs)
}
