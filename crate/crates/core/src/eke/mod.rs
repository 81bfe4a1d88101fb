//! Feature engineering for the eddy-kinetic-energy (EKE) inference
//! pipeline: the signed-log vorticity transform, per-feature
//! standardization, decoding of the network output, and inverse-density
//! sample weighting.

mod demo;
mod sampling;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

pub use demo::{
    demo_params, setup_demo, MODEL_NAME, SCRIPT_NAME,
    demo_inference, local_pipeline, preprocess_script, stub_eke_model, synthetic_grid, DemoConfig,
    FeatureGrid,
};
pub use sampling::{inverse_density_weights, weighted_epoch_sample, SampleWeights, WeightedSampler};

/// Offset used by the vorticity transform.
pub const DEFAULT_C: f64 = 36.0;
/// Smallest non-zero vorticity magnitude; smaller values are zeroed.
pub const DEFAULT_EPSILON: f64 = 1e-15;
/// Histogram resolution for inverse-density weights.
pub const DEFAULT_BINS: usize = 64;
/// Share of the data set drawn per training epoch.
pub const DEFAULT_EPOCH_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EkeError {
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("degenerate feature: standard deviation is zero")]
    DegenerateFeature,
    #[error("degenerate range: all values are identical")]
    DegenerateRange,
    #[error("invalid parameters: {0}")]
    BadParams(String),
    #[error("client error: {0}")]
    Client(String),
    #[error("io error: {0}")]
    Io(String),
}

/// Signed log with offset: `ln x + c` for positive `x`, `-ln|x| - c` for
/// negative `x`, and exactly 0 at 0.
pub fn fp(x: f64, c: f64) -> f64 {
    if x < 0.0 {
        -(-x).ln() - c
    } else if x == 0.0 {
        0.0
    } else {
        x.ln() + c
    }
}

/// Inverse of [`fp`] over inputs with `|x| >= epsilon`.
///
/// Those inputs map to `|y| >= c + ln(epsilon)`, so any non-zero `y`
/// closer to zero than that cannot come from a valid input and is
/// rejected. An `epsilon` of 0 disables the check.
pub fn fp_inv(y: f64, c: f64, epsilon: f64) -> Result<f64, EkeError> {
    if y == 0.0 {
        return Ok(0.0);
    }
    let gap = if epsilon > 0.0 { c + epsilon.ln() } else { f64::NEG_INFINITY };
    if y.abs() < gap {
        return Err(EkeError::DomainError(format!(
            "{y} lies inside (-{gap}, {gap}), outside the image of the transform"
        )));
    }
    Ok(if y > 0.0 { (y - c).exp() } else { -(-y - c).exp() })
}

/// Mean and population standard deviation of one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

pub fn fit_standardizer(samples: &[f64]) -> Result<Standardizer, EkeError> {
    if samples.len() < 2 {
        return Err(EkeError::BadParams("need at least two samples".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0) {
        return Err(EkeError::DegenerateFeature);
    }
    Ok(Standardizer { mean, std })
}

/// The four surface diagnostics fed to the network, in input order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Mean kinetic energy; must be positive.
    pub mke: f64,
    /// Rossby radius normalized by grid area.
    pub rossby_norm: f64,
    pub rel_vorticity: f64,
    /// Column-averaged isopycnal slope; must be positive.
    pub isopycnal_slope: f64,
}

/// Transform constants plus the stored statistics of every feature and of
/// the ln(EKE) target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessParams {
    pub c: f64,
    pub epsilon: f64,
    /// Statistics of `ln mke`, `rossby_norm`, `fp(vorticity)`, `ln slope`.
    pub features: [Standardizer; 4],
    pub target: Standardizer,
}

impl PreprocessParams {
    pub fn validate(&self) -> Result<(), EkeError> {
        if !(self.epsilon > 0.0) {
            return Err(EkeError::BadParams("epsilon must be positive".into()));
        }
        if !(self.c > self.epsilon.ln()) {
            return Err(EkeError::BadParams(format!(
                "c = {} must exceed ln(epsilon) = {}",
                self.c,
                self.epsilon.ln()
            )));
        }
        if self.features.iter().chain([&self.target]).any(|s| !(s.std > 0.0)) {
            return Err(EkeError::DegenerateFeature);
        }
        Ok(())
    }

    /// Fits feature statistics on `samples`, keeping `c`, `epsilon` and
    /// the target statistics as given.
    pub fn fit(
        samples: &[FeatureVector],
        c: f64,
        epsilon: f64,
        target: Standardizer,
    ) -> Result<Self, EkeError> {
        let mut cols: [Vec<f64>; 4] = Default::default();
        for fv in samples {
            let t = transform_features(fv, c, epsilon)?;
            for (col, v) in cols.iter_mut().zip(t) {
                col.push(v);
            }
        }
        let features = [
            fit_standardizer(&cols[0])?,
            fit_standardizer(&cols[1])?,
            fit_standardizer(&cols[2])?,
            fit_standardizer(&cols[3])?,
        ];
        let params = PreprocessParams { c, epsilon, features, target };
        params.validate()?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<(), EkeError> {
        let text = serde_json::to_string_pretty(self).expect("params serialize");
        std::fs::write(path, text).map_err(|e| EkeError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, EkeError> {
        let text = std::fs::read_to_string(path).map_err(|e| EkeError::Io(e.to_string()))?;
        let params: Self =
            serde_json::from_str(&text).map_err(|e| EkeError::BadParams(e.to_string()))?;
        params.validate()?;
        Ok(params)
    }
}

/// Feature transforms before standardization.
fn transform_features(fv: &FeatureVector, c: f64, epsilon: f64) -> Result<[f64; 4], EkeError> {
    if !(fv.mke > 0.0) {
        return Err(EkeError::DomainError(format!("mke must be positive, got {}", fv.mke)));
    }
    if !(fv.isopycnal_slope > 0.0) {
        return Err(EkeError::DomainError(format!(
            "isopycnal slope must be positive, got {}",
            fv.isopycnal_slope
        )));
    }
    let vort = if fv.rel_vorticity.abs() < epsilon { 0.0 } else { fv.rel_vorticity };
    Ok([fv.mke.ln(), fv.rossby_norm, fp(vort, c), fv.isopycnal_slope.ln()])
}

/// Transforms and standardizes one feature vector into the network's
/// `[mke, rossby, vorticity, slope]` input row.
pub fn preprocess(fv: &FeatureVector, p: &PreprocessParams) -> Result<Tensor, EkeError> {
    let row = preprocess_row(fv, p)?;
    Ok(Tensor::from_f32(vec![4], &row).expect("four features"))
}

pub(crate) fn preprocess_row(fv: &FeatureVector, p: &PreprocessParams) -> Result<[f32; 4], EkeError> {
    if p.features.iter().any(|s| !(s.std > 0.0)) {
        return Err(EkeError::DegenerateFeature);
    }
    let t = transform_features(fv, p.c, p.epsilon)?;
    Ok(std::array::from_fn(|i| p.features[i].apply(t[i]) as f32))
}

/// Maps a standardized ln(EKE) prediction back to EKE.
pub fn eke_decode(y_std: f64, p: &PreprocessParams) -> f64 {
    p.target.invert(y_std).exp()
}

/// Standardized ln(EKE) for a positive EKE value.
pub fn eke_encode(eke: f64, p: &PreprocessParams) -> f64 {
    p.target.apply(eke.ln())
}
