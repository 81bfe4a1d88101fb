//! End-to-end EKE inference through a running cluster, plus the same
//! computation done locally for comparison.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use super::{eke_decode, preprocess_row, EkeError, FeatureVector, PreprocessParams, Standardizer};
use crate::client::{ClientError, ClientHandle};
use crate::exec::{encode_model, load_model, Device, Finalize, Layer, ScriptOp, ScriptSpec, Step, Target};
use crate::tensor::{DType, Tensor};

pub const SCRIPT_NAME: &str = "eke_preprocess";
pub const MODEL_NAME: &str = "eke_stub";

/// Row-major grid of feature vectors, `points[y * nx + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub nx: usize,
    pub ny: usize,
    pub points: Vec<FeatureVector>,
}

impl FeatureGrid {
    pub fn row(&self, y: usize) -> &[FeatureVector] {
        &self.points[y * self.nx..(y + 1) * self.nx]
    }
}

/// Plausible surface diagnostics, deterministic in `seed`. Roughly one
/// point in 64 has exactly zero vorticity.
pub fn synthetic_grid(nx: usize, ny: usize, seed: u64) -> FeatureGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mke = LogNormal::new(-3.0, 1.5).expect("valid lognormal");
    let slope = LogNormal::new(-7.0, 1.0).expect("valid lognormal");
    let rossby = Normal::new(0.5, 0.2).expect("valid normal");
    let log_vort = Normal::new(-11.0, 2.0).expect("valid normal");
    let points = (0..nx * ny)
        .map(|_| {
            let rel_vorticity = if rng.gen_ratio(1, 64) {
                0.0
            } else {
                let sign: f64 = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let mag: f64 = log_vort.sample(&mut rng);
                sign * mag.exp()
            };
            FeatureVector {
                mke: mke.sample(&mut rng),
                rossby_norm: rossby.sample(&mut rng),
                rel_vorticity,
                isopycnal_slope: slope.sample(&mut rng),
            }
        })
        .collect();
    FeatureGrid { nx, ny, points }
}

/// Server-side equivalent of [`super::preprocess`]: takes the four raw
/// features as separate f64 tensors of equal shape and stacks the
/// standardized values as f32 along a trailing axis of width 4.
pub fn preprocess_script(p: &PreprocessParams) -> ScriptSpec {
    let standardize = |s: &Standardizer| ScriptOp::Standardize { mean: s.mean, std: s.std };
    let f = &p.features;
    let steps = vec![
        Step { target: Target::Input(0), op: ScriptOp::Ln {} },
        Step { target: Target::Input(0), op: standardize(&f[0]) },
        Step { target: Target::Input(1), op: standardize(&f[1]) },
        Step { target: Target::Input(2), op: ScriptOp::Fp { c: p.c, epsilon: p.epsilon } },
        Step { target: Target::Input(2), op: standardize(&f[2]) },
        Step { target: Target::Input(3), op: ScriptOp::Ln {} },
        Step { target: Target::Input(3), op: standardize(&f[3]) },
    ];
    ScriptSpec {
        name: SCRIPT_NAME.into(),
        arity: 4,
        steps,
        finalize: Finalize::Stack,
        output_dtype: Some(DType::F32),
    }
}

/// A fixed 4 -> 8 -> 1 tanh network standing in for a trained model.
pub fn stub_eke_model() -> Vec<u8> {
    let hidden = 8;
    let w1: Vec<f32> = (0..hidden * 4).map(|i| ((i * 7 % 11) as f32 - 5.0) / 10.0).collect();
    let b1: Vec<f32> = (0..hidden).map(|i| (i as f32 - 3.5) / 20.0).collect();
    let w2: Vec<f32> = (0..hidden).map(|i| if i % 2 == 0 { 0.4 } else { -0.3 }).collect();
    encode_model(&[
        Layer::dense(4, hidden, w1, b1),
        Layer::Tanh,
        Layer::dense(hidden, 1, w2, vec![0.1]),
    ])
}

/// Statistics fitted on `grid`, with a fixed target normalization.
pub fn demo_params(grid: &FeatureGrid) -> Result<PreprocessParams, EkeError> {
    PreprocessParams::fit(
        &grid.points,
        super::DEFAULT_C,
        super::DEFAULT_EPSILON,
        Standardizer { mean: -4.5, std: 1.25 },
    )
}

#[derive(Debug, Clone)]
pub struct DemoConfig {
    /// Distinguishes the keys of concurrent callers.
    pub member: String,
    /// Model batch size registered with the cluster.
    pub batch_size: u32,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig { member: "eke".into(), batch_size: 16 }
    }
}

fn client_err(e: ClientError) -> EkeError {
    EkeError::Client(e.to_string())
}

/// Registers the preprocessing script and `model` on every shard.
pub fn setup_demo(
    client: &mut ClientHandle,
    params: &PreprocessParams,
    model: &[u8],
    cfg: &DemoConfig,
) -> Result<(), EkeError> {
    params.validate()?;
    client.set_script(SCRIPT_NAME, &preprocess_script(params)).map_err(client_err)?;
    client.set_model(MODEL_NAME, model, cfg.batch_size, Device::Cpu).map_err(client_err)
}

/// Runs the grid through the cluster one row at a time and returns the
/// decoded EKE field in grid order. Expects [`setup_demo`] to have run.
pub fn demo_inference(
    client: &mut ClientHandle,
    grid: &FeatureGrid,
    params: &PreprocessParams,
    cfg: &DemoConfig,
) -> Result<Vec<f64>, EkeError> {
    let mut field = Vec::with_capacity(grid.points.len());
    for y in 0..grid.ny {
        let row = grid.row(y);
        // One hash tag per row keeps its keys on a single shard.
        let tag = format!("{{{}.r{y}}}", cfg.member);
        let names = ["mke", "rossby", "vort", "slope"].map(|f| format!("{tag}{f}"));
        let columns: [Vec<f64>; 4] = [
            row.iter().map(|p| p.mke).collect(),
            row.iter().map(|p| p.rossby_norm).collect(),
            row.iter().map(|p| p.rel_vorticity).collect(),
            row.iter().map(|p| p.isopycnal_slope).collect(),
        ];
        for (name, col) in names.iter().zip(&columns) {
            let t = Tensor::from_f64(vec![grid.nx], col).expect("row length");
            client.put_tensor(name, &t).map_err(client_err)?;
        }
        let x = format!("{tag}x");
        let out = format!("{tag}y");
        let inputs: Vec<&str> = names.iter().map(String::as_str).collect();
        let result = client
            .run_script(SCRIPT_NAME, &inputs, &x)
            .and_then(|()| client.run_model(MODEL_NAME, &[&x], &[&out]))
            .and_then(|()| client.get_tensor(&out));
        for key in names.iter().chain([&x, &out]) {
            let _ = client.delete(key);
        }
        let pred = result.map_err(client_err)?;
        let pred = pred.to_f32_vec().map_err(|e| EkeError::Client(e.to_string()))?;
        field.extend(pred.iter().map(|&v| eke_decode(v as f64, params)));
    }
    Ok(field)
}

/// The same computation as [`demo_inference`] without a cluster.
pub fn local_pipeline(grid: &FeatureGrid, params: &PreprocessParams, model: &[u8]) -> Result<Vec<f64>, EkeError> {
    let model = load_model(model).map_err(|e| EkeError::BadParams(e.to_string()))?;
    let mut flat = Vec::with_capacity(grid.points.len() * 4);
    for p in &grid.points {
        flat.extend(preprocess_row(p, params)?);
    }
    let batch = Tensor::from_f32(vec![grid.points.len(), 4], &flat).expect("n x 4");
    let out = model.run(&batch).map_err(|e| EkeError::BadParams(e.to_string()))?;
    let out = out.to_f32_vec().expect("model output is f32");
    Ok(out.iter().map(|&v| eke_decode(v as f64, params)).collect())
}
