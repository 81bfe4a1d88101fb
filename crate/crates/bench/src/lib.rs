//! Fixtures shared by the microbenchmarks.

use std::collections::VecDeque;
use std::sync::Arc;

use tensorfleet::exec::{encode_model, load_model, InferenceRequest, Layer, ModelSpec};
use tensorfleet::Tensor;

/// `depth` square Dense+Tanh blocks of the given width.
pub fn mlp(width: usize, depth: usize) -> ModelSpec {
    let weights: Vec<f32> = (0..width * width).map(|i| ((i % 17) as f32 - 8.0) / (8.0 * width as f32)).collect();
    let layers: Vec<Layer> = (0..depth)
        .flat_map(|_| [Layer::dense(width, width, weights.clone(), vec![0.01; width]), Layer::Tanh])
        .collect();
    load_model(&encode_model(&layers)).expect("well-formed model")
}

/// A `rows × width` f32 matrix with a simple deterministic pattern.
pub fn matrix(rows: usize, width: usize) -> Tensor {
    let values: Vec<f32> = (0..rows * width).map(|i| (i % 23) as f32 / 23.0 - 0.5).collect();
    Tensor::from_f32(vec![rows, width], &values).expect("shape matches data")
}

/// A queue of `n` single-row requests alternating between two models.
pub fn mixed_queue(n: usize, width: usize) -> VecDeque<InferenceRequest<usize>> {
    let (a, b) = (Arc::new(mlp(width, 1)), Arc::new(mlp(width, 1)));
    (0..n)
        .map(|i| InferenceRequest {
            model: Arc::clone(if i % 4 == 3 { &b } else { &a }),
            input: matrix(1, width),
            ticket: i,
        })
        .collect()
}
