//! Opportunistic request batching.
//!
//! The worker never waits for a batch to fill: it takes whatever is
//! pending for the model at the head of the queue, up to the model's
//! batch size, runs one stacked execution and splits the rows back out.

use std::collections::VecDeque;
use std::sync::Arc;

use super::model::{ModelError, ModelSpec};
use crate::tensor::Tensor;

/// One pending model execution.
#[derive(Debug)]
pub struct InferenceRequest<R> {
    pub model: Arc<ModelSpec>,
    /// f32 matrix already checked against the model's input width.
    pub input: Tensor,
    /// Opaque reply handle handed back with the result.
    pub ticket: R,
}

/// Removes up to `batch_size` requests for the model at the head of the
/// queue, preserving arrival order. Requests for other models stay queued
/// in their original order.
pub fn batch_collect<R>(
    queue: &mut VecDeque<InferenceRequest<R>>,
    batch_size: usize,
) -> Vec<InferenceRequest<R>> {
    let Some(head) = queue.front() else {
        return Vec::new();
    };
    let model = Arc::clone(&head.model);
    let limit = batch_size.max(1);
    let mut batch = Vec::new();
    let mut rest = VecDeque::with_capacity(queue.len());
    while let Some(req) = queue.pop_front() {
        if batch.len() < limit && Arc::ptr_eq(&req.model, &model) {
            batch.push(req);
        } else {
            rest.push_back(req);
        }
    }
    *queue = rest;
    batch
}

/// Executes every request of one batch in a single stacked forward pass
/// and returns the per-request outputs in order.
pub fn execute_batch<R>(
    model: &ModelSpec,
    batch: &[InferenceRequest<R>],
) -> Result<Vec<Tensor>, ModelError> {
    let mut rows = Vec::with_capacity(batch.len());
    let mut width = None;
    let mut data = Vec::new();
    for req in batch {
        let (r, w) = model.check_input(&req.input)?;
        if *width.get_or_insert(w) != w {
            return Err(ModelError::WidthMismatch { expected: width.unwrap(), actual: w });
        }
        rows.push(r);
        data.extend(req.input.to_f32_vec().expect("checked"));
    }
    let Some(width) = width else {
        return Ok(Vec::new());
    };
    let total: usize = rows.iter().sum();
    let out_width = model.output_width(width);
    let out = model.forward(data, total, width);
    let mut offset = 0;
    Ok(rows
        .into_iter()
        .map(|r| {
            let chunk = &out[offset * out_width..(offset + r) * out_width];
            offset += r;
            Tensor::from_f32(vec![r, out_width], chunk).expect("row split")
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::model::{Device, Layer};

    fn model(seed: f32) -> Arc<ModelSpec> {
        Arc::new(
            ModelSpec::new(
                "m",
                vec![
                    Layer::dense(2, 3, vec![seed, 0.5, -1.0, 2.0, 0.25, 1.5], vec![0.1, 0.2, 0.3]),
                    Layer::Tanh,
                    Layer::dense(3, 1, vec![1.0, -1.0, 0.5], vec![0.0]),
                ],
                10_000,
                Device::Cpu,
            )
            .unwrap(),
        )
    }

    fn req(m: &Arc<ModelSpec>, id: usize) -> InferenceRequest<usize> {
        let x = [id as f32 * 0.1, 1.0 - id as f32];
        InferenceRequest { model: Arc::clone(m), input: Tensor::from_f32(vec![1, 2], &x).unwrap(), ticket: id }
    }

    /// Drains the queue, counting executions and their sizes.
    fn drain(queue: &mut VecDeque<InferenceRequest<usize>>, batch_size: usize) -> Vec<usize> {
        let mut sizes = Vec::new();
        while !queue.is_empty() {
            let batch = batch_collect(queue, batch_size);
            execute_batch(&batch[0].model, &batch).unwrap();
            sizes.push(batch.len());
        }
        sizes
    }

    #[test]
    fn small_queue_single_execution() {
        let m = model(1.0);
        let mut q: VecDeque<_> = (0..4).map(|i| req(&m, i)).collect();
        assert_eq!(drain(&mut q, 10_000), vec![4]);
        let mut q: VecDeque<_> = (0..1).map(|i| req(&m, i)).collect();
        assert_eq!(drain(&mut q, 10_000), vec![1]);
    }

    #[test]
    fn batch_size_caps_executions() {
        let m = model(1.0);
        let mut q: VecDeque<_> = (0..12).map(|i| req(&m, i)).collect();
        assert_eq!(drain(&mut q, 8), vec![8, 4]);
    }

    #[test]
    fn other_models_keep_their_order() {
        let a = model(1.0);
        let b = model(2.0);
        let mut q: VecDeque<_> = vec![req(&a, 0), req(&b, 1), req(&a, 2), req(&b, 3)].into();
        let first: Vec<_> = batch_collect(&mut q, 100).into_iter().map(|r| r.ticket).collect();
        assert_eq!(first, vec![0, 2]);
        let second: Vec<_> = batch_collect(&mut q, 100).into_iter().map(|r| r.ticket).collect();
        assert_eq!(second, vec![1, 3]);
        assert!(batch_collect(&mut q, 100).is_empty());
    }

    #[test]
    fn batching_is_bitwise_transparent() {
        let m = model(0.7);
        let reqs: Vec<_> = (0..9).map(|i| req(&m, i)).collect();
        let singles: Vec<Vec<u8>> = reqs
            .iter()
            .map(|r| m.run(&r.input).unwrap().to_bytes())
            .collect();
        for split in [1, 2, 4, 9] {
            let mut outs = Vec::new();
            for chunk in reqs.chunks(split) {
                outs.extend(execute_batch(&m, chunk).unwrap().iter().map(Tensor::to_bytes));
            }
            assert_eq!(outs, singles, "split {split}");
        }
    }
}
