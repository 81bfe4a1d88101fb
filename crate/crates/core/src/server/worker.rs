use std::collections::VecDeque;
use std::sync::{Arc, Weak};
use std::thread;

use crossbeam_channel::{Receiver, Sender};
use tracing::trace;

use super::Shard;
use crate::exec::{batch_collect, execute_batch, InferenceRequest, ModelSpec};
use crate::tensor::Tensor;

pub(crate) type JobResult = Result<Tensor, String>;

pub(crate) struct Job {
    pub model: Arc<ModelSpec>,
    pub input: Tensor,
    pub reply: Sender<JobResult>,
}

pub(crate) fn spawn(index: usize, shard: Weak<Shard>, rx: Receiver<Job>) {
    thread::Builder::new()
        .name(format!("inference-{index}"))
        .spawn(move || run(shard, rx))
        .expect("spawn inference worker");
}

fn drain_into(rx: &Receiver<Job>, pending: &mut VecDeque<InferenceRequest<Sender<JobResult>>>) {
    pending.extend(
        rx.try_iter()
            .map(|job| InferenceRequest { model: job.model, input: job.input, ticket: job.reply }),
    );
}

fn run(shard: Weak<Shard>, rx: Receiver<Job>) {
    let mut pending = VecDeque::new();
    // Exits once every sender (held by the shard) is gone.
    while let Ok(job) = rx.recv() {
        pending.push_back(InferenceRequest { model: job.model, input: job.input, ticket: job.reply });
        drain_into(&rx, &mut pending);
        while let Some(head) = pending.front() {
            let batch_size = head.model.batch_size;
            let batch = batch_collect(&mut pending, batch_size);
            let model = Arc::clone(&batch[0].model);
            trace!(size = batch.len(), "executing batch");
            let result = execute_batch(&model, &batch);
            if let Some(shard) = shard.upgrade() {
                shard.record_batch(batch.len());
            }
            match result {
                Ok(outputs) => {
                    for (req, out) in batch.into_iter().zip(outputs) {
                        let _ = req.ticket.send(Ok(out));
                    }
                }
                Err(e) => {
                    // One failure fails every member of the batch.
                    let msg = e.to_string();
                    for req in batch {
                        let _ = req.ticket.send(Err(msg.clone()));
                    }
                }
            }
            drain_into(&rx, &mut pending);
        }
    }
}
