//! Memory-based dynamic graph network: vertex memory, message and GRU
//! update, embedding, link decoder and the lag-one training loop.

mod memory;
pub(crate) mod model;
pub(crate) mod step;
pub(crate) mod train;

pub use memory::MemoryStore;
pub use model::{
    decode_link, embed, memory_update, message_fn, time_encoding, EmbeddingMode, Hyperparams,
    MemoryPolicy, MemoryUpdateSource, Model,
};
pub use step::StepOutput;
pub use train::{
    average_precision, batch_gradient, evaluate_ap, prepare_batches, prepare_eval_batches,
    process_batch, train_epoch, write_metrics_csv, EpochRecord, EpochStats, RunMetrics, Trainer,
};
