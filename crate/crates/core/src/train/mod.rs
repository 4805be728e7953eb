//! Training: configuration, data, synthetic task, Adam, checkpoints and the
//! epoch loop.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod optim;
pub mod synthetic;
pub mod trainer;

pub use checkpoint::{Checkpoint, DevScore};
pub use config::{TaskKind, TrainConfig};
pub use data::{parse_corpus, read_corpus, Dataset, Example, RawExample, RawInput};
pub use optim::{adam_step, clip_gradients};
pub use synthetic::SyntheticTask;
pub use trainer::{
    evaluate, initial_checkpoint, plan_batches, train_fresh, train_loop, ClassCounts, EpochRecord, EvalReport,
    TrainOutcome, BEST_CHECKPOINT, LAST_CHECKPOINT, LOG_FILE,
};
