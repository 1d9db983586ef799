//! Optimizers, training procedures and checkpoints.

mod checkpoint;
mod optim;
mod trainer;

pub use checkpoint::{checkpoint_from_str, checkpoint_to_string, load_checkpoint, save_checkpoint, FORMAT_VERSION};
pub use optim::{optimizer_by_name, optimizer_names, Adam, Optimizer, Sgd};
pub use trainer::{
    batch_gradients, clip_global_norm, fit, procedure_by_name, procedure_names, train, EndToEnd, EpochStats,
    TrainOptions, TrainOutcome, TrainProcedure, TrainReport, TwoStage,
};
