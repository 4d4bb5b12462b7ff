//! Training, evaluation and prediction entry points used by the CLI.

mod config;
mod evaluate;
mod train;

pub use config::{ScheduleKind, TrainConfig};
pub use evaluate::{
    argmax, cmd_eval, cmd_eval_manifest, cmd_predict, eval_manifest, evaluate, predict_image,
    rank_logits, EvalOptions, EvalOutcome, Prediction,
};
pub use train::{cmd_train, train_step, EpochRecord, TrainOutcome};
