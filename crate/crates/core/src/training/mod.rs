//! SGD with momentum under a poly learning-rate schedule, the training
//! loop, full-set evaluation and the λ sweep.

mod optim;
mod run;

pub use optim::{poly_lr, sgd_step, sgd_update, OptimState};
pub use run::{
    evaluate, lambda_sweep, sweep_file_name, train_loop, write_metrics_csv, EvalReport, MetricsRow, TrainConfig,
    TrainOutcome, METRICS_HEADER,
};
