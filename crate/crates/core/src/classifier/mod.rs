//! Shed-outcome classifier: convolutional and bidirectional GRU encoder of
//! the pre-shed window, a load-index embedding, and a dense head.

mod arch;
mod metrics;
mod network;
mod params;
mod recommend;
mod train;

pub use arch::{count_params, Architecture};
pub use metrics::{
    default_tau_grid, evaluate_probabilities, predict, report_from_predictions, sweep_threshold,
    ClassMetrics, CurvePoint, EvalReport, ThresholdSweep,
};
pub use network::{
    forward, forward_batch, loss_and_grads, Dropout, Input, Output, STABLE, UNSTABLE,
};
pub use params::{manifest_path, Params, TensorInfo, WeightEntry, WeightsManifest};
pub use recommend::{recommend, InputScaling, Recommendation};
pub use train::{
    evaluate, examples, label_index, predict_unstable, threshold_sweep, train, EpochStats, Example,
    TrainConfig, TrainOutcome,
};
