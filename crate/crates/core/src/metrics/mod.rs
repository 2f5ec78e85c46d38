//! Forecast metrics, hidden-state diagnostics, latency measurement and the
//! previous-day baseline.

mod baseline;
mod cosine;
mod dtw;
mod pointwise;
mod quantile;
mod report;

pub use baseline::persistence_baseline;
pub use cosine::{cosine_distance_matrix, mean_knn_cosine};
pub use dtw::dtw;
pub use pointwise::{mape, MapeAccumulator, MAPE_THRESHOLD};
pub use quantile::{
    gaussian_quantile, pinball, quantile_loss, standard_normal_quantile, QuantileAccumulator,
};
pub use report::{
    diagnose, evaluate, measure_latency, Diagnostics, EvalOptions, Evaluation, ForecastRecord,
    LatencyStats, MetricReport, MetricRow, WindowDtw, PERSISTENCE,
};
