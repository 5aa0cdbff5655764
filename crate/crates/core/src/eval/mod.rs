//! Tracking metrics, the method benchmark, geometry diagnostics, scheduling
//! heatmaps and the CSV data behind the figures.

pub mod benchmark;
pub mod export;
pub mod gdop;
pub mod heatmap;
pub mod metrics;

pub use benchmark::{
    ratio_statistics, run_benchmark, simulate_records, synthetic_benchmark, synthetic_data, train_models,
    BenchmarkModels, BenchmarkOutput, Method, SeedResult, SyntheticSetup, TrainedModels, REFERENCE_IMPROVEMENT,
    REFERENCE_MAE, REFERENCE_REAL_FRACTION,
};
pub use export::{export_plot_data, heatmap_csv, metrics_csv, trajectory_csv, PlotData};
pub use gdop::gdop;
pub use heatmap::{heatmap_mean_gdop, random_mean_gdop, scheduling_heatmap, HeatmapGrid};
pub use metrics::{compute_metrics, mean_error, percentile, position_errors, MetricReport, Track};
