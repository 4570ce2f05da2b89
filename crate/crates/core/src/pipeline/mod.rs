//! Experiment orchestration: dataset files, sweep configuration and
//! execution, naive-Bayes classification and SVG plots.

mod classify;
mod config;
mod dataset;
mod plot;
mod sweep;

pub use classify::{
    classify_split, naive_bayes, posterior_from_log_likelihoods, train_class_models, ClassifyReport, Posterior,
};
pub use config::{logspace, Mode, Scale, Source, SweepConfig};
pub use dataset::{
    augment_scale, export, ingest, read_dataset, write_dataset, Dataset, IngestReport, Record, Split,
};
pub use plot::{emit_plot, render_svg};
pub use sweep::{
    bho_estimation_data, bho_frontier, dataset_estimation_data, dpi_violations, plane_point_for_model, prepare, train_model,
    read_frontier_csv, read_points_csv, run_sweep, write_frontier_csv, write_points_csv, EstimationData,
    Prepared, SweepOutput, SweepRow,
};
