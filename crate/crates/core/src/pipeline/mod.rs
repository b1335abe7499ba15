//! Data ingestion, preprocessing, configuration and result files.

mod config;
mod csv_load;
mod dataset;
mod results;

pub use config::{DataConfig, EstimateConfig, RunConfig};
pub use csv_load::{load_csv, load_csv_from_reader, LoadReport, Schema};
pub use dataset::{split, standardize, Dataset, TransformRecord};
pub use results::{
    calibration_csv, dataset_csv, interval_csv, parse_calibration_csv, parse_dataset_csv,
    write_atomic, write_results, CalibrationRow, IntervalRow, Results, CALIBRATION_HEADER,
    INTERVAL_HEADER,
};
