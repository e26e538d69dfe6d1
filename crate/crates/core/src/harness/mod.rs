//! Imbalance scenarios, synthetic data, benchmark runs and 2-D exports.

mod bench;
mod export;
mod scenario;
mod synth;

pub use bench::{
    run_benchmark, AggregateRow, BenchOptions, CellKey, Method, MethodSpec, ExperimentReport,
    ReportRow, WORKERS_ENV,
};
pub use export::{export_2d, write_points_csv, Point2d};
pub use scenario::{make_scenario, make_scenario_with, ScenarioSpec};
pub use synth::{synth_dataset, SynthSpec};
