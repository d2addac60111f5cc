//! Per-bin accuracy, trend fits, human comparison and report emission.

mod human;
mod report;
mod stats;

pub use human::{human_bin_accuracy, stratified_sample, HumanBinResult, StratifiedSample, ADJUDICATOR};
pub use report::{emit_report, path_safe, GroupReport, Report};
pub use stats::{
    aggregate_trends, bin_accuracy, fit_trend, fit_weighted, trend_points, wilson_interval,
    wilson_unclamped, BinSummary, TrendAggregate, TrendSummary, DEFAULT_Z, MIN_BIN_N,
};
