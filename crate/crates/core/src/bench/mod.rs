//! Throughput benchmarks, the reaper experiment and the cost model.

pub mod cps;
pub mod econ;
pub mod reaper;
pub mod sweep;

use serde::Serialize;

pub use cps::{measure_cps, measure_repetition, BenchTarget, HostProcess};
pub use econ::{compute_cpm, compute_ppm, compute_utility, EconomicsInput, EconomicsRow, Pricing};
pub use reaper::{reaper_experiment, ReaperMode, ReaperOptions, ReaperOutcome};
pub use sweep::{check_ordering, config_sweep, table_configs, OrderingCheck, SweepEntry};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub config_label: String,
    pub fib_n: u64,
    pub repetitions: usize,
    pub cps_values: Vec<f64>,
    pub cps_median: f64,
    pub cps_mean: f64,
    /// Calls made by each repetition.
    pub total_calls: u64,
}

impl BenchResult {
    pub fn new(config_label: impl Into<String>, fib_n: u64, total_calls: u64, cps_values: Vec<f64>) -> Self {
        Self {
            config_label: config_label.into(),
            fib_n,
            repetitions: cps_values.len(),
            cps_median: median(&cps_values),
            cps_mean: mean(&cps_values),
            cps_values,
            total_calls,
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// fib(n) computed directly, for checking results.
pub fn fib_value(n: u64) -> u64 {
    let (mut a, mut b) = (0u64, 1u64);
    for _ in 0..n {
        (a, b) = (b, a + b);
    }
    a
}
