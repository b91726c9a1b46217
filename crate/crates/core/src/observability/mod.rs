//! Invocation logging (L), debug output (O) and connection sampling.

pub mod debug;
pub mod log;
pub mod sampler;

pub use debug::DebugOutput;
pub use log::{read_records, CsvLogger, InvocationRecord, LogStats, CSV_HEADER};
pub use sampler::{ConnSampler, ConnectionStat, SAMPLE_HEADER};

/// ISO-8601 UTC timestamp with milliseconds.
pub fn iso_now() -> String {
    iso(chrono::Utc::now())
}

pub fn iso(t: chrono::DateTime<chrono::Utc>) -> String {
    t.to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
