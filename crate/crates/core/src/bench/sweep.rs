use std::io::Write;
use std::path::Path;

use super::cps::{measure_repetition, BenchTarget};
use super::BenchResult;
use crate::auth::AuthMode;
use crate::control::InstanceConfig;
use crate::execution::fib_call_count;

/// Adjacent configurations within this fraction count as tied.
pub const TIE_TOLERANCE: f64 = 0.05;

fn target(executor: &str, debug: bool, logging: bool, auth: bool) -> BenchTarget {
    BenchTarget::new(InstanceConfig {
        executor: executor.into(),
        debug,
        log_file: logging.then(|| "snafu.csv".into()),
        auth_mode: if auth { AuthMode::Aws4 } else { AuthMode::None },
        ..Default::default()
    })
}

/// The seven configurations compared by throughput, fastest expected
/// first within each executor family.
pub fn table_configs() -> Vec<BenchTarget> {
    vec![
        target("native", false, false, false),
        target("native", true, true, false),
        target("native", true, false, true),
        target("native-isolated", false, false, false),
        target("native-isolated", true, true, true),
        target("external-shared", false, false, false),
        target("external-nonshared", false, false, false),
    ]
}

#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub label: String,
    pub result: Result<BenchResult, String>,
}

/// Measures every target `repetitions` times. Repetitions are taken in
/// rounds, one per target per round, so slow drift in machine load spreads
/// over all configurations instead of landing on whichever ran last. A
/// configuration that fails is recorded and dropped from later rounds.
pub fn config_sweep(
    program: &Path,
    targets: &[BenchTarget],
    fib_n: u64,
    repetitions: usize,
    mut progress: impl FnMut(&SweepEntry),
) -> Vec<SweepEntry> {
    let calls = fib_call_count(fib_n);
    let mut values: Vec<Result<Vec<f64>, String>> = targets
        .iter()
        .map(|_| calls.clone().map(|_| Vec::with_capacity(repetitions)))
        .collect();
    for rep in 0..repetitions {
        for (t, v) in targets.iter().zip(values.iter_mut()) {
            let Ok(done) = v else { continue };
            match measure_repetition(program, t, fib_n, rep) {
                Ok(cps) => done.push(cps),
                Err(e) => *v = Err(e),
            }
        }
    }
    targets
        .iter()
        .zip(values)
        .map(|(t, v)| {
            let entry = SweepEntry {
                label: t.label.clone(),
                result: v.and_then(|vals| {
                    let calls = calls.clone()?;
                    Ok(BenchResult::new(&t.label, fib_n, calls, vals))
                }),
            };
            progress(&entry);
            entry
        })
        .collect()
}

/// `config_label,fib_n,rep,cps`, one row per repetition.
pub fn write_csv(entries: &[SweepEntry], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["config_label", "fib_n", "rep", "cps"])?;
    for e in entries {
        if let Ok(r) = &e.result {
            for (i, cps) in r.cps_values.iter().enumerate() {
                w.write_record([
                    r.config_label.clone(),
                    r.fib_n.to_string(),
                    i.to_string(),
                    format!("{cps:.3}"),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn summary_table(entries: &[SweepEntry]) -> String {
    let mut s = format!("{:<16} {:>10} {:>10} {:>7}\n", "config", "median", "mean", "calls");
    for e in entries {
        match &e.result {
            Ok(r) => s.push_str(&format!(
                "{:<16} {:>10.2} {:>10.2} {:>7}\n",
                e.label, r.cps_median, r.cps_mean, r.total_calls
            )),
            Err(err) => s.push_str(&format!("{:<16} FAILED: {err}\n", e.label)),
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingCheck {
    pub faster: String,
    pub slower: String,
    /// Required ratio of the faster median to the slower one.
    pub factor: f64,
    pub faster_cps: Option<f64>,
    pub slower_cps: Option<f64>,
    pub holds: bool,
}

impl std::fmt::Display for OrderingCheck {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let v = |x: Option<f64>| x.map(|v| format!("{v:.1}")).unwrap_or_else(|| "n/a".into());
        let rel = if self.factor == 1.0 { ">=".to_string() } else { format!(">= {}x", self.factor) };
        write!(
            f,
            "[{}] {} ({}) {rel} {} ({})",
            if self.holds { "ok" } else { "FAIL" },
            self.faster,
            v(self.faster_cps),
            self.slower,
            v(self.slower_cps)
        )
    }
}

/// The expected throughput order: each configuration at least as fast as
/// the next within [`TIE_TOLERANCE`], and a shared worker at least twice
/// as fast as a fresh worker per call.
pub fn check_ordering(entries: &[SweepEntry]) -> Vec<OrderingCheck> {
    let median = |label: &str| {
        entries
            .iter()
            .find(|e| e.label == label)
            .and_then(|e| e.result.as_ref().ok())
            .map(|r| r.cps_median)
    };
    let chain = ["IP", "IP+O+L", "IP+AWS4+O", "IIP", "IIP+AWS4+O+L"];
    let mut pairs: Vec<(&str, &str, f64)> = chain.windows(2).map(|w| (w[0], w[1], 1.0)).collect();
    pairs.push(("EXT-S", "EXT-N", 2.0));
    pairs
        .into_iter()
        .map(|(a, b, factor)| {
            let (fa, fb) = (median(a), median(b));
            let holds = match (fa, fb) {
                (Some(x), Some(y)) if factor == 1.0 => x >= y * (1.0 - TIE_TOLERANCE),
                (Some(x), Some(y)) => x >= factor * y,
                _ => false,
            };
            OrderingCheck {
                faster: a.into(),
                slower: b.into(),
                factor,
                faster_cps: fa,
                slower_cps: fb,
                holds,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(label: &str, cps: f64) -> SweepEntry {
        SweepEntry {
            label: label.into(),
            result: Ok(BenchResult::new(label, 15, 1973, vec![cps; 5])),
        }
    }

    #[test]
    fn labels_are_canonical() {
        let labels: Vec<String> = table_configs().into_iter().map(|t| t.label).collect();
        assert_eq!(labels, ["IP", "IP+O+L", "IP+AWS4+O", "IIP", "IIP+AWS4+O+L", "EXT-S", "EXT-N"]);
    }

    #[test]
    fn ordering_allows_small_ties() {
        let entries = [
            entry("IP", 100.0),
            entry("IP+O+L", 103.0),
            entry("IP+AWS4+O", 90.0),
            entry("IIP", 80.0),
            entry("IIP+AWS4+O+L", 70.0),
            entry("EXT-S", 50.0),
            entry("EXT-N", 20.0),
        ];
        assert!(check_ordering(&entries).iter().all(|c| c.holds));

        let mut bad = entries.clone();
        bad[0] = entry("IP", 95.0);
        bad[6] = entry("EXT-N", 30.0);
        let failed: Vec<String> = check_ordering(&bad)
            .into_iter()
            .filter(|c| !c.holds)
            .map(|c| c.faster)
            .collect();
        assert_eq!(failed, ["IP", "EXT-S"]);
    }

    #[test]
    fn failed_configuration_fails_its_checks() {
        let mut entries = vec![entry("IP", 100.0)];
        entries.push(SweepEntry {
            label: "IP+O+L".into(),
            result: Err("did not start".into()),
        });
        assert!(!check_ordering(&entries)[0].holds);
        let mut out = Vec::new();
        write_csv(&entries, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(summary_table(&entries).contains("FAILED"));
    }
}
