//! The sample functions shipped with the host.

use std::path::Path;

use crate::execution::RuntimeKind;
use crate::registry::{loader::write_unit_dir, FunctionSource, FunctionUnit};
use crate::Result;

/// `(function name, source file, exports, handler)`
const SAMPLES: &[(&str, &str, &str, &str)] = &[
    ("helloworld", "hello.fn", "export helloworld\n", "hello.helloworld"),
    ("fib", "fib.fn", "export fib\nexport fib_delay\n", "fib.fib"),
    ("fib_delay", "fib.fn", "export fib\nexport fib_delay\n", "fib.fib_delay"),
    ("counter", "counter.fn", "export counter\n", "counter.counter"),
    ("sleep", "sleep.fn", "export sleep\n", "sleep.sleep"),
    ("echo", "echo.fn", "export echo\n", "echo.echo"),
    ("fail", "fail.fn", "export fail\n", "fail.fail"),
];

/// Native units for every sample function.
pub fn sample_units() -> Vec<FunctionUnit> {
    sample_units_as(RuntimeKind::Native)
}

pub fn sample_units_as(runtime: RuntimeKind) -> Vec<FunctionUnit> {
    SAMPLES
        .iter()
        .map(|(name, file, code, handler)| {
            FunctionUnit::new(
                *name,
                *handler,
                runtime,
                FunctionSource::Inline {
                    file_name: file.to_string(),
                    code: code.as_bytes().to_vec(),
                },
            )
        })
        .collect()
}

pub fn sample_unit(name: &str) -> Option<FunctionUnit> {
    sample_units().into_iter().find(|u| u.name == name)
}

/// Writes the samples as a functions directory under `root`.
pub fn write_samples(root: &Path, runtime: RuntimeKind) -> Result<()> {
    for unit in sample_units_as(runtime) {
        write_unit_dir(root, &unit)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::loader::load_functions_dir;

    #[test]
    fn samples_are_valid_and_round_trip_through_a_directory() {
        let units = sample_units();
        for u in &units {
            u.validate().unwrap();
        }
        let tmp = tempfile::tempdir().unwrap();
        write_samples(tmp.path(), RuntimeKind::Native).unwrap();
        let report = load_functions_dir(tmp.path()).unwrap();
        assert!(report.warnings.is_empty(), "{:?}", report.warnings);
        let mut names: Vec<_> = report.units.iter().map(|u| u.name.clone()).collect();
        names.sort();
        let mut expected: Vec<_> = units.iter().map(|u| u.name.clone()).collect();
        expected.sort();
        assert_eq!(names, expected);
    }
}
