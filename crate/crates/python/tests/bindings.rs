use std::ffi::CString;

use pyo3::prelude::*;
use snafu::snafu;

fn run(code: &str) -> PyResult<()> {
    pyo3::append_to_inittab!(snafu);
    Python::attach(|py| {
        let code = CString::new(code).expect("no NUL");
        py.run(&code, None, None)
    })
}

#[test]
fn module_surface() {
    let code = r#"
import snafu
h = snafu.Host()
assert h.invoke("fib", {"n": 12}) == 144
assert h.stats()["executed"] == snafu.fib_call_count(12) == 287
assert h.executor == "IP"
assert {"fib", "counter", "helloworld"} <= set(h.functions()), h.functions()

try:
    h.invoke("nosuch")
except snafu.SnafuError:
    pass
else:
    raise AssertionError("unknown function accepted")

headers = [("Host", "example.com")]
added = snafu.sign_request("GET", "/", headers, b"", "AK", "sk", "eu-west-1", time=1700000000)
assert snafu.verify_request("GET", "/", headers + added, b"", [("AK", "sk", "t")], now=1700000000) == "t"
try:
    snafu.verify_request("GET", "/", headers + added, b"", [("AK", "sk", "t")], now=1700009999)
except snafu.AuthError:
    pass
else:
    raise AssertionError("stale request accepted")

assert snafu.cron_next("*/15 * * * *", 0) == 900
"#;
    if let Err(e) = run(code) {
        Python::attach(|py| e.print(py));
        panic!("python check failed");
    }
}
