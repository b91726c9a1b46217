"""Exercises the extension module end to end.

    maturin develop -m crates/python/Cargo.toml   (or pip install the wheel)
    python crates/python/python/smoke_test.py

Set SNAFU_WORKER to a worker executable to also cover the external executor.
"""

import json
import os
import sys
import tempfile
import urllib.request

import snafu


def fib(n):
    return 1 if n <= 2 else fib(n - 1) + fib(n - 2)


def check_host():
    h = snafu.Host()
    assert "fib" in h.functions(), h.functions()
    assert h.invoke("fib", {"n": 15}) == fib(15)
    assert h.stats()["executed"] == snafu.fib_call_count(15) == 1219
    assert h.invoke("helloworld") == "Hello, World!"
    assert [h.invoke("counter") for _ in range(3)] == [1, 2, 3]
    iso = snafu.Host("native-isolated")
    assert [iso.invoke("counter") for _ in range(3)] == [1, 1, 1]
    try:
        h.invoke("fail", {"message": "broken"})
    except snafu.FunctionError as e:
        assert "broken" in str(e)
    else:
        raise AssertionError("fail did not raise")


def check_external():
    if not os.environ.get("SNAFU_WORKER"):
        print("  (SNAFU_WORKER unset; external executor skipped)")
        return
    h = snafu.Host("external-shared")
    assert h.invoke("fib", {"n": 10}) == 55
    assert [h.invoke("counter") for _ in range(3)] == [1, 2, 3]


def check_instance():
    with tempfile.TemporaryDirectory() as d:
        log = os.path.join(d, "log.csv")
        with snafu.Instance(functions_dir=d, log_file=log) as i:
            assert i.invoke("fib", {"n": 12}) == 144
            req = urllib.request.Request(i.url + "/invoke/fib", data=b'{"n": 10}', method="POST")
            with urllib.request.urlopen(req) as r:
                assert json.load(r) == 55
            with urllib.request.urlopen(i.url + "/_snafu/stats") as r:
                assert json.load(r)["executed"] == 287 + 109


def check_sigv4():
    t = 1_700_000_000
    body = b'{"n": 3}'
    headers = [("Host", "localhost")]
    added = snafu.sign_request("POST", "/2015-03-31/functions/fib/invocations", headers, body,
                               "AKID", "secret", "us-east-1", time=t)
    signed = headers + added
    accounts = [("AKID", "secret", "alice")]
    tenant = snafu.verify_request("POST", "/2015-03-31/functions/fib/invocations", signed, body,
                                  accounts, now=t)
    assert tenant == "alice"
    try:
        snafu.verify_request("POST", "/2015-03-31/functions/fib/invocations", signed, b'{"n": 4}',
                             accounts, now=t)
    except snafu.AuthError:
        pass
    else:
        raise AssertionError("tampered body accepted")


def check_cron_and_economics():
    # 2024-02-28 23:59:00 UTC -> next 29 Feb at midnight
    assert snafu.cron_next("0 0 29 2 *", 1709164740) == 1709164800
    try:
        snafu.cron_next("0 0 31 2 *", 0)
    except ValueError:
        pass
    else:
        raise AssertionError("31 February accepted")
    row = snafu.economics("AWS Lambda", 99.30, ppmc=0.20, free_tier_calls=1e6)
    assert abs(row["utility"] - 5.02) / 5.02 < 0.005, row


def main():
    for check in (check_host, check_external, check_instance, check_sigv4, check_cron_and_economics):
        check()
        print("ok", check.__name__)
    return 0


if __name__ == "__main__":
    sys.exit(main())
