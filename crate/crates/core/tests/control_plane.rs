mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use base64::Engine;
use serde_json::{json, Value};
use snafu_core::auth::{Account, AccountList, AuthMode, ClientAuth};
use snafu_core::control::{Instance, FUNCTION_ERROR_HEADER};
use snafu_core::http::{ClientResponse, HttpClient};

fn send(method: &str, url: &str, body: &[u8], auth: &ClientAuth) -> ClientResponse {
    HttpClient::new()
        .request(method, url, &[], body, auth)
        .unwrap_or_else(|e| panic!("{method} {url}: {e}"))
}

fn invoke(base: &str, f: &str, ev: Value, auth: &ClientAuth) -> ClientResponse {
    send(
        "POST",
        &format!("{base}/2015-03-31/functions/{f}/invocations"),
        ev.to_string().as_bytes(),
        auth,
    )
}

fn stats(i: &Instance) -> Value {
    send("GET", &format!("{}/_snafu/stats", i.url()), b"", &ClientAuth::None)
        .json()
        .unwrap()
}

#[test]
fn topologies_agree_on_value_and_call_count() {
    let (value, calls) = common::fib_and_calls(12);
    let dir = tempfile::tempdir().unwrap();

    // a: one instance
    let a = common::instance(&dir.path().join("a"), |_| {});
    let r = invoke(&a.url(), "fib", json!({"n": 12}), &ClientAuth::None);
    assert_eq!(r.json().unwrap(), json!(value));
    assert_eq!(stats(&a)["executed"], json!(calls));

    // b: master forwards to a slave that recurses locally
    let slave_b = common::instance(&dir.path().join("b-slave"), |_| {});
    let master_b = common::instance(&dir.path().join("b-master"), |c| {
        c.forward_target = Some(slave_b.url());
        c.callback_endpoint = Some("local".into());
    });
    let r = invoke(&master_b.url(), "fib", json!({"n": 12}), &ClientAuth::None);
    assert_eq!(r.json().unwrap(), json!(value));
    assert_eq!(stats(&slave_b)["executed"], json!(calls));
    assert_eq!(stats(&master_b)["forwarded"], json!(1));

    // c: the slave's nested calls go back through the master
    let log = dir.path().join("master-c.csv");
    let slave_c = common::instance(&dir.path().join("c-slave"), |_| {});
    let master_c = common::instance(&dir.path().join("c-master"), |c| {
        c.forward_target = Some(slave_c.url());
        c.callback_endpoint = Some("self".into());
        c.log_file = Some(log.clone());
    });
    let r = invoke(&master_c.url(), "fib", json!({"n": 12}), &ClientAuth::None);
    assert_eq!(r.json().unwrap(), json!(value));
    assert_eq!(stats(&slave_c)["executed"], json!(calls));
    assert_eq!(stats(&master_c)["forwarded"], json!(calls));
    let forwards = common::csv_column(&log, "executor")
        .iter()
        .filter(|e| *e == "forward")
        .count() as u64;
    assert_eq!(forwards, calls);
}

#[test]
fn function_crud_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let i = common::instance(dir.path(), |_| {});
    let base = format!("{}/2015-03-31/functions", i.url());
    let none = ClientAuth::None;
    let code = base64::engine::general_purpose::STANDARD.encode("export echo\n");
    let create = json!({
        "FunctionName": "mirror",
        "Handler": "echo.echo",
        "Runtime": "native",
        "Timeout": 3,
        "Code": {"ZipFile": code},
    });
    let r = send("POST", &base, create.to_string().as_bytes(), &none);
    assert_eq!(r.status, 201, "{}", String::from_utf8_lossy(&r.body));
    assert_eq!(r.json().unwrap()["Timeout"], json!(3));
    assert_eq!(send("POST", &base, create.to_string().as_bytes(), &none).status, 409);

    let listed = send("GET", &format!("{base}/"), b"", &none).json().unwrap();
    let names: Vec<&str> = listed["Functions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["FunctionName"].as_str().unwrap())
        .collect();
    assert!(names.contains(&"mirror") && names.contains(&"fib"), "{names:?}");

    let got = send("GET", &format!("{base}/mirror"), b"", &none).json().unwrap();
    assert_eq!(got["Configuration"]["Handler"], json!("echo.echo"));
    assert_eq!(invoke(&i.url(), "mirror", json!([1, "x"]), &none).json().unwrap(), json!([1, "x"]));

    assert_eq!(send("DELETE", &format!("{base}/mirror"), b"", &none).status, 204);
    assert_eq!(send("DELETE", &format!("{base}/mirror"), b"", &none).status, 404);
    assert_eq!(invoke(&i.url(), "mirror", json!({}), &none).status, 404);
    assert_eq!(send("POST", &base, b"{not json", &none).status, 400);
}

#[test]
fn function_errors_use_the_lambda_convention() {
    let dir = tempfile::tempdir().unwrap();
    let i = common::instance(dir.path(), |_| {});
    let r = invoke(&i.url(), "fail", json!({"message": "broken"}), &ClientAuth::None);
    assert_eq!(r.status, 200);
    assert_eq!(r.header(FUNCTION_ERROR_HEADER), Some("Unhandled"));
    let body = r.json().unwrap();
    assert_eq!(body["errorMessage"], json!("broken"));
    assert!(r.header("X-Amz-Request-Id").is_some());

    let r = invoke(&i.url(), "fib", json!({"n": 0}), &ClientAuth::None);
    assert_eq!(r.header(FUNCTION_ERROR_HEADER), Some("Unhandled"));
    assert_eq!(stats(&i)["failed"], json!(2));
}

#[test]
fn web_trigger_path_and_request_checks() {
    let dir = tempfile::tempdir().unwrap();
    let i = common::instance(dir.path(), |_| {});
    let none = ClientAuth::None;
    let r = send("POST", &format!("{}/invoke/helloworld", i.url()), b"", &none);
    assert_eq!(r.json().unwrap(), json!("Hello, World!"));
    let r = send("POST", &format!("{}/invoke/fib", i.url()), b"{\"n\":10}", &none);
    assert_eq!(r.json().unwrap(), json!(55));

    let url = format!("{}/2015-03-31/functions/echo/invocations", i.url());
    let client = HttpClient::new();
    let with = |h: (&str, &str)| {
        client
            .request("POST", &url, &[(h.0.to_string(), h.1.to_string())], b"{}", &none)
            .unwrap()
    };
    assert_eq!(with(("X-Amz-Invocation-Type", "Event")).status, 400);
    assert_eq!(with(("X-Snafu-Depth", "many")).status, 400);
    let deep = with(("X-Snafu-Depth", "100000"));
    assert_eq!(deep.header(FUNCTION_ERROR_HEADER), Some("Unhandled"));
    assert!(deep.json().unwrap()["errorMessage"].as_str().unwrap().contains("depth"));
    assert_eq!(send("GET", &format!("{}/nothing/here", i.url()), b"", &none).status, 404);
    assert_eq!(send("POST", &url, b"not json", &none).status, 400);
}

fn write_accounts(dir: &Path) -> (std::path::PathBuf, AccountList) {
    let accounts = vec![
        Account {
            access_key_id: "AKIDALICE".into(),
            secret_access_key: "alice-secret".into(),
            tenant: "alice".into(),
        },
        Account {
            access_key_id: "AKIDBOB".into(),
            secret_access_key: "bob-secret".into(),
            tenant: "bob".into(),
        },
    ];
    let path = dir.join("accounts.json");
    std::fs::write(&path, serde_json::to_vec(&accounts).unwrap()).unwrap();
    (path, AccountList::new(accounts).unwrap())
}

fn aws4(list: &AccountList, i: usize) -> ClientAuth {
    ClientAuth::Aws4 {
        credentials: list.accounts()[i].credentials(),
        region: "us-east-1".into(),
    }
}

#[test]
fn aws4_requests_are_scoped_to_their_tenant() {
    let dir = tempfile::tempdir().unwrap();
    let (accounts, list) = write_accounts(dir.path());
    let i = common::instance(dir.path(), |c| {
        c.auth_mode = AuthMode::Aws4;
        c.accounts_file = Some(accounts);
    });
    let (alice, bob) = (aws4(&list, 0), aws4(&list, 1));

    assert_eq!(invoke(&i.url(), "fib", json!({"n": 6}), &ClientAuth::None).status, 403);
    let forged = ClientAuth::Aws4 {
        credentials: snafu_core::auth::Credentials {
            access_key_id: "AKIDALICE".into(),
            secret_access_key: "wrong".into(),
        },
        region: "us-east-1".into(),
    };
    assert_eq!(invoke(&i.url(), "fib", json!({"n": 6}), &forged).status, 403);
    // samples are shared by every tenant
    assert_eq!(invoke(&i.url(), "fib", json!({"n": 6}), &alice).json().unwrap(), json!(8));

    let code = base64::engine::general_purpose::STANDARD.encode("export counter\n");
    let create = json!({"FunctionName": "mine", "Handler": "counter.counter", "Code": code});
    let base = format!("{}/2015-03-31/functions", i.url());
    assert_eq!(send("POST", &base, create.to_string().as_bytes(), &alice).status, 201);
    assert_eq!(invoke(&i.url(), "mine", json!({}), &alice).json().unwrap(), json!(1));
    assert_eq!(invoke(&i.url(), "mine", json!({}), &bob).status, 404);
    // bob may deploy his own function under the same name
    assert_eq!(send("POST", &base, create.to_string().as_bytes(), &bob).status, 201);
    assert_eq!(invoke(&i.url(), "mine", json!({}), &bob).json().unwrap(), json!(1));
    assert_eq!(invoke(&i.url(), "mine", json!({}), &alice).json().unwrap(), json!(2));
}

#[test]
fn shared_key_accounts_mode() {
    let dir = tempfile::tempdir().unwrap();
    let (accounts, _) = write_accounts(dir.path());
    let i = common::instance(dir.path(), |c| {
        c.auth_mode = AuthMode::Accounts;
        c.accounts_file = Some(accounts);
    });
    let ok = ClientAuth::SharedKey("bob-secret".into());
    assert_eq!(invoke(&i.url(), "echo", json!(1), &ok).json().unwrap(), json!(1));
    assert_eq!(invoke(&i.url(), "echo", json!(1), &ClientAuth::SharedKey("nope".into())).status, 403);
    assert_eq!(invoke(&i.url(), "echo", json!(1), &ClientAuth::None).status, 403);
}

#[test]
fn per_tenant_spawn_starts_one_child_per_tenant() {
    let dir = tempfile::tempdir().unwrap();
    let (accounts, list) = write_accounts(dir.path());
    let i = common::instance(dir.path(), |c| {
        c.auth_mode = AuthMode::Aws4;
        c.accounts_file = Some(accounts);
        c.per_tenant_spawn = true;
    });
    let (alice, bob) = (aws4(&list, 0), aws4(&list, 1));
    for _ in 0..2 {
        assert_eq!(invoke(&i.url(), "fib", json!({"n": 7}), &alice).json().unwrap(), json!(13));
        assert_eq!(invoke(&i.url(), "counter", json!({}), &bob).status, 200);
    }
    let spawner = i.plane().tenants().expect("per-tenant routing");
    assert_eq!(spawner.spawn_count(), 2);
    assert!(spawner.is_running("alice") && spawner.is_running("bob"));
    assert_ne!(spawner.pid("alice"), spawner.pid("bob"));
    // counter state lives in bob's own instance
    assert_eq!(invoke(&i.url(), "counter", json!({}), &bob).json().unwrap(), json!(3));
    assert_eq!(stats(&i)["forwarded"], json!(5));
}

#[test]
fn hot_deploy_adds_and_removes_functions() {
    let dir = tempfile::tempdir().unwrap();
    let i = common::instance(dir.path(), |_| {});
    let unit = dir.path().join("functions/dropped");
    std::fs::create_dir_all(&unit).unwrap();
    std::fs::write(unit.join("echo.fn"), "export echo\n").unwrap();
    std::fs::write(
        unit.join("config.json"),
        r#"{"FunctionName": "dropped", "Handler": "echo.echo"}"#,
    )
    .unwrap();

    let wait_for = |status: u16| {
        let start = Instant::now();
        loop {
            let r = invoke(&i.url(), "dropped", json!({"k": 1}), &ClientAuth::None);
            if r.status == status {
                return (r, start.elapsed());
            }
            assert!(start.elapsed() < Duration::from_secs(5), "still {} after 5 s", r.status);
            std::thread::sleep(Duration::from_millis(50));
        }
    };
    let (r, took) = wait_for(200);
    assert_eq!(r.json().unwrap(), json!({"k": 1}));
    assert!(took < Duration::from_secs(2), "deploy took {took:?}");

    std::fs::remove_dir_all(&unit).unwrap();
    wait_for(404);
}

#[test]
fn stats_report_connections_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.csv");
    let i = common::instance(dir.path(), |c| c.log_file = Some(log.clone()));
    invoke(&i.url(), "fib", json!({"n": 5}), &ClientAuth::None);
    let s = stats(&i);
    assert_eq!(s["executed"], json!(9));
    assert_eq!(s["log"]["written"], json!(9));
    assert_eq!(s["executor"], json!("IP+L"));
    assert!(s["connections"]["accepted"].as_u64().unwrap() >= 1);
    assert_eq!(common::csv_column(&log, "function").len(), 9);
}
