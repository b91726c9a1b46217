use std::io::{BufRead, Write};

use serde_json::Value;

use crate::execution::InvocationResult;

const USAGE: &str = "usage: call <function> [json-event] | list | quit";

/// What the loop needs from its host.
pub trait ReplBackend {
    fn call(&self, function: &str, event: Value) -> Result<InvocationResult, String>;
    fn list(&self) -> Vec<String>;
}

/// Reads commands until `quit` or end of input. Returns the exit code.
pub fn run_repl(backend: &dyn ReplBackend, input: impl BufRead, mut out: impl Write, prompt: bool) -> i32 {
    let mut lines = input.lines();
    loop {
        if prompt {
            let _ = write!(out, "snafu> ");
            let _ = out.flush();
        }
        let Some(Ok(line)) = lines.next() else {
            return 0;
        };
        let line = line.trim();
        let (cmd, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        match cmd {
            "" => {}
            "quit" | "exit" => return 0,
            "list" => {
                for name in backend.list() {
                    let _ = writeln!(out, "{name}");
                }
            }
            "call" => {
                let (name, event) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
                if name.is_empty() {
                    let _ = writeln!(out, "{USAGE}");
                    continue;
                }
                let event = event.trim();
                let event = if event.is_empty() {
                    Ok(Value::Object(Default::default()))
                } else {
                    serde_json::from_str(event)
                };
                let event = match event {
                    Ok(v) => v,
                    Err(e) => {
                        let _ = writeln!(out, "invalid event: {e}\n{USAGE}");
                        continue;
                    }
                };
                let _ = match backend.call(name, event) {
                    Ok(r) if r.is_ok() => writeln!(out, "{}", r.value.unwrap_or(Value::Null)),
                    Ok(r) => writeln!(out, "error ({}): {}", r.status.as_str(), r.message()),
                    Err(e) => writeln!(out, "error: {e}"),
                };
            }
            _ => {
                let _ = writeln!(out, "{USAGE}");
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    struct Fake;

    impl ReplBackend for Fake {
        fn call(&self, function: &str, event: Value) -> Result<InvocationResult, String> {
            match function {
                "helloworld" => Ok(InvocationResult::ok(json!("Hello, World!"), 0.0)),
                "echo" => Ok(InvocationResult::ok(event, 0.0)),
                _ => Err(format!("function not found: {function}")),
            }
        }
        fn list(&self) -> Vec<String> {
            vec!["echo".into(), "helloworld".into()]
        }
    }

    fn session(input: &str) -> (i32, String) {
        let mut out = Vec::new();
        let code = run_repl(&Fake, input.as_bytes(), &mut out, false);
        (code, String::from_utf8(out).unwrap())
    }

    #[test]
    fn commands() {
        let (code, out) = session("call helloworld {}\ncall echo {\"n\": 7}\nlist\nbogus\ncall echo {bad\nquit\ncall helloworld\n");
        assert_eq!(code, 0);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "\"Hello, World!\"");
        assert_eq!(lines[1], "{\"n\":7}");
        assert_eq!(&lines[2..4], ["echo", "helloworld"]);
        assert_eq!(lines[4], USAGE);
        assert!(lines[5].starts_with("invalid event"));
        // nothing runs after quit
        assert_eq!(lines.len(), 7);
    }

    #[test]
    fn end_of_input_exits_cleanly() {
        assert_eq!(session("call nosuch\n").0, 0);
        assert!(session("call nosuch\n").1.contains("not found"));
    }
}
