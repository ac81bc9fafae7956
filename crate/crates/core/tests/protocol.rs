use std::io::{BufRead, BufReader, Cursor, Write};
use std::net::TcpListener;

use dermcascade::classifier::protocol::{run_conformance, serve, serve_tcp, Endpoint, ExternalClient};
use dermcascade::classifier::{Hyperparams, LabeledText};
use dermcascade::Error;
use serde_json::{json, Value};

/// A backend that answers unknown commands with `ok` and returns
/// unnormalized probabilities.
const SLOPPY_BACKEND: &str = r#"
import json, sys
models = {}
for line in sys.stdin:
    try:
        req = json.loads(line)
    except Exception:
        print(json.dumps({"id": None, "status": "error", "error": {"code": "parse", "message": "bad"}}), flush=True)
        continue
    cmd = req.get("cmd")
    payload = req.get("payload") or {}
    if cmd == "info":
        out = {"protocol_version": "1", "backend": "sloppy", "capabilities": ["info", "train", "predict", "shutdown"]}
    elif cmd == "train":
        labels = sorted({e["label"] for e in payload["examples"]})
        models["m"] = labels
        out = {"model_id": "m", "labels": labels}
    elif cmd == "predict":
        labels = models.get(payload.get("model_id"))
        if labels is None:
            print(json.dumps({"id": req["id"], "status": "error", "error": {"code": "not_found", "message": "no"}}), flush=True)
            continue
        out = {"labels": labels, "probs": [[0.9] * len(labels) for _ in payload["texts"]]}
    elif cmd == "shutdown":
        print(json.dumps({"id": req["id"], "status": "ok", "payload": {}}), flush=True)
        break
    else:
        out = {}
    print(json.dumps({"id": req["id"], "status": "ok", "payload": out}), flush=True)
"#;

fn exchange(requests: &str) -> Vec<Value> {
    let mut out = Vec::new();
    serve(Cursor::new(requests.as_bytes().to_vec()), &mut out).unwrap();
    out.split(|&b| b == b'\n')
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_slice(l).unwrap())
        .collect()
}

#[test]
fn server_answers_every_line_in_order() {
    let requests = concat!(
        r#"{"id":"a","cmd":"info","payload":{}}"#, "\n",
        r#"{"id":"b","cmd":"train","payload":{"examples":[{"text":"uno","label":"x"},{"text":"dos","label":"y"}]}}"#, "\n",
        r#"{"id":"c","cmd":"predict","payload":{"model_id":"m1","texts":["uno","tres"]}}"#, "\n",
        r#"{"id":"d","cmd":"predict","payload":{"model_id":"m9","texts":["uno"]}}"#, "\n",
        r#"{"id":"e","cmd":"shutdown","payload":{}}"#, "\n",
        r#"{"id":"f","cmd":"info","payload":{}}"#, "\n",
    );
    let responses = exchange(requests);
    assert_eq!(responses.len(), 5, "nothing is read after shutdown");
    let ids: Vec<&str> = responses.iter().map(|r| r["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["a", "b", "c", "d", "e"]);
    assert_eq!(responses[0]["payload"]["protocol_version"], "1");
    assert_eq!(responses[1]["payload"], json!({"model_id": "m1", "labels": ["x", "y"]}));
    for row in responses[2]["payload"]["probs"].as_array().unwrap() {
        let sum: f64 = row.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
    assert_eq!(responses[3]["error"]["code"], "not_found");
}

#[test]
fn parse_errors_report_a_byte_offset() {
    let responses = exchange("{\"id\": \"x\", oops}\n");
    assert_eq!(responses[0]["status"], "error");
    assert_eq!(responses[0]["error"]["code"], "parse");
    assert_eq!(responses[0]["error"]["offset"], 12);
    let responses = exchange("{\"id\":\"y\",\"payload\":{}}\n");
    assert_eq!(responses[0]["error"]["code"], "invalid");
    assert_eq!(responses[0]["id"], "y");
}

#[test]
fn loopback_passes_conformance() {
    let checks = run_conformance(&Endpoint::Loopback).unwrap();
    assert_eq!(checks.len(), 8);
    for c in &checks {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
}

#[test]
fn tcp_endpoint_passes_conformance() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let address = listener.local_addr().unwrap().to_string();
    std::thread::spawn(move || serve_tcp(listener));
    let endpoint: Endpoint = format!("tcp://{address}").parse().unwrap();
    let checks = run_conformance(&endpoint).unwrap();
    assert!(checks.iter().all(|c| c.passed), "{checks:?}");
}

#[test]
fn conformance_flags_a_sloppy_backend() {
    let endpoint = Endpoint::Stdio { command: vec!["python3".into(), "-c".into(), SLOPPY_BACKEND.into()] };
    let checks = run_conformance(&endpoint).unwrap();
    let passed = |name: &str| checks.iter().find(|c| c.name == name).unwrap().passed;
    assert!(passed("handshake"));
    assert!(passed("id_echo"));
    assert!(!passed("unknown_command"));
    assert!(!passed("normalized_probabilities"));
}

#[test]
fn client_rejects_unnormalized_predictions() {
    let endpoint = Endpoint::Stdio { command: vec!["python3".into(), "-c".into(), SLOPPY_BACKEND.into()] };
    let client = ExternalClient::connect(&endpoint).unwrap();
    let examples = [LabeledText::new("uno", "x"), LabeledText::new("dos", "y")];
    let (model_id, labels) = client.train(&examples, &Hyperparams::default()).unwrap();
    assert!(client.predict(&model_id, &["uno"], &labels).is_err());
}

#[test]
fn crashing_backend_reports_its_stderr() {
    let endpoint = Endpoint::Stdio {
        command: vec!["sh".into(), "-c".into(), "echo model weights missing >&2; exit 3".into()],
    };
    match ExternalClient::connect(&endpoint) {
        Err(err) => match err.root() {
            Error::Backend { diagnostics, .. } => {
                assert!(diagnostics.iter().any(|d| d.contains("model weights missing")), "{diagnostics:?}");
            }
            other => panic!("expected a backend error, got {other}"),
        },
        Ok(_) => panic!("connect to a crashing backend succeeded"),
    }
}

#[test]
fn wrong_protocol_version_is_refused() {
    let script = r#"
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    print(json.dumps({"id": req["id"], "status": "ok", "payload": {"protocol_version": "2"}}), flush=True)
"#;
    let endpoint = Endpoint::Stdio { command: vec!["python3".into(), "-c".into(), script.into()] };
    let err = ExternalClient::connect(&endpoint).unwrap_err();
    assert!(err.to_string().contains('2'), "{err}");
}

#[test]
fn endpoints_parse_and_display() {
    assert_eq!("loopback".parse::<Endpoint>().unwrap(), Endpoint::Loopback);
    assert_eq!(
        "tcp://127.0.0.1:9".parse::<Endpoint>().unwrap(),
        Endpoint::Tcp { address: "127.0.0.1:9".into() }
    );
    let stdio: Endpoint = "python -m adapter --port 3".parse().unwrap();
    assert_eq!(stdio.to_string(), "python -m adapter --port 3");
    assert!("".parse::<Endpoint>().is_err());
}

#[test]
fn oversized_lines_are_skipped_not_fatal() {
    let (client_reader, mut to_server) = std::io::pipe().unwrap();
    let (from_server, server_writer) = std::io::pipe().unwrap();
    let server = std::thread::spawn(move || serve(BufReader::new(client_reader), server_writer));
    let mut big = vec![b'x'; dermcascade::classifier::protocol::MAX_MESSAGE_BYTES + 10];
    big.push(b'\n');
    let writer = std::thread::spawn(move || {
        to_server.write_all(&big).unwrap();
        to_server.write_all(b"{\"id\":\"after\",\"cmd\":\"shutdown\",\"payload\":{}}\n").unwrap();
    });
    let mut lines = BufReader::new(from_server).lines();
    let first: Value = serde_json::from_str(&lines.next().unwrap().unwrap()).unwrap();
    assert_eq!(first["error"]["code"], "too_large");
    let second: Value = serde_json::from_str(&lines.next().unwrap().unwrap()).unwrap();
    assert_eq!(second["id"], "after");
    writer.join().unwrap();
    assert!(server.join().unwrap().unwrap());
}
