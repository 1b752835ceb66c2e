use std::process::Command;
use std::sync::Arc;
use std::time::Duration;

use fedlake_cli::node_server::{self, NodeState};
use fedlake_cli::remote::HttpNode;
use fedlake_core::synthcohort::{default_cohort_spec, generate};
use fedlake_core::{NodeClient, NodeError};

fn fedlake() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fedlake"))
}

#[test]
fn gen_cohort_writes_files_and_catalog_urls() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedlake()
        .args(["gen-cohort", "--base-port", "7100", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["rows"]["france"], 2000);
    for f in ["france.csv", "spain.mapping.json", "catalog.json", "manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let catalog = std::fs::read_to_string(dir.path().join("catalog.json")).unwrap();
    let store = fedlake_core::load_catalog(&catalog).unwrap();
    let urls: Vec<_> = store.mappings().values().map(|m| m.base_url.clone().unwrap()).collect();
    assert_eq!(urls, ["http://127.0.0.1:7100", "http://127.0.0.1:7101", "http://127.0.0.1:7102"]);
}

#[test]
fn exit_codes_separate_usage_from_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    // ports nobody listens on
    let gen = fedlake()
        .args(["gen-cohort", "--base-port", "9", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(gen.status.success());
    let catalog = dir.path().join("catalog.json");

    let bad_pattern = fedlake().args(["train", "--pattern", "nope", "--catalog"]).arg(&catalog).output().unwrap();
    assert_eq!(bad_pattern.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&bad_pattern.stderr).unwrap();
    assert_eq!(err["code"], "usage");

    let bad_query = fedlake().args(["query", "SELECT WHERE", "--catalog"]).arg(&catalog).output().unwrap();
    assert_eq!(bad_query.status.code(), Some(2));

    let unreachable = fedlake()
        .args(["query", "SELECT", "--round-timeout-ms", "2000", "--catalog"])
        .arg(&catalog)
        .output()
        .unwrap();
    assert_eq!(unreachable.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&unreachable.stderr).unwrap();
    assert_eq!(err["code"], "federation_unavailable");

    assert_eq!(fedlake().arg("frobnicate").output().unwrap().status.code(), Some(2));
}

#[test]
fn node_server_requires_the_federation_token() {
    let mut spec = default_cohort_spec();
    spec.nodes.truncate(1);
    spec.nodes[0].rows = 50;
    let node = generate(&spec).unwrap().data_nodes().unwrap().remove(0);
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let app = node_server::router(NodeState {
        node: Arc::new(node),
        token: Some("s3cret".into()),
    });
    rt.spawn(async move { axum::serve(listener, app).await });

    let good = HttpNode::new("france", &url, Some("s3cret".into()), Duration::from_secs(5));
    assert_eq!(good.metadata().unwrap().row_count, 50);
    let bad = HttpNode::new("france", &url, Some("wrong".into()), Duration::from_secs(5));
    match bad.metadata() {
        Err(NodeError::Remote { code, .. }) => assert_eq!(code, "unauthorized"),
        other => panic!("{other:?}"),
    }
    let none = HttpNode::new("france", &url, None, Duration::from_secs(5));
    assert!(none.metrics(fedlake_core::Pattern::AeRisk).is_err());
    rt.shutdown_background();
}
