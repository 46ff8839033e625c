use std::path::PathBuf;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relay-dof"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("relay-dof-cli-it-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

const RUN: [&str; 11] = [
    "simulate",
    "--scheme",
    "onehop-33",
    "--layers",
    "4",
    "--users",
    "3",
    "--rounds",
    "3",
    "--trials",
    "6",
];

#[test]
fn identical_runs_write_identical_bytes() {
    let a = scratch("a.json");
    let b = scratch("b.json");
    for out in [&a, &b] {
        let mut args = RUN.to_vec();
        args.extend(["--seed", "99", "--out", out.to_str().unwrap()]);
        assert!(bin(&args).status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn json_and_csv_agree() {
    let mut args = RUN.to_vec();
    args.extend(["--seed", "5"]);
    let json_out = bin(&[args.as_slice(), &["--format", "json"]].concat());
    let csv_out = bin(&[args.as_slice(), &["--format", "csv"]].concat());
    assert!(json_out.status.success() && csv_out.status.success());

    let doc: serde_json::Value = serde_json::from_slice(&json_out.stdout).unwrap();
    assert_eq!(doc["schema_version"], 1);
    let trials = doc["trials"].as_array().unwrap();
    let mut reader = csv::Reader::from_reader(csv_out.stdout.as_slice());
    let headers = reader.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), trials.len());
    for (row, trial) in rows.iter().zip(trials) {
        for (field, text) in headers.iter().zip(row.iter()) {
            let v = &trial[field];
            match v {
                serde_json::Value::String(s) => assert_eq!(s, text, "{field}"),
                serde_json::Value::Bool(b) => assert_eq!(b.to_string(), text, "{field}"),
                serde_json::Value::Number(n) => {
                    assert_eq!(n.as_f64().unwrap(), text.parse::<f64>().unwrap(), "{field}")
                }
                other => panic!("unexpected {field}: {other}"),
            }
        }
    }
}

#[test]
fn global_scheme_under_one_hop_feedback_fails() {
    let out = bin(&[
        "simulate",
        "--scheme",
        "global-k2",
        "--users",
        "2",
        "--feedback",
        "one-hop-range",
    ]);
    assert!(!out.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["error"]["kind"], "csit-access");
}

#[test]
fn two_user_run_from_config_file() {
    let cfg = scratch("k2.toml");
    std::fs::write(
        &cfg,
        "scheme = \"onehop-k2\"\nusers = 2\nlayers = 4\nrounds = 2\ntrials = 3\n",
    )
    .unwrap();
    let out = bin(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert!(out.status.success());
    let mut reader = csv::Reader::from_reader(out.stdout.as_slice());
    let slots: Vec<String> = reader
        .records()
        .map(|r| r.unwrap()[2].to_string())
        .collect();
    assert_eq!(slots, vec!["12"; 3]);
}

#[test]
fn bounds_table() {
    let out = bin(&["bounds", "--from", "2", "--to", "4"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("2,6/5,1.2,4/3,"));
    assert!(text.contains(",48/25,1.92,true"));
}

#[test]
fn verify_passes_and_catches_mutation() {
    let base = [
        "verify",
        "--scheme",
        "onehop-33",
        "--layers",
        "3",
        "--users",
        "3",
        "--rounds",
        "2",
        "--seed",
        "7",
    ];
    let ok = bin(&base);
    assert!(
        ok.status.success(),
        "{}",
        String::from_utf8_lossy(&ok.stdout)
    );
    let bad = bin(&[base.as_slice(), &["--mutate", "unformable-swap"]].concat());
    assert!(!bad.status.success());
    let table = String::from_utf8(bad.stdout).unwrap();
    assert!(table
        .lines()
        .any(|l| l.starts_with("formability") && l.contains("FAIL")));
}

#[test]
fn verify_noisy_run_at_high_power() {
    let out = bin(&[
        "verify",
        "--scheme",
        "onehop-33",
        "--rounds",
        "2",
        "--seed",
        "7",
        "--noise",
        "--power",
        "1e10",
        "--tolerance",
        "1e-2",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
}

#[test]
fn invalid_configuration_exits_with_error() {
    let out = bin(&["simulate", "--scheme", "onehop-33", "--users", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid configuration"));
}
