use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use serde_json::Value;

use sls::io::{ingest, StreamFormat, StreamSource};
use sls::monitor::monitor_stream;
use sls::pilot::{build_pilot_with, PilotOptions};
use sls::report::{validate_record, BlockRecord, Payload};
use sls::sampler::EventKind;
use sls::timeseries::simulate_ar;
use sls::{block_ls, ArProcessSpec, Sampler, SamplerConfig, StartRule, VarianceConvention};

fn sls(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sls"))
        .args(args)
        .env_remove("SLS_SEED")
        .output()
        .expect("run sls")
}

fn ok(args: &[&str]) -> Output {
    let out = sls(args);
    assert!(
        out.status.success(),
        "sls {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn records(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn payload_json(p: Payload) -> Value {
    let mut v = serde_json::to_value(p).unwrap();
    v.as_object_mut().unwrap().remove("kind");
    v
}

fn strip_envelope(mut v: Value) -> Value {
    let o = v.as_object_mut().unwrap();
    for k in ["schema_version", "config_hash", "seed", "kind"] {
        o.remove(k);
    }
    v
}

fn error_line(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {text}");
    serde_json::from_str(lines[0]).unwrap()
}

fn simulate(dir: &Path, name: &str, beta: &str, n: usize, seed: u64) -> std::path::PathBuf {
    let path = dir.join(name);
    ok(&[
        "simulate",
        "--beta",
        beta,
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        path.to_str().unwrap(),
    ]);
    path
}

#[test]
fn simulate_writes_the_library_stream() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["s.csv", "s.f64"] {
        let path = simulate(dir.path(), name, "0.6,-0.2", 3000, 7);
        let (samples, rejected) =
            ingest(&StreamSource::file(&path, StreamFormat::from_path(&path))).unwrap();
        assert_eq!(rejected, 0);
        let lib = simulate_ar(&ArProcessSpec::gaussian(vec![0.6, -0.2], 1.0, 7), 3000).unwrap();
        let got: Vec<f64> = samples.iter().map(|s| s.value).collect();
        assert_eq!(got, lib);
        assert!(samples.iter().enumerate().all(|(i, s)| s.index == i as u64));
    }
    let a = fs::read(simulate(dir.path(), "a.csv", "0.99", 5000, 3)).unwrap();
    let b = fs::read(simulate(dir.path(), "b.csv", "0.99", 5000, 3)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sample_equals_library_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulate(dir.path(), "x.csv", "0.5", 40_000, 11);
    let out = dir.path().join("blocks.jsonl");
    ok(&[
        "sample",
        "--in",
        input.to_str().unwrap(),
        "--n0",
        "500",
        "--order",
        "1",
        "--c",
        "300",
        "--seed",
        "3",
        "--leverage-scale",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    let recs = records(&out);
    for r in &recs {
        validate_record(r).unwrap();
        assert_eq!(r["seed"], 3);
    }

    let (samples, _) = ingest(&StreamSource::file(&input, StreamFormat::Csv)).unwrap();
    let values: Vec<f64> = samples.iter().map(|s| s.value).collect();
    let pilot = Arc::new(build_pilot_with(&values[..500], &PilotOptions::fixed(1)).unwrap());
    let cfg = SamplerConfig::new(300.0, 3).with_leverage_scale(5.0);
    let mut sampler = Sampler::new(pilot.clone(), cfg, StartRule::Leverage).unwrap();
    let mut want = vec![payload_json(Payload::Pilot((*pilot).clone()))];
    for x in &samples {
        if x.index < 500 {
            sampler.prime(*x).unwrap();
        } else if let Some(EventKind::BlockCompleted(b)) = sampler.step(*x).unwrap().map(|e| e.kind)
        {
            let est = block_ls(&b, VarianceConvention::default());
            want.push(payload_json(Payload::Block(BlockRecord::new(&b, &est))));
        }
    }
    assert!(want.len() > 10);
    assert_eq!(recs[0]["kind"], "pilot");
    assert!(recs[1..].iter().all(|r| r["kind"] == "block"));
    let got: Vec<Value> = recs.into_iter().map(strip_envelope).collect();
    assert_eq!(got, want);
}

#[test]
fn sample_accepts_a_saved_pilot() {
    let dir = tempfile::tempdir().unwrap();
    let train = simulate(dir.path(), "train.f64", "0.5", 2000, 1);
    let live = simulate(dir.path(), "live.f64", "0.5", 20_000, 2);
    let pilot = dir.path().join("pilot.jsonl");
    ok(&[
        "pilot",
        "--in",
        train.to_str().unwrap(),
        "--n0",
        "2000",
        "--out",
        pilot.to_str().unwrap(),
    ]);
    let recs = records(&pilot);
    assert_eq!(recs.len(), 1);
    validate_record(&recs[0]).unwrap();
    assert_eq!(recs[0]["order"], 1);

    let out = dir.path().join("blocks.jsonl");
    for method in ["leverage", "uniform"] {
        ok(&[
            "sample",
            "--in",
            live.to_str().unwrap(),
            "--pilot",
            pilot.to_str().unwrap(),
            "--c",
            "200",
            "--method",
            method,
            "--out",
            out.to_str().unwrap(),
        ]);
        let recs = records(&out);
        assert!(!recs.is_empty());
        assert!(recs
            .iter()
            .all(|r| r["kind"] == "block" && r["method"] == method));
        recs.iter().for_each(|r| validate_record(r).unwrap());
    }
}

#[test]
fn monitor_equals_library_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulate(dir.path(), "x.csv", "0.3", 30_000, 5);
    let out = dir.path().join("m.jsonl");
    let args = [
        "monitor",
        "--in",
        input.to_str().unwrap(),
        "--n0",
        "2000",
        "--order",
        "1",
        "--c",
        "150",
        "--leverage-scale",
        "20",
        "--trace",
        "--out",
        out.to_str().unwrap(),
    ];
    ok(&args);
    let recs = records(&out);
    recs.iter().for_each(|r| validate_record(r).unwrap());
    let traces = recs
        .iter()
        .filter(|r| r["kind"] == "leverage_point")
        .count();
    assert_eq!(traces, 28_000);

    let (samples, _) = ingest(&StreamSource::file(&input, StreamFormat::Csv)).unwrap();
    let values: Vec<f64> = samples.iter().map(|s| s.value).collect();
    let pilot = Arc::new(build_pilot_with(&values[..2000], &PilotOptions::fixed(1)).unwrap());
    let cfg = SamplerConfig::new(150.0, 0).with_leverage_scale(20.0);
    let want: Vec<Value> = monitor_stream(samples, pilot, cfg, 1e-3)
        .unwrap()
        .into_iter()
        .map(|v| payload_json(Payload::Verdict(v)))
        .collect();
    let got: Vec<Value> = recs
        .into_iter()
        .filter(|r| r["kind"] == "verdict")
        .map(strip_envelope)
        .collect();
    assert!(want.len() > 20);
    assert_eq!(got, want);
}

#[test]
fn non_finite_values_are_skipped_and_counted() {
    let dir = tempfile::tempdir().unwrap();
    let lib = simulate_ar(&ArProcessSpec::gaussian(vec![0.5], 1.0, 9), 300).unwrap();
    let mut text = String::from("value\n");
    for (i, v) in lib.iter().enumerate() {
        text.push_str(&format!("{v:?}\n"));
        if i == 100 {
            text.push_str("NaN\ninf\n");
        }
    }
    let input = dir.path().join("gaps.csv");
    fs::write(&input, text).unwrap();
    let out = ok(&[
        "pilot",
        "--in",
        input.to_str().unwrap(),
        "--n0",
        "300",
        "--order",
        "1",
    ]);
    let summary: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(summary["summary"]["rejected_non_finite"], 2);
    assert_eq!(summary["summary"]["samples"], 300);
    let rec: Value = serde_json::from_slice(&out.stdout).unwrap();
    let want = build_pilot_with(&lib, &PilotOptions::fixed(1)).unwrap();
    assert_eq!(strip_envelope(rec), payload_json(Payload::Pilot(want)));
}

#[test]
fn errors_are_single_line_json_with_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulate(dir.path(), "x.csv", "0.5", 2000, 1);
    let input = input.to_str().unwrap();

    let out = sls(&["sample", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"]["kind"], "config");

    let out = sls(&["sample", "--in", input, "--c", "100"]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_line(&out);
    assert_eq!(e["error"]["exit_code"], 2);
    assert!(e["error"]["message"].as_str().unwrap().contains("pilot"));

    let out = sls(&[
        "sample",
        "--in",
        "/nonexistent/x.csv",
        "--n0",
        "100",
        "--c",
        "100",
    ]);
    assert_eq!(out.status.code(), Some(3));
    error_line(&out);

    let out = sls(&["sample", "--in", input, "--n0", "5000", "--c", "100"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["error"]["kind"], "insufficient_data");

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "value\n1.0\nabc\n").unwrap();
    let out = sls(&["pilot", "--in", bad.to_str().unwrap(), "--n0", "2"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(error_line(&out)["error"]["message"]
        .as_str()
        .unwrap()
        .contains("line"));

    let out_path = dir.path().join("abort.jsonl");
    let out = sls(&[
        "sample",
        "--in",
        input,
        "--n0",
        "200",
        "--c",
        "1e9",
        "--leverage-scale",
        "1e6",
        "--max-block-len",
        "10",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_line(&out)["error"]["kind"], "safeguard_abort");
    // records emitted before the abort are flushed
    assert_eq!(records(&out_path)[0]["kind"], "pilot");

    let out = sls(&["quantile", "--dist", "chi2", "--p", "0.95"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn quantile_prints_full_precision() {
    let out = ok(&["quantile", "--dist", "chi2", "--dof", "1", "--p", "0.95"]);
    let q: f64 = String::from_utf8(out.stdout)
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!((q - 3.841458820694124).abs() < 1e-9);
    let out = ok(&["quantile", "--dist", "normal", "--p", "0.975"]);
    let z: f64 = String::from_utf8(out.stdout)
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!((z - 1.959963984540054).abs() < 1e-9);
}

#[test]
fn bench_writes_one_row_per_replicate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("grid.json");
    fs::write(
        &cfg,
        r#"{"cells":[{"beta":[-0.3],"c":500},{"beta":[0.5],"c":600}],
            "innovation":{"kind":"student_t","df":4,"scale":1},
            "n0":200,"n_rep":4,"seed_base":5}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    ok(&[
        "bench",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let csv = fs::read_to_string(out.join("records.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3 * 4);
    let recs = records(&out.join("records.jsonl"));
    assert_eq!(recs.len(), 24);
    recs.iter().for_each(|r| validate_record(r).unwrap());
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["cells"].as_array().unwrap().len(), 2);

    let again = dir.path().join("again");
    ok(&[
        "bench",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    for f in ["records.csv", "records.jsonl", "summary.json"] {
        assert_eq!(
            fs::read(out.join(f)).unwrap(),
            fs::read(again.join(f)).unwrap()
        );
    }
}
