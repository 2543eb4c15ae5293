mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::biopsy_path;

fn glime(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glime"))
        .args(args)
        .output()
        .expect("run glime")
}

fn explain(out: &Path, extra: &[&str]) -> Output {
    let data = biopsy_path();
    let mut args = vec![
        "explain",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    glime(&args)
}

fn stderr_lines(o: &Output) -> Vec<String> {
    String::from_utf8_lossy(&o.stderr)
        .lines()
        .map(str::to_string)
        .collect()
}

fn assert_single_error(o: &Output, code: i32, category: &str) {
    assert_eq!(o.status.code(), Some(code), "{}", String::from_utf8_lossy(&o.stderr));
    let lines = stderr_lines(o);
    assert_eq!(lines.len(), 1, "{lines:?}");
    assert!(lines[0].starts_with(&format!("error: {category}: ")), "{lines:?}");
}

#[test]
fn explain_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = explain(dir.path(), &["--instance", "0", "--formats", "dot,graphml,json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("rank"));
    assert!(stdout.contains("path: O1"));
    for f in [
        "explanation_0_0.json",
        "adjacency_0_0.csv",
        "graph_0_0.dot",
        "graph_0_0.graphml",
        "graph_0_0.json",
        "ebic_0_0.jsonl",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let adj = std::fs::read_to_string(dir.path().join("adjacency_0_0.csv")).unwrap();
    let rows: Vec<&str> = adj.lines().collect();
    assert_eq!(rows.len(), 11);
    assert!(rows.iter().all(|r| r.split(',').count() == 11));
    assert_eq!(rows[0], ",V1,V2,V3,V4,V5,V6,V7,V8,V9,O1");
    let trace = std::fs::read_to_string(dir.path().join("ebic_0_0.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 100);
}

#[test]
fn same_config_gives_identical_json() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--instance", "3", "--seed", "17", "--m", "1500"];
    assert!(explain(a.path(), &args).status.success());
    assert!(explain(b.path(), &args).status.success());
    let read = |d: &Path| std::fs::read(d.join("explanation_3_0.json")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn bad_target_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = explain(dir.path(), &["--target", "no_such_column"]);
    assert_single_error(&o, 2, "config");
}

#[test]
fn invalid_flags_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_single_error(&explain(dir.path(), &["--gamma", "0.9"]), 2, "config");
    assert_single_error(&explain(dir.path(), &["--bogus-flag"]), 2, "config");
    assert_single_error(&explain(dir.path(), &["--instance", "100000"]), 2, "config");
    assert_single_error(&explain(dir.path(), &["--formats", "png"]), 2, "config");
    let o = glime(&["explain", "--data", "/nonexistent.csv"]);
    assert_single_error(&o, 2, "config");
}

#[test]
fn single_run_stability_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = biopsy_path();
    let o = glime(&[
        "stability",
        "--data",
        data.to_str().unwrap(),
        "--runs",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_single_error(&o, 2, "config");
}

#[test]
fn stability_summary_matches_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = biopsy_path();
    let o = glime(&[
        "stability",
        "--data",
        data.to_str().unwrap(),
        "--observations",
        "0,4",
        "--runs",
        "3",
        "--m",
        "600",
        "--grid-size",
        "30",
        "--formats",
        "dot",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "observation,glime_mean_tau,lime_mean_tau,difference,winner");
    assert_eq!(lines.len(), 3);
    for (line, obs) in lines[1..].iter().zip(["0", "4"]) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[0], obs);
        for (col, method) in [(1usize, "glime"), (2, "lime")] {
            let report: serde_json::Value = serde_json::from_str(
                &std::fs::read_to_string(dir.path().join(format!("stability_{obs}_{method}.json")))
                    .unwrap(),
            )
            .unwrap();
            let mean = report["mean_tau"].as_f64().unwrap();
            let got: f64 = cols[col].parse().unwrap();
            assert!((got - mean).abs() < 1e-6);
            assert_eq!(report["runs"], 3);
        }
        let tau = std::fs::read_to_string(dir.path().join(format!("stability_{obs}_glime.csv"))).unwrap();
        assert_eq!(tau.lines().next().unwrap(), format!(",{obs}A,{obs}B,{obs}C"));
        for run in 0..3 {
            assert!(dir.path().join(format!("explanation_{obs}_{run}.json")).exists());
            assert!(dir.path().join(format!("graph_{obs}_{run}.dot")).exists());
        }
    }
}

#[test]
fn random_observation_selection() {
    let dir = tempfile::tempdir().unwrap();
    let data = biopsy_path();
    let o = glime(&[
        "stability",
        "--data",
        data.to_str().unwrap(),
        "--random",
        "2",
        "--select-seed",
        "5",
        "--runs",
        "2",
        "--m",
        "300",
        "--grid-size",
        "20",
        "--formats",
        "json",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"data": {:?}, "m": 400, "seed": 3, "kernel_width": "auto", "grid_size": 25, "formats": ["dot"]}}"#,
            biopsy_path().to_str().unwrap()
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = glime(&[
        "explain",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "9",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("explanation_0_0.json")).unwrap())
            .unwrap();
    assert_eq!(doc["metadata"]["m"], 400);
    assert_eq!(doc["metadata"]["seed"], 9);
    assert!(out.join("graph_0_0.dot").exists());
    assert!(!out.join("graph_0_0.graphml").exists());

    std::fs::write(&cfg, r#"{"unknown_field": 1}"#).unwrap();
    let o = glime(&["explain", "--config", cfg.to_str().unwrap()]);
    assert_single_error(&o, 2, "config");
}

#[test]
fn export_subcommand_reads_saved_json() {
    let dir = tempfile::tempdir().unwrap();
    assert!(explain(dir.path(), &["--m", "800", "--formats", "json"]).status.success());
    let input = dir.path().join("explanation_0_0.json");
    let output = dir.path().join("re.dot");
    let o = glime(&[
        "export",
        "--input",
        input.to_str().unwrap(),
        "--format",
        "dot",
        "--viz-threshold",
        "0.2",
        "--output",
        output.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dot = std::fs::read_to_string(&output).unwrap();
    assert!(graphviz_rust::parse(&dot).is_ok());
    assert!(dot.contains("viz_threshold=\"0.2\""));

    std::fs::write(&input, "{not json").unwrap();
    let o = glime(&[
        "export",
        "--input",
        input.to_str().unwrap(),
        "--format",
        "dot",
        "--output",
        output.to_str().unwrap(),
    ]);
    assert_eq!(stderr_lines(&o).len(), 1);
    assert!(!o.status.success());
}

#[test]
fn external_predictor_through_cli() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("const.py");
    std::fs::write(
        &script,
        "import sys\nsys.stdin.readline()\nprint('READY 9', flush=True)\n\
         while True:\n    l = sys.stdin.readline().strip()\n    if l in ('BYE', ''):\n        break\n\
         \x20   m = int(l.split()[1])\n    [sys.stdin.readline() for _ in range(m)]\n\
         \x20   sys.stdout.write('0.25\\n' * m)\n    sys.stdout.flush()\n",
    )
    .unwrap();
    let cmd = format!("python3 {}", script.display());
    let out = dir.path().join("out");
    let o = explain(&out, &["--predictor-cmd", &cmd, "--m", "300", "--grid-size", "10"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("explanation_0_0.json")).unwrap())
            .unwrap();
    // A constant black box has no edge to the output.
    assert_eq!(doc["ranking"].as_array().unwrap().len(), 0);
    assert_eq!(doc["metadata"]["instance_score"], 0.25);

    let o = explain(&out, &[
            "--predictor-cmd",
            "python3 -c 'import sys; sys.stdin.readline(); print(\"READY 4\", flush=True); sys.stdin.read()'",
        ]);
    assert_single_error(&o, 2, "config");
}
