use std::path::Path;
use std::process::{Command, Output};

fn troop_net(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_troop-net")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SCENARIO: &str = r#"{
  "animals": 4,
  "duration_s": 900,
  "seed": 7,
  "noise_sigma": 0.02,
  "grooming": [{"a": 1, "b": 2, "t_start_s": 100, "duration_s": 300}],
  "displacements": [
    {"mover": 3, "target": 4, "t_request_s": 200},
    {"mover": 3, "target": 4, "t_request_s": 500}
  ]
}"#;

fn simulate_into(dir: &Path, seed: &str) -> Output {
    let sc = dir.join("scenario.json");
    std::fs::write(&sc, SCENARIO).unwrap();
    troop_net(&["simulate", "--scenario", s(&sc), "--seed", seed, "--out", s(dir)])
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (d, seed) in [(&a, "42"), (&b, "42"), (&c, "43")] {
        let o = simulate_into(d.path(), seed);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for name in ["readings.csv", "collars.csv", "ground_truth.jsonl"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(name)).unwrap(), "{name}");
        if name == "readings.csv" {
            assert_ne!(x, std::fs::read(c.path().join(name)).unwrap());
        }
    }
}

#[test]
fn missing_and_invalid_scenarios_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = troop_net(&["simulate", "--scenario", s(&missing), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("scenario file not found"), "{}", stderr(&o));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"animals": 3, "noise_sigma": -1}"#).unwrap();
    let o = troop_net(&["simulate", "--scenario", s(&bad), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("noise_sigma"), "{}", stderr(&o));
}

#[test]
fn analyze_then_rerun_from_resolved_config() {
    let data = tempfile::tempdir().unwrap();
    assert!(simulate_into(data.path(), "5").status.success());
    let out1 = data.path().join("run1");
    let o = troop_net(&[
        "analyze",
        "--readings",
        s(&data.path().join("readings.csv")),
        "--collars",
        s(&data.path().join("collars.csv")),
        "--out",
        s(&out1),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["animals"], 4);

    let events = std::fs::read_to_string(out1.join("events.jsonl")).unwrap();
    assert!(events.lines().any(|l| l.contains("\"grooming\"")), "{events}");
    let dot = std::fs::read_to_string(out1.join("hierarchy.dot")).unwrap();
    assert!(dot.contains("4 -> 3;"), "{dot}");

    let out2 = data.path().join("run2");
    let o = troop_net(&["analyze", "--config", s(&out1.join("config.resolved")), "--out", s(&out2)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let strip = |v: Vec<(String, Vec<u8>)>| v.into_iter().filter(|(n, _)| n != "config.resolved").collect::<Vec<_>>();
    assert_eq!(strip(read_dir_sorted(&out1)), strip(read_dir_sorted(&out2)));

    let o = troop_net(&["report", "--out", s(&out1)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("animals: 4"), "{text}");
    assert!(text.contains("rank order:"), "{text}");
}

#[test]
fn analyze_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let readings = dir.path().join("readings.csv");
    let collars = dir.path().join("collars.csv");
    std::fs::write(&readings, "").unwrap();
    std::fs::write(&collars, "T01,1\nT02,2\n").unwrap();
    let out = dir.path().join("out");
    let o = troop_net(&["analyze", "--readings", s(&readings), "--collars", s(&collars), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"v_stat": 0.05, "no_such_key": 1}"#).unwrap();
    let o = troop_net(&["analyze", "--config", s(&cfg), "--readings", s(&readings), "--collars", s(&collars)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_key"), "{}", stderr(&o));

    std::fs::write(&cfg, r#"{"dv_lo": 0.5, "dv_hi": -0.5}"#).unwrap();
    let o = troop_net(&["analyze", "--config", s(&cfg), "--readings", s(&readings), "--collars", s(&collars)]);
    assert_eq!(o.status.code(), Some(2));

    let o = troop_net(&["analyze", "--readings", s(&dir.path().join("missing.csv")), "--collars", s(&collars)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn export_graph_from_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let dot = dir.path().join("g.dot");

    let h = dir.path().join("h.csv");
    std::fs::write(&h, "1,2,3,4\n0,0,0,0\n0,0,0,0\n0,0,0,0\n0,0,1,0\n").unwrap();
    let o = troop_net(&["export-graph", "--matrix", s(&h), "--kind", "hierarchy", "--out", s(&dot)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&dot).unwrap();
    assert!(text.starts_with("digraph"));
    assert!(text.contains("4 -> 3;"));
    assert_eq!(text.matches("->").count(), 1);

    let a = dir.path().join("a.csv");
    std::fs::write(&a, "1,2,3\n0,90,0\n90,0,0\n0,0,0\n").unwrap();
    let o = troop_net(&["export-graph", "--matrix", s(&a), "--kind", "affiliation", "--out", s(&dot)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&dot).unwrap();
    assert!(text.contains("1 -- 2 [weight=90];"), "{text}");
    assert!(text.contains("  3;"), "{text}");
    assert_eq!(text.matches("--").count(), 1);

    let o = troop_net(&[
        "export-graph", "--matrix", s(&a), "--kind", "affiliation", "--min-weight", "100", "--out", s(&dot),
    ]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(&dot).unwrap().matches("--").count(), 0);

    std::fs::write(&a, "1,2\n0,5\n4,0\n").unwrap();
    let o = troop_net(&["export-graph", "--matrix", s(&a), "--kind", "affiliation", "--out", s(&dot)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("symmetric"), "{}", stderr(&o));
}

#[test]
fn export_heatmap_writes_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("h.csv");
    let pgm = dir.path().join("h.pgm");
    std::fs::write(&csv, "0,1,2\n3,0,7\n").unwrap();
    let o = troop_net(&["export-heatmap", "--heatmap", s(&csv), "--out", s(&pgm)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&pgm).unwrap(), "P2\n3 2\n7\n0 1 2\n3 0 7\n");

    std::fs::write(&csv, "0,0\n0,0\n").unwrap();
    assert!(troop_net(&["export-heatmap", "--heatmap", s(&csv), "--out", s(&pgm)]).status.success());
    assert!(std::fs::read_to_string(&pgm).unwrap().starts_with("P2\n2 2\n1\n"));

    std::fs::write(&csv, "0,1\n2\n").unwrap();
    let o = troop_net(&["export-heatmap", "--heatmap", s(&csv), "--out", s(&pgm)]);
    assert_eq!(o.status.code(), Some(2));
}
