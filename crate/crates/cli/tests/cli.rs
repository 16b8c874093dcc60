use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fairroute"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Two nodes joined both ways, one route over the first link, one community.
const TINY_NET: &str = r#"{
  "format_version": 1,
  "nodes": {"count": 2},
  "links": [[1, 2], [2, 1]],
  "routes": [[1]],
  "communities": 1,
  "route_communities": [[1]]
}"#;

const TINY_SC: &str = r#"{
  "format_version": 1,
  "scenarios": [{"node_caps": [10, 10], "link_caps": [10, 10], "prob": 1.0}]
}"#;

/// Second scenario closes the only corridor the route uses.
const CLOSED_SC: &str = r#"{
  "format_version": 1,
  "scenarios": [
    {"node_caps": [10, 10], "link_caps": [10, 10], "prob": 0.5},
    {"node_caps": [10, 10], "link_caps": [0, 10], "prob": 0.5}
  ]
}"#;

/// Two disjoint copies of the same corridor, one per community.
const TWIN_NET: &str = r#"{
  "format_version": 1,
  "nodes": {"count": 4},
  "links": [[1, 2], [2, 1], [3, 4], [4, 3]],
  "routes": [[1], [3]],
  "communities": 2,
  "route_communities": [[1], [2]]
}"#;

const TWIN_SC: &str = r#"{
  "format_version": 1,
  "scenarios": [{"node_caps": [30, 30, 30, 30], "link_caps": [12, 12, 12, 12], "prob": 1.0}]
}"#;

struct Case {
    dir: TempDir,
    net: PathBuf,
    sc: PathBuf,
}

fn case(net: &str, sc: &str) -> Case {
    let dir = tempfile::tempdir().unwrap();
    let net = write(dir.path(), "network.json", net);
    let sc = write(dir.path(), "scenarios.json", sc);
    Case { dir, net, sc }
}

impl Case {
    fn args<'a>(&'a self, cmd: &'a str, out: &'a Path) -> Vec<&'a str> {
        vec![
            cmd,
            "--network",
            self.net.to_str().unwrap(),
            "--scenarios",
            self.sc.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap()).collect()
}

#[test]
fn tiny_case_serves_the_corridor_capacity() {
    let c = case(TINY_NET, TINY_SC);
    let out = c.out("run");
    let mut args = c.args("solve", &out);
    args.extend(["--epsilon", "0", "--gap-tol", "1e-9"]);
    let res = run(&args);
    assert!(res.status.success(), "{}", stderr(&res));
    let rows = csv_rows(&out.join("communities.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][1], "1");
    let x: f64 = rows[0][2].parse().unwrap();
    assert!((x - 10.0).abs() < 1e-6, "allocation {x}");
    let links = csv_rows(&out.join("links.csv"));
    assert_eq!(links.len(), 2);
    for name in ["solution.json", "report.json", "run.json"] {
        let v: serde_json::Value = serde_json::from_slice(&fs::read(out.join(name)).unwrap()).unwrap();
        assert_eq!(v["format_version"], 1, "{name}");
    }
}

#[test]
fn malformed_network_names_the_field() {
    let bad = TINY_NET.replace("\"communities\": 1", "\"communities\": \"one\"");
    let c = case(&bad, TINY_SC);
    let out = c.out("run");
    let res = run(&c.args("solve", &out));
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("communities"), "{}", stderr(&res));
}

#[test]
fn hard_closed_corridor_with_zero_budget_is_infeasible() {
    let c = case(TINY_NET, CLOSED_SC);
    let out = c.out("run");
    let mut args = c.args("solve", &out);
    args.extend(["--epsilon", "0"]);
    let res = run(&args);
    assert_eq!(res.status.code(), Some(2), "{}", stderr(&res));
    assert!(stderr(&res).contains("zero-capacity"), "{}", stderr(&res));
}

#[test]
fn generated_case_validates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("case");
    let res = run(&["gen", "--seed", "7", "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", stderr(&res));
    let net = out.join("network.json");
    let sc = out.join("scenarios.json");
    let res = run(&["validate", "--network", net.to_str().unwrap(), "--scenarios", sc.to_str().unwrap()]);
    assert!(res.status.success(), "{}", stderr(&res));
    let text = String::from_utf8_lossy(&res.stdout);
    assert!(text.contains("17 nodes, 72 links, 200 routes, 46 communities"), "{text}");
    assert!(text.contains("3 scenarios"), "{text}");
}

#[test]
fn truncated_file_reports_parse_location() {
    let c = case(&TINY_NET[..TINY_NET.len() / 2], TINY_SC);
    let res = run(&["validate", "--network", c.net.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    let err = stderr(&res);
    let loc = format!("{}:", c.net.display());
    assert!(err.contains(&loc), "{err}");
    let tail = &err[err.find(&loc).unwrap() + loc.len()..];
    let line: String = tail.chars().take_while(|ch| ch.is_ascii_digit()).collect();
    assert!(!line.is_empty(), "no line number in {err}");
}

#[test]
fn repeated_solves_write_identical_solutions() {
    let dir = tempfile::tempdir().unwrap();
    let gen_out = dir.path().join("case");
    let res = run(&[
        "gen", "--seed", "3", "--nodes", "6", "--links", "12", "--routes", "6", "--communities", "3",
        "--max-route-len", "3", "--out", gen_out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let net = gen_out.join("network.json");
    let sc = gen_out.join("scenarios.json");
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let res = run(&[
            "solve", "--network", net.to_str().unwrap(), "--scenarios", sc.to_str().unwrap(),
            "--out", out.to_str().unwrap(), "--risk", "evar",
        ]);
        assert!(res.status.success(), "{}", stderr(&res));
        files.push((fs::read(out.join("solution.json")).unwrap(), fs::read(out.join("communities.csv")).unwrap()));
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn symmetric_compare_has_identical_columns() {
    let c = case(TWIN_NET, TWIN_SC);
    let out = c.out("run");
    let res = run(&c.args("compare", &out));
    assert!(res.status.success(), "{}", stderr(&res));
    let rows = csv_rows(&out.join("compare.csv"));
    assert_eq!(rows.len(), 2);
    for row in &rows {
        let fair: f64 = row[2].parse().unwrap();
        let maxsum: f64 = row[3].parse().unwrap();
        assert!((fair - maxsum).abs() < 1e-6, "{row:?}");
    }
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert!((metrics["fair"]["metrics"]["jain_index"].as_f64().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn single_delta_sweep_has_two_rows_per_community() {
    let c = case(TWIN_NET, TWIN_SC);
    let out = c.out("run");
    let mut args = c.args("sweep", &out);
    args.extend(["--deltas", "0.3"]);
    let res = run(&args);
    assert!(res.status.success(), "{}", stderr(&res));
    let rows = csv_rows(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 2 * 2);
    let tags: Vec<&str> = rows.iter().map(|r| r.get(4).unwrap()).collect();
    assert_eq!(tags, ["fair", "fair", "maxsum", "maxsum"]);
    assert!(!out.join(".sweep-points").exists());
}

#[test]
fn sweep_totals_do_not_grow_with_delta() {
    let dir = tempfile::tempdir().unwrap();
    let gen_out = dir.path().join("case");
    let res = run(&[
        "gen", "--seed", "5", "--nodes", "6", "--links", "12", "--routes", "6", "--communities", "3",
        "--max-route-len", "3", "--out", gen_out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let out = dir.path().join("sweep");
    let res = run(&[
        "sweep", "--network", gen_out.join("network.json").to_str().unwrap(),
        "--scenarios", gen_out.join("scenarios.json").to_str().unwrap(),
        "--out", out.to_str().unwrap(), "--deltas", "0.2,0.5,0.8", "--jobs", "1",
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let rows = csv_rows(&out.join("sweep.csv"));
    let total = |delta: &str| -> f64 {
        rows.iter()
            .filter(|r| &r[1] == delta && &r[4] == "maxsum")
            .map(|r| r[3].parse::<f64>().unwrap())
            .sum()
    };
    assert!(total("0.5") <= total("0.2") + 1e-7);
    assert!(total("0.8") <= total("0.5") + 1e-7);
}

#[test]
fn config_file_is_read_and_flags_override_it() {
    let c = case(TINY_NET, TINY_SC);
    let cfg = write(c.dir.path(), "config.json", r#"{"format_version": 1, "epsilon": 0.5, "risk": "tv", "delta": 0.2}"#);
    let out = c.out("run");
    let mut args = c.args("solve", &out);
    args.extend(["--config", cfg.to_str().unwrap(), "--epsilon", "0"]);
    let res = run(&args);
    assert!(res.status.success(), "{}", stderr(&res));
    let sol: serde_json::Value = serde_json::from_slice(&fs::read(out.join("solution.json")).unwrap()).unwrap();
    assert_eq!(sol["risk"]["kind"], "tv");
    assert_eq!(sol["risk"]["epsilon"], 0.0);

    let bad = write(c.dir.path(), "bad.json", r#"{"format_version": 1, "epsilonn": 0.5}"#);
    let mut args = c.args("solve", &out);
    args.extend(["--config", bad.to_str().unwrap()]);
    let res = run(&args);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("epsilonn"), "{}", stderr(&res));
}
