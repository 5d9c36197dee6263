use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/fixture_4node.json")
}

fn resalloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resalloc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = resalloc(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Data rows of a CSV written with `#` manifest lines, header dropped.
fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn evaluate_reproduces_the_reference_a1_row() {
    let dir = tempfile::tempdir().unwrap();
    let net = fixture_path();
    run_ok(&[
        "evaluate",
        "--network",
        net.to_str().unwrap(),
        "--no-droop",
        "--allocation",
        "A1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let rows = csv_rows(&dir.path().join("period_costs.csv"));
    let expected = [
        ("S1", [1000.0, 450.0, 450.0, 450.0, 0.0]),
        ("S2", [1050.0, 450.0, 450.0, 450.0, 0.0]),
        ("S3", [1900.0, 1000.0, 450.0, 450.0, 0.0]),
    ];
    assert_eq!(rows.len(), 15);
    for (s, costs) in expected {
        for (k, c) in costs.iter().enumerate() {
            let row = rows.iter().find(|r| r[1] == s && r[2] == k.to_string()).unwrap();
            assert_eq!(row[0], "A1");
            let v: f64 = row[3].parse().unwrap();
            assert!(close(v, *c), "{s} k={k}: {v}");
        }
    }
    let summary = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.contains("3050.000000"), "{summary}");
}

#[test]
fn solve_finds_the_best_fixture_allocation() {
    let dir = tempfile::tempdir().unwrap();
    let net = fixture_path();
    run_ok(&[
        "solve",
        "--network",
        net.to_str().unwrap(),
        "--no-droop",
        "--engine",
        "dp",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let sol: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("solution.json")).unwrap()).unwrap();
    assert_eq!(sol["allocation"], "d1@1 d2@4");
    assert!(close(sol["objective"].as_f64().unwrap(), 3050.0));
    let trace = fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert!(lines[0].starts_with("{\"manifest\""));
    assert_eq!(lines.len() - 1, sol["iterations"].as_u64().unwrap() as usize);
}

#[test]
fn same_manifest_gives_identical_files_with_manifest_echo() {
    let dir = tempfile::tempdir().unwrap();
    let net = fixture_path();
    let args = [
        "solve",
        "--network",
        net.to_str().unwrap(),
        "--no-droop",
        "--engine",
        "dp",
        "--restrict",
        "A1,A2,A3",
        "--out",
        dir.path().to_str().unwrap(),
    ];
    let snapshot = || {
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    fs::read(&p).unwrap(),
                )
            })
            .collect();
        files.sort();
        files
    };
    run_ok(&args);
    let first = snapshot();
    run_ok(&args);
    assert_eq!(first, snapshot());
    assert_eq!(first.len(), 5);
    for (name, bytes) in &first {
        let text = String::from_utf8_lossy(bytes);
        assert!(text.contains("command: solve"), "{name}");
        assert!(text.contains("restrict: A1,A2,A3"), "{name}");
    }
}

#[test]
fn greedy_matches_the_optimum_on_a1_s1() {
    let dir = tempfile::tempdir().unwrap();
    let net = fixture_path();
    run_ok(&[
        "greedy",
        "--network",
        net.to_str().unwrap(),
        "--no-droop",
        "--allocation",
        "A1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let rows = csv_rows(&dir.path().join("greedy.csv"));
    let total = |col: usize| -> f64 {
        rows.iter()
            .filter(|r| r[1] == "S1")
            .map(|r| r[col].parse::<f64>().unwrap())
            .sum()
    };
    assert!(close(total(3), 2350.0), "{}", total(3));
    assert!(close(total(4), 2350.0), "{}", total(4));
}

#[test]
fn baselines_agree_with_enumeration() {
    let dir = tempfile::tempdir().unwrap();
    let net = fixture_path();
    run_ok(&[
        "baselines",
        "--network",
        net.to_str().unwrap(),
        "--no-droop",
        "--engine",
        "dp",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let summary = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    let total = |method: &str| -> f64 {
        let line = summary
            .lines()
            .find(|l| l.split_whitespace().next() == Some(method))
            .unwrap();
        line.split_whitespace().last().unwrap().parse().unwrap()
    };
    assert!(close(total("LBD"), 3050.0));
    assert!(close(total("SE"), 3050.0));
    assert!(total("BoRA") >= 3050.0 - 1e-6);
    assert!(total("SA") >= 3050.0 - 1e-6);
    // 4 methods, 5 periods each.
    assert_eq!(csv_rows(&dir.path().join("performance.csv")).len(), 20);
}

#[test]
fn sampled_scenarios_when_the_file_lists_none() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixture_path()).unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&text).unwrap();
    json.as_object_mut().unwrap().remove("scenarios");
    json["line_fail_probs"] = serde_json::json!(0.5);
    let net = dir.path().join("sampled.json");
    fs::write(&net, json.to_string()).unwrap();
    let out = dir.path().join("out");
    let o = run_ok(&[
        "evaluate",
        "--network",
        net.to_str().unwrap(),
        "--samples",
        "4",
        "--seed",
        "9",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("scenarios: 4 sampled"));
    // 3 named allocations, 4 scenarios, 5 periods.
    assert_eq!(csv_rows(&out.join("period_costs.csv")).len(), 60);

    let o = resalloc(&[
        "evaluate",
        "--network",
        net.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn input_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let net = fixture_path();
    let net = net.to_str().unwrap();
    let out = dir.path().to_str().unwrap();

    let o = resalloc(&["solve", "--network", net, "--samples", "0", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    let o = resalloc(&["solve", "--network", net, "--samples", "3", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--samples"), "{}", stderr(&o));
    let o = resalloc(&["evaluate", "--network", net, "--allocation", "A9", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("A9"));
    let o = resalloc(&["evaluate", "--network", net, "--assign", "d1@7", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    let o = resalloc(&["solve", "--network", net, "--budget", "3", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    let o = resalloc(&["solve", "--network", net, "--crew", "0", "--out", out]);
    assert_eq!(o.status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\n  \"nodes\": [\n    {\"id\": 0,}\n  ]\n}\n").unwrap();
    let o = resalloc(&["solve", "--network", bad.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let o = resalloc(&["solve", "--network", "/nonexistent/net.json", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn infeasible_subproblem_exits_with_three_and_names_the_failure() {
    // Two DERs at one bus with different voltage setpoints and no droop
    // slack cannot both hold their setpoint once islanded.
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixture_path()).unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&text).unwrap();
    json["ders"][0]["droop_coeff"] = serde_json::json!(0.0);
    json["ders"][1]["droop_coeff"] = serde_json::json!(0.0);
    json["ders"][1]["v_ref"] = serde_json::json!(0.95);
    let net = dir.path().join("clash.json");
    fs::write(&net, json.to_string()).unwrap();
    let o = resalloc(&[
        "evaluate",
        "--network",
        net.to_str().unwrap(),
        "--assign",
        "d1@1,d2@1",
        "--engine",
        "dp",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let msg = stderr(&o);
    assert!(
        msg.contains("d1@1 d2@1") && msg.contains("scenario S1") && msg.contains("period"),
        "{msg}"
    );
}
