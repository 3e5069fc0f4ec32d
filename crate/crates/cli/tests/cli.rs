use std::path::Path;
use std::process::{Command, Output};

fn subgauss(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subgauss"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn data_rows(path: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# subgauss "));
    lines.skip(1).map(str::to_string).collect()
}

#[test]
fn space_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let o = subgauss(&["space", "--kind", "sg", "--level", "5"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("vertices 366"));
    let o = subgauss(&["space", "--space", "path", "--n", "2"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("vertices 2") && s.contains("edges 1") && s.contains("total_mass 2"));
}

#[test]
fn bad_space_file_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.txt"), "# header\n0 1 1 1\n1 2 0 1\n").unwrap();
    let o = subgauss(&["space", "--file", "bad.txt"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn compute_row_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = subgauss(&["compute", "heat", "--kind", "path", "--n", "9", "--t", "1,2,4", "--pairs", "all-diag"], d);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(data_rows(&d.join("heat.csv")).len(), 27);

    let o = subgauss(&["compute", "chain", "--kind", "path", "--n", "9", "--eps", "1.5", "--pair", "0:4"], d);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(data_rows(&d.join("chain.csv")), vec!["0,4,1.5,4,4,0;1;2;3;4"]);

    let o = subgauss(
        &["compute", "exit", "--kind", "path", "--n", "41", "--ball", "0:8", "--times", "geomspace(0.1,100,25)"],
        d,
    );
    assert_eq!(o.status.code(), Some(0));
    let rows = data_rows(&d.join("exit_tail.csv"));
    assert_eq!(rows.len(), 25);
    let last: f64 = rows[24].split(',').nth(3).unwrap().parse().unwrap();
    assert!(last > 0.5 && last <= 1.0);

    // The profile needs no graph unless F is fitted.
    let o = subgauss(&["compute", "phi", "--scale", "power", "--beta", "2", "--s", "1,2"], d);
    assert_eq!(o.status.code(), Some(0));
    let rows = data_rows(&d.join("phi.csv"));
    let phi: f64 = rows[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!((phi - 1.0).abs() < 1e-9, "Phi(2) = 2^2/4 for F = r^2, got {}", phi);
}

#[test]
fn default_scale_is_fitted() {
    let dir = tempfile::tempdir().unwrap();
    let o = subgauss(&["verify", "--conditions", "ef", "--kind", "sg", "--level", "5", "--seed", "1"], dir.path());
    // The verdict depends on the fit; only the scale is checked here.
    assert!(matches!(o.status.code(), Some(0) | Some(1)), "{}", stdout(&o));
    let err = String::from_utf8_lossy(&o.stderr);
    let beta: f64 = err.split("r^").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!((2.1..2.5).contains(&beta), "{}", err);
}

#[test]
fn monte_carlo_needs_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = subgauss(&["compute", "exit", "--kind", "path", "--n", "9", "--ball", "4:2", "--times", "1", "--mc"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_reports_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = subgauss(&["verify", "--conditions", "equiv", "--space", "path", "--n", "257", "--scale", "power", "--beta", "2"], d);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("equiv.json")).unwrap()).unwrap();
    assert_eq!(doc["report"]["pass"], true);
    assert_eq!(doc["config_sha256"].as_str().unwrap().len(), 64);

    let o = subgauss(&["verify", "--conditions", "ef", "--space", "path", "--n", "257", "--scale", "power", "--beta", "3"], d);
    assert_eq!(o.status.code(), Some(1));

    let o = subgauss(&["verify", "--conditions", "ef,bogus", "--space", "path", "--n", "65"], d);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seven_reports_on_the_gasket() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = subgauss(
        &["verify", "--conditions", "vd,ef,h,fk,ue,nle,two", "--space", "sg", "--level", "6", "--scale", "power", "--beta", "2.321928094887362"],
        d,
    );
    assert!(matches!(o.status.code(), Some(0) | Some(1)), "{}", String::from_utf8_lossy(&o.stderr));
    let json: Vec<_> = std::fs::read_dir(d)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
        .collect();
    assert_eq!(json.len(), 7);
}

#[test]
fn config_file_with_flag_override_and_identical_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("run.json"),
        r#"{"space": {"kind": "path", "n": 129}, "scale": {"kind": "power", "beta": 2},
            "samples": {"seed": 7, "n_times": 6}, "outputs": {"dir": "a"}}"#,
    )
    .unwrap();
    let o = subgauss(&["--config", "run.json", "verify", "--conditions", "ue,nle"], d);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let o = subgauss(&["--config", "run.json", "--out", "b", "verify", "--conditions", "ue,nle"], d);
    assert_eq!(o.status.code(), Some(0));
    for name in ["ue.json", "ue_samples.csv", "nle.json"] {
        let a = std::fs::read(d.join("a").join(name)).unwrap();
        let b = std::fs::read(d.join("b").join(name)).unwrap();
        assert_eq!(a, b, "{} differs", name);
    }
    // A flag changes the config, hence the hash.
    let o = subgauss(&["--config", "run.json", "--seed", "8", "--out", "c", "verify", "--conditions", "nle"], d);
    assert_eq!(o.status.code(), Some(0));
    let a = std::fs::read_to_string(d.join("a/nle.json")).unwrap();
    let c = std::fs::read_to_string(d.join("c/nle.json")).unwrap();
    let hash = |s: &str| serde_json::from_str::<serde_json::Value>(s).unwrap()["config_sha256"].clone();
    assert_ne!(hash(&a), hash(&c));

    std::fs::write(d.join("typo.json"), r#"{"space": {"kind": "path", "size": 9}}"#).unwrap();
    let o = subgauss(&["--config", "typo.json", "space"], d);
    assert_eq!(o.status.code(), Some(2));
}
