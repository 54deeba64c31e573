use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
        .display()
        .to_string()
}

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_monoflow"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn pipe(args: &[&str], scenario: &str) -> Vec<String> {
    let mut v = vec![
        "--network".to_string(),
        fixture("single_pipe.network.toml"),
        "--scenario".to_string(),
        fixture(scenario),
    ];
    v.extend(args.iter().map(|s| s.to_string()));
    v
}

fn five(cmd: &str, scenarios: &[&str], extra: &[&str]) -> Vec<String> {
    let mut v = vec![cmd.to_string(), "--network".to_string(), fixture("five_node.network.toml")];
    for s in scenarios {
        v.push("--scenario".to_string());
        v.push(fixture(s));
    }
    v.extend(["--epsilon", "5000"].iter().map(|s| s.to_string()));
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

#[test]
fn steady_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let args = pipe(&["steady", "--time", "14400"], "single_pipe_120.scenario.toml");
    let o = run(dir.path(), &strs(&args));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("steady.toml")).unwrap();
    let v: toml::Value = toml::from_str(&text).unwrap();
    let flow = v["edge"][0]["flow"].as_float().unwrap();
    assert!((flow - 120.0).abs() < 1e-6, "{flow}");
}

#[test]
fn simulate_single_pipe_outlet_is_periodic() {
    let dir = tempfile::tempdir().unwrap();
    let args = pipe(&["simulate", "--epsilon", "5000", "--dt", "900"], "single_pipe_300.scenario.toml");
    let o = run(dir.path(), &strs(&args));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("t [s],"));
    assert!(header.contains("rho:2 [kg/m3]") && header.contains("p:2 [Pa]") && header.contains("[kg/s]"));
    let table = monoflow::io::Table::from_csv(&csv).unwrap();
    let t = table.series("t").unwrap();
    let rho = table.series("rho:2").unwrap();
    let at = |s: f64| rho[t.iter().position(|&x| (x - s).abs() < 1.0).unwrap()];
    let h = 3600.0;
    // Lowest at peak withdrawal, back near the start value each cycle.
    assert!(at(4.0 * h) < at(2.0 * h) && at(2.0 * h) < at(0.0));
    assert!(at(6.0 * h) < at(8.0 * h));
    assert!((at(16.0 * h) - at(8.0 * h)).abs() < 1e-3 * at(0.0));
    let summary: toml::Value = toml::from_str(&fs::read_to_string(dir.path().join("summary.toml")).unwrap()).unwrap();
    assert!(summary["relative_mass_defect"].as_float().unwrap() < 1e-8);
}

#[test]
fn simulate_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = five("simulate", &["five_node_compressor.scenario.toml"], &["--seed", "7"]);
    assert_eq!(code(&run(a.path(), &strs(&args))), 0);
    assert_eq!(code(&run(b.path(), &strs(&args))), 0);
    let x = fs::read(a.path().join("trajectory.csv")).unwrap();
    assert!(!x.is_empty());
    assert_eq!(x, fs::read(b.path().join("trajectory.csv")).unwrap());
}

#[test]
fn malformed_scenario_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "horizon = 10.0\n[injections.2]\nkind = \"wobble\"\n").unwrap();
    let o = run(
        dir.path(),
        &["simulate", "--network", &fixture("single_pipe.network.toml"), "--scenario", bad.to_str().unwrap()],
    );
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[parse]"));
}

#[test]
fn missing_network_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["simulate", "--network", "/nonexistent.toml"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[io]"));
}

#[test]
fn verify_identical_scenarios_passes() {
    let dir = tempfile::tempdir().unwrap();
    let s = "five_node_baseline.scenario.toml";
    let o = run(dir.path(), &strs(&five("verify-monotone", &[s, s], &["--dt", "1800"])));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("margins.csv").exists());
}

#[test]
fn verify_reversal_reports_the_crossing() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &strs(&five(
            "verify-monotone",
            &["five_node_reversal_high.scenario.toml", "five_node_reversal_low.scenario.toml"],
            &[],
        )),
    );
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let v: toml::Value = toml::from_str(&fs::read_to_string(dir.path().join("order.toml")).unwrap()).unwrap();
    assert_eq!(v["first_crossing"]["location"].as_str(), Some("5"));
    assert_eq!(v["first_crossing"]["at_node"].as_bool(), Some(true));
}

#[test]
fn jacobian_check_is_clean() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &strs(&five("jacobian-check", &["five_node_compressor.scenario.toml"], &["--samples", "20"])));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn robust_check_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["five_node_baseline.scenario.toml"];
    let ok = run(
        dir.path(),
        &strs(&five("robust-check", &base, &["--envelope", &fixture("five_node_certified.envelope.toml")])),
    );
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    let deep = run(
        dir.path(),
        &strs(&five("robust-check", &base, &["--envelope", &fixture("five_node_deep.envelope.toml")])),
    );
    assert_eq!(code(&deep), 2, "{}", String::from_utf8_lossy(&deep.stderr));
    let v: toml::Value = toml::from_str(&fs::read_to_string(dir.path().join("certificate.toml")).unwrap()).unwrap();
    assert_eq!(v["violation"][0]["vertex"].as_str(), Some("5"));
}

#[test]
fn nmp_with_and_without_policy() {
    let dir = tempfile::tempdir().unwrap();
    let env = fixture("five_node_certified.envelope.toml");
    let s = ["five_node_nmp.scenario.toml"];
    let on = run(dir.path(), &strs(&five("nmp", &s, &["--envelope", &env])));
    assert_eq!(code(&on), 0, "{}", String::from_utf8_lossy(&on.stderr));
    let v: toml::Value = toml::from_str(&fs::read_to_string(dir.path().join("policy.toml")).unwrap()).unwrap();
    let actions = v["action"].as_array().unwrap();
    assert_eq!(actions.len(), 1);
    assert_eq!(actions[0]["node"].as_str(), Some("5"));
    assert_eq!(actions[0]["action"].as_str(), Some("pin-to-upper"));
    let off = run(dir.path(), &strs(&five("nmp", &s, &["--envelope", &env, "--no-policy"])));
    assert_eq!(code(&off), 2);
}
