use std::process::Command;

use dynamiq::synth::save_raw;

fn dynamiq(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dynamiq"))
        .args(args)
        .env_remove("DYNAMIQ_SEED")
        .output()
        .unwrap()
}

fn body_without_timing(csv: &str) -> Vec<String> {
    csv.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
}

#[test]
fn allreduce_writes_one_row_per_seed() {
    let out = dynamiq(&["allreduce", "--n", "4", "--d", "8192", "--gen", "locality", "--seeds", "3", "--seed", "10"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "variant,n,topology,b,seed,vnmse,bits_per_coord,traffic_hash,wall_time");
    assert_eq!(lines.len(), 4);
    let seeds: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(4).unwrap()).collect();
    assert_eq!(seeds, ["10", "11", "12"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("vnmse"));
}

#[test]
fn config_file_and_environment_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    std::fs::write(&cfg, r#"{"n": 8, "topology": "butterfly", "generator": {"d": 4096}, "seeds": [5]}"#).unwrap();
    let csv = dir.path().join("out.csv");
    let json = dir.path().join("out.json");
    let cfg_s = cfg.to_str().unwrap();
    let out = dynamiq(&["allreduce", "--config", cfg_s, "--output", csv.to_str().unwrap(), "--json", json.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let first = std::fs::read_to_string(&csv).unwrap();
    assert!(first.lines().nth(1).unwrap().starts_with("non-uniform,8,butterfly,5.0,5,"));
    let records: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(records[0]["seed"], 5);

    // rerunning reproduces the CSV apart from timings
    dynamiq(&["allreduce", "--config", cfg_s, "--output", csv.to_str().unwrap()]);
    assert_eq!(body_without_timing(&first), body_without_timing(&std::fs::read_to_string(&csv).unwrap()));

    let env = Command::new(env!("CARGO_BIN_EXE_dynamiq"))
        .args(["allreduce", "--d", "4096"])
        .env("DYNAMIQ_SEED", "42")
        .output()
        .unwrap();
    let text = String::from_utf8(env.stdout).unwrap();
    assert_eq!(text.lines().nth(1).unwrap().split(',').nth(4), Some("42"));
}

#[test]
fn ablate_and_sweep_tables() {
    let out = dynamiq(&["ablate", "--d", "8192", "--gen", "locality", "--seeds", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8(out.stdout).unwrap();
    let variants: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(variants.len(), 10);
    assert_eq!(&variants[..5], ["uniform-fixed", "non-uniform", "variable-width", "hierarchical", "correlated"]);

    let out = dynamiq(&["sweep-budget", "--d", "8192", "--budgets", "3,6"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 3);
    assert_eq!(dynamiq(&["sweep-budget", "--budgets", "2.5"]).status.code(), Some(2));
}

#[test]
fn topology_compare_pairs_runs() {
    let out = dynamiq(&["topology-compare", "--n", "8", "--d", "8192", "--seeds", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("n,b,seed,ring_vnmse,butterfly_vnmse,ratio,wall_time"));
    for line in csv.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((f[5] - f[4] / f[3]).abs() < 1e-12);
    }
}

#[test]
fn locality_writes_four_cdfs() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("grad.bin");
    let g: Vec<f32> = (0..4096).map(|k| ((k * 37) % 101) as f32 - 50.0).collect();
    save_raw(&input, &g).unwrap();
    let out = dynamiq(&["locality", "--input", input.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["group_original", "group_shuffled", "super_group_original", "super_group_shuffled"] {
        let text = std::fs::read_to_string(dir.path().join(format!("{name}.csv"))).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows[0], "rank_fraction,norm");
        let expected = if name.starts_with("group") { 256 } else { 16 };
        assert_eq!(rows.len() - 1, expected, "{name}");
        assert_eq!(rows.last().unwrap().split(',').next(), Some("1.0"));
    }
}

#[test]
fn exit_codes() {
    assert_eq!(dynamiq(&["allreduce", "--b", "2", "--d", "4096"]).status.code(), Some(3));
    assert_eq!(dynamiq(&["allreduce", "--n", "0"]).status.code(), Some(2));
    assert_eq!(dynamiq(&["topology-compare", "--n", "12"]).status.code(), Some(2));
    assert_eq!(dynamiq(&["allreduce", "--topology", "star"]).status.code(), Some(2));
    assert_eq!(dynamiq(&["ablate", "--seed-list", ""]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"n": 4, "colour": "red"}"#).unwrap();
    let out = dynamiq(&["allreduce", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
    assert_eq!(dynamiq(&["locality", "--input", "/nonexistent/grad.bin"]).status.code(), Some(1));
    assert_eq!(dynamiq(&["--help"]).status.code(), Some(0));
}
