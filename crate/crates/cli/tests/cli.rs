use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cubegen"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, v: Value) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_vec_pretty(&v).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

fn small(out: &Path) -> Value {
    json!({ "R": 16, "N": 8, "record_timings": false, "paths": { "out": out } })
}

#[test]
fn invalid_config_exits_two_with_error_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({ "N": 7, "T_win": 4 }));
    let o = run(&["plan", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");
    assert_eq!(err["error"]["field"], "N");
    assert!(o.stdout.is_empty());
}

#[test]
fn unknown_key_and_missing_file_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({ "bogus": 1 }));
    assert_eq!(run(&["plan", "--config", &cfg]).status.code(), Some(2));
    let missing = dir.path().join("nope.json");
    let o = run(&["plan", "--config", missing.to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert!(err["error"]["message"].is_string());
}

#[test]
fn static_scene_plans_front_first() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small(dir.path());
    v["trajectory"] = json!({ "kind": "static" });
    let cfg = write_config(dir.path(), v);
    let o = run(&["plan", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["subcommand"], "plan");
    let plan = read_json(&dir.path().join("plan.json"));
    let faces: Vec<&str> = plan["steps"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["face"].as_str().unwrap())
        .collect();
    assert_eq!(
        faces,
        ["F", "R", "B", "L", "U", "D", "F", "R", "B", "L", "U", "D"]
    );
}

fn r_squared(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

#[test]
fn attend_bench_sparse_flops_are_linear() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), small(dir.path()));
    let o = run(&["attend-bench", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("attend_bench.csv")).unwrap();
    let (mut cs, mut sparse, mut dense) = (vec![], vec![], vec![]);
    for rec in rdr.records() {
        let rec = rec.unwrap();
        cs.push(rec[1].parse::<f64>().unwrap());
        sparse.push(rec[4].parse::<f64>().unwrap());
        dense.push(rec[5].parse::<f64>().unwrap());
        assert!(rec[6].is_empty() && rec[7].is_empty());
    }
    assert!(cs.len() >= 10);
    assert!(r_squared(&cs, &sparse) >= 0.999);
    assert!(r_squared(&cs, &dense) < 0.999);
    let fit = read_json(&dir.path().join("attend_fit.json"));
    assert!(fit["r2_sparse"].as_f64().unwrap() >= 0.999);
}

#[test]
fn out_and_seed_flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), small(&dir.path().join("ignored")));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    for (out, seed) in [(&a, "1"), (&b, "1"), (&c, "2")] {
        let o = run(&[
            "project",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--seed",
            seed,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(!dir.path().join("ignored").exists());
    let poses = |d: &Path| std::fs::read(d.join("poses.json")).unwrap();
    assert_eq!(poses(&a), poses(&b));
    assert_ne!(poses(&a), poses(&c));
}

#[test]
fn generate_with_oracle_reconstructs_the_scene() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small(dir.path());
    v["teacher_forcing"] = json!(true);
    let cfg = write_config(dir.path(), v);
    let o = run(&["generate", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(summary["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .any(|a| a == "equirect/frame_007.pfm"));
    let report = read_json(&dir.path().join("report.json"));
    for e in report["equirect_max_abs_error"].as_array().unwrap() {
        assert!(e.as_f64().unwrap() < 0.02);
    }
    assert!(
        report["peak_resident_latents"].as_u64().unwrap()
            <= report["resident_bound"].as_u64().unwrap()
    );
}
