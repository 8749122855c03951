// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fipgraph::netlist::s27;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fipgraph"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_s27(dir: &Path) -> PathBuf {
    let p = dir.join("s27.bench");
    fs::write(&p, s27().to_bench()).unwrap();
    p
}

/// All files under `dir`, relative, sorted.
fn tree(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().display().to_string());
            }
        }
    }
    out.sort();
    out
}

fn same_tree(a: &Path, b: &Path) {
    let (ta, tb) = (tree(a), tree(b));
    assert_eq!(ta, tb);
    for f in ta {
        assert!(fs::read(a.join(&f)).unwrap() == fs::read(b.join(&f)).unwrap(), "{f} differs");
    }
}

#[test]
fn parse_prints_stats_json() {
    let tmp = tempfile::tempdir().unwrap();
    write_s27(tmp.path());
    for cmd in ["parse", "stats"] {
        let out = ok(tmp.path(), &[cmd, "s27.bench"]);
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["pis"], 4);
        assert_eq!(v["pos"], 1);
        assert_eq!(v["dffs"], 3);
        assert_eq!(v["gates"], 10);
        assert!(v["provenance"]["inputs"][0]["sha256"].is_string());
    }
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    write_s27(tmp.path());
    let out = run(tmp.path(), &["parse", "s27.bench", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(run(tmp.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(tmp.path(), &["simulate", "s27.bench", "--observe", "all"]).status.code(), Some(2));
}

#[test]
fn domain_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.bench"), "INPUT(a)\nOUTPUT(y)\ny = AND(a, z)\n").unwrap();
    let out = run(tmp.path(), &["parse", "bad.bench"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains('z'));
    assert_eq!(run(tmp.path(), &["parse", "missing.bench"]).status.code(), Some(1));
}

#[test]
fn simulate_is_byte_identical_across_runs_and_threads() {
    let tmp = tempfile::tempdir().unwrap();
    write_s27(tmp.path());
    let base = ["simulate", "s27.bench", "--patterns", "300", "--cycles", "6", "--seed", "9"];
    for (out, threads) in [("a", "1"), ("b", "1"), ("c", "8")] {
        let mut args = base.to_vec();
        args.extend(["--out", out, "--threads", threads]);
        ok(tmp.path(), &args);
    }
    same_tree(&tmp.path().join("a"), &tmp.path().join("b"));
    same_tree(&tmp.path().join("a"), &tmp.path().join("c"));
    let csv = fs::read_to_string(tmp.path().join("a/s27.fip.csv")).unwrap();
    assert!(csv.starts_with("# {"));
    assert!(csv.contains("\"patterns\":300"));
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    write_s27(tmp.path());
    fs::write(tmp.path().join("run.toml"), "patterns = 64\ncycles = 3\nseed = 5\nout = \"cfgout\"\n").unwrap();
    ok(tmp.path(), &["simulate", "s27.bench", "--config", "run.toml", "--cycles", "4"]);
    let csv = fs::read_to_string(tmp.path().join("cfgout/s27.fip.csv")).unwrap();
    let header: serde_json::Value = serde_json::from_str(csv.lines().next().unwrap().trim_start_matches("# ")).unwrap();
    assert_eq!(header["config"]["patterns"], 64);
    assert_eq!(header["config"]["cycles"], 4);
    assert_eq!(header["config"]["seed"], 5);
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "patterns = \"many\"\n").unwrap();
    assert_ne!(run(tmp.path(), &["simulate", "s27.bench", "--config", "bad.toml"]).status.code(), Some(0));
}

#[test]
fn testability_csv_columns() {
    let tmp = tempfile::tempdir().unwrap();
    write_s27(tmp.path());
    ok(tmp.path(), &["testability", "s27.bench", "--cycles", "3", "--out", "t"]);
    let csv = fs::read_to_string(tmp.path().join("t/s27.testability.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "line,cycle,cc0n,cc1n,con,c1,o");
    assert_eq!(csv.lines().count(), 2 + 3 * 17);
}

#[test]
fn pipeline_writes_only_under_out_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    for (run_dir, threads) in [("r1", "1"), ("r2", "8")] {
        let d = tmp.path().join(run_dir);
        fs::create_dir(&d).unwrap();
        write_s27(&d);
        let before = tree(&d);
        let d = d.as_path();
        let common = ["--threads", threads, "--seed", "3"];
        let steps: [&[&str]; 6] = [
            &[
                "convert", "synth:s298", "synth:s386", "s27.bench", "--mode", "tm", "--patterns", "64", "--cycles", "12",
                "--out", "out/ds",
            ],
            &[
                "train", "--dataset", "out/ds/manifest.json", "--epochs", "2", "--lr", "0.005", "--hidden", "8", "--heads",
                "2", "--time-dim", "3", "--out", "out/model",
            ],
            &["eval", "--dataset", "out/ds/manifest.json", "--model", "out/model/model.ckpt", "--out", "out/model"],
            &["predict", "s27.bench", "--model", "out/model/model.ckpt", "--patterns", "64", "--out", "out"],
            &["tpi", "synth:s298", "--model", "out/model/model.ckpt", "--random-runs", "2", "--out", "out"],
            &["tpi", "synth:s386", "--patterns", "64", "--random-runs", "2", "--out", "out"],
        ];
        for step in steps {
            let mut a = step.to_vec();
            a.extend(common);
            ok(d, &a);
        }
        let mut after = tree(d);
        after.retain(|f| !f.starts_with("out/"));
        assert_eq!(after, before);
    }
    let d = tmp.path();
    same_tree(&d.join("r1/out"), &d.join("r2/out"));

    let eval = fs::read_to_string(d.join("r1/out/model/eval.csv")).unwrap();
    assert!(eval.lines().nth(1).unwrap().starts_with("model,circuit,split,windows,rmse,mae"));
    assert!(eval.contains("TM-5-U,average,test"));
    let loss = fs::read_to_string(d.join("r1/out/model/loss.csv")).unwrap();
    assert_eq!(loss.lines().filter(|l| !l.starts_with('#')).count(), 3);
    let tpi: serde_json::Value = serde_json::from_slice(&fs::read(d.join("r1/out/s386.tpi.json")).unwrap()).unwrap();
    assert!(tpi["provenance"]["config"]["budget"].is_number());
    let pred = fs::read_to_string(d.join("r1/out/s27.predict.csv")).unwrap();
    assert_eq!(pred.lines().nth(1).unwrap(), "window_start,line,kind,cycle,fip");
}

#[test]
fn gradcheck_and_bench() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["gradcheck", "--variant", "only_spatial", "--out", "g"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("only_spatial"));
    assert!(text.contains("true"));
    ok(tmp.path(), &["bench", "synth:s298", "--patterns", "64", "--out", "b"]);
    let csv = fs::read_to_string(tmp.path().join("b/bench.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "circuit,gates,stage,seconds");
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("s298,119,parse,"));
}
