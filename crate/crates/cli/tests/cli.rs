use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use iamax_core::bits::BitMatrix;
use iamax_core::embedding::{compute_alpha, select_k, EmbeddingTable};
use iamax_core::model::{
    effective_access, policy_from_document, render_memberships, render_policy, AccessInstance, DatastoreEntry,
    GeneratedPolicy, InstanceFile, PolicyDocument,
};
use iamax_core::optimizer::{check_feasible, SolveResult};
use iamax_core::synth::{planted, PlantedConfig, REFERENCE_SHAPES};
use serde_json::Value;
use tempfile::TempDir;

fn iamax(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iamax")).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(text.lines().last().unwrap_or_default()).expect("json on stdout")
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

/// Planted instance and embeddings written into a fresh directory.
fn fixture() -> (TempDir, AccessInstance, EmbeddingTable) {
    let dir = TempDir::new().unwrap();
    let (inst, emb, _) = planted(&PlantedConfig { num_roles: 3, seed: 11, ..Default::default() }).unwrap();
    inst.save(dir.path().join("inst.json")).unwrap();
    emb.save(dir.path().join("emb.json")).unwrap();
    (dir, inst, emb)
}

#[test]
fn optimize_writes_consistent_artifacts() {
    let (dir, inst, _) = fixture();
    let out = iamax(dir.path(), &["optimize", "-i", "inst.json", "-g", "20", "--time-limit", "900s", "-o", "run"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    for f in ["policy.json", "memberships.json", "solve_result.json", "generation_trace.csv", "manifest.json"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let res: SolveResult = serde_json::from_str(&read(run.join("solve_result.json"))).unwrap();
    let doc: PolicyDocument = serde_json::from_str(&read(run.join("policy.json"))).unwrap();
    let members: BTreeMap<String, Vec<String>> = serde_json::from_str(&read(run.join("memberships.json"))).unwrap();
    let pol = policy_from_document(&inst, &doc, &members).unwrap();
    assert!(check_feasible(&inst, &pol, &[]).unwrap().is_feasible());
    assert_eq!(
        effective_access(&inst, &pol).unwrap(),
        effective_access(&inst, res.policy().unwrap()).unwrap()
    );
    assert!(doc.statements.iter().all(|s| s.actions == ["datastore:Read"]));

    let manifest: Value = serde_json::from_str(&read(run.join("manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "optimize");
    assert_eq!(manifest["exit_code"], 0);
    assert_eq!(manifest["config"]["command"]["optimize"]["groups"], 20);
    assert_eq!(manifest["config"]["command"]["optimize"]["solve"]["time_limit"], "15m");
    assert_eq!(manifest["inputs"]["inst.json"].as_str().unwrap().len(), 64);
    assert!(manifest["outputs"].as_array().unwrap().iter().any(|o| o == "policy.json"));
}

#[test]
fn zero_groups_is_a_validation_error() {
    let (dir, ..) = fixture();
    let out = iamax(dir.path(), &["optimize", "-i", "inst.json", "-g", "0"]);
    assert_eq!(code(&out), 2);
    assert_eq!(stdout_json(&out)["error"], "validation");
}

#[test]
fn alpha_requires_embeddings() {
    let (dir, ..) = fixture();
    assert_eq!(code(&iamax(dir.path(), &["optimize", "-i", "inst.json", "--alpha", "0.3"])), 2);
    assert_eq!(code(&iamax(dir.path(), &["optimize", "-i", "inst.json", "--embeddings", "emb.json", "--alpha", "-1"])), 2);
}

#[test]
fn missing_instance_is_an_io_error_with_manifest() {
    let dir = TempDir::new().unwrap();
    let out = iamax(dir.path(), &["optimize", "-i", "absent.json", "-o", "run"]);
    assert_eq!(code(&out), 5);
    let err: Value = serde_json::from_str(&read(dir.path().join("run/error.json"))).unwrap();
    assert_eq!(err["error"], "io");
    let manifest: Value = serde_json::from_str(&read(dir.path().join("run/manifest.json"))).unwrap();
    assert_eq!(manifest["exit_code"], 5);
}

#[test]
fn infeasible_instance_exits_with_three() {
    let dir = TempDir::new().unwrap();
    // two users with disjoint type profiles, both permitted everywhere, one group
    let inst = AccessInstance::from_file(InstanceFile {
        users: vec!["a".into(), "b".into()],
        datastores: vec![
            DatastoreEntry { id: "d1".into(), data_types: vec!["x".into()] },
            DatastoreEntry { id: "d2".into(), data_types: vec!["y".into()] },
        ],
        groups: vec![],
        direct_permissions: vec![
            ("a".into(), "d1".into()),
            ("a".into(), "d2".into()),
            ("b".into(), "d1".into()),
            ("b".into(), "d2".into()),
        ],
        accesses: vec![("a".into(), "d1".into(), 1), ("b".into(), "d2".into(), 1)],
    })
    .unwrap();
    inst.save(dir.path().join("inst.json")).unwrap();
    let out = iamax(dir.path(), &["optimize", "-i", "inst.json", "-g", "1", "-o", "run"]);
    assert_eq!(code(&out), 3);
    assert_eq!(stdout_json(&out)["error"], "infeasible");
    assert!(!dir.path().join("run/policy.json").exists());
    assert!(dir.path().join("run/solve_result.json").exists());
    assert_eq!(code(&iamax(dir.path(), &["optimize", "-i", "inst.json", "-g", "2", "-o", "ok"])), 0);
}

#[test]
fn auto_alpha_equals_library_value() {
    let (dir, _, emb) = fixture();
    let out = iamax(
        dir.path(),
        &[
            "optimize", "-i", "inst.json", "-g", "6", "--time-limit", "60s", "--embeddings", "emb.json", "--alpha",
            "auto", "--k-min", "2", "--k-max", "8", "--seed", "5", "-o", "run",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let sel = select_k(&emb, 2, 8, 5).unwrap();
    let expected = compute_alpha(&emb, &sel.clustering).unwrap();
    let generation: Value = serde_json::from_str(&read(dir.path().join("run/generation.json"))).unwrap();
    assert_eq!(generation["alpha"].as_f64().unwrap(), expected);
    assert_eq!(generation["k"].as_u64().unwrap() as usize, sel.k_opt);
    let trace = read(dir.path().join("run/generation_trace.csv"));
    assert!(trace.starts_with("iteration,cuts_added,satisfied_fraction,objective,entropy\n"));
}

fn write_policy(dir: &Path, name: &str, inst: &AccessInstance, pol: &GeneratedPolicy) -> PathBuf {
    let sub = dir.join(name);
    fs::create_dir_all(&sub).unwrap();
    let doc = render_policy(inst, pol, &["datastore:Read".to_string()]);
    fs::write(sub.join("policy.json"), serde_json::to_string(&doc).unwrap()).unwrap();
    fs::write(sub.join("memberships.json"), serde_json::to_string(&render_memberships(inst, pol)).unwrap()).unwrap();
    sub.join("policy.json")
}

#[test]
fn identity_policy_has_unit_ratios() {
    let (dir, inst, _) = fixture();
    let n = inst.n_users();
    let pol = GeneratedPolicy {
        ug: BitMatrix::from_fn(n, n, |u, g| u == g),
        dad: inst.ud_hat().clone(),
    };
    let policy = write_policy(dir.path(), "identity", &inst, &pol);
    let out = iamax(dir.path(), &["attack", "-i", "inst.json", "-p", policy.to_str().unwrap(), "-o", "att"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Vec<Value> = serde_json::from_str(&read(dir.path().join("att/attack.json"))).unwrap();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert_eq!(r["ratio"].as_f64(), Some(1.0), "{r}");
    }
    let csv = read(dir.path().join("att/attack.csv"));
    assert_eq!(csv.lines().count(), 7);
    assert!(read(dir.path().join("att/attack.svg")).contains("<rect"));
}

#[test]
fn attack_validation_and_missing_policy() {
    let (dir, inst, _) = fixture();
    let pol = GeneratedPolicy { ug: BitMatrix::from_fn(inst.n_users(), 1, |_, _| true), dad: BitMatrix::new(1, inst.n_datastores()) };
    let policy = write_policy(dir.path(), "p", &inst, &pol);
    let p = policy.to_str().unwrap();
    // 15 users, 30% filtered in worst mode leaves 10 survivors
    let out = iamax(dir.path(), &["attack", "-i", "inst.json", "-p", p, "-k", "11", "--modes", "worst", "-o", "a"]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&iamax(dir.path(), &["attack", "-i", "inst.json", "-p", p, "-k", "10", "--modes", "worst", "-o", "b"])), 0);
    assert_eq!(code(&iamax(dir.path(), &["attack", "-i", "inst.json", "-p", "nothing.json", "-o", "c"])), 5);
}

#[test]
fn single_thread_reruns_are_byte_identical() {
    let (dir, ..) = fixture();
    let args = |o: &'static str| {
        vec!["optimize", "-i", "inst.json", "-g", "4", "--embeddings", "emb.json", "--k-min", "2", "--k-max", "6", "--seed", "3", "-o", o]
    };
    assert_eq!(code(&iamax(dir.path(), &args("r1"))), 0);
    assert_eq!(code(&iamax(dir.path(), &args("r2"))), 0);
    for f in ["policy.json", "memberships.json", "generation.json", "generation_trace.csv", "generation_trace.svg"] {
        assert_eq!(read(dir.path().join("r1").join(f)), read(dir.path().join("r2").join(f)), "{f}");
    }
    let a: SolveResult = serde_json::from_str(&read(dir.path().join("r1/solve_result.json"))).unwrap();
    let b: SolveResult = serde_json::from_str(&read(dir.path().join("r2/solve_result.json"))).unwrap();
    assert_eq!(a.solution, b.solution);
}

#[test]
fn report_regenerates_csv_and_svg_from_json() {
    let (dir, ..) = fixture();
    let d = dir.path();
    let run = |args: &[&str]| assert_eq!(code(&iamax(d, args)), 0, "{args:?}");
    run(&["optimize", "-i", "inst.json", "-g", "4", "--embeddings", "emb.json", "--k-min", "2", "--k-max", "6", "-o", "all"]);
    run(&["attack", "-i", "inst.json", "-p", "all/policy.json", "-o", "all"]);
    run(&["sweep-groups", "-i", "inst.json", "--grid", "1,2,3", "--time-limit", "30s", "-o", "all"]);
    run(&["cluster", "-e", "emb.json", "--k-min", "2", "--k-max", "6", "-o", "all"]);
    let derived = [
        "incumbent.svg",
        "generation_trace.csv",
        "generation_trace.svg",
        "attack.csv",
        "attack.svg",
        "sweep.csv",
        "sweep.svg",
        "clusters.csv",
        "k_curve.csv",
        "k_curve.svg",
    ];
    let before: Vec<String> = derived.iter().map(|f| read(d.join("all").join(f))).collect();
    for f in derived {
        fs::remove_file(d.join("all").join(f)).unwrap();
    }
    let out = iamax(d, &["report", "-d", "all"]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout_json(&out)["results"], 5);
    for (f, old) in derived.iter().zip(&before) {
        assert_eq!(&read(d.join("all").join(f)), old, "{f}");
    }
    assert!(d.join("all/report_manifest.json").exists());
    assert_eq!(code(&iamax(d, &["report", "-d", "."])), 2);
}

#[test]
fn sweep_rows_follow_grid() {
    let (dir, ..) = fixture();
    let out = iamax(dir.path(), &["sweep-groups", "-i", "inst.json", "--grid", "1,2,3,4", "--time-limit", "30s", "-o", "s"]);
    assert_eq!(code(&out), 0);
    let csv = read(dir.path().join("s/sweep.csv"));
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), ["1", "2", "3", "4"]);
    let pct: Vec<f64> = rows.iter().map(|r| r[4].parse().unwrap()).collect();
    assert!(pct.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{pct:?}");
    assert_eq!(pct[2], 0.0);
    assert_eq!(code(&iamax(dir.path(), &["sweep-groups", "-i", "inst.json", "--grid", "0,1", "-o", "z"])), 2);
}

#[test]
fn synth_shaped_matches_reference_counts() {
    let dir = TempDir::new().unwrap();
    let out = iamax(dir.path(), &["synth", "shaped", "--index", "1,5", "-o", "s"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for i in [1usize, 5] {
        let inst = AccessInstance::load(dir.path().join(format!("s/shape-{i}.json"))).unwrap();
        let shape = REFERENCE_SHAPES[i - 1];
        assert_eq!(inst.n_users(), shape.users);
        assert_eq!(inst.n_datastores(), shape.datastores);
        assert_eq!(inst.dynamic_edge_count(), shape.dynamic_edges);
        assert_eq!(inst.raw_permission_edge_count(), shape.permission_edges);
        EmbeddingTable::load(dir.path().join(format!("s/shape-{i}.emb.json"))).unwrap().validate().unwrap();
    }
    assert_eq!(code(&iamax(dir.path(), &["synth", "shaped", "--index", "9"])), 2);
}

#[test]
fn synth_batch_writes_manifest() {
    let (dir, ..) = fixture();
    let out = iamax(
        dir.path(),
        &["synth", "batch", "-i", "inst.json", "--embeddings", "emb.json", "--count", "3", "--min-users", "10", "--max-users", "20", "--min-stores", "10", "--max-stores", "20", "-o", "b"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = read(dir.path().join("b/batch.csv"));
    assert_eq!(manifest.lines().count(), 4);
    for line in manifest.lines().skip(1) {
        let name = line.split(',').next().unwrap();
        let inst = AccessInstance::load(dir.path().join(format!("b/{name}.json"))).unwrap();
        assert!((10..=20).contains(&inst.n_users()));
    }
}

#[test]
fn planted_synth_then_cluster() {
    let dir = TempDir::new().unwrap();
    let out = iamax(dir.path(), &["synth", "planted", "--roles", "4", "--seed", "2", "-o", "p"]);
    assert_eq!(code(&out), 0);
    let out = iamax(dir.path(), &["cluster", "-e", "p/embeddings.json", "--k-min", "2", "--k-max", "10", "-o", "c"]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout_json(&out)["k"], 4);
    let clusters = read(dir.path().join("c/clusters.csv"));
    assert_eq!(clusters.lines().count(), 1 + 20);
    let fixed = iamax(dir.path(), &["cluster", "-e", "p/embeddings.json", "-k", "3", "-o", "f"]);
    assert_eq!(stdout_json(&fixed)["k"], 3);
}

#[test]
fn ubg_export_from_accesses_and_events() {
    let (dir, inst, _) = fixture();
    let out = iamax(dir.path(), &["ubg", "-i", "inst.json", "-o", "g"]);
    assert_eq!(code(&out), 0);
    let graph: Value = serde_json::from_str(&read(dir.path().join("g/ubg.json"))).unwrap();
    assert_eq!(graph["nodes"].as_array().unwrap().len(), inst.n_users() + inst.existing_groups().len() + inst.n_datastores());
    let u = &inst.users()[0];
    let d = &inst.datastores()[0];
    fs::write(dir.path().join("events.csv"), format!("actor,target,op_class,count\n{u},{d},config,4\n")).unwrap();
    fs::write(dir.path().join("risk.csv"), format!("id,risk\n{u},0.9\n")).unwrap();
    let out = iamax(dir.path(), &["ubg", "-i", "inst.json", "--events", "events.csv", "--risk", "risk.csv", "-o", "h"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let graph: Value = serde_json::from_str(&read(dir.path().join("h/ubg.json"))).unwrap();
    assert!(graph["edges"].as_array().unwrap().iter().any(|e| e["rel"] == "config_update" && e["w"] == 1.0));
    fs::write(dir.path().join("bad.csv"), "actor,target,op_class,count\nghost,d,read,1\n").unwrap();
    assert_eq!(code(&iamax(dir.path(), &["ubg", "-i", "inst.json", "--events", "bad.csv", "-o", "x"])), 2);
}
