use std::path::Path;
use std::process::{Command, Output};

fn trapsim(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_trapsim"));
    cmd.args(args).env_remove("TRAPSIM_THREADS");
    if let Some(t) = threads {
        cmd.env("TRAPSIM_THREADS", t);
    }
    cmd.output().unwrap()
}

/// Hand-assembled TRAJ bytes.
fn traj_bytes(d: u32, n: u32, segs: &[(u32, f64)]) -> Vec<u8> {
    let mut b = b"TRAJ".to_vec();
    for w in [d, n, segs.len() as u32] {
        b.extend_from_slice(&w.to_le_bytes());
    }
    for &(s, h) in segs {
        b.extend_from_slice(&s.to_le_bytes());
        b.extend_from_slice(&h.to_le_bytes());
    }
    b
}

fn replay(dir: &Path, name: &str, bytes: &[u8]) -> Output {
    let path = dir.join(name);
    std::fs::write(&path, bytes).unwrap();
    trapsim(&["replay", path.to_str().unwrap()], None)
}

#[test]
fn replay_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let out = replay(dir.path(), "empty.traj", &traj_bytes(2, 4, &[]));
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("segments: 0"), "{text}");

    let out = replay(dir.path(), "one.traj", &traj_bytes(1, 8, &[(3, 1.0)]));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("segments: 1") && text.contains("total time: 1"), "{text}");
    assert!(text.contains("site 3"), "{text}");

    let mut bad = traj_bytes(1, 8, &[(3, 1.0)]);
    bad.pop();
    let out = replay(dir.path(), "short.traj", &bad);
    assert!(!out.status.success());
    let out = replay(dir.path(), "magic.traj", b"JART\0\0\0\0");
    assert!(!out.status.success());
}

#[test]
fn replay_of_a_recorded_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "experiment = \"stay2d\"\noutput_dir = \"out\"\nseed = 2\n[params]\nn = [16, 32, 64]\nenvironments = 2\nreplicas = 20\ndump_trajectory = true\n").unwrap();
    let out = trapsim(&["run", cfg.to_str().unwrap()], Some("1"));
    assert!(out.status.code().is_some_and(|c| c <= 1), "{}", String::from_utf8_lossy(&out.stderr));
    let traj = dir.path().join("out/trajectory.traj");
    let out = trapsim(&["replay", traj.to_str().unwrap()], None);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("torus: d = 2"), "{text}");
}

#[test]
fn list_experiments_names_every_experiment() {
    let out = trapsim(&["list-experiments"], None);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in [
        "env-check",
        "potential-identities",
        "capacity-limits",
        "trace-convergence",
        "occupation",
        "hydro",
        "two-blocks",
        "stay2d",
        "kproc-diagonal",
    ] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing");
    }
}

#[test]
fn schema_errors_exit_2_with_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "experiment = \"capacity-limits\"\noutput_dir = \"out\"\n[params]\nd = 4\n").unwrap();
    let out = trapsim(&["run", cfg.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "error");
    assert_eq!(summary["error"]["kind"], "schema");
    assert_eq!(summary["experiment"], "capacity-limits");

    std::fs::write(&cfg, "experiment = \"nope\"\noutput_dir = \"out\"\n").unwrap();
    assert_eq!(trapsim(&["run", cfg.to_str().unwrap()], None).status.code(), Some(2));
    std::fs::write(&cfg, "experiment = \"hydro\"\nbogus = 1\n").unwrap();
    assert_eq!(trapsim(&["run", cfg.to_str().unwrap()], None).status.code(), Some(2));
}

#[test]
fn bad_thread_count_is_rejected() {
    for bad in ["0", "many", "-3"] {
        let out = trapsim(&["list-experiments"], Some(bad));
        assert_eq!(out.status.code(), Some(2), "TRAPSIM_THREADS={bad}");
    }
}
