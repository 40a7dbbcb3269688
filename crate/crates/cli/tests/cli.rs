use std::path::PathBuf;
use std::process::{Command, Output};

fn cpfs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpfs")).args(args).env_remove("CPFS_SEED").output().unwrap()
}

fn text(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cpfs-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

/// Lines that are neither comments nor the CSV header.
fn rows(s: &str) -> Vec<&str> {
    s.lines().filter(|l| !l.starts_with('#')).skip(1).collect()
}

#[test]
fn gen_tree_example_and_round_trip() {
    let path = scratch("tree.txt");
    let p = path.to_str().unwrap();
    let out = cpfs(&["gen-tree", "--offspring", "det:2", "--fitness", "const:1", "--max-gen", "3", "--seed", "7", "--out", p]);
    assert!(out.status.success());
    let file = std::fs::read_to_string(&path).unwrap();
    assert!(file.contains("# vertices=15"), "{file}");
    assert!(file.starts_with("# cpfs "));
    let sim = cpfs(&["simulate", "--tree", p, "--lambda", "0.5", "--horizon", "5", "--trials", "20", "--seed", "1"]);
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    assert_eq!(rows(&text(&sim)).len(), 20);
}

#[test]
fn verify_exact_example() {
    let out = cpfs(&["verify", "--suite", "exact", "--max-vertices", "10", "--seed", "1", "--instances", "10"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = text(&out);
    assert!(s.lines().any(|l| l == "check_name,instance_id,deviation,tolerance,pass"));
    assert!(rows(&s).iter().all(|r| r.ends_with(",true")));
}

#[test]
fn sweep_example_has_twenty_rows() {
    let out = cpfs(&[
        "sweep", "--offspring", "pois:2", "--fitness", "pareto:2", "--lambda", "0.05:0.05:1.0", "--horizon", "50", "--trials",
        "200", "--seed", "42",
    ]);
    assert!(out.status.success());
    let s = text(&out);
    assert!(s.lines().any(|l| l == "lambda,estimate,ci_lo,ci_hi"));
    let r = rows(&s);
    assert_eq!(r.len(), 20);
    assert!(r[0].starts_with("0.05,") && r[19].starts_with("1.0,"), "{:?}", (r[0], r[19]));
}

#[test]
fn header_records_version_seed_and_config() {
    let s = text(&cpfs(&["path", "--trials", "10", "--seed", "3"]));
    let head: Vec<&str> = s.lines().take(4).collect();
    assert_eq!(head[0], format!("# cpfs {}", env!("CARGO_PKG_VERSION")));
    assert_eq!(head[1], "# command: path");
    assert_eq!(head[2], "# seed: 3");
    assert!(head[3].starts_with("# config: ") && head[3].contains("trials=10"));
}

#[test]
fn config_file_and_flag_precedence() {
    let path = scratch("run.cfg");
    std::fs::write(&path, "# a comment\n\ntrials=500\nlambda = 0.5\n").unwrap();
    let p = path.to_str().unwrap();
    let s = text(&cpfs(&["path", "--config", p, "--trials", "1000"]));
    assert!(s.contains("trials=1000") && s.contains("lambda=0.5"), "{s}");

    let empty = scratch("empty.cfg");
    std::fs::write(&empty, "").unwrap();
    let a = text(&cpfs(&["path", "--config", empty.to_str().unwrap()]));
    assert_eq!(a, text(&cpfs(&["path"])));

    std::fs::write(&path, "trials=5\n\nno equals sign\n").unwrap();
    let bad = cpfs(&["path", "--config", p]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("line 3"));

    std::fs::write(&path, "colour=red\n").unwrap();
    let bad = cpfs(&["path", "--config", p]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("trials"));
}

#[test]
fn env_seed_is_a_fallback() {
    let run = |env: Option<&str>, args: &[&str]| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_cpfs"));
        c.args(args).env_remove("CPFS_SEED");
        if let Some(v) = env {
            c.env("CPFS_SEED", v);
        }
        text(&c.output().unwrap())
    };
    assert!(run(Some("11"), &["path", "--trials", "5"]).contains("# seed: 11"));
    assert!(run(Some("11"), &["path", "--trials", "5", "--seed", "4"]).contains("# seed: 4"));
    assert!(run(None, &["path", "--trials", "5"]).contains("# seed: 0"));
}

#[test]
fn exit_codes() {
    let unknown = cpfs(&["sweep", "--no-such-flag"]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage"));
    assert_eq!(cpfs(&["star", "--k", "0"]).status.code(), Some(1));
    assert_eq!(cpfs(&["sweep", "--lambda", "-1"]).status.code(), Some(1));
    let overflow = cpfs(&[
        "simulate", "--offspring", "det:2", "--lambda", "5", "--horizon", "100", "--budget", "20", "--trials", "5", "--seed",
        "1",
    ]);
    assert_eq!(overflow.status.code(), Some(2), "{}", String::from_utf8_lossy(&overflow.stderr));
    assert_eq!(cpfs(&["--help"]).status.code(), Some(0));
}

#[test]
fn same_seed_same_bytes() {
    let args = ["star", "--f", "4", "--k", "64", "--cap", "10", "--trials", "100", "--seed", "12"];
    assert_eq!(cpfs(&args).stdout, cpfs(&args).stdout);
    let other = ["star", "--f", "4", "--k", "64", "--cap", "10", "--trials", "100", "--seed", "13"];
    assert_ne!(cpfs(&args).stdout, cpfs(&other).stdout);
}
