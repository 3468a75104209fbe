use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn memtrain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memtrain"))
        .args(args)
        .env_remove("MEMTRAIN_OUT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = memtrain(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

const SMALL: &[&str] = &["--set", "synthetic.events=600", "--set", "train.epochs=2"];

#[test]
fn train_is_reproducible_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let mut args = vec!["train", "--seed", "7", "--set", "pres.enabled=true"];
        args.extend_from_slice(SMALL);
        args.extend(["--out", dir.to_str().unwrap()]);
        ok(&args);
    }
    for f in ["metrics.csv", "model.ckpt", "tracker.ckpt", "summary.txt"] {
        assert_eq!(read(&a, f), read(&b, f), "{f} differs");
    }
    let config = |dir: &Path| -> Vec<String> {
        String::from_utf8(read(dir, "config.txt"))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("output.dir"))
            .map(String::from)
            .collect()
    };
    assert_eq!(config(&a), config(&b));
    assert!(config(&a).contains(&"seed = 7".to_string()));
}

#[test]
fn different_seeds_give_different_models() {
    let tmp = tempfile::tempdir().unwrap();
    let mut ckpts = Vec::new();
    for seed in ["1", "2"] {
        let dir = tmp.path().join(seed);
        let mut args = vec!["train", "--seed", seed];
        args.extend_from_slice(SMALL);
        args.extend(["--out", dir.to_str().unwrap()]);
        ok(&args);
        ckpts.push(read(&dir, "model.ckpt"));
        assert!(!dir.join("tracker.ckpt").exists());
    }
    assert_ne!(ckpts[0], ckpts[1]);
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    ok(&[
        "sweep",
        "--set",
        "synthetic.events=800",
        "--set",
        "train.epochs=1",
        "--set",
        "sweep.batch_sizes=10,20,40,80",
        "--set",
        "sweep.seeds=0,1,2,3,4",
        "--set",
        "sweep.modes=standard,pres",
        "--out",
        out.to_str().unwrap(),
    ]);
    let text = String::from_utf8(read(&out, "sweep.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "batch_size,seed,pres,beta,final_ap,epoch_seconds,min_coherence"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 40);
    for r in &rows {
        let ap: f64 = r[4].parse().unwrap();
        assert!((0.0..=1.0).contains(&ap));
        assert_eq!(r[5], "0");
        assert_eq!(r[3], if r[2] == "true" { "0.1" } else { "0" });
    }
}

#[test]
fn bad_configuration_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "# comment\ntrain.lr = 0.01\nmodel.widht = 3\n").unwrap();
    let out = memtrain(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("model.widht") && err.contains(":3"), "{err}");

    let out = memtrain(&["train", "--set", "pres.beta=-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pres"));

    let out = memtrain(&["train", "--set", "data=/no/such/file.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("bad.csv");
    fs::write(&csv, "src,dst,t,label\n0,1,oops,0\n").unwrap();
    let out = memtrain(&[
        "ingest",
        "--set",
        &format!("data={}", csv.display()),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn frozen_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    let mut args = vec![
        "train",
        "--seed",
        "3",
        "--set",
        "model.embedding=time_projection",
        "--set",
        "pres.enabled=true",
    ];
    args.extend_from_slice(SMALL);
    args.extend(["--out", first.to_str().unwrap()]);
    ok(&args);

    let second = tmp.path().join("second");
    ok(&[
        "train",
        "--config",
        first.join("config.txt").to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
    ]);
    for f in ["metrics.csv", "model.ckpt", "tracker.ckpt"] {
        assert_eq!(read(&first, f), read(&second, f), "{f} differs");
    }
}

#[test]
fn output_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_memtrain"))
        .args(["simulate-filter", "--set", "filter.trials=50"])
        .env("MEMTRAIN_OUT", tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let csv = String::from_utf8(read(tmp.path(), "filter.csv")).unwrap();
    assert_eq!(csv.lines().count(), 101);
}

#[test]
fn ingest_reads_a_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("events.csv");
    fs::write(
        &csv,
        "user,item,ts,label,f0\n0,0,1.0,0,0.5\n1,0,2.0,0,0.1\n0,1,3.0,0,0.2\n",
    )
    .unwrap();
    let out = ok(&[
        "ingest",
        "--set",
        &format!("data={}", csv.display()),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("vertices 4\n"), "{text}");
    assert!(text.contains("events 3\n"));
    assert!(text.contains("feature_dim 1\n"));
}

/// Set `MEMTRAIN_WIKIPEDIA` to the path of the public Wikipedia edit stream
/// to run this.
#[test]
fn wikipedia_counts() {
    let Ok(path) = std::env::var("MEMTRAIN_WIKIPEDIA") else {
        eprintln!("MEMTRAIN_WIKIPEDIA unset, skipping");
        return;
    };
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&[
        "ingest",
        "--set",
        &format!("data={path}"),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("vertices 9227\n"), "{text}");
    assert!(text.contains("events 157474\n"), "{text}");
}
