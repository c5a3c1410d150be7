use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &[&str] = &[
    "data.side=8",
    "data.source_classes=6",
    "data.target_classes=4",
    "data.samples_per_class=8",
    "model.hidden=16",
    "model.embed_dim=8",
    "model.head_hidden=16",
    "baseline.epochs=2",
    "adapt.epochs=2",
    "baseline.batch_source=8",
    "adapt.batch_source=8",
    "adapt.batch_target=8",
];

fn ssa(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ssa"));
    for kv in SMALL {
        cmd.args(["--set", kv]);
    }
    cmd.args(args).output().expect("run ssa")
}

fn ok(args: &[&str]) -> Output {
    let out = ssa(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn gen_is_deterministic_and_snapshots_config() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["gen", "--out", path(&a)]);
    ok(&["gen", "--out", path(&b)]);
    for f in ["source.ssad", "target.ssad", "target_eval.ssad", "manifest.txt", "config.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest = read(a.join("manifest.txt"));
    assert!(manifest.contains("source.ssad\tdomain=source\tsamples=48\tside=8\tlabels=0..=5"));
    assert!(manifest.contains("target.ssad\tdomain=target\tsamples=32\tside=8\tlabels=unlabeled"));
    assert!(manifest.contains("target_eval.ssad\tdomain=target\tsamples=32\tside=8\tlabels=6..=9"));
    let config = read(a.join("config.txt"));
    assert!(config.contains("data.side = 8\n"));
    assert!(config.contains("loss.rho = 0.6\n"));
}

#[test]
fn overrides_beat_config_file() {
    let dir = TempDir::new().unwrap();
    let file = dir.path().join("run.txt");
    std::fs::write(&file, "data.seed = 5\nadapt.lr = 0.01 # file\n").unwrap();
    let out = dir.path().join("g");
    ok(&["--config", path(&file), "--set", "data.seed=7", "gen", "--out", path(&out)]);
    let config = read(out.join("config.txt"));
    assert!(config.contains("data.seed = 7\n"));
    assert!(config.contains("adapt.lr = 0.01\n"));
}

#[test]
fn config_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let out = ssa(&["--set", "data.target_classes=0", "gen", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("target_classes"));
    let out = ssa(&["--set", "no.such.key=1", "gen", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = ssa(&["--set", "sweep.rhos=", "sweep", "--data", path(dir.path()), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pipeline_train_adapt_eval_analyze() {
    let dir = TempDir::new().unwrap();
    let p = |s: &str| dir.path().join(s);
    ok(&["gen", "--out", path(&p("data"))]);
    ok(&["train-baseline", "--data", path(&p("data")), "--out", path(&p("base"))]);
    assert!(read(p("base/train_log.txt")).lines().count() > 0);
    assert!(read(p("base/summary.txt")).starts_with("train_accuracy: "));
    let base_ckpt = p("base/model.ssam");
    ok(&["adapt", "--data", path(&p("data")), "--checkpoint", path(&base_ckpt), "--out", path(&p("adapt"))]);
    let log = read(p("adapt/adapt_log.txt"));
    assert!(log.lines().next().unwrap().contains("lr=1e-4"));

    let eval = |ckpt: &Path, out: &str| {
        ok(&[
            "--set",
            "eval.fpr=0.001,0.01,0.1",
            "eval",
            "--checkpoint",
            path(ckpt),
            "--dataset",
            path(&p("data/target_eval.ssad")),
            "--out",
            path(&p(out)),
        ])
    };
    let adapted = p("adapt/model.ssam");
    eval(&adapted, "eval");
    eval(&adapted, "eval2");
    for f in ["report.txt", "roc.csv", "embeddings.csv"] {
        assert_eq!(read(p("eval").join(f)), read(p("eval2").join(f)), "{f}");
    }
    let report = read(p("eval/report.txt"));
    let tpr: Vec<f64> = report
        .lines()
        .filter(|l| l.starts_with("tpr@fpr="))
        .map(|l| l.rsplit(' ').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(tpr.len(), 3);
    assert!(tpr.windows(2).all(|w| w[0] <= w[1]), "{tpr:?}");
    assert!(read(p("eval/roc.csv")).starts_with("fpr,tpr\n"));
    assert_eq!(read(p("eval/embeddings.csv")).lines().count(), 32);

    for (ckpt, out) in [(&base_ckpt, "an_base"), (&adapted, "an_adapt")] {
        ok(&["analyze", "--checkpoint", path(ckpt), "--dataset", path(&p("data/target_eval.ssad")), "--out", path(&p(out))]);
        let stats = read(p(out).join("stats.txt"));
        assert!(stats.contains("mirror_similarity: ") && stats.contains("inter_pairs: 384"));
    }
}

#[test]
fn eval_failures_map_to_exit_codes() {
    let dir = TempDir::new().unwrap();
    let p = |s: &str| dir.path().join(s);
    ok(&["gen", "--out", path(&p("data"))]);
    ok(&["train-baseline", "--data", path(&p("data")), "--out", path(&p("base"))]);
    let ckpt = p("base/model.ssam");

    let unlabeled = ssa(&["eval", "--checkpoint", path(&ckpt), "--dataset", path(&p("data/target.ssad")), "--out", path(&p("e"))]);
    assert_eq!(unlabeled.status.code(), Some(5));

    ok(&["--set", "data.side=6", "gen", "--out", path(&p("small"))]);
    let mismatch =
        ssa(&["eval", "--checkpoint", path(&ckpt), "--dataset", path(&p("small/target_eval.ssad")), "--out", path(&p("e"))]);
    assert_eq!(mismatch.status.code(), Some(5));
    let msg = String::from_utf8_lossy(&mismatch.stderr);
    assert!(msg.contains("64") && msg.contains("36"), "{msg}");

    std::fs::write(p("bad.ssad"), b"not a dataset").unwrap();
    let corrupt = ssa(&["eval", "--checkpoint", path(&ckpt), "--dataset", path(&p("bad.ssad")), "--out", path(&p("e"))]);
    assert_eq!(corrupt.status.code(), Some(3));
}

#[test]
fn sweep_writes_table_and_per_rho_runs() {
    let dir = TempDir::new().unwrap();
    let p = |s: &str| dir.path().join(s);
    ok(&["gen", "--out", path(&p("data"))]);
    ok(&["--set", "sweep.rhos=0.6", "sweep", "--data", path(&p("data")), "--out", path(&p("one"))]);
    let table = read(p("one/sweep.txt"));
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3, "{table}");
    assert!(rows[0].starts_with("method\ttpr@fpr=0.0001"));
    assert!(rows[1].starts_with("baseline\t") && rows[2].starts_with("rho=0.6\t"));
    assert!(p("one/baseline/model.ssam").exists());
    assert!(p("one/rho=0.6/report.txt").exists());

    ok(&[
        "--set",
        "sweep.rhos=0,0.5,0.6,0.7,0.8,0.9",
        "sweep",
        "--data",
        path(&p("data")),
        "--checkpoint",
        path(&p("one/baseline/model.ssam")),
        "--out",
        path(&p("six")),
    ]);
    let table = read(p("six/sweep.txt"));
    assert_eq!(table.lines().count(), 8);
    // the same baseline and seed reproduce the single-ratio run
    let row = |t: &str| t.lines().find(|l| l.starts_with("rho=0.6\t")).unwrap().to_string();
    assert_eq!(row(&table), row(&read(p("one/sweep.txt"))));
}

#[test]
fn help_lists_every_command() {
    let out = Command::new(env!("CARGO_BIN_EXE_ssa")).arg("--help").output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["gen", "train-baseline", "adapt", "eval", "analyze", "sweep"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}
