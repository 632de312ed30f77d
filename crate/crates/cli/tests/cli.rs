use std::path::Path;
use std::process::{Command, Output};

fn das(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_das"))
        .args(args)
        .env("RAYON_NUM_THREADS", "1")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = das(args);
    assert!(
        out.status.success(),
        "das {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: [&str; 10] = [
    "--set", "d_model=16", "--set", "heads=2", "--set", "layers=1", "--set", "epochs=2", "--set", "batch_size=64",
];

#[test]
fn help_lists_every_subcommand() {
    let out = das(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["sessionize", "train", "evaluate", "predict", "ablate", "synth"] {
        assert!(text.contains(cmd), "missing {cmd} in\n{text}");
    }
}

#[test]
fn invalid_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.txt");
    std::fs::write(&cfg, "seed=3\nlearning_rat=0.1\n").unwrap();
    let out = das(&["synth", "--config", p(&cfg), "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(das_cli::exit_code("config")));
    let err = stderr(&out);
    assert!(err.starts_with("error[config]:"), "{err}");
    assert!(err.contains("learning_rat"), "{err}");
    assert_eq!(err.lines().count(), 1, "{err}");
}

#[test]
fn bad_flags_are_usage_errors() {
    for args in [&["frobnicate"][..], &["train", "--seed", "x"], &["train", "--nope"]] {
        let out = das(args);
        assert_eq!(out.status.code(), Some(das_cli::exit_code("usage")), "{args:?}");
        assert!(stderr(&out).starts_with("error[usage]:"), "{}", stderr(&out));
    }
}

#[test]
fn missing_input_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = das(&["sessionize", "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(das_cli::exit_code("config")));
    assert!(stderr(&out).contains("input"));
}

#[test]
fn synth_train_evaluate_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    let stdout = ok(&["synth", "--set", "users=80", "--seed", "3", "--out-dir", p(&data)]);
    assert!(stdout.contains("bayes_auc="));
    let log = data.join("log.csv");
    assert!(data.join("truth.csv").exists());

    let sess = root.join("sess");
    let table = ok(&["sessionize", "--input", p(&log), "--out-dir", p(&sess)]);
    assert!(table.contains("sessions per user"));
    let rows = std::fs::read_to_string(sess.join("sessionized.csv")).unwrap();
    let interactions = rows.lines().count() - 1;
    assert!(rows.lines().next().unwrap().ends_with("session_id,dropout"));
    assert!(std::fs::read_to_string(sess.join("stats.txt")).unwrap().contains("sessions="));
    assert!(sess.join("gaps.tsv").exists());

    let run = root.join("run");
    let mut args = vec!["train", "--input", p(&log), "--out-dir", p(&run), "--seed", "5"];
    args.extend(SMALL);
    let summary = ok(&args);
    assert!(summary.contains("test_auc="));
    let curves = std::fs::read_to_string(run.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().next().unwrap(), "epoch,train_loss,val_auc,lr");
    assert_eq!(curves.lines().count(), 3);

    // the echoed config alone reproduces the run
    let again = root.join("again");
    let echoed = run.join("run_config.txt");
    ok(&["train", "--config", p(&echoed), "--out-dir", p(&again)]);
    assert_eq!(curves, std::fs::read_to_string(again.join("curves.csv")).unwrap());
    assert_eq!(
        std::fs::read(run.join("checkpoint/model.ckpt")).unwrap(),
        std::fs::read(again.join("checkpoint/model.ckpt")).unwrap()
    );

    let ck = run.join("checkpoint");
    let eval = ok(&["evaluate", "--checkpoint", p(&ck), "--input", p(&log), "--out-dir", p(&root.join("eval"))]);
    let line: Vec<&str> = eval.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(line[0], "test");
    let auc: f64 = line[4].parse().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    assert!(root.join("eval/auc.tsv").exists());

    let pred = ok(&["predict", "--checkpoint", p(&ck), "--input", p(&log)]);
    let mut lines = pred.lines();
    assert_eq!(lines.next().unwrap(), "user_id,timestamp,question_id,dropout_probability");
    let probs: Vec<f64> = lines.map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(probs.len(), interactions);
    assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
}

#[test]
fn tampered_checkpoint_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&["synth", "--set", "users=40", "--out-dir", p(&root.join("data"))]);
    let log = root.join("data/log.csv");
    let mut args = vec!["train", "--input", p(&log), "--out-dir", p(root)];
    args.extend(SMALL);
    args.extend(["--set", "epochs=1"]);
    ok(&args);
    let limits = root.join("checkpoint/limits.txt");
    let text = std::fs::read_to_string(&limits).unwrap().replace("part.1=30", "part.1=31");
    std::fs::write(&limits, text).unwrap();
    let out = das(&["predict", "--checkpoint", p(&root.join("checkpoint")), "--input", p(&log)]);
    assert_eq!(out.status.code(), Some(das_cli::exit_code("compatibility")), "{}", stderr(&out));
}
