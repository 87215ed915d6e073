use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_fedfuse");

const SMALL: &str = "\
federation.rounds = 2
federation.local_epochs = 1
federation.clients = 2
optimizer.lr = 0.01
fusion.mode = sum
forest.trees = 10
seed = 3
model.arch = desk
data.source = synthetic
synth.train_per_class = 4
synth.test_per_class = 2
individual.epochs = 1
centralized.epochs = 2
";

#[test]
fn run_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.conf");
    std::fs::write(&config, SMALL).unwrap();
    for (mode, points) in [("individual", 1), ("centralized", 2), ("federated", 2)] {
        let out = dir.path().join(mode);
        let status = Command::new(BIN)
            .args(["run", "--mode", mode, "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(
            status.status.success(),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
        let stdout = String::from_utf8_lossy(&status.stdout);
        assert!(stdout.contains(&format!("mode: {mode}")));
        for f in [
            "confusion_physio.csv",
            "confusion_visual.csv",
            "confusion_fused.csv",
            "metrics.csv",
            "summary.txt",
        ] {
            assert!(out.join(f).is_file(), "{mode}: missing {f}");
        }
        let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
        assert_eq!(metrics.lines().count(), points + 1);
    }
}

#[test]
fn bad_arguments_fail() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "federation.rounds = many\n").unwrap();
    let runs: [&[&str]; 3] = [
        &["run", "--mode", "hybrid", "--config", "x", "--out", "y"],
        &[
            "run",
            "--mode",
            "individual",
            "--config",
            bad.to_str().unwrap(),
            "--out",
            "y",
        ],
        &[
            "client",
            "--config",
            bad.to_str().unwrap(),
            "--client-id",
            "0",
            "--data",
            ".",
        ],
    ];
    for args in runs {
        let out = Command::new(BIN).args(args).output().unwrap();
        assert!(!out.status.success(), "{args:?} succeeded");
    }
}
