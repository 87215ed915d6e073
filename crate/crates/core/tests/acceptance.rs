//! End-to-end acceptance suite. Prints one PASS or FAIL line per criterion
//! and exits non-zero if any fails.

mod common;

use std::io::{BufRead, BufReader};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use fedfuse::dsp::design_butterworth;
use fedfuse::features::{extract_physio_features, PhysioWindow};
use fedfuse::fedcore::{run_federation, split_validation, ClientSetup, FederationConfig};
use fedfuse::harness::{
    build_task, run_centralized, run_federated, run_individual, ExperimentConfig,
};
use fedfuse::nn::{
    train_local, AdamConfig, AdamState, CnnArch, CnnModel, ImageSample, TrainConfig,
};
use fedfuse::seed;
use fedfuse::transport::{decode_message, deserialize_weights, encode_message, serialize_weights};
use fedfuse::EmotionLabel;
use rand::Rng as _;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn synthetic_config() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.conf");
    ExperimentConfig::from_file(&path).expect("configs/synthetic.conf parses")
}

fn fedavg_oracle() -> Outcome {
    let mut rng = seed::stream(2024, &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        worst = worst.max(common::fedavg_error(&common::random_updates(&mut rng)));
    }
    check(
        worst < 1e-12,
        format!("max relative error {worst:.2e} over 100 sets"),
    )
}

fn single_client_degeneracy() -> Outcome {
    let cfg = FederationConfig {
        n_clients: 1,
        rounds: 5,
        local_epochs: 4,
        batch_size: 8,
        arch: CnnArch::reduced(),
        adam: AdamConfig {
            lr: 3e-3,
            ..AdamConfig::default()
        },
        seed: 17,
        ..FederationConfig::default()
    };
    let mut rng = seed::stream(17, &[1]);
    let data: Vec<ImageSample> = (0..60)
        .map(|i| ImageSample {
            pixels: (0..64).map(|_| rng.random::<f64>()).collect(),
            label: EmotionLabel::from_index(i % 7).unwrap(),
        })
        .collect();
    let setup = ClientSetup::new(0, data, cfg.seed);
    let (train, _) = split_validation(&setup.data, cfg.validation_fraction, setup.seed);
    let mut model = CnnModel::init(cfg.arch, cfg.seed).map_err(|e| e.to_string())?;
    let mut adam = AdamState::new(cfg.adam);
    let train_cfg = TrainConfig {
        epochs: cfg.rounds * cfg.local_epochs,
        batch_size: cfg.batch_size,
        augment: None,
        round_to_f32: true,
    };
    train_local(&mut model, &train, &train_cfg, &mut adam, setup.seed)
        .map_err(|e| e.to_string())?;
    let fed = run_federation(&cfg, vec![setup], None).map_err(|e| e.to_string())?;
    let differing = fed
        .history
        .final_weights
        .values()
        .zip(model.weights().values())
        .filter(|(a, b)| a.to_bits() != b.to_bits())
        .count();
    check(
        differing == 0,
        format!(
            "{differing} of {} parameters differ after 5 rounds x 4 epochs",
            model.weights().param_count()
        ),
    )
}

fn gradient_correctness() -> Outcome {
    let errs: Vec<f64> = [1, 2, 3].map(common::gradient_check).to_vec();
    let worst = errs.iter().copied().fold(0.0, f64::max);
    check(
        worst < 1e-4,
        format!("max relative error {worst:.2e} over seeds 1-3"),
    )
}

fn filter_fidelity() -> Outcome {
    let (fc, fs) = (0.5, 4.0);
    let c = design_butterworth(4, fc, fs).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for i in 1..=16 {
        let f = fs / 2.0 * i as f64 / 17.0;
        let ratio = (std::f64::consts::PI * f / fs).tan() / (std::f64::consts::PI * fc / fs).tan();
        let analytic = (1.0 + ratio.powi(8)).sqrt().recip();
        worst = worst.max((c.magnitude(f, fs) - analytic).abs());
    }
    let db = 20.0 * c.magnitude(fc, fs).log10();
    check(
        worst < 1e-6 && (db + 3.01).abs() <= 0.01,
        format!("max deviation {worst:.2e} at 16 frequencies, {db:.4} dB at cutoff"),
    )
}

fn feature_oracle() -> Outcome {
    let mut rng = seed::stream(5, &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=64);
        let mut gen = |s: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(-s..s)).collect() };
        let (hr, eda, temp) = (gen(100.0), gen(5.0), gen(1.0));
        let w = PhysioWindow::new(hr.clone(), eda.clone(), temp.clone(), 4.0, None)
            .map_err(|e| e.to_string())?;
        let got = extract_physio_features(&w)
            .map_err(|e| e.to_string())?
            .as_array();
        let want = common::brute_force_features(&hr, &eda, &temp);
        for k in 0..3 {
            worst = worst.max((got[k] - want[k]).abs() / want[k].abs().max(1.0));
        }
    }
    check(
        worst <= 1e-12,
        format!("max relative deviation {worst:.2e} over 1000 windows"),
    )
}

fn fusion_gain() -> Outcome {
    let cfg = synthetic_config();
    let task = build_task(&cfg, false).map_err(|e| e.to_string())?;
    let r = run_federated(&cfg, &task).map_err(|e| e.to_string())?;
    let (p, v, f) = (r.accuracy_physio(), r.accuracy_visual(), r.accuracy_fused());
    check(
        f >= p.max(v) + 0.02,
        format!(
            "fused {f:.4}, physio {p:.4}, visual {v:.4} over {} test samples",
            r.test_samples
        ),
    )
}

struct CliRun {
    test_accuracy: Vec<f64>,
    client_peak_rss: Vec<usize>,
}

fn wait_ok(child: Child, what: &str) -> Result<String, String> {
    let out = child.wait_with_output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{what} exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// Server and three clients as separate `fedfuse` processes over TCP.
fn cli_federation() -> Result<CliRun, String> {
    let bin = env!("CARGO_BIN_EXE_fedfuse");
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.conf");
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = out.path().join("client-data");
    let metrics_dir: PathBuf = out.path().join("server");
    let mut server = Command::new(bin)
        .args(["server", "--config"])
        .arg(&config)
        .args(["--listen", "127.0.0.1:0", "--out"])
        .arg(&metrics_dir)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut first = String::new();
    let mut stdout = BufReader::new(server.stdout.take().unwrap());
    stdout.read_line(&mut first).map_err(|e| e.to_string())?;
    let addr = first
        .trim()
        .strip_prefix("listening on ")
        .ok_or_else(|| format!("unexpected server output {first:?}"))?
        .to_string();
    let clients: Vec<Child> = (0..3)
        .map(|id| {
            Command::new(bin)
                .args(["client", "--config"])
                .arg(&config)
                .args(["--server", &addr, "--client-id", &id.to_string(), "--data"])
                .arg(&data)
                .stdout(Stdio::piped())
                .stderr(Stdio::piped())
                .spawn()
                .map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    let mut client_peak_rss = Vec::new();
    for (id, c) in clients.into_iter().enumerate() {
        let text = wait_ok(c, &format!("client {id}"))?;
        let done = text
            .lines()
            .find(|l| l.starts_with("done "))
            .ok_or_else(|| format!("client {id} did not finish"))?;
        let rss = done
            .split_whitespace()
            .skip_while(|w| *w != "peak_rss_bytes")
            .nth(1)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| format!("no peak_rss_bytes in {done:?}"))?;
        client_peak_rss.push(rss);
    }
    std::io::copy(&mut stdout, &mut std::io::sink()).ok();
    wait_ok(server, "server")?;
    let csv =
        std::fs::read_to_string(metrics_dir.join("metrics.csv")).map_err(|e| e.to_string())?;
    let test_accuracy = csv
        .lines()
        .skip(1)
        .map(|l| {
            l.split(',')
                .nth(4)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| format!("bad row {l:?}"))
        })
        .collect::<Result<Vec<f64>, String>>()?;
    Ok(CliRun {
        test_accuracy,
        client_peak_rss,
    })
}

fn convergence(run: &CliRun) -> Outcome {
    let acc = &run.test_accuracy;
    let last = *acc.last().ok_or("no rounds recorded")?;
    let reached = acc.iter().position(|&a| a >= 0.9 * last).map(|i| i + 1);
    check(
        acc.len() == 20 && reached.is_some_and(|r| r <= 18),
        format!(
            "final test accuracy {last:.4} after {} rounds; 90% of it first reached in round {}",
            acc.len(),
            reached.map_or("-".into(), |r| r.to_string())
        ),
    )
}

fn memory_budget(run: &CliRun) -> Outcome {
    let peak = run.client_peak_rss.iter().copied().max().unwrap_or(0);
    check(
        peak > 0 && peak < 200 * 1024 * 1024,
        format!(
            "client peak resident sizes {:?} MB",
            run.client_peak_rss
                .iter()
                .map(|b| b / (1024 * 1024))
                .collect::<Vec<_>>()
        ),
    )
}

fn timing_ordering() -> Outcome {
    let mut cfg = synthetic_config();
    cfg.federation.rounds = 10;
    let task = build_task(&cfg, false).map_err(|e| e.to_string())?;
    let ind = run_individual(&cfg, &task).map_err(|e| e.to_string())?;
    let cen = run_centralized(&cfg, &task).map_err(|e| e.to_string())?;
    let fed = run_federated(&cfg, &task).map_err(|e| e.to_string())?;
    let (i, c, f) = (ind.wall_clock_s, cen.wall_clock_s, fed.wall_clock_s);
    check(
        f > c && c > i,
        format!("federated {f:.2} s (10 rounds x 4 epochs), centralized {c:.2} s (40 epochs), individual {i:.2} s (4 epochs)"),
    )
}

fn wire_golden() -> Outcome {
    for (golden, msg) in common::golden_messages() {
        if encode_message(&msg).map_err(|e| e.to_string())? != golden {
            return Err(format!("{:?} frame differs from fixture", msg.kind));
        }
        let (decoded, _) = decode_message(golden).map_err(|e| e.to_string())?;
        if decoded != msg {
            return Err(format!("{:?} fixture decodes differently", msg.kind));
        }
    }
    let blob = include_bytes!("fixtures/blob.bin");
    if serialize_weights(&common::fixture_weights()).map_err(|e| e.to_string())? != blob {
        return Err("weight blob differs from fixture".into());
    }
    let mut rng = seed::stream(9, &[]);
    let mut missed = 0;
    for _ in 0..10_000 {
        let mut bytes = blob.to_vec();
        let i = rng.random_range(0..bytes.len());
        bytes[i] ^= rng.random_range(1..=255u8);
        missed += usize::from(deserialize_weights(&bytes).is_ok());
    }
    check(
        missed == 0,
        format!("7 frames and 1 blob byte-identical; {missed} of 10000 flips undetected"),
    )
}

fn forest_sanity() -> Outcome {
    let (acc, sum_err) = common::separable_accuracy();
    check(
        acc >= 0.9 && sum_err < 1e-9,
        format!("held-out accuracy {acc:.4}, worst probability-sum error {sum_err:.1e}"),
    )
}

fn run(n: usize, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    run_after(Duration::ZERO, n, name, limit, f)
}

/// Like `run`, counting `spent` of earlier shared work against the limit.
fn run_after(
    spent: Duration,
    n: usize,
    name: &str,
    limit: Duration,
    f: impl FnOnce() -> Outcome,
) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let elapsed = spent + start.elapsed();
    let (ok, detail) = match result {
        Ok(d) if elapsed < limit => (true, d),
        Ok(d) => (false, format!("{d}; took longer than {limit:?}")),
        Err(d) => (false, d),
    };
    println!(
        "{} {n:>2} {name}: {detail} [{:.2} s]",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    ok
}

fn main() {
    let mins = |m: u64| Duration::from_secs(60 * m);
    let secs = Duration::from_secs;
    let mut ok = vec![
        run(1, "fedavg oracle", secs(10), fedavg_oracle),
        run(
            2,
            "single-client degeneracy",
            mins(2),
            single_client_degeneracy,
        ),
        run(3, "gradient correctness", mins(5), gradient_correctness),
        run(4, "filter fidelity", secs(1), filter_fidelity),
        run(5, "feature oracle", secs(10), feature_oracle),
        run(6, "fusion gain", mins(10), fusion_gain),
    ];

    let start = Instant::now();
    let cli = catch_unwind(cli_federation).unwrap_or_else(|_| Err("federation panicked".into()));
    let cli_time = start.elapsed();
    let cli = &cli;
    let with_cli = |f: fn(&CliRun) -> Outcome| {
        move || match cli {
            Ok(run) => f(run),
            Err(e) => Err(e.clone()),
        }
    };
    ok.push(run_after(
        cli_time,
        7,
        "convergence",
        mins(15),
        with_cli(convergence),
    ));
    ok.push(run(8, "timing ordering", mins(15), timing_ordering));
    ok.push(run(9, "wire golden files", secs(5), wire_golden));
    ok.push(run_after(
        cli_time,
        10,
        "memory budget",
        mins(15),
        with_cli(memory_budget),
    ));
    ok.push(run(11, "forest sanity", mins(1), forest_sanity));

    let passed = ok.iter().filter(|&&b| b).count();
    println!("{passed} of {} criteria passed", ok.len());
    if passed != ok.len() {
        std::process::exit(1);
    }
}
