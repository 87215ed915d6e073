use std::error::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fedfuse::fedcore::{run_client, serve, ClientSetup, FedClient, TestMetrics};
use fedfuse::harness::{
    build_task, client_images, curve_csv, curve_from_history, export_report, run_experiment,
    ExperimentConfig, ExperimentMode,
};
use fedfuse::mem::{self, TrackingAllocator};
use fedfuse::nn::{evaluate, CnnModel, ImageSample, ModelWeights};
use fedfuse::transport::{serialize_weights, ServerTransport, TcpClient, TcpServer};

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

type AnyResult<T> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(
    name = "fedfuse",
    version,
    about = "Federated multimodal emotion recognition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Coordinate a federation over TCP.
    Server {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "0.0.0.0:7878")]
        listen: String,
        /// Directory for metrics.csv and the final global weights.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Join a federation as one client.
    Client {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        server: String,
        #[arg(long)]
        client_id: u32,
        /// Directory holding train.csv; without one the client trains on its
        /// share of the synthetic task.
        #[arg(long)]
        data: PathBuf,
    },
    /// Run one experiment mode in this process and export its report.
    Run {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use every FER2013 Training and PublicTest row.
        #[arg(long)]
        full_fer: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Individual,
    Centralized,
    Federated,
}

impl From<Mode> for ExperimentMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Individual => ExperimentMode::Individual,
            Mode::Centralized => ExperimentMode::Centralized,
            Mode::Federated => ExperimentMode::Federated,
        }
    }
}

fn rss() -> usize {
    mem::resident_peak_bytes().unwrap_or(0)
}

fn server_test_set(cfg: &ExperimentConfig) -> Option<Vec<ImageSample>> {
    match build_task(cfg, false) {
        Ok(task) => Some(
            task.iter()
                .flat_map(|c| c.test.iter().map(|s| s.image_sample()))
                .collect(),
        ),
        Err(e) => {
            log::warn!("no server-side test set: {e}");
            None
        }
    }
}

fn server(config: &Path, listen: &str, out: Option<&Path>) -> AnyResult<()> {
    let cfg = ExperimentConfig::from_file(config)?;
    let f = &cfg.federation;
    let mut transport = TcpServer::bind(listen)?;
    println!("listening on {}", transport.local_addr()?);
    let joined = transport.accept_clients(f.n_clients, f.join_timeout)?;
    println!("{joined} of {} clients connected", f.n_clients);

    let test = server_test_set(&cfg).filter(|t| !t.is_empty());
    let mut eval_model = CnnModel::zeros(f.arch)?;
    let mut score = |w: &ModelWeights| {
        let test = test.as_ref()?;
        eval_model.set_weights(w.clone()).ok()?;
        let e = evaluate(&eval_model, test).ok()?;
        Some(TestMetrics {
            loss: e.loss,
            accuracy: e.accuracy,
        })
    };
    let initial = CnnModel::init(f.arch, f.seed)?.into_weights();
    let history = serve(&mut transport, f, initial, Some(&mut score));
    transport.close();
    let history = history?;

    for r in &history.rounds {
        let test = r
            .test
            .map(|t| format!("{:.4}", t.accuracy))
            .unwrap_or_else(|| "-".into());
        println!(
            "round {} participants {} loss {:.4} accuracy {:.4} test_accuracy {test} wall_clock_s {:.3}",
            r.round,
            r.participants.len(),
            r.loss,
            r.accuracy,
            r.wall_clock_s
        );
    }
    println!("total_wall_clock_s {:.3}", history.total_wall_clock_s);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("metrics.csv"),
            curve_csv(&curve_from_history(&history)),
        )?;
        std::fs::write(
            dir.join("global_weights.bin"),
            serialize_weights(&history.final_weights)?,
        )?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn client(config: &Path, server: &str, id: u32, data: &Path) -> AnyResult<()> {
    let cfg = ExperimentConfig::from_file(config)?;
    let f = &cfg.federation;
    let setup = ClientSetup::new(id, client_images(&cfg, data, id as usize)?, f.seed);
    let mut client = FedClient::new(setup.id, setup.data, setup.seed, f)?;
    println!(
        "client {id}: {} training and {} validation samples",
        client.train_set().len(),
        client.validation_set().len()
    );
    let mut transport = TcpClient::connect(server, f.join_timeout)?;
    let report = run_client(&mut transport, &mut client, |u| {
        println!(
            "round {} samples {} val_loss {:.4} val_accuracy {:.4} peak_heap_bytes {} peak_rss_bytes {}",
            u.round,
            u.sample_count,
            u.metrics.loss,
            u.metrics.accuracy,
            mem::peak_bytes(),
            rss()
        );
    })?;
    println!(
        "done rounds_trained {} peak_heap_bytes {} peak_rss_bytes {}",
        report.rounds_trained,
        mem::peak_bytes(),
        rss()
    );
    Ok(())
}

fn run(mode: ExperimentMode, config: &Path, out: &Path, full_fer: bool) -> AnyResult<()> {
    let cfg = ExperimentConfig::from_file(config)?;
    let task = build_task(&cfg, full_fer)?;
    let report = run_experiment(&cfg, &task, mode)?;
    export_report(&report, out)?;
    print!("{}", report.summary());
    println!("peak_heap_bytes: {}", mem::peak_bytes());
    println!("peak_rss_bytes: {}", rss());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Server {
            config,
            listen,
            out,
        } => server(config, listen, out.as_deref()),
        Command::Client {
            config,
            server: addr,
            client_id,
            data,
        } => client(config, addr, *client_id, data),
        Command::Run {
            mode,
            config,
            out,
            full_fer,
        } => run((*mode).into(), config, out, *full_fer),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
