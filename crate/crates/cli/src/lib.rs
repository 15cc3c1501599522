//! The `shadowfix` command line: boots the deployment and runs the experiments.
//!
//! Exit status is 0 on success, 2 when an experiment ran but missed one of its
//! assertions, 3 when the environment got in the way (bad arguments or config, ports in
//! use, unreadable or unwritable files).

pub mod checks;

use std::ffi::OsString;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use shadowfix_core::app::SESSION_HEADER;
use shadowfix_core::experiments::{rq1, rq2, rq4};
use shadowfix_core::oracles::Oracle;
use shadowfix_core::profile::{profile, Scenario};
use shadowfix_core::workload::{generate, CookieJar, Workload};
use shadowfix_net::http::EnvelopeClient;
use shadowfix_net::overhead::{measure_overhead, shop_requests, DEFAULT_REQUESTS, DEFAULT_STORE_OP_LATENCY};
use shadowfix_net::{Config, Topology};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ASSERTION: u8 = 2;
pub const EXIT_ENVIRONMENT: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "shadowfix", version, about = "Self-healing web application harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Boot production, the shadower and the control API; stop on ctrl-c.
    Run {
        /// Overrides the config's `app`.
        #[arg(long)]
        app: Option<String>,
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one of the evaluation experiments.
    #[command(subcommand)]
    Experiment(Experiment),
    /// Print the generated workload of a seed in the replayable text format.
    Workload {
        #[arg(long, default_value = "shop")]
        app: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Send a workload file, in order, to a running deployment.
    Replay {
        #[arg(long)]
        workload: PathBuf,
        /// Usually the proxy address of `run`.
        #[arg(long)]
        target: SocketAddr,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Debug, Subcommand)]
pub enum Experiment {
    /// Seeded null-dereference faults, valid/invalid patch counts per model.
    Rq1 {
        #[arg(long, default_value_t = 10)]
        faults: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 42)]
        workload_seed: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Divergence matrix of candidate patches under the regression oracles.
    Rq2 {
        /// `all` or one of status, content, method-coverage, block-coverage.
        #[arg(long, default_value = "all")]
        oracle: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 42)]
        workload_seed: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Client latency with and without the shadower over loopback.
    Rq3 {
        #[arg(long, default_value_t = DEFAULT_REQUESTS)]
        requests: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Simulated cost of one store operation.
        #[arg(long, default_value_t = DEFAULT_STORE_OP_LATENCY.as_micros() as u64)]
        store_latency_us: u64,
        #[command(flatten)]
        output: Output,
    },
    /// A real-bug analog end to end: ranked surviving patches with diffs.
    Rq4 {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 42)]
        workload_seed: u64,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Debug, Args)]
pub struct Output {
    /// Emit JSON instead of aligned text.
    #[arg(long)]
    pub json: bool,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Why a command did not succeed.
#[derive(Debug)]
pub enum Failure {
    Assertions(Vec<String>),
    Environment(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Environment(e)
    }
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn main_with(args: impl IntoIterator<Item = OsString>) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ENVIRONMENT } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Assertions(failed)) => {
            for f in failed {
                eprintln!("assertion failed: {f}");
            }
            EXIT_ASSERTION
        }
        Err(Failure::Environment(e)) => {
            eprintln!("error: {e:#}");
            EXIT_ENVIRONMENT
        }
    }
}

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("cannot start the async runtime")
}

fn emit(output: &Output, text: String, json: String) -> anyhow::Result<()> {
    let body = if output.json { json } else { text };
    write_out(output.out.as_deref(), &body)?;
    print!("{body}");
    Ok(())
}

fn write_out(path: Option<&Path>, body: &str) -> anyhow::Result<()> {
    if let Some(p) = path {
        fs::write(p, body).with_context(|| format!("cannot write {}", p.display()))?;
    }
    Ok(())
}

fn verdict(failed: Vec<String>) -> Result<(), Failure> {
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Assertions(failed))
    }
}

pub fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { app, config } => run(app, &config).map_err(Failure::Environment),
        Command::Experiment(e) => experiment(e),
        Command::Workload { app, seed, out } => {
            let w = generate(&app, seed).map_err(|e| anyhow::anyhow!("{e}"))?;
            let text = w.to_text();
            write_out(out.as_deref(), &text)?;
            if out.is_none() {
                print!("{text}");
            }
            Ok(())
        }
        Command::Replay {
            workload,
            target,
            output,
        } => replay(&workload, target, &output).map_err(Failure::Environment),
    }
}

fn experiment(e: Experiment) -> Result<(), Failure> {
    match e {
        Experiment::Rq1 {
            faults,
            seed,
            workload_seed,
            output,
        } => {
            let report = rq1::run(&rq1::Rq1Config {
                faults,
                seed,
                workload_seed,
                ..rq1::Rq1Config::default()
            });
            emit(&output, report.to_text(), report.to_json())?;
            verdict(checks::rq1(&report, faults))
        }
        Experiment::Rq2 {
            oracle,
            seed,
            workload_seed,
            output,
        } => {
            let oracles = if oracle == "all" {
                Oracle::ALL.to_vec()
            } else {
                vec![oracle.parse::<Oracle>().map_err(|e| anyhow::anyhow!(e))?]
            };
            let report = rq2::run(&rq2::Rq2Config {
                seed,
                workload_seed,
                oracles,
                ..rq2::Rq2Config::default()
            });
            emit(&output, report.to_text(), report.to_json())?;
            verdict(checks::rq2(&report))
        }
        Experiment::Rq3 {
            requests,
            seed,
            store_latency_us,
            output,
        } => {
            let prof = profile("shop").expect("bundled profile");
            let program = prof.program();
            let workload = shop_requests(requests, seed);
            let latency = Duration::from_micros(store_latency_us);
            let report = runtime()?
                .block_on(measure_overhead(&program, || prof.store(), &workload, latency))
                .context("overhead measurement")?;
            emit(&output, report.to_text(), report.to_json())?;
            verdict(checks::rq3(&report))
        }
        Experiment::Rq4 {
            scenario,
            workload_seed,
            output,
        } => {
            let scenario = Scenario::from_name(&scenario)
                .ok_or_else(|| anyhow::anyhow!("unknown scenario `{scenario}`; expected shipping or admin-email"))?;
            let report = rq4::run(&rq4::Rq4Config {
                workload_seed,
                ..rq4::Rq4Config::new(scenario)
            });
            emit(&output, report.to_text(), report.to_json())?;
            verdict(checks::rq4(&report))
        }
    }
}

fn run(app: Option<String>, path: &Path) -> anyhow::Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut config = Config::parse(&text).with_context(|| format!("in {}", path.display()))?;
    if let Some(app) = app {
        config.app = app;
    }
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .try_init()
        .ok();
    runtime()?.block_on(async {
        let topology = Topology::boot(&config).await?;
        tracing::info!(
            proxy = %topology.proxy_addr(),
            upstream = %topology.upstream_addr(),
            control = %topology.control_addr(),
            "serving"
        );
        println!("proxy {}", topology.proxy_addr());
        println!("upstream {}", topology.upstream_addr());
        println!("control {}", topology.control_addr());
        shutdown_signal().await;
        tracing::info!("shutting down");
        topology.shutdown().await;
        Ok(())
    })
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("signal handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = tokio::signal::ctrl_c().await;
}

fn replay(path: &Path, target: SocketAddr, output: &Output) -> anyhow::Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let workload = Workload::from_text(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    let statuses = runtime()?.block_on(async {
        let client = EnvelopeClient::new(SESSION_HEADER);
        let mut jar = CookieJar::new(SESSION_HEADER);
        let mut statuses = std::collections::BTreeMap::<u16, usize>::new();
        for r in workload.requests() {
            let resp = client
                .send(&jar.prepare(r), target)
                .await
                .with_context(|| format!("sending {}", r.request_id))?;
            jar.observe(r, &resp);
            *statuses.entry(resp.status).or_default() += 1;
        }
        anyhow::Ok(statuses)
    })?;
    let mut text = format!("requests {}\n", workload.len());
    for (status, n) in &statuses {
        text.push_str(&format!("status {status} {n}\n"));
    }
    let json = serde_json::to_string_pretty(&serde_json::json!({
        "requests": workload.len(),
        "statuses": statuses.iter().map(|(s, n)| (s.to_string(), *n)).collect::<std::collections::BTreeMap<_, _>>(),
    }))
    .expect("json") + "\n";
    emit(output, text, json)
}
