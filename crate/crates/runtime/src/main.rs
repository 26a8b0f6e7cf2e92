use clap::{Args, Parser, Subcommand};
use rfmesh_runtime::run::{self, BER_TABLE, SUMMARY_FILE};
use rfmesh_runtime::scenario::{load_scenario, ScenarioConfig};
use rfmesh_runtime::serve::{self, ServeOptions};
use rfmesh_runtime::{Result, RuntimeError};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "rfmesh", version, about = "Four-node full-mesh wireless network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario to completion and write the snapshot log and summary.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a paced simulation serving telemetry and accepting control.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: SocketAddr,
        /// Also serve the protocol over WebSocket at ws://<addr>/ws.
        #[arg(long)]
        ws_listen: Option<SocketAddr>,
        /// Simulated seconds per wall-clock second.
        #[arg(long)]
        pace: Option<f64>,
    },
    /// Monte-Carlo BER against Es/N0, written as a plain-text table.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Required when no scenario file is given.
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated seconds to run.
    #[arg(long)]
    duration: Option<f64>,
    /// Report times and rates at the real symbol rate.
    #[arg(long)]
    real_rate: bool,
    /// Keep the simulation on one thread.
    #[arg(long)]
    single_thread: bool,
}

impl Common {
    fn scenario(&self) -> Result<ScenarioConfig> {
        let mut s = match (&self.scenario, self.seed) {
            (Some(path), _) => load_scenario(path)?,
            (None, Some(seed)) => ScenarioConfig::with_seed(seed),
            (None, None) => return Err(RuntimeError::invalid("seed", "give --seed or a --scenario file")),
        };
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if self.real_rate {
            s.real_rate_reporting = true;
        }
        if self.duration.is_some() {
            s.duration = self.duration;
        }
        s.validate()?;
        Ok(s)
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rfmesh: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { common, out } => {
            let s = common.scenario()?;
            let summary = run::run(&s, &out, !common.single_thread)?;
            let n = &summary.network;
            println!(
                "{} links, {:.3e} s simulated, aggregate goodput {:.4e} bit/s; summary in {}",
                n.links.len(),
                n.duration_s,
                n.aggregate_throughput_bps,
                out.join(SUMMARY_FILE).display()
            );
            Ok(())
        }
        Command::Sweep { common, out } => {
            let s = common.scenario()?;
            for p in run::sweep(&s, &out)? {
                println!("{:6.2} dB  ber {:.4e}  theory {:.4e}  bits {}", p.es_n0_db, p.ber, p.theory, p.bits);
            }
            println!("table in {}", out.join(BER_TABLE).display());
            Ok(())
        }
        Command::Serve {
            common,
            listen,
            ws_listen,
            pace,
        } => {
            let mut s = common.scenario()?;
            if pace.is_some() {
                s.pace = pace;
                s.validate()?;
            }
            let opts = ServeOptions {
                ws_listen,
                parallel: !common.single_thread,
                ..ServeOptions::new(listen)
            };
            let rt = tokio::runtime::Runtime::new().map_err(|e| RuntimeError::Serve(e.to_string()))?;
            rt.block_on(async {
                let server = serve::start(&s, opts).await?;
                eprintln!("serving on {}", server.tcp_addr());
                if let Some(ws) = server.ws_addr() {
                    eprintln!("websocket bridge on ws://{ws}/ws");
                }
                server.wait().await.map(drop)
            })
        }
    }
}
