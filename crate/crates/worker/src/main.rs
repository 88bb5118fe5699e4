use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use xw_common::load_config;
use xw_protocol::TcpTransport;
use xw_worker::{Agent, WorkerConfig};

#[derive(Parser)]
#[command(name = "worker", about = "Run a volunteer worker")]
struct Args {
    /// Configuration file (JSON).
    #[arg(long)]
    config: PathBuf,
}

fn main() -> ExitCode {
    xw_common::init_logging();
    let args = Args::parse();
    let config: WorkerConfig = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("worker: {e}");
            return ExitCode::from(1);
        }
    };
    let transport = TcpTransport::new(config.coordinator.clone());
    let mut agent = match Agent::new(config, transport) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("worker: {e}");
            return ExitCode::from(1);
        }
    };
    let stop = agent.stop_handle();
    if let Err(e) = ctrlc::set_handler(move || stop.stop()) {
        eprintln!("worker: cannot install signal handler: {e}");
    }
    log::info!("worker {} starting", agent.worker_id());
    match agent.run() {
        Ok(stats) => {
            log::info!("worker stopped: {stats:?}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("worker: {e}");
            ExitCode::from(1)
        }
    }
}
