use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::mpsc;
use std::sync::Arc;

use clap::Parser;
use xw_common::{load_config, SystemClock};
use xw_coordinator::{Coordinator, CoordinatorConfig, Server, Service, SharedService};
use xw_protocol::CoordinatorIdentity;

#[derive(Parser)]
#[command(name = "coordinator", about = "Run the task coordinator")]
struct Args {
    /// Configuration file (JSON).
    #[arg(long, required_unless_present = "genkey")]
    config: Option<PathBuf>,
    /// Print the identity fingerprint workers and clients must trust, then exit.
    #[arg(long)]
    print_fingerprint: bool,
    /// Print a fresh identity key and its fingerprint, then exit.
    #[arg(long)]
    genkey: bool,
}

fn main() -> ExitCode {
    xw_common::init_logging();
    let args = Args::parse();
    if args.genkey {
        let id = CoordinatorIdentity::generate();
        println!("identity_key {}", id.seed_hex());
        println!("fingerprint {}", id.fingerprint());
        return ExitCode::SUCCESS;
    }
    let path = args.config.expect("clap enforces --config");
    let config: CoordinatorConfig = match load_config(&path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("coordinator: {e}");
            return ExitCode::from(1);
        }
    };
    if args.print_fingerprint {
        println!("{}", config.identity().fingerprint());
        return ExitCode::SUCCESS;
    }
    let bind = format!("{}:{}", config.bind_address, config.port);
    let coordinator = match Coordinator::recover(config, Arc::new(SystemClock::new())) {
        Ok((c, _)) => c,
        Err(e) if e.is_corrupt_journal() => {
            eprintln!("coordinator: refusing to start: {e}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("coordinator: {e}");
            return ExitCode::from(1);
        }
    };
    eprintln!("coordinator fingerprint {}", coordinator.identity().fingerprint());
    let (tx, rx) = mpsc::channel();
    if let Err(e) = ctrlc::set_handler(move || {
        let _ = tx.send(());
    }) {
        eprintln!("coordinator: cannot install signal handler: {e}");
    }
    let server = match Server::start(SharedService::new(Service::new(coordinator)), &bind) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("coordinator: cannot listen on {bind}: {e}");
            return ExitCode::from(1);
        }
    };
    let _ = rx.recv();
    log::info!("shutting down");
    server.shutdown();
    ExitCode::SUCCESS
}
