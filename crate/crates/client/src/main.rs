use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use xw_client::{feeder_run, read_jobs, result_path, BatchSpec, Client, ClientConfig, FeederOptions, TaskOutcome};
use xw_common::load_config;
use xw_protocol::{AppKind, Retention, TcpTransport};

#[derive(Parser)]
#[command(name = "xwclient", about = "Submit tasks to a coordinator and collect their results")]
struct Args {
    /// Configuration file (JSON).
    #[arg(long)]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum RetentionArg {
    Keep,
    Discard,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Native,
    Managed,
}

#[derive(Subcommand)]
enum Command {
    /// Submit every line of a jobs file; prints `label<TAB>task_id` lines.
    Submit {
        #[arg(long)]
        app: Option<String>,
        #[arg(long)]
        jobs: PathBuf,
        #[arg(long, value_enum, default_value = "discard")]
        retention: RetentionArg,
    },
    /// Wait for the tasks of an ids file and write `<out>/<label>.result`.
    Await {
        #[arg(long)]
        ids: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Submit a jobs file and collect all its results; safe to rerun.
    Feeder {
        #[arg(long)]
        app: Option<String>,
        #[arg(long)]
        jobs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Leave the results stored on the coordinator afterwards.
        #[arg(long)]
        keep_results: bool,
    },
    /// Upload an application (administrator only).
    RegisterApp {
        #[arg(long = "ref")]
        app_ref: String,
        #[arg(long)]
        file: PathBuf,
        #[arg(long, value_enum, default_value = "native")]
        kind: KindArg,
    },
}

fn app_or_config(app: Option<String>, cfg: &ClientConfig) -> Result<String, String> {
    app.or_else(|| cfg.app.clone())
        .ok_or_else(|| "no application given (use --app or set `app` in the config)".to_string())
}

fn read_ids(path: &Path) -> Result<BTreeMap<String, String>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut ids = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (label, id) = line
            .split_once('\t')
            .ok_or_else(|| format!("{} line {}: expected label<TAB>task_id", path.display(), i + 1))?;
        ids.insert(id.trim().to_string(), label.to_string());
    }
    Ok(ids)
}

fn run(args: Args) -> Result<(), String> {
    let cfg: ClientConfig = load_config(&args.config).map_err(|e| e.to_string())?;
    let mut client = Client::new(
        TcpTransport::new(cfg.coordinator.clone()),
        cfg.fingerprint,
        &cfg.login,
        &cfg.password,
    );
    match args.command {
        Command::Submit { app, jobs, retention } => {
            let retention = match retention {
                RetentionArg::Keep => Retention::KeepUntilSessionEnd,
                RetentionArg::Discard => Retention::DiscardOnFetch,
            };
            let mut batch = BatchSpec::new(app_or_config(app, &cfg)?, retention);
            for job in read_jobs(&jobs).map_err(|e| e.to_string())? {
                let params = fs::read(&job.params_path).map_err(|e| format!("{}: {e}", job.params_path.display()))?;
                batch.push(job.label, params);
            }
            let ids = client.submit_batch(&batch).map_err(|e| e.to_string())?;
            for (label, _) in &batch.items {
                println!("{label}\t{}", ids[label]);
            }
        }
        Command::Await { ids, out } => {
            let ids = read_ids(&ids)?;
            fs::create_dir_all(&out).map_err(|e| e.to_string())?;
            let task_ids: Vec<String> = ids.keys().cloned().collect();
            let done = client
                .await_results_with(&task_ids, cfg.poll_interval(), cfg.deadline(), |id, outcome| {
                    if let TaskOutcome::Completed(payload) = outcome {
                        fs::write(result_path(&out, &ids[id]), payload)?;
                    }
                    Ok(())
                })
                .map_err(|e| e.to_string())?;
            let aborted: Vec<&str> = done
                .iter()
                .filter(|(_, o)| **o == TaskOutcome::Aborted)
                .map(|(id, _)| ids[id].as_str())
                .collect();
            println!("{} results, {} aborted", done.len() - aborted.len(), aborted.len());
            for label in aborted {
                println!("aborted\t{label}");
            }
        }
        Command::Feeder {
            app,
            jobs,
            out,
            keep_results,
        } => {
            let opts = FeederOptions {
                app_ref: app_or_config(app, &cfg)?,
                batch_size: cfg.batch_size,
                poll_interval: cfg.poll_interval(),
                deadline: cfg.deadline(),
                end_session: !keep_results,
            };
            let report = feeder_run(&mut client, &jobs, &out, &opts).map_err(|e| e.to_string())?;
            println!(
                "submitted {}, reused {}, written {}, already present {}, aborted {}, duplicate lines {}",
                report.submitted,
                report.reused,
                report.results_written,
                report.results_present,
                report.aborted.len(),
                report.duplicates.len()
            );
        }
        Command::RegisterApp { app_ref, file, kind } => {
            let payload = fs::read(&file).map_err(|e| format!("{}: {e}", file.display()))?;
            let kind = match kind {
                KindArg::Native => AppKind::NativeBinary,
                KindArg::Managed => AppKind::ManagedArchive,
            };
            client
                .register_app(&app_ref, kind, &payload)
                .map_err(|e| e.to_string())?;
            println!("registered {app_ref}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    xw_common::init_logging();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("xwclient: {e}");
            ExitCode::from(1)
        }
    }
}
