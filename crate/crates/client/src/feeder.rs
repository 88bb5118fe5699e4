//! Batch feeder driven by a flat jobs file.
//!
//! Each non-blank line of the jobs file is `label<TAB>params-file`; lines
//! starting with `#` are comments and relative paths are taken from the
//! directory holding the jobs file. The feeder submits every label, waits
//! for the results and stores each one as `<out>/<label>.result`. It keeps
//! no local state: a killed run is resumed by running it again, which
//! reuses the tasks the coordinator already holds and skips results already
//! on disk.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use xw_protocol::{Retention, Transport};

use crate::client::{BatchSpec, Client, ClientError, TaskOutcome};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Job {
    pub label: String,
    pub params_path: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum JobsError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("jobs file line {line}: {reason}")]
    Syntax { line: usize, reason: String },
}

/// Labels name result files, so they must be plain file name components.
fn check_label(label: &str) -> Result<(), String> {
    if label.is_empty() {
        return Err("empty label".into());
    }
    if label == "." || label == ".." || label.contains(['/', '\0']) {
        return Err(format!("label {label:?} is not a plain file name"));
    }
    Ok(())
}

pub fn parse_jobs(text: &str, base_dir: &Path) -> Result<Vec<Job>, JobsError> {
    let mut jobs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let syntax = |reason: String| JobsError::Syntax { line: i + 1, reason };
        let (label, path) = line
            .split_once('\t')
            .ok_or_else(|| syntax("expected label<TAB>params-file".into()))?;
        check_label(label).map_err(syntax)?;
        if path.is_empty() {
            return Err(syntax("empty params path".into()));
        }
        jobs.push(Job {
            label: label.to_string(),
            params_path: base_dir.join(path),
        });
    }
    Ok(jobs)
}

pub fn read_jobs(path: &Path) -> Result<Vec<Job>, JobsError> {
    let text = fs::read_to_string(path).map_err(|source| JobsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_jobs(&text, path.parent().unwrap_or(Path::new(".")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeederOptions {
    pub app_ref: String,
    pub batch_size: usize,
    pub poll_interval: Duration,
    pub deadline: Option<Duration>,
    /// Discard the results kept on the coordinator once all are on disk.
    pub end_session: bool,
}

impl FeederOptions {
    pub fn new(app_ref: impl Into<String>) -> Self {
        FeederOptions {
            app_ref: app_ref.into(),
            batch_size: 64,
            poll_interval: Duration::from_secs(2),
            deadline: None,
            end_session: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeederReport {
    /// Tasks created by this run.
    pub submitted: usize,
    /// Labels the coordinator already held.
    pub reused: usize,
    /// Later occurrences of a label already seen in the file.
    pub duplicates: Vec<String>,
    pub results_written: usize,
    /// Result files found on disk from an earlier run.
    pub results_present: usize,
    pub aborted: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum FeederError {
    #[error(transparent)]
    Jobs(#[from] JobsError),
    #[error(transparent)]
    Client(#[from] ClientError),
}

impl From<std::io::Error> for FeederError {
    fn from(e: std::io::Error) -> Self {
        FeederError::Client(ClientError::Io(e))
    }
}

pub fn result_path(out_dir: &Path, label: &str) -> PathBuf {
    out_dir.join(format!("{label}.result"))
}

/// Writes `bytes` so that a crash leaves either no file or the whole file.
fn write_atomically(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path.file_name().expect("result path has a file name").to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)
}

pub fn feeder_run<T: Transport>(
    client: &mut Client<T>,
    jobs_file: &Path,
    out_dir: &Path,
    opts: &FeederOptions,
) -> Result<FeederReport, FeederError> {
    let jobs = read_jobs(jobs_file)?;
    fs::create_dir_all(out_dir)?;
    let mut report = FeederReport::default();

    let mut seen = HashSet::new();
    let mut unique = Vec::new();
    for job in jobs {
        if seen.insert(job.label.clone()) {
            unique.push(job);
        } else {
            report.duplicates.push(job.label);
        }
    }
    if unique.is_empty() {
        return Ok(report);
    }

    let mut ids: BTreeMap<String, String> = BTreeMap::new();
    let known: HashMap<String, String> = client.list_tasks()?.into_iter().map(|t| (t.label, t.task_id)).collect();
    let mut fresh = Vec::new();
    for job in &unique {
        match known.get(&job.label) {
            Some(id) => {
                ids.insert(job.label.clone(), id.clone());
                report.reused += 1;
            }
            None => fresh.push(job),
        }
    }
    for chunk in fresh.chunks(opts.batch_size.max(1)) {
        let mut batch = BatchSpec::new(&opts.app_ref, Retention::KeepUntilSessionEnd);
        for job in chunk {
            let params = fs::read(&job.params_path).map_err(|source| JobsError::Io {
                path: job.params_path.display().to_string(),
                source,
            })?;
            batch.push(job.label.clone(), params);
        }
        let before = ids.len();
        ids.extend(client.submit_batch(&batch)?);
        report.submitted += ids.len() - before;
        log::info!("submitted {} of {} labels", ids.len(), unique.len());
    }

    let label_of: HashMap<&str, &str> = ids.iter().map(|(l, id)| (id.as_str(), l.as_str())).collect();
    let mut waiting = Vec::new();
    for job in &unique {
        if result_path(out_dir, &job.label).exists() {
            report.results_present += 1;
        } else {
            waiting.push(ids[&job.label].clone());
        }
    }
    let mut aborted = Vec::new();
    let mut written = 0;
    client.await_results_with(&waiting, opts.poll_interval, opts.deadline, |id, outcome| {
        let label = label_of[id];
        match outcome {
            TaskOutcome::Completed(payload) => {
                write_atomically(&result_path(out_dir, label), payload)?;
                written += 1;
            }
            TaskOutcome::Aborted => {
                log::warn!("task {id} ({label}) was aborted");
                aborted.push(label.to_string());
            }
        }
        Ok(())
    })?;
    report.results_written = written;
    report.aborted = aborted;
    if opts.end_session {
        client.end_session()?;
    }
    Ok(report)
}
