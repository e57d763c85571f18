//! Multirun job launcher with self-documenting run directories.
//!
//! Every launch creates `outputs/<timestamp>/` (override the root with the
//! `PERTOPT_OUTPUT_ROOT` environment variable or [`LaunchOptions`]), and one
//! numbered directory per job. `config.yaml` (fully resolved) and
//! `overrides.yaml` land on disk before the task runs, so even a crashed
//! job leaves enough behind to replicate it; `metrics.csv` is written after
//! the task returns.
//!
//! Multirun mode expands the cartesian product of all multi-value overrides
//! in declaration order, first override varying slowest. Jobs run with at
//! most `parallelism` in flight; the returned records are always in
//! cartesian order regardless of completion order.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::config::overrides::{apply_override, parse_overrides, OverrideSpec};
use crate::config::{to_yaml, ConfigNode, ConfigValue, Registry};
use crate::error::{Error, Result};

/// Tabular task output; one launch writes it verbatim to `metrics.csv`.
/// Cells are preformatted strings so tasks control number formatting.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Metrics {
    pub fn new<S: Into<String>>(columns: Vec<S>) -> Self {
        Metrics {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::InvalidArgument(format!(
                "metrics row has {} cells for {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    /// First-row cell by column name.
    pub fn get(&self, column: &str) -> Option<&str> {
        let i = self.columns.iter().position(|c| c == column)?;
        Some(self.rows.first()?.get(i)?.as_str())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct LaunchOptions {
    pub multirun: bool,
    pub parallelism: usize,
    /// Overrides the `outputs/` root; falls back to `PERTOPT_OUTPUT_ROOT`,
    /// then `outputs`.
    pub output_root: Option<PathBuf>,
}

impl Default for LaunchOptions {
    fn default() -> Self {
        LaunchOptions {
            multirun: false,
            parallelism: 1,
            output_root: None,
        }
    }
}

impl LaunchOptions {
    pub fn multirun(parallelism: usize) -> Self {
        LaunchOptions {
            multirun: true,
            parallelism,
            output_root: None,
        }
    }
}

/// One launched job: everything needed to reproduce and interpret it.
#[derive(Debug)]
pub struct RunRecord {
    pub job_index: usize,
    pub dir: PathBuf,
    pub config: ConfigNode,
    pub overrides: Vec<String>,
    pub seed: u64,
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug)]
pub struct LaunchReport {
    pub sweep_dir: PathBuf,
    pub records: Vec<RunRecord>,
}

impl LaunchReport {
    pub fn all_succeeded(&self) -> bool {
        self.records.iter().all(RunRecord::succeeded)
    }

    pub fn failure_summary(&self) -> Option<String> {
        let failures: Vec<String> = self
            .records
            .iter()
            .filter_map(|r| {
                r.error
                    .as_ref()
                    .map(|e| format!("job {} ({}): {}", r.job_index, r.dir.display(), e))
            })
            .collect();
        if failures.is_empty() {
            None
        } else {
            Some(format!(
                "{} of {} jobs failed:\n{}",
                failures.len(),
                self.records.len(),
                failures.join("\n")
            ))
        }
    }
}

struct JobPlan {
    index: usize,
    config: ConfigNode,
    tokens: Vec<String>,
}

/// Resolve overrides against the root config and run one job per element of
/// the cartesian product (a single job when not sweeping).
pub fn launch<F>(
    registry: &Registry,
    root: &ConfigNode,
    task: F,
    overrides: &[String],
    opts: &LaunchOptions,
) -> Result<LaunchReport>
where
    F: Fn(&ConfigNode, &Path) -> Result<Metrics> + Sync,
{
    if opts.parallelism == 0 {
        return Err(Error::InvalidArgument("parallelism must be ≥ 1".into()));
    }
    let specs = parse_overrides(overrides)?;
    if !opts.multirun {
        for spec in &specs {
            if spec.values.len() != 1 {
                return Err(Error::InvalidOverride {
                    token: spec.token.clone(),
                    msg: "multi-value overrides require multirun mode".into(),
                });
            }
        }
    }
    let jobs = plan_jobs(registry, root, &specs)?;
    let sweep_dir = create_sweep_dir(opts)?;

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<RunRecord>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let workers = opts.parallelism.min(jobs.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let record = run_job(&jobs[i], &sweep_dir, &task);
                slots.lock().expect("result lock")[i] = Some(record);
            });
        }
    });

    let records = slots
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect();
    Ok(LaunchReport { sweep_dir, records })
}

fn plan_jobs(
    registry: &Registry,
    root: &ConfigNode,
    specs: &[OverrideSpec],
) -> Result<Vec<JobPlan>> {
    let counts: Vec<usize> = specs.iter().map(|s| s.values.len()).collect();
    let total: usize = counts.iter().product::<usize>().max(1);
    let mut jobs = Vec::with_capacity(total);
    for index in 0..total {
        let mut config = root.clone();
        let mut tokens = Vec::with_capacity(specs.len());
        // First override varies slowest.
        let mut stride: usize = counts.iter().product::<usize>().max(1);
        for (spec, &count) in specs.iter().zip(&counts) {
            stride /= count;
            let value_index = (index / stride) % count;
            apply_override(registry, &mut config, spec, value_index)?;
            tokens.push(spec.token_for(value_index));
        }
        jobs.push(JobPlan {
            index,
            config,
            tokens,
        });
    }
    Ok(jobs)
}

fn output_root(opts: &LaunchOptions) -> PathBuf {
    if let Some(root) = &opts.output_root {
        return root.clone();
    }
    if let Ok(root) = std::env::var("PERTOPT_OUTPUT_ROOT") {
        if !root.is_empty() {
            return PathBuf::from(root);
        }
    }
    PathBuf::from("outputs")
}

fn create_sweep_dir(opts: &LaunchOptions) -> Result<PathBuf> {
    let root = output_root(opts);
    std::fs::create_dir_all(&root)?;
    let stamp = chrono::Local::now().format("%Y-%m-%d_%H-%M-%S").to_string();
    // Timestamp collisions get a numeric suffix.
    for attempt in 0..10_000u32 {
        let name = if attempt == 0 {
            stamp.clone()
        } else {
            format!("{stamp}_{attempt}")
        };
        let dir = root.join(&name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Err(Error::InvalidArgument(
        "could not allocate a sweep directory".into(),
    ))
}

fn overrides_yaml(tokens: &[String]) -> String {
    if tokens.is_empty() {
        return "[]\n".to_string();
    }
    let mut out = String::new();
    for t in tokens {
        out.push_str(&format!("- {t}\n"));
    }
    out
}

fn config_seed(config: &ConfigNode) -> u64 {
    match config.get("seed") {
        Some(ConfigValue::Int(v)) if *v >= 0 => *v as u64,
        _ => 0,
    }
}

fn run_job<F>(job: &JobPlan, sweep_dir: &Path, task: &F) -> RunRecord
where
    F: Fn(&ConfigNode, &Path) -> Result<Metrics> + Sync,
{
    let dir = sweep_dir.join(job.index.to_string());
    let mut record = RunRecord {
        job_index: job.index,
        dir: dir.clone(),
        config: job.config.clone(),
        overrides: job.tokens.clone(),
        seed: config_seed(&job.config),
        metrics: None,
        error: None,
    };
    // Self-documentation comes first: the resolved config must be on disk
    // before the task starts.
    let prepared = std::fs::create_dir_all(&dir)
        .map_err(Error::from)
        .and_then(|()| {
            std::fs::write(dir.join("config.yaml"), to_yaml(&job.config))?;
            std::fs::write(dir.join("overrides.yaml"), overrides_yaml(&job.tokens))?;
            Ok(())
        });
    if let Err(e) = prepared {
        record.error = Some(e.to_string());
        return record;
    }
    match task(&job.config, &dir) {
        Ok(metrics) => {
            if let Err(e) = std::fs::write(dir.join("metrics.csv"), metrics.to_csv()) {
                record.error = Some(e.to_string());
            }
            record.metrics = Some(metrics);
        }
        Err(e) => {
            let message = e.to_string();
            // Best effort; the record carries the error either way.
            let _ = std::fs::write(dir.join("error.txt"), format!("{message}\n"));
            record.error = Some(message);
        }
    }
    record
}
