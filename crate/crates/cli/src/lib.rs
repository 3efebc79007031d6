//! Experiment front end: configuration files, run orchestration across
//! seeds and baselines, CSV/JSON artifacts and SVG plots.

pub mod config;
pub mod output;
pub mod plot;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use opax::experiment::{run_active_learning_with_data, Baseline, RunConfig, RunHistory};
use opax::planner::PlanMode;
use rayon::prelude::*;

/// Command-line overrides applied on top of a configuration file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub episodes: Option<usize>,
    pub baselines: Vec<Baseline>,
}

/// One configured run: a baseline's config and seed.
#[derive(Clone, Debug)]
pub struct Job {
    pub label: String,
    pub seed: u64,
    pub cfg: RunConfig,
}

/// Output label of a configuration: its baseline name, or the explorer
/// mode for non-baseline explorers.
pub fn baseline_label(cfg: &RunConfig) -> String {
    match Baseline::from_mode(cfg.explorer.mode) {
        Some(b) => b.name().to_string(),
        None => match cfg.explorer.mode {
            PlanMode::TrueEnv => "true_env".to_string(),
            m => format!("{m:?}").to_lowercase(),
        },
    }
}

/// Expands a configuration into one job per (baseline, seed).
pub fn plan_jobs(cfg: &RunConfig, ov: &Overrides) -> Result<Vec<Job>> {
    let mut base = cfg.clone();
    if let Some(n) = ov.episodes {
        base.episodes = n;
    }
    if let Some(s) = ov.seed {
        base.seeds = vec![s];
    }
    let variants: Vec<RunConfig> = if ov.baselines.is_empty() {
        vec![base]
    } else {
        ov.baselines
            .iter()
            .map(|b| {
                let mut c = base.clone();
                b.apply(&mut c);
                c
            })
            .collect()
    };
    let mut jobs = Vec::new();
    for c in variants {
        c.validate().context("invalid configuration after overrides")?;
        for &seed in &c.seeds {
            jobs.push(Job { label: baseline_label(&c), seed, cfg: c.clone() });
        }
    }
    Ok(jobs)
}

/// Runs one job and writes its artifacts under `root`; returns the run
/// directory and the history.
pub fn run_job(job: &Job, root: &Path) -> Result<(PathBuf, RunHistory)> {
    let (history, data) = run_active_learning_with_data(&job.cfg, job.seed)
        .with_context(|| format!("{} seed {}", job.label, job.seed))?;
    let dir = output::run_dir(root, &job.label, job.seed);
    output::write_outputs(&job.cfg, &job.label, &history, &data, &dir)?;
    Ok((dir, history))
}

/// Runs all jobs in parallel on the current rayon pool. Each job writes
/// only its own directory.
pub fn run_jobs(jobs: &[Job], root: &Path) -> Result<Vec<(PathBuf, RunHistory)>> {
    jobs.par_iter().map(|j| run_job(j, root)).collect()
}
