//! `run`: chains, traces and diagnostics.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use invmcmc_core::diagnostics::{median, DiagnosticsReport};
use invmcmc_core::samplers::{ChainOptions, ChainRecord, SamplerConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, CONFIG_VERSION};
use crate::error::{CliError, Result};
use crate::targets::Model;

/// Leading trace columns; the state components `comp_0, …` follow.
pub const TRACE_FIXED_COLUMNS: [&str; 3] = ["iter", "accepted", "chosen_index"];

pub fn trace_header(dim: usize) -> Vec<String> {
    TRACE_FIXED_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((0..dim).map(|i| format!("comp_{i}")))
        .collect()
}

/// One row per state, starting with the initial state at `iter = 0`.
pub fn write_trace<W: Write>(record: &ChainRecord, writer: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(trace_header(record.dim()))?;
    for (t, state) in record.samples.iter().enumerate() {
        let (accepted, chosen) = match t.checked_sub(1) {
            Some(step) => (record.accepted(step) as u8, record.chosen_index[step]),
            None => (0, 0),
        };
        let mut row = vec![t.to_string(), accepted.to_string(), chosen.to_string()];
        row.extend(state.iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()
}

pub fn trace_path(dir: &Path, prefix: &str, chain: usize) -> PathBuf {
    dir.join(format!("{prefix}_{chain}.csv"))
}

pub fn diagnostics_path(dir: &Path, prefix: &str) -> PathBuf {
    dir.join(format!("{prefix}_diagnostics.json"))
}

pub fn chain_options(config: &ExperimentConfig, sampler: &SamplerConfig, chain: usize) -> ChainOptions {
    let mut options = ChainOptions::new(config.n_iter, config.seed)
        .chain(chain as u64)
        .divergence(config.divergence);
    if let Some(target) = sampler.target_accept {
        options = options.adapt(config.burn_in, target);
    }
    options
}

/// Runs `config.n_chains` chains of `sampler` on up to `jobs` threads.
///
/// Each chain draws from its own stream, so the records do not depend on
/// `jobs` or on scheduling.
pub fn run_chains(
    config: &ExperimentConfig,
    model: &Model,
    sampler: &SamplerConfig,
    jobs: usize,
) -> Result<Vec<ChainRecord>> {
    let initial = match &config.initial {
        Some(x) if x.len() != model.dim() => {
            return Err(CliError::config(format!(
                "initial state has {} components, target has {}",
                x.len(),
                model.dim()
            )))
        }
        Some(x) => x.clone(),
        None => model.default_initial(config.seed),
    };
    // Fail on sampler construction before spawning anything.
    model.sampler(sampler)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    pool.install(|| {
        (0..config.n_chains)
            .into_par_iter()
            .map(|i| {
                let mut s = model.sampler(sampler)?;
                s.run(initial.clone(), &chain_options(config, sampler, i))
                    .map_err(|e| CliError::from_chain(i, e))
            })
            .collect()
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainDiagnostics {
    pub chain: usize,
    pub trace: String,
    #[serde(flatten)]
    pub report: DiagnosticsReport,
    pub diverged: usize,
    pub final_tuning: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub min_ess: f64,
    pub median_min_ess_per_second: f64,
    pub mean_acceptance_rate: f64,
    pub mean_msjd: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunDiagnostics {
    pub version: u32,
    pub target: String,
    pub sampler: String,
    pub n_iter: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub chains: Vec<ChainDiagnostics>,
    pub summary: RunSummary,
}

impl RunDiagnostics {
    pub fn new(config: &ExperimentConfig, records: &[ChainRecord], prefix: &str) -> Result<Self> {
        let chains = records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                Ok(ChainDiagnostics {
                    chain: i,
                    trace: format!("{prefix}_{i}.csv"),
                    report: DiagnosticsReport::from_chain(r, config.burn_in)?,
                    diverged: r.diverged.len(),
                    final_tuning: r.final_tuning,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n = chains.len() as f64;
        let summary = RunSummary {
            min_ess: chains.iter().map(|c| c.report.min_ess).fold(f64::INFINITY, f64::min),
            median_min_ess_per_second: median(
                &chains.iter().map(|c| c.report.min_ess_per_second()).collect::<Vec<_>>(),
            ),
            mean_acceptance_rate: chains.iter().map(|c| c.report.acceptance_rate).sum::<f64>() / n,
            mean_msjd: chains.iter().map(|c| c.report.msjd).sum::<f64>() / n,
        };
        Ok(Self {
            version: CONFIG_VERSION,
            target: config.target.name().to_string(),
            sampler: config.sampler.kind.name().to_string(),
            n_iter: config.n_iter,
            burn_in: config.burn_in,
            seed: config.seed,
            chains,
            summary,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<ChainRecord>,
    pub traces: Vec<PathBuf>,
    pub diagnostics_path: PathBuf,
    pub diagnostics: RunDiagnostics,
}

/// Runs every chain of `config` and writes `{prefix}_{i}.csv` plus
/// `{prefix}_diagnostics.json` into `out_dir`.
pub fn run(config: &ExperimentConfig, out_dir: &Path, jobs: usize) -> Result<RunOutput> {
    let model = config.target.build()?;
    let records = run_chains(config, &model, &config.sampler, jobs)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let prefix = &config.output.prefix;
    let traces: Vec<PathBuf> = (0..records.len()).map(|i| trace_path(out_dir, prefix, i)).collect();
    traces.par_iter().zip(&records).try_for_each(|(path, record)| {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        write_trace(record, BufWriter::new(file)).map_err(|e| CliError::io(path, e))
    })?;
    let diagnostics = RunDiagnostics::new(config, &records, prefix)?;
    let diagnostics_path = diagnostics_path(out_dir, prefix);
    let json = serde_json::to_string_pretty(&diagnostics).expect("diagnostics serialize");
    fs::write(&diagnostics_path, json + "\n").map_err(|e| CliError::io(&diagnostics_path, e))?;
    Ok(RunOutput {
        records,
        traces,
        diagnostics_path,
        diagnostics,
    })
}
