//! `sweep`: short chains over a grid of sampler settings, ranked by MSJD per
//! second.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use invmcmc_core::diagnostics::DiagnosticsReport;

use crate::config::{ExperimentConfig, SweepGrid, SweepParameter};
use crate::error::{CliError, Result};
use crate::run::run_chains;
use crate::targets::Model;

pub type GridPoint = Vec<(SweepParameter, f64)>;

/// Cartesian product of the grid, last parameter varying fastest.
pub fn grid_points(grid: &SweepGrid) -> Vec<GridPoint> {
    let mut points: Vec<GridPoint> = vec![Vec::new()];
    for (&p, values) in grid {
        points = points
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |&v| {
                    let mut pt = prefix.clone();
                    pt.push((p, v));
                    pt
                })
            })
            .collect();
    }
    points
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: GridPoint,
    pub msjd: f64,
    pub msjd_per_second: f64,
    pub min_ess_per_second: f64,
    pub acceptance_rate: f64,
    /// `ok`, or the error that stopped this grid point.
    pub status: String,
    pub best: bool,
}

impl SweepRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn failed(point: GridPoint, err: CliError) -> Self {
        Self {
            point,
            msjd: f64::NAN,
            msjd_per_second: f64::NAN,
            min_ess_per_second: f64::NAN,
            acceptance_rate: f64::NAN,
            status: err.to_string(),
            best: false,
        }
    }
}

fn run_point(config: &ExperimentConfig, model: &Model, point: &GridPoint, jobs: usize) -> Result<SweepRow> {
    let mut sampler = config.sampler.clone();
    for &(p, v) in point {
        p.apply(&mut sampler, v)?;
    }
    let records = run_chains(config, model, &sampler, jobs)?;
    let reports = records
        .iter()
        .map(|r| DiagnosticsReport::from_chain(r, config.burn_in))
        .collect::<invmcmc_core::Result<Vec<_>>>()?;
    let mean = |f: &dyn Fn(&DiagnosticsReport) -> f64| reports.iter().map(f).sum::<f64>() / reports.len() as f64;
    Ok(SweepRow {
        point: point.clone(),
        msjd: mean(&|r| r.msjd),
        msjd_per_second: mean(&|r| r.msjd_per_second),
        min_ess_per_second: mean(&|r| r.min_ess_per_second()),
        acceptance_rate: mean(&|r| r.acceptance_rate),
        status: "ok".to_string(),
        best: false,
    })
}

/// One row per grid point, sorted by MSJD/s descending with failed points
/// last; the first successful row is flagged best.
pub fn sweep(config: &ExperimentConfig, jobs: usize) -> Result<Vec<SweepRow>> {
    let grid = config
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::config("sweep needs a `sweep` grid in the config"))?;
    let model = config.target.build()?;
    let mut rows: Vec<SweepRow> = grid_points(grid)
        .into_iter()
        .map(|point| run_point(config, &model, &point, jobs).unwrap_or_else(|e| SweepRow::failed(point, e)))
        .collect();
    rows.sort_by(|a, b| match (a.is_ok(), b.is_ok()) {
        (true, true) => b.msjd_per_second.total_cmp(&a.msjd_per_second),
        (a_ok, b_ok) => b_ok.cmp(&a_ok),
    });
    if let Some(first) = rows.first_mut().filter(|r| r.is_ok()) {
        first.best = true;
    }
    Ok(rows)
}

pub const SWEEP_METRIC_COLUMNS: [&str; 6] = [
    "msjd",
    "msjd_per_second",
    "min_ess_per_second",
    "acceptance_rate",
    "status",
    "best",
];

pub fn sweep_header(grid: &SweepGrid) -> Vec<String> {
    grid.keys()
        .map(|p| p.name().to_string())
        .chain(SWEEP_METRIC_COLUMNS.iter().map(|s| s.to_string()))
        .collect()
}

pub fn write_table<W: Write>(grid: &SweepGrid, rows: &[SweepRow], writer: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(sweep_header(grid))?;
    for r in rows {
        let mut fields: Vec<String> = r.point.iter().map(|(_, v)| v.to_string()).collect();
        fields.extend([r.msjd, r.msjd_per_second, r.min_ess_per_second, r.acceptance_rate].map(|x| x.to_string()));
        fields.push(r.status.clone());
        fields.push(r.best.to_string());
        w.write_record(&fields)?;
    }
    w.flush()
}

pub fn sweep_path(dir: &Path, prefix: &str) -> PathBuf {
    dir.join(format!("{prefix}_sweep.csv"))
}

/// Runs the sweep and writes `{prefix}_sweep.csv` into `out_dir`.
pub fn sweep_to_file(config: &ExperimentConfig, out_dir: &Path, jobs: usize) -> Result<(Vec<SweepRow>, PathBuf)> {
    let rows = sweep(config, jobs)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let path = sweep_path(out_dir, &config.output.prefix);
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    let grid = config.sweep.as_ref().expect("checked by sweep");
    write_table(grid, &rows, BufWriter::new(file)).map_err(|e| CliError::io(&path, e))?;
    Ok((rows, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_a_cartesian_product() {
        let mut grid = SweepGrid::new();
        grid.insert(SweepParameter::StepSize, vec![0.1, 0.2, 0.3]);
        grid.insert(SweepParameter::NSteps, vec![1.0, 5.0]);
        let pts = grid_points(&grid);
        assert_eq!(pts.len(), 6);
        assert_eq!(
            pts[0],
            vec![(SweepParameter::StepSize, 0.1), (SweepParameter::NSteps, 1.0)]
        );
        assert_eq!(
            pts[1],
            vec![(SweepParameter::StepSize, 0.1), (SweepParameter::NSteps, 5.0)]
        );
        assert_eq!(
            sweep_header(&grid)[..2],
            ["step_size".to_string(), "n_steps".to_string()]
        );
    }
}
