//! Config-driven experiment runner; the only module that touches files.
//!
//! Cells sharing a seed share one sensing ensemble and run together through
//! [`run_lockstep`]; seed groups run one after another so at most one dense
//! ensemble is resident.

mod config;
mod trace_csv;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub use config::{
    Cell, ExperimentConfig, NamedRule, OneOrMany, OutputBlock, PRule, ProblemConfig, RunBlock,
    SolverBlock,
};
pub use trace_csv::{parse_trace_csv, write_trace_csv, HEADER as TRACE_HEADER};

use crate::error::{Error, Result};
use crate::model::{generate_ground_truth, GroundTruth};
use crate::sensing::{corrupt, make_gaussian_ensemble, Measurements};
use crate::solver::{run_lockstep, LockstepJob, Termination, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdHit {
    pub threshold: f64,
    pub iteration: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    #[serde(flatten)]
    pub cell: Cell,
    /// Trace file name, relative to the manifest's directory.
    pub file: Option<String>,
    pub status: CellStatus,
    pub error: Option<String>,
    pub termination: Option<Termination>,
    pub iters_to_stop: Option<usize>,
    pub final_rel_error: Option<f64>,
    pub iterations_to_threshold: Vec<ThresholdHit>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tag: String,
    pub created_unix_s: u64,
    pub p: usize,
    pub config: ExperimentConfig,
    pub cells: Vec<CellRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Decode(format!("{}: {e}", path.display())))
    }

    pub fn failed(&self) -> impl Iterator<Item = &CellRecord> {
        self.cells.iter().filter(|c| c.status == CellStatus::Failed)
    }
}

/// Where a finished experiment left its outputs.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
}

impl ExperimentOutcome {
    /// Reads back the trace of cell `index`.
    pub fn trace(&self, index: usize) -> Result<Vec<crate::solver::IterationRecord>> {
        let cell = self
            .manifest
            .cells
            .get(index)
            .ok_or_else(|| Error::InvalidParameter(format!("no cell {index}")))?;
        let file = cell.file.as_ref().ok_or_else(|| {
            Error::Unavailable(format!(
                "cell {index} failed: {}",
                cell.error.as_deref().unwrap_or("")
            ))
        })?;
        let path = self
            .manifest_path
            .parent()
            .unwrap_or(Path::new("."))
            .join(file);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        parse_trace_csv(&text)
    }
}

pub fn manifest_file_name(tag: &str) -> String {
    format!("{tag}-manifest.json")
}

pub fn trace_file_name(tag: &str, index: usize) -> String {
    format!("{tag}-cell{index:04}.csv")
}

struct Prepared {
    gt: GroundTruth,
    meas: Measurements,
}

fn prepare(
    cfg: &ExperimentConfig,
    cell: &Cell,
    y_of: &mut impl FnMut(&GroundTruth) -> Result<Vec<f64>>,
) -> Result<Prepared> {
    let pr = &cfg.problem;
    let gt = generate_ground_truth(
        pr.m,
        pr.n,
        pr.r,
        cell.d,
        cell.kappa,
        cell.seed,
        pr.normalize,
    )?;
    let y = y_of(&gt)?;
    let meas = corrupt(&y, cell.outlier_fraction, pr.amplitude, cell.seed)?;
    Ok(Prepared { gt, meas })
}

fn record(
    cfg: &ExperimentConfig,
    cell: Cell,
    outcome: Result<Trace>,
    dir: &Path,
) -> Result<CellRecord> {
    let failed = |e: Error| CellRecord {
        cell,
        file: None,
        status: CellStatus::Failed,
        error: Some(e.to_string()),
        termination: None,
        iters_to_stop: None,
        final_rel_error: None,
        iterations_to_threshold: Vec::new(),
        warnings: Vec::new(),
    };
    let trace = match outcome {
        Ok(t) => t,
        Err(e) => return Ok(failed(e)),
    };
    let name = trace_file_name(&cfg.output.tag, cell.index);
    let path = dir.join(&name);
    std::fs::write(&path, write_trace_csv(&trace.records)).map_err(|e| Error::io(&path, e))?;
    Ok(CellRecord {
        cell,
        file: Some(name),
        status: CellStatus::Completed,
        error: None,
        termination: Some(trace.termination),
        iters_to_stop: Some(trace.iterations()),
        final_rel_error: Some(trace.last().rel_error),
        iterations_to_threshold: cfg
            .output
            .thresholds
            .iter()
            .map(|&threshold| ThresholdHit {
                threshold,
                iteration: trace.iterations_to(threshold),
            })
            .collect(),
        warnings: trace.warnings,
    })
}

/// Runs every cell, writes one trace CSV per completed cell and then the
/// manifest. Cell failures are recorded, not raised; I/O failures abort.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let cells = cfg.cells()?;
    let dir = &cfg.output.directory;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut by_seed: BTreeMap<u64, Vec<Cell>> = BTreeMap::new();
    for cell in &cells {
        by_seed.entry(cell.seed).or_default().push(*cell);
    }

    let (m, n, p) = (cfg.problem.m, cfg.problem.n, cfg.p());
    let mut records: Vec<Option<CellRecord>> = vec![None; cells.len()];
    for (seed, group) in by_seed {
        let ensemble = match make_gaussian_ensemble(m, n, p, seed, cfg.problem.storage) {
            Ok(e) => e,
            Err(e) => {
                let msg = e.to_string();
                for cell in group {
                    records[cell.index] = Some(record(
                        cfg,
                        cell,
                        Err(Error::Unavailable(msg.clone())),
                        dir,
                    )?);
                }
                continue;
            }
        };
        let mut y_of = |gt: &GroundTruth| ensemble.forward(&gt.materialize());
        let prepared: Vec<Result<Prepared>> =
            group.iter().map(|c| prepare(cfg, c, &mut y_of)).collect();

        let mut job_cells = Vec::new();
        let mut jobs = Vec::new();
        for (cell, prep) in group.iter().zip(&prepared) {
            match prep {
                Ok(prep) => {
                    job_cells.push(*cell);
                    jobs.push(LockstepJob {
                        gt: &prep.gt,
                        meas: &prep.meas,
                        config: cfg.solver_config(cell),
                    });
                }
                Err(e) => {
                    records[cell.index] = Some(record(
                        cfg,
                        *cell,
                        Err(Error::Unavailable(e.to_string())),
                        dir,
                    )?)
                }
            }
        }
        for (cell, outcome) in job_cells.into_iter().zip(run_lockstep(&ensemble, &jobs)) {
            records[cell.index] = Some(record(cfg, cell, outcome, dir)?);
        }
    }

    let manifest = Manifest {
        tag: cfg.output.tag.clone(),
        created_unix_s: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        p,
        config: cfg.clone(),
        cells: records
            .into_iter()
            .map(|r| r.expect("every cell recorded"))
            .collect(),
    };
    let manifest_path = dir.join(manifest_file_name(&cfg.output.tag));
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(ExperimentOutcome {
        manifest,
        manifest_path,
    })
}
