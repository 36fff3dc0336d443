//! Running cells and writing their traces and summaries.

use std::path::{Path, PathBuf};
use std::time::Duration;

use gnp_core::linalg::{uniform_in_ball, RandomStream};
use gnp_core::solvers;
use gnp_core::{DenseMatrix, RunRecord, SensingOracle, SolverConfig, TensorSensingInstance};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Cell, ExperimentConfig, Method};
use crate::plot::{self, XAxis, YAxis};
use crate::{write_file, BenchError, THREADS_ENV};

/// Column names of every trace CSV, in order.
pub const TRACE_HEADER: [&str; 18] = [
    "method",
    "seed",
    "n",
    "d",
    "r",
    "m",
    "kappa",
    "pfail",
    "restart_k",
    "iter",
    "oracle_calls",
    "time_sec",
    "obj_gap",
    "image_dist",
    "step_size",
    "proj_norm_sq",
    "cg_iters",
    "flags",
];

/// Objective-gap levels reported in summaries.
pub const THRESHOLDS: [f64; 7] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ThresholdHit {
    pub threshold: f64,
    pub oracle_calls: Option<usize>,
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunArtifact {
    pub config: Cell,
    pub trace_csv: Option<PathBuf>,
    pub error: Option<String>,
    pub stop_reason: Option<String>,
    pub rows: usize,
    pub oracle_calls: usize,
    pub final_gap: Option<f64>,
    pub best_gap: Option<f64>,
    pub summary: Vec<ThresholdHit>,
    pub plots: Vec<PathBuf>,
}

impl RunArtifact {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }

    fn failed(cell: &Cell, err: &BenchError) -> Self {
        Self {
            config: cell.clone(),
            trace_csv: None,
            error: Some(err.to_string()),
            stop_reason: None,
            rows: 0,
            oracle_calls: 0,
            final_gap: None,
            best_gap: None,
            summary: Vec::new(),
            plots: Vec::new(),
        }
    }

    /// Oracle calls to reach an objective gap of `threshold` (one of
    /// [`THRESHOLDS`]).
    pub fn calls_to(&self, threshold: f64) -> Option<usize> {
        self.summary
            .iter()
            .find(|h| h.threshold == threshold)
            .and_then(|h| h.oracle_calls)
    }
}

/// `X₀` drawn uniformly from the ball of radius `init_radius·‖X★‖_F`.
pub fn initial_point(cell: &Cell, inst: &TensorSensingInstance) -> DenseMatrix {
    let radius = cell.init_radius * inst.x_star.norm();
    uniform_in_ball(&mut RandomStream::new(cell.seed).substream("x0"), &inst.x_star, radius)
}

pub fn solver_config(cell: &Cell) -> SolverConfig {
    SolverConfig {
        max_oracle_calls: cell.max_oracle_calls,
        time_budget: cell.time_budget_sec.map(Duration::from_secs_f64),
        cg_tol: cell.cg_tol,
        step_fraction: cell.theta,
        target_objective_gap: cell.target_gap,
        monitor_aiming: cell.monitor_aiming,
        ..SolverConfig::default()
    }
}

/// Generates the instance and initial point of `cell` and runs its method.
pub fn execute(cell: &Cell) -> Result<RunRecord, BenchError> {
    cell.validate()?;
    let inst = cell.instance_spec().generate()?;
    let oracle = SensingOracle::new(&inst);
    let x0 = initial_point(cell, &inst);
    let cfg = solver_config(cell);
    let h0 = cell.h0.unwrap_or(0.0);
    let rounds = cell.rounds.unwrap_or(1);
    let (_, mut record) = match cell.method {
        Method::Gnp => solvers::gnp(&oracle, &x0, cell.steps, &cfg)?,
        Method::Polyak => solvers::polyak_subgrad(&oracle, &x0, cell.steps, &cfg)?,
        Method::Scaledsm => solvers::scaled_sm(&oracle, &x0, cell.steps, &cfg)?,
        Method::Rgnp => solvers::rgnp(&oracle, &x0, h0, cell.steps, rounds, &cfg)?,
        Method::Rpolyak => solvers::rpolyak(&oracle, &x0, h0, cell.steps, rounds, &cfg)?,
    };
    record.meta = gnp_core::composite::RunMeta {
        method: cell.method.name().to_string(),
        seed: cell.seed,
        n: cell.n,
        d: cell.d,
        r: cell.r,
        m: cell.m,
        kappa: cell.kappa,
        pfail: cell.pfail,
    };
    Ok(record)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    method: &'a str,
    seed: u64,
    n: usize,
    d: usize,
    r: usize,
    m: usize,
    kappa: String,
    pfail: String,
    restart_k: usize,
    iter: usize,
    oracle_calls: usize,
    time_sec: Option<String>,
    obj_gap: Option<String>,
    image_dist: Option<String>,
    step_size: String,
    proj_norm_sq: String,
    cg_iters: usize,
    flags: String,
}

/// Shortest round-trip decimal, in exponent form outside `[1e-4, 1e15)`.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

/// The trace as CSV. `time_sec` is left empty unless `wall_clock` is set.
pub fn trace_csv(record: &RunRecord, wall_clock: bool) -> Result<Vec<u8>, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let meta = &record.meta;
    if record.rows.is_empty() {
        w.write_record(TRACE_HEADER)?;
    }
    for row in &record.rows {
        w.serialize(CsvRow {
            method: &meta.method,
            seed: meta.seed,
            n: meta.n,
            d: meta.d,
            r: meta.r,
            m: meta.m,
            kappa: num(meta.kappa),
            pfail: num(meta.pfail),
            restart_k: row.restart,
            iter: row.iter,
            oracle_calls: row.oracle_calls,
            time_sec: wall_clock.then(|| num(row.time_sec)),
            obj_gap: row.obj_gap.map(num),
            image_dist: row.image_dist.map(num),
            step_size: num(row.step_size),
            proj_norm_sq: num(row.proj_norm_sq),
            cg_iters: row.cg_iters,
            flags: row.flags.label(),
        })?;
    }
    w.into_inner().map_err(|e| BenchError::io("<csv buffer>", e.into_error()))
}

pub fn summarize(record: &RunRecord, wall_clock: bool) -> Vec<ThresholdHit> {
    THRESHOLDS
        .iter()
        .map(|&t| ThresholdHit {
            threshold: t,
            oracle_calls: record.calls_to_gap(t),
            seconds: if wall_clock { record.seconds_to_gap(t) } else { None },
        })
        .collect()
}

/// Runs one cell and writes `<id>.csv` and `<id>.json` under `out_dir`.
/// Solver failures end up in the artifact rather than in the `Err` branch,
/// which is reserved for failures to write output.
pub fn run_cell(cell: &Cell, out_dir: &Path) -> Result<RunArtifact, BenchError> {
    let artifact = match execute(cell) {
        Ok(record) => {
            let path = out_dir.join(format!("{}.csv", cell.id()));
            write_file(&path, &trace_csv(&record, cell.wall_clock)?)?;
            let gaps: Vec<f64> = record.rows.iter().filter_map(|r| r.obj_gap).collect();
            RunArtifact {
                config: cell.clone(),
                trace_csv: Some(path),
                error: None,
                stop_reason: Some(format!("{:?}", record.stop)),
                rows: record.rows.len(),
                oracle_calls: record.oracle_calls(),
                final_gap: gaps.last().copied(),
                best_gap: gaps.iter().copied().reduce(f64::min),
                summary: summarize(&record, cell.wall_clock),
                plots: Vec::new(),
            }
        }
        Err(e) => {
            log::error!("{}: {e}", cell.id());
            RunArtifact::failed(cell, &e)
        }
    };
    write_artifact(&artifact, out_dir)?;
    Ok(artifact)
}

fn write_artifact(artifact: &RunArtifact, out_dir: &Path) -> Result<(), BenchError> {
    let path = out_dir.join(format!("{}.json", artifact.config.id()));
    let text = serde_json::to_string_pretty(artifact).expect("artifact serializes");
    write_file(&path, text.as_bytes())
}

/// One line per artifact with calls (and seconds, when timed) to each
/// threshold.
pub fn summary_table(artifacts: &[RunArtifact]) -> Result<Vec<u8>, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = [
        "cell", "method", "seed", "n", "d", "r", "m", "kappa", "pfail", "status", "stop_reason", "oracle_calls",
        "final_gap", "best_gap",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for t in THRESHOLDS {
        header.push(format!("calls_to_{t:e}"));
    }
    for t in THRESHOLDS {
        header.push(format!("sec_to_{t:e}"));
    }
    w.write_record(&header)?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for a in artifacts {
        let c = &a.config;
        let mut rec = vec![
            c.id(),
            c.method.name().to_string(),
            c.seed.to_string(),
            c.n.to_string(),
            c.d.to_string(),
            c.r.to_string(),
            c.m.to_string(),
            num(c.kappa),
            num(c.pfail),
            if a.succeeded() { "ok".into() } else { "failed".into() },
            opt(a.stop_reason.clone()),
            a.oracle_calls.to_string(),
            opt(a.final_gap.map(num)),
            opt(a.best_gap.map(num)),
        ];
        for t in THRESHOLDS {
            rec.push(opt(a.calls_to(t).map(|v| v.to_string())));
        }
        for t in THRESHOLDS {
            let secs = a.summary.iter().find(|h| h.threshold == t).and_then(|h| h.seconds);
            rec.push(opt(secs.map(num)));
        }
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| BenchError::io("<csv buffer>", e.into_error()))
}

fn finish(artifacts: &mut [RunArtifact], out_dir: &Path, table: &str) -> Result<(), BenchError> {
    write_file(&out_dir.join(table), &summary_table(artifacts)?)?;
    let traces: Vec<PathBuf> = artifacts.iter().filter_map(|a| a.trace_csv.clone()).collect();
    if traces.is_empty() {
        return Ok(());
    }
    let mut plots = Vec::new();
    let timed = artifacts.iter().all(|a| a.config.wall_clock);
    for x in [XAxis::OracleCalls, XAxis::Time] {
        if x == XAxis::Time && !timed {
            continue;
        }
        for y in [YAxis::ObjGap, YAxis::ImageDist] {
            match plot::plot_files(&traces, x, y, out_dir) {
                Ok(path) => plots.push(path),
                Err(e) => log::warn!("no {} vs {} plot: {e}", y.column(), x.column()),
            }
        }
    }
    for a in artifacts.iter_mut().filter(|a| a.succeeded()) {
        a.plots = plots.clone();
        write_artifact(a, out_dir)?;
    }
    Ok(())
}

/// Runs every cell of the grid in order and writes traces, artifacts,
/// `summary.csv` and comparison plots to `out_dir`.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<RunArtifact>, BenchError> {
    cfg.validate()?;
    let mut artifacts = Vec::new();
    for cell in cfg.cells() {
        log::info!("running {}", cell.id());
        artifacts.push(run_cell(&cell, out_dir)?);
    }
    finish(&mut artifacts, out_dir, "summary.csv")?;
    Ok(artifacts)
}

/// Like [`run`] but runs cells concurrently (capped by the
/// `GNP_BENCH_THREADS` variable) and writes `aggregate.csv` in grid order.
pub fn sweep(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<RunArtifact>, BenchError> {
    cfg.validate()?;
    let cells = cfg.cells();
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| BenchError::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<RunArtifact, BenchError>> =
        pool.install(|| cells.par_iter().map(|cell| run_cell(cell, out_dir)).collect());
    let mut artifacts = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    finish(&mut artifacts, out_dir, "aggregate.csv")?;
    Ok(artifacts)
}
