//! The `check` command: diagnostics of generated instances, with pass/fail
//! thresholds.

use std::path::{Path, PathBuf};

use gnp_core::diagnostics::{
    self, derive_constants, estimate_sharpness, fd_check_resampling, rank_report, ConstantInputs, FdReport,
    RankReport, RateReport, SharpnessEstimate, TheoryConstants, MAX_DENSE_UNKNOWNS,
};
use gnp_core::linalg::{uniform_in_ball, RandomStream};
use gnp_core::solvers;
use gnp_core::tensor::InstanceFile;
use gnp_core::SensingOracle;
use serde::Serialize;

use crate::config::{CheckSettings, ExperimentConfig};
use crate::run::{initial_point, solver_config};
use crate::{write_file, BenchError};

/// Resampling attempts per finite-difference point.
const FD_ATTEMPTS: usize = 50;

#[derive(Clone, Debug, Serialize)]
pub struct FdSection {
    pub threshold: f64,
    pub reports: Vec<FdReport>,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RankSection {
    pub points: usize,
    pub ranks: Vec<usize>,
    /// The common rank when all points agree.
    pub rank: Option<usize>,
    pub unknowns: usize,
    /// `r(r+1)/2`.
    pub symmetric_count: usize,
    /// `dr − r(r−1)/2`.
    pub complement_count: usize,
    pub ambiguous_points: usize,
    pub smallest_gap_ratio: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SharpnessSection {
    pub mu_h: f64,
    pub l_h: f64,
    pub samples: usize,
    pub skipped: usize,
    pub reference_value: f64,
    pub solution_set: &'static str,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CellCheck {
    pub instance: InstanceFile,
    pub fd: Result<FdSection, String>,
    /// `None` when the Gram matrix is too large to densify.
    pub rank: Option<Result<RankSection, String>>,
    pub sharpness: Result<SharpnessSection, String>,
    pub constants: Option<TheoryConstants>,
    pub rate: Option<RateReport>,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub cells: Vec<CellCheck>,
    pub passed: bool,
    pub report_path: Option<PathBuf>,
}

fn fd_section(
    inst: &gnp_core::TensorSensingInstance,
    settings: &CheckSettings,
    radius: f64,
    stream: &RandomStream,
) -> Result<FdSection, String> {
    let mut s = stream.substream("check_fd");
    let mut reports = Vec::with_capacity(settings.fd_points);
    for _ in 0..settings.fd_points {
        let (_, rep) = fd_check_resampling(inst, &mut s, &inst.x_star, radius, settings.fd_step, FD_ATTEMPTS)
            .map_err(|e| e.to_string())?;
        reports.push(rep);
    }
    let max_rel_error = reports.iter().map(|r| r.rel_error).fold(0.0, f64::max);
    Ok(FdSection {
        threshold: settings.fd_tol,
        passed: max_rel_error <= settings.fd_tol,
        reports,
        max_rel_error,
    })
}

fn rank_section(
    inst: &gnp_core::TensorSensingInstance,
    settings: &CheckSettings,
    radius: f64,
    stream: &RandomStream,
) -> Result<RankSection, String> {
    let mut s = stream.substream("check_rank");
    let reports: Vec<RankReport> = (0..settings.rank_points)
        .map(|_| {
            let x = uniform_in_ball(&mut s, &inst.x_star, radius);
            rank_report(&x, inst.order(), settings.rank_tol)
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let ranks: Vec<usize> = reports.iter().map(|r| r.rank).collect();
    let rank = (!ranks.is_empty() && ranks.iter().all(|&k| k == ranks[0])).then(|| ranks[0]);
    let (d, r) = inst.shape();
    Ok(RankSection {
        points: reports.len(),
        rank,
        unknowns: d * r,
        symmetric_count: r * (r + 1) / 2,
        complement_count: d * r - r * (r - 1) / 2,
        ambiguous_points: reports.iter().filter(|r| r.ambiguous).count(),
        smallest_gap_ratio: reports.iter().map(|r| r.gap_ratio).fold(f64::INFINITY, f64::min),
        passed: rank.is_some(),
        ranks,
    })
}

fn sharpness_section(
    inst: &gnp_core::TensorSensingInstance,
    settings: &CheckSettings,
    radius: f64,
    stream: &RandomStream,
) -> Result<SharpnessEstimate, String> {
    let mut s = stream.substream("check_sharpness");
    estimate_sharpness(inst, &mut s, settings.sharpness_samples, radius).map_err(|e| e.to_string())
}

/// Runs the diagnostics on the instance of every distinct grid cell.
pub fn check_cell(cell: &crate::Cell, settings: &CheckSettings) -> Result<CellCheck, BenchError> {
    cell.validate()?;
    let inst = cell.instance_spec().generate()?;
    let stream = RandomStream::new(cell.seed);
    let radius = cell.init_radius * inst.x_star.norm();

    let fd = fd_section(&inst, settings, radius, &stream);
    let rank = (cell.d * cell.r <= MAX_DENSE_UNKNOWNS).then(|| rank_section(&inst, settings, radius, &stream));
    let sharp = sharpness_section(&inst, settings, radius, &stream);

    let constants = sharp.as_ref().ok().and_then(|e| {
        derive_constants(ConstantInputs {
            mu_h: e.mu_h,
            l_h: e.l_h,
            mu_c: settings.mu_c,
            l_grad_c: settings.l_grad_c,
            l_c: settings.l_c,
            curvature: settings.curvature,
            radius: settings.radius,
        })
        .ok()
    });
    let rate = match &constants {
        Some(k) => {
            let oracle = SensingOracle::new(&inst);
            let mut cfg = solver_config(cell);
            cfg.monitor_aiming = true;
            cfg.step_fraction = 1.0;
            let (_, trace) = solvers::gnp(&oracle, &initial_point(cell, &inst), settings.rate_steps, &cfg)?;
            Some(diagnostics::rate_report(&trace, k, None))
        }
        None => None,
    };

    let sharpness = sharp.map(|e| SharpnessSection {
        passed: e.mu_h > 0.0,
        mu_h: e.mu_h,
        l_h: e.l_h,
        samples: e.ratios.len(),
        skipped: e.skipped,
        reference_value: e.reference_value,
        solution_set: e.solution_set,
    });
    let passed = fd.as_ref().is_ok_and(|f| f.passed)
        && rank.as_ref().is_none_or(|r| r.as_ref().is_ok_and(|r| r.passed))
        && sharpness.as_ref().is_ok_and(|s| s.passed);
    Ok(CellCheck {
        instance: InstanceFile::describe(&inst),
        fd,
        rank,
        sharpness,
        constants,
        rate,
        passed,
    })
}

/// Checks every distinct instance of the grid and writes
/// `check_report.json` to `out_dir`.
pub fn check(cfg: &ExperimentConfig, out_dir: &Path) -> Result<CheckReport, BenchError> {
    cfg.validate()?;
    let mut seen = Vec::new();
    let mut cells = Vec::new();
    for cell in cfg.cells() {
        let spec = cell.instance_spec();
        if seen.contains(&spec) {
            continue;
        }
        seen.push(spec);
        log::info!("checking {}", cell.id());
        cells.push(check_cell(&cell, &cfg.check)?);
    }
    let passed = cells.iter().all(|c| c.passed);
    let path = out_dir.join("check_report.json");
    let report = CheckReport {
        cells,
        passed,
        report_path: Some(path.clone()),
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&path, text.as_bytes())?;
    Ok(report)
}
