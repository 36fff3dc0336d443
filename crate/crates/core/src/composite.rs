//! Oracle contract between problems and solvers, plus run traces.

use std::time::Duration;

use crate::linalg::{DenseMatrix, SelfAdjointAction};

/// What one subgradient evaluation at `x` hands to a solver.
pub struct PullbackBundle<'a> {
    /// `h(c(x))`.
    pub h_value: f64,
    /// `∇c(x)ᵀv` for some `v ∈ ∂h(c(x))`; same shape as `x`.
    pub g: DenseMatrix,
    /// `Z ↦ ∇c(x)ᵀ∇c(x)Z` at this `x`.
    pub gram: Box<dyn SelfAdjointAction + 'a>,
}

/// A composite problem `min h(c(x))` over `d × r` matrices.
///
/// Implementations must be pure: repeated calls at the same point return
/// identical values, and `pullback(x).h_value == objective(x)`.
pub trait CompositeOracle: Sync {
    /// Shape `(d, r)` of the iterates.
    fn shape(&self) -> (usize, usize);

    fn objective(&self, x: &DenseMatrix) -> f64;

    fn pullback(&self, x: &DenseMatrix) -> PullbackBundle<'_>;

    /// `h★` when it is known (or a reference value standing in for it).
    fn optimal_value(&self) -> Option<f64>;

    /// `dist(c(x), Z★)` or a surrogate.
    fn image_distance(&self, _x: &DenseMatrix) -> Option<f64> {
        None
    }

    /// `∇c(x)ᵀ(c(x) − ẑ)` for the projection `ẑ` used by
    /// [`image_distance`](Self::image_distance). Lets solvers evaluate the
    /// aiming inner product `⟨∇c(x)D, c(x) − ẑ⟩` without leaving the
    /// parameter space.
    fn image_difference_pullback(&self, _x: &DenseMatrix) -> Option<DenseMatrix> {
        None
    }
}

/// Solver knobs shared by every method.
#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub max_oracle_calls: usize,
    pub time_budget: Option<Duration>,
    pub cg_tol: f64,
    /// `None` means four times the number of unknowns.
    pub cg_max_iter: Option<usize>,
    /// Fraction `θ ∈ [1/2, 1]` of the Polyak-type step.
    pub step_fraction: f64,
    pub target_objective_gap: Option<f64>,
    /// Squared projected-subgradient norms below this stop the run.
    pub critical_norm_floor: f64,
    /// Record `⟨D, ∇c(x)ᵀ(c(x) − ẑ)⟩` on every GNP step.
    pub monitor_aiming: bool,
    /// Keep every iterate in the [`RunRecord`] (small problems only).
    pub keep_iterates: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_oracle_calls: 10_000,
            time_budget: None,
            cg_tol: 1e-10,
            cg_max_iter: None,
            step_fraction: 1.0,
            target_objective_gap: None,
            critical_norm_floor: 1e-14,
            monitor_aiming: false,
            keep_iterates: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if !(0.5..=1.0).contains(&self.step_fraction) {
            return Err(crate::Error::InvalidParameter(format!(
                "step fraction must lie in [1/2, 1], got {}",
                self.step_fraction
            )));
        }
        if !(self.cg_tol > 0.0) {
            return Err(crate::Error::InvalidParameter(format!(
                "cg_tol must be positive, got {}",
                self.cg_tol
            )));
        }
        if self.max_oracle_calls == 0 {
            return Err(crate::Error::InvalidParameter(
                "max_oracle_calls must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-step status bits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepFlags {
    pub near_critical: bool,
    pub cg_failed: bool,
    pub step_skipped: bool,
}

impl StepFlags {
    /// `|`-separated names of the raised flags, empty when none are set.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.near_critical {
            parts.push("near_critical");
        }
        if self.cg_failed {
            parts.push("cg_failed");
        }
        if self.step_skipped {
            parts.push("step_skipped");
        }
        parts.join("|")
    }
}

/// One row of a trace: the state at `x_t` and the step taken from it.
#[derive(Clone, Debug, Default)]
pub struct TraceRow {
    pub iter: usize,
    pub restart: usize,
    pub oracle_calls: usize,
    pub time_sec: f64,
    pub objective: f64,
    pub obj_gap: Option<f64>,
    pub image_dist: Option<f64>,
    /// Zero on rows where no step was taken.
    pub step_size: f64,
    pub proj_norm_sq: f64,
    /// `|⟨g, D⟩ − ⟨G D, D⟩| / ⟨g, D⟩` on GNP steps.
    pub proj_norm_rel_gap: Option<f64>,
    /// `⟨g, D⟩` when the identity check was computed, for later auditing.
    pub proj_norm_pullback_form: Option<f64>,
    pub cg_iters: usize,
    pub cg_residual: Option<f64>,
    /// Aiming inner product when monitoring is on.
    pub aiming: Option<f64>,
    /// Reference level the step was taken against (`h★` or `h_k`).
    pub h_ref: f64,
    pub flags: StepFlags,
}

/// Why a run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    IterationLimit,
    OracleBudget,
    TimeBudget,
    TargetReached,
    NearCritical,
}

/// Summary of one outer round of a restarted method.
#[derive(Clone, Debug)]
pub struct RestartSummary {
    pub k: usize,
    /// Level `h_k` used during the round.
    pub level: f64,
    /// `h(c(y_{k+1}))`.
    pub best_objective: f64,
}

/// Labels attached to a trace for reporting.
#[derive(Clone, Debug, Default)]
pub struct RunMeta {
    pub method: String,
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub r: usize,
    pub m: usize,
    pub kappa: f64,
    pub pfail: f64,
}

/// Full record of a solver run.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub meta: RunMeta,
    pub rows: Vec<TraceRow>,
    pub stop: StopReason,
    pub restarts: Vec<RestartSummary>,
    /// Iterate of every row when [`SolverConfig::keep_iterates`] is set.
    pub iterates: Vec<DenseMatrix>,
}

impl RunRecord {
    pub fn new(method: &str) -> Self {
        Self {
            meta: RunMeta {
                method: method.to_string(),
                ..RunMeta::default()
            },
            rows: Vec::new(),
            stop: StopReason::IterationLimit,
            restarts: Vec::new(),
            iterates: Vec::new(),
        }
    }

    pub fn oracle_calls(&self) -> usize {
        self.rows.last().map_or(0, |r| r.oracle_calls)
    }

    /// Running minimum of the objective column.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.rows
            .iter()
            .map(|r| {
                best = best.min(r.objective);
                best
            })
            .collect()
    }

    /// Oracle calls at the first row whose objective gap is at most `tol`.
    pub fn calls_to_gap(&self, tol: f64) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.obj_gap.is_some_and(|g| g <= tol))
            .map(|r| r.oracle_calls)
    }

    pub fn seconds_to_gap(&self, tol: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.obj_gap.is_some_and(|g| g <= tol))
            .map(|r| r.time_sec)
    }

    /// Index of the smallest recorded objective, earliest on ties.
    pub fn best_index(&self) -> Option<usize> {
        argmin_first(self.rows.iter().map(|r| r.objective))
    }
}

pub(crate) fn argmin_first(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            Some((_, b)) if v >= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// The stored iterate with the smallest recorded objective (earliest index on
/// ties). `iterates[i]` must be the point of `trace.rows[i]`.
pub fn best_iterate(trace: &RunRecord, iterates: &[DenseMatrix]) -> Option<DenseMatrix> {
    let idx = trace.best_index()?;
    iterates.get(idx).cloned()
}
