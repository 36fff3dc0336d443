//! Gauss-Newton-Polyak (GNP), its restarted form, and two baselines.
//!
//! All methods share one loop. Row `t` of a trace holds `h(c(x_t))` and the
//! step taken from `x_t`; a run of `T` steps therefore has `T + 1` rows, the
//! last one costing an objective evaluation only. Every row counts as one
//! oracle call.
//!
//! Step rules, with `g = ∇c(x)ᵀv` and `θ` the step fraction:
//!
//! - GNP: `D = (∇cᵀ∇c)†g` by minimum-norm CG, `‖P v‖² = ⟨g, D⟩`,
//!   `x₊ = x − θ (h − h_ref)/‖P v‖² · D`.
//! - Polyak: `D = g`, normaliser `‖g‖²`.
//! - Scaled: `D = g (xᵀx)⁻¹`, normaliser `⟨g, D⟩`.

use std::time::Instant;

use nalgebra::Cholesky;

use crate::composite::{
    CompositeOracle, PullbackBundle, RestartSummary, RunRecord, SolverConfig, StepFlags, StopReason,
    TraceRow,
};
use crate::error::{Error, Result};
use crate::linalg::{cg_min_norm, default_cg_max_iter, inner, DenseMatrix};

/// Search direction family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepRule {
    GaussNewton,
    Polyak,
    Scaled,
}

impl StepRule {
    fn name(self) -> &'static str {
        match self {
            StepRule::GaussNewton => "gnp",
            StepRule::Polyak => "polyak",
            StepRule::Scaled => "scaledsm",
        }
    }
}

/// Outcome of a single step.
#[derive(Clone, Debug, Default)]
pub struct StepInfo {
    pub step_size: f64,
    /// Normaliser of the step: `‖P_range v‖²` for GNP.
    pub proj_norm_sq: f64,
    pub h_value: f64,
    pub cg_iters: usize,
    pub cg_residual: Option<f64>,
    /// `⟨g, D⟩` and `⟨G D, D⟩`, the two forms of `‖P_range v‖²`.
    pub proj_norm_forms: Option<(f64, f64)>,
    pub aiming: Option<f64>,
    pub flags: StepFlags,
}

impl StepInfo {
    pub fn proj_norm_rel_gap(&self) -> Option<f64> {
        self.proj_norm_forms
            .map(|(a, b)| (a - b).abs() / a.abs().max(f64::MIN_POSITIVE))
    }
}

/// Loop state of a restarted method.
#[derive(Clone, Debug)]
pub struct RestartState {
    pub k: usize,
    /// Current lower-bound estimate `h_k`.
    pub level: f64,
    /// Incumbent `y_k`.
    pub incumbent: DenseMatrix,
}

fn take_step(
    rule: StepRule,
    oracle: &dyn CompositeOracle,
    x: &DenseMatrix,
    bundle: &PullbackBundle<'_>,
    h_ref: f64,
    theta: f64,
    cfg: &SolverConfig,
) -> Result<(DenseMatrix, StepInfo)> {
    let mut info = StepInfo {
        h_value: bundle.h_value,
        ..StepInfo::default()
    };
    let excess = bundle.h_value - h_ref;
    if !(excess > 0.0) {
        info.flags.step_skipped = true;
        return Ok((x.clone(), info));
    }

    let direction = match rule {
        StepRule::GaussNewton => {
            let max_iter = cfg.cg_max_iter.unwrap_or_else(|| default_cg_max_iter(x.shape()));
            let cg = cg_min_norm(bundle.gram.as_ref(), &bundle.g, cfg.cg_tol, max_iter)?;
            info.cg_iters = cg.iterations;
            info.cg_residual = Some(cg.rel_residual);
            info.flags.cg_failed = !cg.converged;
            let d = cg.solution;
            let pullback_form = inner(&bundle.g, &d);
            let gram_form = inner(&bundle.gram.apply(&d), &d);
            info.proj_norm_forms = Some((pullback_form, gram_form));
            info.proj_norm_sq = 0.5 * (pullback_form + gram_form);
            if cfg.monitor_aiming {
                info.aiming = oracle.image_difference_pullback(x).map(|m| inner(&d, &m));
            }
            d
        }
        StepRule::Polyak => {
            info.proj_norm_sq = bundle.g.norm_squared();
            bundle.g.clone()
        }
        StepRule::Scaled => {
            let gram = x.tr_mul(x);
            let chol = Cholesky::new(gram).ok_or_else(|| {
                Error::Singular("xᵀx is not positive definite; the iterate lost rank".into())
            })?;
            let d = chol.solve(&bundle.g.transpose()).transpose();
            info.proj_norm_sq = inner(&bundle.g, &d);
            d
        }
    };

    if !(info.proj_norm_sq >= cfg.critical_norm_floor) {
        info.flags.near_critical = true;
        return Ok((x.clone(), info));
    }
    info.step_size = theta * excess / info.proj_norm_sq;
    Ok((x - &direction * info.step_size, info))
}

/// One GNP step from `x` against the level `h_ref`, with `θ` taken from
/// `cfg.step_fraction`.
pub fn gnp_step(
    oracle: &dyn CompositeOracle,
    x: &DenseMatrix,
    h_ref: f64,
    cfg: &SolverConfig,
) -> Result<(DenseMatrix, StepInfo)> {
    let bundle = oracle.pullback(x);
    take_step(StepRule::GaussNewton, oracle, x, &bundle, h_ref, cfg.step_fraction, cfg)
}

struct InnerOutcome {
    best: DenseMatrix,
    best_objective: f64,
    /// Set when the whole run must end, not just this round.
    global_stop: Option<StopReason>,
    local_stop: Option<StopReason>,
}

struct Runner<'a> {
    oracle: &'a dyn CompositeOracle,
    cfg: &'a SolverConfig,
    start: Instant,
    calls: usize,
    record: RunRecord,
}

impl<'a> Runner<'a> {
    fn new(oracle: &'a dyn CompositeOracle, cfg: &'a SolverConfig, method: &str) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            oracle,
            cfg,
            start: Instant::now(),
            calls: 0,
            record: RunRecord::new(method),
        })
    }

    fn base_row(&self, iter: usize, restart: usize, x: &DenseMatrix, objective: f64, h_ref: f64) -> TraceRow {
        TraceRow {
            iter,
            restart,
            oracle_calls: self.calls,
            time_sec: self.start.elapsed().as_secs_f64(),
            objective,
            obj_gap: self.oracle.optimal_value().map(|h| objective - h),
            image_dist: self.oracle.image_distance(x),
            h_ref,
            ..TraceRow::default()
        }
    }

    fn budget_stop(&self, row: &TraceRow, use_target: bool) -> Option<StopReason> {
        if use_target {
            if let (Some(target), Some(gap)) = (self.cfg.target_objective_gap, row.obj_gap) {
                if gap <= target {
                    return Some(StopReason::TargetReached);
                }
            }
        }
        if let Some(limit) = self.cfg.time_budget {
            if self.start.elapsed() >= limit {
                return Some(StopReason::TimeBudget);
            }
        }
        if self.calls >= self.cfg.max_oracle_calls {
            return Some(StopReason::OracleBudget);
        }
        None
    }

    fn push(&mut self, row: TraceRow, x: &DenseMatrix) {
        if self.cfg.keep_iterates {
            self.record.iterates.push(x.clone());
        }
        self.record.rows.push(row);
    }

    #[allow(clippy::too_many_arguments)]
    fn inner_loop(
        &mut self,
        rule: StepRule,
        x0: &DenseMatrix,
        steps: usize,
        h_ref: f64,
        theta: f64,
        restart: usize,
    ) -> Result<InnerOutcome> {
        let mut x = x0.clone();
        let mut best = x0.clone();
        let mut best_objective = f64::INFINITY;
        let mut note_best = |x: &DenseMatrix, h: f64, best: &mut DenseMatrix| {
            if h < best_objective {
                best_objective = h;
                *best = x.clone();
            }
        };

        for t in 0..=steps {
            if t == steps {
                let h = self.oracle.objective(&x);
                self.calls += 1;
                note_best(&x, h, &mut best);
                let row = self.base_row(t, restart, &x, h, h_ref);
                self.push(row, &x);
                break;
            }

            let bundle = self.oracle.pullback(&x);
            self.calls += 1;
            note_best(&x, bundle.h_value, &mut best);
            let mut row = self.base_row(t, restart, &x, bundle.h_value, h_ref);
            if let Some(stop) = self.budget_stop(&row, true) {
                self.push(row, &x);
                return Ok(InnerOutcome {
                    best,
                    best_objective,
                    global_stop: Some(stop),
                    local_stop: None,
                });
            }

            let (next, info) = take_step(rule, self.oracle, &x, &bundle, h_ref, theta, self.cfg)?;
            row.step_size = info.step_size;
            row.proj_norm_sq = info.proj_norm_sq;
            row.proj_norm_rel_gap = info.proj_norm_rel_gap();
            row.proj_norm_pullback_form = info.proj_norm_forms.map(|(a, _)| a);
            row.cg_iters = info.cg_iters;
            row.cg_residual = info.cg_residual;
            row.aiming = info.aiming;
            row.flags = info.flags;
            self.push(row, &x);

            if info.flags.near_critical {
                return Ok(InnerOutcome {
                    best,
                    best_objective,
                    global_stop: None,
                    local_stop: Some(StopReason::NearCritical),
                });
            }
            if info.flags.step_skipped {
                // x stays put, so every later step of this round would repeat
                // the same zero-length step.
                return Ok(InnerOutcome {
                    best,
                    best_objective,
                    global_stop: None,
                    local_stop: Some(StopReason::TargetReached),
                });
            }
            x = next;
        }

        Ok(InnerOutcome {
            best,
            best_objective,
            global_stop: None,
            local_stop: None,
        })
    }

    fn single(mut self, rule: StepRule, x0: &DenseMatrix, steps: usize) -> Result<(DenseMatrix, RunRecord)> {
        check_iterate(self.oracle, x0)?;
        let h_star = self.oracle.optimal_value().ok_or(Error::MissingOptimalValue)?;
        let theta = self.cfg.step_fraction;
        let out = self.inner_loop(rule, x0, steps, h_star, theta, 0)?;
        self.record.stop = out
            .global_stop
            .or(out.local_stop)
            .unwrap_or(StopReason::IterationLimit);
        Ok((out.best, self.record))
    }

    fn restarted(
        mut self,
        rule: StepRule,
        x0: &DenseMatrix,
        h0: f64,
        steps: usize,
        rounds: usize,
    ) -> Result<(DenseMatrix, RunRecord)> {
        check_iterate(self.oracle, x0)?;
        if rounds == 0 {
            return Err(Error::InvalidParameter("number of restarts must be positive".into()));
        }
        if !h0.is_finite() {
            return Err(Error::InvalidParameter(format!("initial level must be finite, got {h0}")));
        }
        let mut state = RestartState {
            k: 0,
            level: h0,
            incumbent: x0.clone(),
        };
        self.record.stop = StopReason::IterationLimit;
        while state.k < rounds {
            let out = self.inner_loop(rule, x0, steps, state.level, 0.5, state.k)?;
            self.record.restarts.push(RestartSummary {
                k: state.k,
                level: state.level,
                best_objective: out.best_objective,
            });
            state.incumbent = out.best;
            state.level = 0.5 * (state.level + out.best_objective);
            state.k += 1;
            if let Some(stop) = out.global_stop {
                self.record.stop = stop;
                break;
            }
        }
        Ok((state.incumbent, self.record))
    }
}

fn check_iterate(oracle: &dyn CompositeOracle, x: &DenseMatrix) -> Result<()> {
    crate::error::check_shape(oracle.shape(), x.shape())
}

/// GNP with the known optimal value `h★ = oracle.optimal_value()`. Runs at
/// most `steps` steps and returns the iterate with the smallest objective.
pub fn gnp(
    oracle: &dyn CompositeOracle,
    x0: &DenseMatrix,
    steps: usize,
    cfg: &SolverConfig,
) -> Result<(DenseMatrix, RunRecord)> {
    Runner::new(oracle, cfg, StepRule::GaussNewton.name())?.single(StepRule::GaussNewton, x0, steps)
}

/// Subgradient method with Polyak stepsize `(f − f★)/‖g‖²` (scaled by `θ`).
pub fn polyak_subgrad(
    oracle: &dyn CompositeOracle,
    x0: &DenseMatrix,
    steps: usize,
    cfg: &SolverConfig,
) -> Result<(DenseMatrix, RunRecord)> {
    Runner::new(oracle, cfg, StepRule::Polyak.name())?.single(StepRule::Polyak, x0, steps)
}

/// Scaled subgradient method `x₊ = x − γ g (xᵀx)⁻¹` with the Polyak-type
/// step `γ = θ (f − f★)/⟨g, g (xᵀx)⁻¹⟩`. Meant for the `n = 2` problem.
pub fn scaled_sm(
    oracle: &dyn CompositeOracle,
    x0: &DenseMatrix,
    steps: usize,
    cfg: &SolverConfig,
) -> Result<(DenseMatrix, RunRecord)> {
    Runner::new(oracle, cfg, StepRule::Scaled.name())?.single(StepRule::Scaled, x0, steps)
}

/// Restarted GNP. Each of `rounds` rounds restarts from `x0` and runs
/// `steps` GNP steps with `γ = (h − h_k)/(2‖P v‖²)`; afterwards `y_{k+1}`
/// is the round's best point and `h_{k+1} = (h_k + h(c(y_{k+1})))/2`.
/// Returns `y_K`. Steps with `h ≤ h_k` are skipped and end the round.
pub fn rgnp(
    oracle: &dyn CompositeOracle,
    x0: &DenseMatrix,
    h0: f64,
    steps: usize,
    rounds: usize,
    cfg: &SolverConfig,
) -> Result<(DenseMatrix, RunRecord)> {
    Runner::new(oracle, cfg, "rgnp")?.restarted(StepRule::GaussNewton, x0, h0, steps, rounds)
}

/// The restart loop of [`rgnp`] around plain Polyak steps.
pub fn rpolyak(
    oracle: &dyn CompositeOracle,
    x0: &DenseMatrix,
    h0: f64,
    steps: usize,
    rounds: usize,
    cfg: &SolverConfig,
) -> Result<(DenseMatrix, RunRecord)> {
    Runner::new(oracle, cfg, "rpolyak")?.restarted(StepRule::Polyak, x0, h0, steps, rounds)
}

/// `(h − h★)/‖P v‖²` for a recorded step.
pub fn ideal_step(row: &TraceRow, h_star: f64) -> f64 {
    (row.objective - h_star) / row.proj_norm_sq
}

/// Iterations sufficient for `dist(c(x_T), Z★) ≤ ε/L_h`:
/// `⌈log(a₀ L_h / ε) / log(2/(1 + c₁))⌉`, and 0 when `a₀ L_h ≤ ε`.
pub fn predicted_t(c1: f64, a0: f64, l_h: f64, eps: f64) -> Result<usize> {
    if !(c1 > 0.0 && c1 < 1.0) {
        return Err(Error::InvalidParameter(format!("c1 must lie in (0, 1), got {c1}")));
    }
    if !(a0 > 0.0 && l_h > 0.0 && eps > 0.0) {
        return Err(Error::InvalidParameter(
            "a0, L_h and eps must be positive".into(),
        ));
    }
    let t = (a0 * l_h / eps).ln() / (2.0 / (1.0 + c1)).ln();
    Ok(if t <= 0.0 { 0 } else { t.ceil() as usize })
}

/// Number of restarts sufficient for an `ε`-optimal `y_K`:
/// `1 + ⌈log₂((h★ − h₀)/ε)⌉`.
pub fn restart_count(h_star: f64, h0: f64, eps: f64) -> Result<usize> {
    if !(h_star > h0) || !(eps > 0.0) {
        return Err(Error::InvalidParameter(
            "need h0 < h_star and eps > 0".into(),
        ));
    }
    let v = ((h_star - h0) / eps).log2().ceil();
    Ok(1 + v.max(0.0) as usize)
}
