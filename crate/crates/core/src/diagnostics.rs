//! Empirical checks of the assumptions behind GNP's rate.
//!
//! Everything that needs the solution set uses the surrogate `Z★ = {c(X★)}`,
//! which is only meaningful for noiseless, identifiable instances. Reports
//! carry that caveat in their `solution_set` field.

use nalgebra::SymmetricEigen;
use serde::Serialize;

use crate::composite::RunRecord;
use crate::error::{Error, Result};
use crate::linalg::{densify, uniform_in_ball, DenseMatrix, RandomStream};
use crate::solvers::predicted_t;
use crate::tensor::{TensorGram, TensorSensingInstance};

/// Residuals closer to zero than this make a point count as a kink.
pub const KINK_TOLERANCE: f64 = 1e-6;

/// Largest operator that [`numerical_rank`] will densify.
pub const MAX_DENSE_UNKNOWNS: usize = 2000;

pub const SOLUTION_SET_SURROGATE: &str = "surrogate Z* = {c(X*)}; valid for noiseless identifiable instances";

#[derive(Clone, Debug, Serialize)]
pub struct FdReport {
    pub step: f64,
    /// `‖g − g_fd‖_F / ‖g_fd‖_F`.
    pub rel_error: f64,
    /// `max_k |g_k − fd_k| / max_k |fd_k|`.
    pub max_rel_error: f64,
    pub abs_error: f64,
    pub min_abs_residual: f64,
}

/// Compares the subgradient pullback with central differences of the
/// objective, one coordinate at a time. Fails with [`Error::NearKink`] when
/// the point, or any probe around it, is within reach of a kink.
pub fn fd_pullback_check(inst: &TensorSensingInstance, x: &DenseMatrix, step: f64) -> Result<FdReport> {
    if !(step > 0.0) {
        return Err(Error::InvalidParameter(format!("finite-difference step must be positive, got {step}")));
    }
    let residual = inst.residual(x)?;
    let (kink_index, min_abs_residual) = residual
        .iter()
        .enumerate()
        .map(|(j, v)| (j, v.abs()))
        .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
    if min_abs_residual < KINK_TOLERANCE {
        return Err(Error::NearKink {
            index: kink_index,
            value: residual[kink_index],
        });
    }

    let g = inst.subgradient_pullback(x)?.g;
    let mut fd = DenseMatrix::zeros(x.nrows(), x.ncols());
    let mut probe = x.clone();
    // A probe on the other side of a kink would difference two pieces.
    let same_piece = |res: &nalgebra::DVector<f64>| -> Result<f64> {
        match res.iter().zip(residual.iter()).position(|(a, b)| a.signum() != b.signum()) {
            Some(j) => Err(Error::NearKink {
                index: j,
                value: residual[j],
            }),
            None => Ok(res.lp_norm(1)),
        }
    };
    for k in 0..x.len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + step;
        let up = same_piece(&inst.residual(&probe)?)?;
        probe.as_mut_slice()[k] = orig - step;
        let down = same_piece(&inst.residual(&probe)?)?;
        probe.as_mut_slice()[k] = orig;
        fd.as_mut_slice()[k] = (up - down) / (2.0 * step);
    }
    let diff = &g - &fd;
    let fd_inf = fd.amax().max(f64::MIN_POSITIVE);
    Ok(FdReport {
        step,
        rel_error: diff.norm() / fd.norm().max(f64::MIN_POSITIVE),
        max_rel_error: diff.amax() / fd_inf,
        abs_error: diff.norm(),
        min_abs_residual,
    })
}

/// Draws points from the ball of `radius` around `center` until one is at
/// least [`KINK_TOLERANCE`] away from every kink, then runs the check there.
pub fn fd_check_resampling(
    inst: &TensorSensingInstance,
    stream: &mut RandomStream,
    center: &DenseMatrix,
    radius: f64,
    step: f64,
    attempts: usize,
) -> Result<(DenseMatrix, FdReport)> {
    let mut last_err = None;
    for _ in 0..attempts {
        let x = uniform_in_ball(stream, center, radius);
        match fd_pullback_check(inst, &x, step) {
            Ok(report) => return Ok((x, report)),
            Err(e @ Error::NearKink { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::InvalidParameter("no sampling attempts".into())))
}

/// Spectrum summary of `∇c(X)ᵀ∇c(X)`.
#[derive(Clone, Debug, Serialize)]
pub struct RankReport {
    pub rank: usize,
    pub unknowns: usize,
    /// Nonincreasing eigenvalues of the Gram matrix (`σᵢ(∇c)²`).
    pub eigenvalues: Vec<f64>,
    /// `λ_rank / λ_{rank+1}`; infinite for full rank.
    pub gap_ratio: f64,
    /// Rank disagrees across relative tolerances in `[1e-10, 1e-6]`, or the
    /// spectral gap is below `1e3`.
    pub ambiguous: bool,
    /// `r(r+1)/2`.
    pub symmetric_count: usize,
    /// `dr − r(r−1)/2`.
    pub complement_count: usize,
}

fn gram_eigenvalues(x: &DenseMatrix, n: usize) -> Result<Vec<f64>> {
    let unknowns = x.len();
    if unknowns > MAX_DENSE_UNKNOWNS {
        return Err(Error::TooLarge {
            unknowns,
            limit: MAX_DENSE_UNKNOWNS,
        });
    }
    if n < 2 {
        return Err(Error::InvalidParameter(format!("tensor order must be >= 2, got {n}")));
    }
    let dense = densify(&TensorGram::new(x.clone(), n));
    let sym = (&dense + dense.transpose()) * 0.5;
    let mut eig: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    Ok(eig)
}

fn count_above(eig: &[f64], rel_tol: f64) -> usize {
    let top = eig.first().copied().unwrap_or(0.0).max(0.0);
    eig.iter().filter(|&&v| v > rel_tol * top).count()
}

/// Rank of `∇c(X)` for `c(X) = Σᵢ xᵢ^{⊗n}`: the number of Gram eigenvalues
/// above `rel_tol · λ_max`, from the densified operator.
pub fn numerical_rank(x: &DenseMatrix, n: usize, rel_tol: f64) -> Result<usize> {
    Ok(count_above(&gram_eigenvalues(x, n)?, rel_tol))
}

pub fn rank_report(x: &DenseMatrix, n: usize, rel_tol: f64) -> Result<RankReport> {
    let eigenvalues = gram_eigenvalues(x, n)?;
    let rank = count_above(&eigenvalues, rel_tol);
    let (d, r) = x.shape();
    let gap_ratio = if rank == 0 || rank == eigenvalues.len() {
        f64::INFINITY
    } else {
        eigenvalues[rank - 1] / eigenvalues[rank].abs().max(f64::MIN_POSITIVE)
    };
    let stable = count_above(&eigenvalues, 1e-10) == rank && count_above(&eigenvalues, 1e-6) == rank;
    Ok(RankReport {
        rank,
        unknowns: x.len(),
        eigenvalues,
        gap_ratio,
        ambiguous: !stable || gap_ratio < 1e3,
        symmetric_count: r * (r + 1) / 2,
        complement_count: d * r - r * (r - 1) / 2,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SharpnessEstimate {
    /// `min (h(c(X)) − h_ref) / dist`.
    pub mu_h: f64,
    /// `max (h(c(X)) − h_ref) / dist`.
    pub l_h: f64,
    pub ratios: Vec<f64>,
    pub skipped: usize,
    pub reference_value: f64,
    pub solution_set: &'static str,
}

/// Ratios `(h(c(X)) − ‖ε‖₁) / ‖c(X) − c(X★)‖` at points drawn uniformly from
/// the ball of `radius` around `X★`.
pub fn estimate_sharpness(
    inst: &TensorSensingInstance,
    stream: &mut RandomStream,
    samples: usize,
    radius: f64,
) -> Result<SharpnessEstimate> {
    if samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let reference_value = inst.reference_optimal_value();
    let mut ratios = Vec::with_capacity(samples);
    let mut skipped = 0;
    for _ in 0..samples {
        let x = uniform_in_ball(stream, &inst.x_star, radius);
        let dist = inst.image_distance(&x)?;
        if dist == 0.0 {
            skipped += 1;
            continue;
        }
        ratios.push((inst.objective(&x)? - reference_value) / dist);
    }
    let mu_h = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let l_h = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(SharpnessEstimate {
        mu_h,
        l_h,
        ratios,
        skipped,
        reference_value,
        solution_set: SOLUTION_SET_SURROGATE,
    })
}

/// Local regularity constants. `C`, `R` and `L_∇c` have no reliable
/// numerical estimator and are supplied by the caller.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ConstantInputs {
    pub mu_h: f64,
    pub l_h: f64,
    pub mu_c: f64,
    pub l_grad_c: f64,
    pub l_c: f64,
    pub curvature: f64,
    pub radius: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TheoryConstants {
    pub inputs: ConstantInputs,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub delta: f64,
    pub eta: f64,
}

/// `c₁ = (1 − μ_h²/2L_h²)^{1/2}`, `c₂ = 8L_∇c L_h²/(9μ_c²μ_h²)`,
/// `c₃ = 4L_h/(3μ_cμ_h)`, `η = min{R, μ_h/(16 L_h L_c C)}` and
/// `δ = min{R/2, μ_h/(32 L_h L_c C), (1−c₁)/(2c₂L_c), η(1−c₁)/(4c₃L_c)}`.
pub fn derive_constants(inputs: ConstantInputs) -> Result<TheoryConstants> {
    let ConstantInputs {
        mu_h,
        l_h,
        mu_c,
        l_grad_c,
        l_c,
        curvature,
        radius,
    } = inputs;
    let all = [mu_h, l_h, mu_c, l_grad_c, l_c, curvature, radius];
    if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidParameter("all constants must be positive and finite".into()));
    }
    if mu_h > l_h {
        return Err(Error::InvalidParameter(format!(
            "sharpness {mu_h} exceeds Lipschitz constant {l_h}"
        )));
    }
    let c1 = (1.0 - mu_h * mu_h / (2.0 * l_h * l_h)).sqrt();
    let c2 = 8.0 * l_grad_c * l_h * l_h / (9.0 * mu_c * mu_c * mu_h * mu_h);
    let c3 = 4.0 * l_h / (3.0 * mu_c * mu_h);
    let eta = radius.min(mu_h / (16.0 * l_h * l_c * curvature));
    let delta = (radius / 2.0)
        .min(mu_h / (32.0 * l_h * l_c * curvature))
        .min((1.0 - c1) / (2.0 * c2 * l_c))
        .min(eta * (1.0 - c1) / (4.0 * c3 * l_c));
    Ok(TheoryConstants {
        inputs,
        c1,
        c2,
        c3,
        delta,
        eta,
    })
}

/// Least-squares fit of `log aₜ = α + t·log ρ`; returns `ρ`.
pub fn fit_geometric_factor(seq: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = seq
        .iter()
        .enumerate()
        .filter(|(_, a)| **a > 0.0)
        .map(|(t, a)| (t as f64, a.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    let var: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Some((cov / var).exp())
}

/// Smallest `c ≥ 0` with `a_{t+1} ≤ linear·aₜ + c·aₜ²` along the sequence.
pub fn fit_quadratic_envelope(seq: &[f64], linear: f64) -> f64 {
    seq.windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| (w[1] - linear * w[0]) / (w[0] * w[0]))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize)]
pub struct AimingViolation {
    pub iter: usize,
    pub aiming: f64,
    pub required: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RateReport {
    pub solution_set: &'static str,
    /// Image distances used for the fit (first round only).
    pub samples_used: usize,
    pub fitted_factor: Option<f64>,
    pub c1: f64,
    pub factor_within_bound: Option<bool>,
    /// `c` with `a_{t+1} ≤ 0.999 aₜ + c aₜ²` over the fitted rows.
    pub envelope_quadratic: f64,
    pub eps: Option<f64>,
    pub predicted_iterations: Option<usize>,
    pub observed_iterations: Option<usize>,
    pub aiming_checked: usize,
    pub aiming_violations: Vec<AimingViolation>,
}

/// Image distances below this fraction of `a₀` are dropped from rate fits;
/// the tensor-free distance loses accuracy around `1e-8·‖c(X★)‖`.
pub const FIT_FLOOR: f64 = 1e-6;

/// Compares a trace (with image distances) against the theory constants.
/// `eps` defaults to the smallest objective gap reached.
pub fn rate_report(trace: &RunRecord, constants: &TheoryConstants, eps: Option<f64>) -> RateReport {
    let rows: Vec<_> = trace.rows.iter().filter(|r| r.restart == 0).collect();
    let dists: Vec<f64> = rows.iter().filter_map(|r| r.image_dist).collect();
    let a0 = dists.first().copied().unwrap_or(0.0);
    let fitted: Vec<f64> = dists
        .iter()
        .copied()
        .take_while(|a| *a >= FIT_FLOOR * a0)
        .collect();
    let fitted_factor = fit_geometric_factor(&fitted);

    let eps = eps.or_else(|| {
        rows.iter()
            .filter_map(|r| r.obj_gap)
            .filter(|g| *g > 0.0)
            .fold(None, |acc: Option<f64>, g| Some(acc.map_or(g, |a| a.min(g))))
    });
    let predicted_iterations =
        eps.and_then(|e| predicted_t(constants.c1, a0, constants.inputs.l_h, e).ok());
    let observed_iterations = eps.and_then(|e| {
        rows.iter()
            .find(|r| r.obj_gap.is_some_and(|g| g <= e))
            .map(|r| r.iter)
    });

    let mut aiming_checked = 0;
    let mut aiming_violations = Vec::new();
    for row in &rows {
        if let (Some(aim), Some(a), Some(gap)) = (row.aiming, row.image_dist, row.obj_gap) {
            aiming_checked += 1;
            let required = 0.75 * gap.max(constants.inputs.mu_h * a);
            if aim < required {
                aiming_violations.push(AimingViolation {
                    iter: row.iter,
                    aiming: aim,
                    required,
                });
            }
        }
    }

    RateReport {
        solution_set: SOLUTION_SET_SURROGATE,
        samples_used: fitted.len(),
        fitted_factor,
        c1: constants.c1,
        factor_within_bound: fitted_factor.map(|f| f <= constants.c1),
        envelope_quadratic: fit_quadratic_envelope(&fitted, 0.999),
        eps,
        predicted_iterations,
        observed_iterations,
        aiming_checked,
        aiming_violations,
    }
}
