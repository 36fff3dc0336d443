//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::time::{Duration, Instant};

use gnp_bench::config::{Cell, ExperimentConfig};
use gnp_bench::run::{execute, run, trace_csv};
use gnp_core::diagnostics::{fd_check_resampling, numerical_rank};
use gnp_core::linalg::{cg_min_norm, gaussian_matrix, uniform_in_ball, MatrixAction, RandomStream};
use gnp_core::solvers::restart_count;
use gnp_core::tensor::{gram_apply, generate_instance, TensorGram};
use gnp_core::{explicit, DenseMatrix, RunRecord};
use nalgebra::{DMatrix, DVector};
use serde_json::json;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn cell(v: serde_json::Value) -> Cell {
    ExperimentConfig::from_value(v).expect("valid config").cells().remove(0)
}

fn record(v: serde_json::Value) -> RunRecord {
    execute(&cell(v)).expect("run succeeds")
}

fn rel(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn gram_identity() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for n in [2usize, 3] {
        for d in [3usize, 4, 5] {
            if d.pow(n as u32) > 100_000 {
                continue;
            }
            for r in [1usize, 2, 3] {
                let mut s = RandomStream::new((100 * n + 10 * d + r) as u64);
                for _ in 0..50 {
                    let x = gaussian_matrix(&mut s, d, r);
                    let z = gaussian_matrix(&mut s, d, r);
                    let fast = gram_apply(&x, &z, n).expect("shapes agree");
                    worst = worst.max(rel(&fast, &explicit::gram_apply(&x, &z, n)));
                    pairs += 1;
                }
            }
        }
    }
    verdict(worst <= 1e-8, format!("max rel err {worst:.2e} over {pairs} (X, Z) pairs (tol 1e-8)"))
}

fn pullback_fd() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut points = 0;
    let mut failures = Vec::new();
    for (n, d, r) in [(2, 6, 2), (2, 10, 3), (3, 5, 2), (3, 6, 3)] {
        for pfail in [0.0, 0.2] {
            let m = if n == 2 { 8 * d * r } else { 8 * n * d * r };
            let seed = (n * 1000 + d * 10 + r) as u64;
            let inst = generate_instance(&RandomStream::new(seed), n, d, r, m, 2.0, pfail).expect("valid instance");
            let mut s = RandomStream::new(seed).substream("fd");
            let radius = 0.5 * inst.x_star.norm();
            for _ in 0..20 {
                match fd_check_resampling(&inst, &mut s, &inst.x_star, radius, 1e-6, 50) {
                    Ok((_, rep)) => {
                        worst = worst.max(rep.rel_error);
                        points += 1;
                    }
                    Err(e) => failures.push(format!("n={n} d={d} r={r}: {e}")),
                }
            }
        }
    }
    verdict(
        worst <= 1e-4 && failures.is_empty(),
        format!(
            "max rel err {worst:.2e} at {points} smooth points in 8 classes (tol 1e-4){}",
            if failures.is_empty() { String::new() } else { format!("; errors: {}", failures.join("; ")) }
        ),
    )
}

fn projected_norm_identity() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut steps = 0;
    for kappa in [1.0, 10.0] {
        let rec = record(json!({
            "method": "gnp", "n": 2, "d": 100, "r": 5, "kappa": kappa,
            "steps": 300, "max_oracle_calls": 300, "target_gap": 1e-9
        }));
        for row in &rec.rows {
            if let Some(gap) = row.proj_norm_rel_gap {
                worst = worst.max(gap);
                steps += 1;
            }
        }
    }
    verdict(
        steps > 0 && worst <= 1e-6,
        format!("max |<g,D> - <GD,D>|/<g,D> = {worst:.2e} over {steps} GNP steps (tol 1e-6)"),
    )
}

fn min_norm_cg() -> Verdict {
    let mut s = RandomStream::new(404);
    let mut worst_err: f64 = 0.0;
    let mut worst_leak: f64 = 0.0;
    // Ten systems Q diag(λ, 0) Qᵀ with exact pseudoinverse and kernel.
    for case in 0..10 {
        let n = 30 + 17 * case;
        let k = n / 2 + 3 * case;
        let q = nalgebra::QR::new(gaussian_matrix(&mut s, n, n)).q();
        let lam: Vec<f64> = (0..n).map(|i| if i < k { 1.0 + 99.0 * s.uniform() } else { 0.0 }).collect();
        let inv: Vec<f64> = lam.iter().map(|&l| if l > 0.0 { 1.0 / l } else { 0.0 }).collect();
        let a = &q * DMatrix::from_diagonal(&DVector::from_vec(lam)) * q.transpose();
        let pinv = &q * DMatrix::from_diagonal(&DVector::from_vec(inv)) * q.transpose();
        let kernel = q.columns(k, n - k).into_owned();
        let g = &a * gaussian_matrix(&mut s, n, 1);
        let out = cg_min_norm(&MatrixAction::new(a, n, 1).expect("square"), &g, 1e-13, 10 * n).expect("valid");
        let expected = &pinv * &g;
        worst_err = worst_err.max(rel(&out.solution, &expected));
        worst_leak = worst_leak.max((kernel.transpose() * &out.solution).norm() / out.solution.norm());
    }
    // Ten Gauss-Newton systems, whose kernels come from the symmetry of c.
    for case in 0..10 {
        let (n, d, r) = [(2, 10, 3), (2, 20, 4), (3, 6, 3), (3, 8, 2), (4, 4, 2)][case % 5];
        let x = gaussian_matrix(&mut s, d, r);
        let jac = explicit::jacobian(&x, n);
        let v = DVector::from_iterator(jac.nrows(), (0..jac.nrows()).map(|_| s.normal()));
        let g = DMatrix::from_column_slice(d, r, (jac.transpose() * &v).as_slice());
        let svd = jac.clone().svd(true, true);
        let rank = svd.rank(1e-10 * svd.singular_values.max());
        let v_t = svd.v_t.expect("requested");
        let kernel = v_t.rows(rank, d * r - rank).transpose();
        let out = cg_min_norm(&TensorGram::new(x, n), &g, 1e-13, 40 * d * r).expect("valid");
        let pinv_v = jac.pseudo_inverse(1e-10).expect("svd converges") * &v;
        let expected = DMatrix::from_column_slice(d, r, pinv_v.as_slice());
        worst_err = worst_err.max(rel(&out.solution, &expected));
        let sol = DVector::from_column_slice(out.solution.as_slice());
        worst_leak = worst_leak.max((kernel.transpose() * &sol).norm() / sol.norm());
    }
    verdict(
        worst_err <= 1e-8 && worst_leak <= 1e-6,
        format!("20 systems: max rel err {worst_err:.2e} (tol 1e-8), max kernel component {worst_leak:.2e} (tol 1e-6)"),
    )
}

fn calls_to(rec: &RunRecord, tol: f64) -> Option<usize> {
    rec.calls_to_gap(tol)
}

fn desk(method: &str, kappa: f64) -> RunRecord {
    record(json!({
        "method": method, "n": 2, "d": 100, "r": 5, "kappa": kappa, "pfail": 0.0,
        "steps": 5000, "max_oracle_calls": 5000, "target_gap": 1e-8
    }))
}

fn conditioning_trend() -> Verdict {
    let g1 = calls_to(&desk("gnp", 1.0), 1e-8);
    let g10 = calls_to(&desk("gnp", 10.0), 1e-8);
    let p1 = calls_to(&desk("polyak", 1.0), 1e-8);
    let p10 = calls_to(&desk("polyak", 10.0), 1e-8).unwrap_or(5000);
    let gnp_ok = matches!((g1, g10), (Some(a), Some(b)) if a <= 300 && b <= 300
        && a.max(b) as f64 <= 1.5 * a.min(b) as f64);
    let polyak_ok = p1.is_some_and(|a| p10 as f64 >= 3.0 * a as f64);
    verdict(
        gnp_ok && polyak_ok,
        format!("calls to 1e-8: GNP {g1:?} (kappa 1) / {g10:?} (kappa 10); Polyak {p1:?} / {p10} (budget 5000)"),
    )
}

fn scaled_trend() -> Verdict {
    let g = calls_to(&desk("gnp", 10.0), 1e-8);
    let s = calls_to(&desk("scaledsm", 10.0), 1e-8);
    let ok = matches!((g, s), (Some(a), Some(b)) if a.max(b) as f64 <= 2.0 * a.min(b) as f64);
    verdict(ok, format!("kappa 10 calls to 1e-8: GNP {g:?}, ScaledSM {s:?} (within 2x)"))
}

fn restart_mechanism() -> Verdict {
    let (h0, eps) = (-1.0, 1e-6);
    let rounds = restart_count(0.0, h0, eps).expect("h0 < 0") + 2;
    let rec = record(json!({
        "method": "rgnp", "n": 2, "d": 50, "r": 5, "kappa": 1.0, "pfail": 0.0,
        "h0": h0, "steps": 200, "rounds": rounds, "max_oracle_calls": 1_000_000
    }));
    let levels: Vec<f64> = rec.restarts.iter().map(|r| r.level).collect();
    let mut halving = true;
    for w in levels.windows(2) {
        if w[0] <= 0.0 && -w[1] > -w[0] / 2.0 {
            halving = false;
        }
    }
    let final_gap = rec.restarts.last().map_or(f64::INFINITY, |r| r.best_objective);
    verdict(
        halving && final_gap <= eps && rec.restarts.len() == rounds,
        format!(
            "K = {rounds}, gap halves while h_k <= h*: {halving}, final gap {final_gap:.2e} (tol 1e-6), last level {:.2e}",
            levels.last().copied().unwrap_or(f64::NAN)
        ),
    )
}

fn noisy_restarts() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    for pfail in [0.1, 0.2] {
        let rec = record(json!({
            "method": "rgnp", "n": 2, "d": 50, "r": 5, "kappa": 5.0, "pfail": pfail,
            "h0": 0.0, "steps": 200, "rounds": 50, "max_oracle_calls": 10_000, "target_gap": 1e-6
        }));
        let calls = calls_to(&rec, 1e-6);
        ok &= calls.is_some_and(|c| c <= 10_000);
        parts.push(format!("pfail {pfail}: {calls:?} calls"));
    }
    verdict(ok, format!("reference + 1e-6 reached within 1e4 calls: {}", parts.join(", ")))
}

fn constant_rank() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for d in [4usize, 6] {
        let r = 2;
        let inst = generate_instance(&RandomStream::new(d as u64), 2, d, r, 8 * d * r, 2.0, 0.0).expect("valid");
        let mut s = RandomStream::new(d as u64).substream("rank");
        let radius = 0.1 * inst.x_star.norm();
        let mut ranks = Vec::new();
        for _ in 0..10 {
            let x = uniform_in_ball(&mut s, &inst.x_star, radius);
            let sv = explicit::jacobian(&x, 2).singular_values();
            // Gram eigenvalues are squared singular values.
            let top = sv.max();
            let svd_rank = sv.iter().filter(|&&v| v * v > 1e-8 * top * top).count();
            ok &= numerical_rank(&x, 2, 1e-8).is_ok_and(|k| k == svd_rank);
            ranks.push(svd_rank);
        }
        let constant = ranks.iter().all(|&k| k == ranks[0]);
        ok &= constant;
        parts.push(format!(
            "d={d}: measured {} at 10 points{}, r(r+1)/2 = {}, dr - r(r-1)/2 = {}",
            ranks[0],
            if constant { "" } else { " (NOT constant)" },
            r * (r + 1) / 2,
            d * r - r * (r - 1) / 2
        ));
    }
    verdict(ok, parts.join("; "))
}

fn determinism() -> Verdict {
    let cfg = ExperimentConfig::from_value(json!({
        "method": ["gnp", "rgnp", "polyak", "rpolyak", "scaledsm"], "n": 2, "d": 20, "r": 3,
        "kappa": 3.0, "pfail": 0.1, "h0": 0.0, "steps": 60, "rounds": 4, "max_oracle_calls": 400,
        "monitor_aiming": true
    }))
    .expect("valid config");
    let (a, b) = (tempfile::tempdir().expect("tmp"), tempfile::tempdir().expect("tmp"));
    let (ra, rb) = (run(&cfg, a.path()).expect("run"), run(&cfg, b.path()).expect("run"));
    let mut same = ra.len() == rb.len() && ra.len() == 5;
    for (x, y) in ra.iter().zip(&rb) {
        match (&x.trace_csv, &y.trace_csv) {
            (Some(p), Some(q)) => same &= std::fs::read(p).ok().is_some_and(|bytes| Some(bytes) == std::fs::read(q).ok()),
            _ => same = false,
        }
    }
    // Independently of the files, the in-memory serialisation agrees.
    let c = cfg.cells().remove(0);
    same &= trace_csv(&execute(&c).expect("run"), false).ok() == trace_csv(&execute(&c).expect("run"), false).ok();
    verdict(same, format!("{} cells run twice; trace CSVs byte-identical: {same}", ra.len()))
}

type Criterion = (usize, &'static str, Option<Duration>, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "Gram identity matches explicit Jacobian", Some(Duration::from_secs(10)), gram_identity),
        (2, "subgradient pullback matches finite differences", Some(Duration::from_secs(10)), pullback_fd),
        (3, "projected-norm identity on desk GNP steps", None, projected_norm_identity),
        (4, "min-norm CG matches dense pseudoinverse", None, min_norm_cg),
        (5, "desk conditioning trend, GNP vs Polyak", Some(Duration::from_secs(60)), conditioning_trend),
        (6, "desk ScaledSM vs GNP at kappa 10", None, scaled_trend),
        (7, "restart levels halve, final gap <= 1e-6", Some(Duration::from_secs(60)), restart_mechanism),
        (8, "restarted GNP on corrupted measurements", None, noisy_restarts),
        (9, "constant Jacobian rank near the solution", None, constant_rank),
        (10, "byte-identical CSVs across repeated runs", None, determinism),
    ];
    let mut failed = 0;
    for (id, name, limit, f) in criteria {
        let start = Instant::now();
        let v = f();
        let elapsed = start.elapsed();
        let in_time = limit.is_none_or(|l| elapsed <= l);
        let passed = v.passed && in_time;
        if !passed {
            failed += 1;
        }
        let limit_note = match limit {
            Some(l) if !in_time => format!(", over the {} s limit", l.as_secs()),
            Some(l) => format!(", limit {} s", l.as_secs()),
            None => String::new(),
        };
        println!(
            "criterion {id:>2} {}: {name}: {} ({:.2} s{limit_note})",
            if passed { "PASS" } else { "FAIL" },
            v.detail,
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
