//! Tensor-free formulas against brute-force tensors and Jacobians.

use gnp_core::explicit::{self, DenseTensor};
use gnp_core::linalg::{gaussian_matrix, probe_self_adjoint, RandomStream};
use gnp_core::tensor::{gram_apply, generate_instance, TensorGram};
use gnp_core::{DenseMatrix, TensorSensingInstance};
use proptest::prelude::*;

fn rel(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

fn shapes() -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for n in [2, 3] {
        for d in [3, 4, 5] {
            for r in [1, 2, 3] {
                out.push((n, d, r));
            }
        }
    }
    out.push((4, 3, 2));
    out
}

fn instance(n: usize, d: usize, r: usize, pfail: f64, seed: u64) -> TensorSensingInstance {
    // A single column cannot be ill-conditioned.
    let kappa = if r == 1 { 1.0 } else { 2.0 };
    generate_instance(&RandomStream::new(seed), n, d, r, 30, kappa, pfail).unwrap()
}

#[test]
fn measure_and_objective_match_dense_tensors() {
    for (i, (n, d, r)) in shapes().into_iter().enumerate() {
        let inst = instance(n, d, r, 0.2, i as u64);
        let mut s = RandomStream::new(100 + i as u64);
        let x = gaussian_matrix(&mut s, d, r);
        let fast = inst.measure(&x).unwrap();
        let slow = explicit::measure(&inst, &x);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "n={n} d={d} r={r}: {a} vs {b}");
        }
        let (fo, so) = (inst.objective(&x).unwrap(), explicit::objective(&inst, &x));
        assert!((fo - so).abs() <= 1e-10 * so, "{fo} vs {so}");
    }
}

#[test]
fn planted_measurements_are_consistent() {
    let inst = instance(3, 4, 2, 0.3, 9);
    let slow = explicit::measure(&inst, &inst.x_star);
    for j in 0..inst.spec.m {
        let expected = slow[j] + inst.noise[j];
        assert!((inst.b[j] - expected).abs() <= 1e-10 * (1.0 + expected.abs()));
    }
}

#[test]
fn gram_apply_matches_jacobian() {
    for (i, (n, d, r)) in shapes().into_iter().enumerate() {
        let mut s = RandomStream::new(i as u64);
        for _ in 0..5 {
            let x = gaussian_matrix(&mut s, d, r);
            let z = gaussian_matrix(&mut s, d, r);
            let fast = gram_apply(&x, &z, n).unwrap();
            let slow = explicit::gram_apply(&x, &z, n);
            assert!(rel(&fast, &slow) <= 1e-10, "n={n} d={d} r={r}: {}", rel(&fast, &slow));
        }
    }
}

/// `Σⱼ sⱼ (pⱼ^{⊗n} − qⱼ^{⊗n})`, the tensor `𝒜*(s)`.
fn adjoint(inst: &TensorSensingInstance, s: &[f64]) -> DenseTensor {
    let (d, n) = (inst.spec.d, inst.order());
    let mut t = DenseTensor::zeros(d, n);
    for (j, &sj) in s.iter().enumerate() {
        let p = DenseMatrix::from_iterator(d, 1, inst.p.row(j).iter().copied());
        let q = DenseMatrix::from_iterator(d, 1, inst.q.row(j).iter().copied());
        let diff = DenseTensor::from_columns(&p, n).sub(&DenseTensor::from_columns(&q, n));
        for (a, b) in t.data.iter_mut().zip(&diff.data) {
            *a += sj * b;
        }
    }
    t
}

#[test]
fn subgradient_pullback_is_jacobian_transpose_of_adjoint() {
    for (i, (n, d, r)) in shapes().into_iter().enumerate() {
        let inst = instance(n, d, r, 0.1, 50 + i as u64);
        let x = gaussian_matrix(&mut RandomStream::new(i as u64), d, r);
        let signs: Vec<f64> = explicit::measure(&inst, &x)
            .iter()
            .zip(inst.b.iter())
            .map(|(a, b)| (a - b).signum())
            .collect();
        let expected = explicit::pullback_tensor(&x, n, &adjoint(&inst, &signs));
        let bundle = inst.subgradient_pullback(&x).unwrap();
        assert!(rel(&bundle.g, &expected) <= 1e-10, "n={n} d={d} r={r}");
        assert_eq!(bundle.h_value, inst.objective(&x).unwrap());
    }
}

#[test]
fn image_distance_and_its_pullback() {
    for (i, (n, d, r)) in shapes().into_iter().enumerate() {
        let inst = instance(n, d, r, 0.0, 200 + i as u64);
        let mut s = RandomStream::new(i as u64);
        let x = &inst.x_star + gaussian_matrix(&mut s, d, r) * 0.3;
        let diff = DenseTensor::from_columns(&x, n).sub(&DenseTensor::from_columns(&inst.x_star, n));
        let dist = inst.image_distance(&x).unwrap();
        assert!((dist - diff.frobenius()).abs() <= 1e-8 * diff.frobenius());
        let pull = inst.pullback_of_image_difference(&x).unwrap();
        assert!(rel(&pull, &explicit::pullback_tensor(&x, n, &diff)) <= 1e-10);
    }
}

#[test]
fn gram_operator_is_symmetric_psd() {
    for (i, (n, d, r)) in shapes().into_iter().enumerate() {
        let mut s = RandomStream::new(i as u64);
        let op = TensorGram::new(gaussian_matrix(&mut s, d, r), n);
        let (sym, min_quad) = probe_self_adjoint(&op, &mut s, 20);
        assert!(sym <= 1e-12, "n={n} d={d} r={r}: {sym}");
        assert!(min_quad >= -1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn measurement_scales_homogeneously(seed in 0u64..1000, alpha in -3.0f64..3.0, n in 2usize..5) {
        let inst = generate_instance(&RandomStream::new(seed), n, 4, 2, 20, 1.5, 0.0).unwrap();
        let x = gaussian_matrix(&mut RandomStream::new(seed + 1), 4, 2);
        let base = inst.measure(&x).unwrap();
        let scaled = inst.measure(&(&x * alpha)).unwrap();
        let factor = alpha.powi(n as i32);
        for (a, b) in scaled.iter().zip(base.iter()) {
            prop_assert!((a - factor * b).abs() <= 1e-10 * (1.0 + (factor * b).abs()));
        }
    }

    #[test]
    fn measurement_is_invariant_under_column_permutation(seed in 0u64..1000) {
        let inst = generate_instance(&RandomStream::new(seed), 3, 4, 3, 20, 2.0, 0.0).unwrap();
        let x = gaussian_matrix(&mut RandomStream::new(seed + 7), 4, 3);
        let mut y = x.clone();
        y.swap_columns(0, 2);
        let (a, b) = (inst.measure(&x).unwrap(), inst.measure(&y).unwrap());
        prop_assert!((a - &b).norm() <= 1e-12 * (1.0 + b.norm()));
    }

    #[test]
    fn gram_apply_is_linear_in_z(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut s = RandomStream::new(seed);
        let x = gaussian_matrix(&mut s, 5, 2);
        let z = gaussian_matrix(&mut s, 5, 2);
        let w = gaussian_matrix(&mut s, 5, 2);
        let lhs = gram_apply(&x, &(&z * a + &w * b), 3).unwrap();
        let rhs = gram_apply(&x, &z, 3).unwrap() * a + gram_apply(&x, &w, 3).unwrap() * b;
        prop_assert!((&lhs - &rhs).norm() <= 1e-10 * (1.0 + rhs.norm()));
    }

    #[test]
    fn objective_is_nonnegative_and_zero_at_planted(seed in 0u64..1000) {
        let inst = generate_instance(&RandomStream::new(seed), 2, 5, 2, 40, 3.0, 0.0).unwrap();
        prop_assert_eq!(inst.objective(&inst.x_star).unwrap(), 0.0);
        let x = gaussian_matrix(&mut RandomStream::new(seed), 5, 2);
        prop_assert!(inst.objective(&x).unwrap() >= 0.0);
    }
}
