//! Brute-force constructions that materialise order-`n` tensors.
//!
//! These are deliberately naive (`O(dⁿ)` memory) and share no code with the
//! tensor-free formulas in [`crate::tensor`]; they exist to check those
//! formulas and the Jacobian rank on small problems.

use nalgebra::DMatrix;

use crate::linalg::DenseMatrix;
use crate::tensor::TensorSensingInstance;

/// Dense symmetric tensor stored flat, index `Σₖ iₖ·dᵏ`.
#[derive(Clone, Debug)]
pub struct DenseTensor {
    pub d: usize,
    pub n: usize,
    pub data: Vec<f64>,
}

fn multi_index(mut flat: usize, d: usize, n: usize, out: &mut [usize]) {
    for slot in out.iter_mut().take(n) {
        *slot = flat % d;
        flat /= d;
    }
}

impl DenseTensor {
    pub fn zeros(d: usize, n: usize) -> Self {
        Self {
            d,
            n,
            data: vec![0.0; d.pow(n as u32)],
        }
    }

    /// `Σᵢ xᵢ^{⊗n}` over the columns of `x`.
    pub fn from_columns(x: &DenseMatrix, n: usize) -> Self {
        let d = x.nrows();
        let mut t = Self::zeros(d, n);
        let mut idx = vec![0; n];
        for (flat, value) in t.data.iter_mut().enumerate() {
            multi_index(flat, d, n, &mut idx);
            *value = (0..x.ncols())
                .map(|col| idx.iter().map(|&a| x[(a, col)]).product::<f64>())
                .sum();
        }
        t
    }

    /// `M(p^{⊗n}) = Σ M[i₁…iₙ] p[i₁]⋯p[iₙ]`.
    pub fn evaluate(&self, p: &[f64]) -> f64 {
        let mut idx = vec![0; self.n];
        self.data
            .iter()
            .enumerate()
            .map(|(flat, v)| {
                multi_index(flat, self.d, self.n, &mut idx);
                v * idx.iter().map(|&a| p[a]).product::<f64>()
            })
            .sum()
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            d: self.d,
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `𝒜(c(X))` by building `c(X)` and evaluating it on every `pⱼ^{⊗n}`,
/// `qⱼ^{⊗n}`.
pub fn measure(inst: &TensorSensingInstance, x: &DenseMatrix) -> Vec<f64> {
    let t = DenseTensor::from_columns(x, inst.order());
    (0..inst.spec.m)
        .map(|j| {
            let p: Vec<f64> = inst.p.row(j).iter().copied().collect();
            let q: Vec<f64> = inst.q.row(j).iter().copied().collect();
            t.evaluate(&p) - t.evaluate(&q)
        })
        .collect()
}

pub fn objective(inst: &TensorSensingInstance, x: &DenseMatrix) -> f64 {
    measure(inst, x)
        .iter()
        .zip(inst.b.iter())
        .map(|(a, b)| (a - b).abs())
        .sum()
}

/// Jacobian of `X ↦ Σᵢ xᵢ^{⊗n}` as a `dⁿ × dr` matrix. Column `a + i·d`
/// (column-major vectorisation of `X`) holds `∂c/∂X[a, i]`, obtained by
/// differentiating each factor slot of the product in turn.
pub fn jacobian(x: &DenseMatrix, n: usize) -> DenseMatrix {
    let (d, r) = x.shape();
    let rows = d.pow(n as u32);
    let mut jac = DMatrix::zeros(rows, d * r);
    let mut idx = vec![0; n];
    for flat in 0..rows {
        multi_index(flat, d, n, &mut idx);
        for col in 0..r {
            for slot in 0..n {
                let rest: f64 = idx
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != slot)
                    .map(|(_, &a)| x[(a, col)])
                    .product();
                jac[(flat, idx[slot] + col * d)] += rest;
            }
        }
    }
    jac
}

/// Reshape a `dr`-vector (column-major) back into a `d × r` matrix.
pub fn unvec(v: &[f64], d: usize, r: usize) -> DenseMatrix {
    DMatrix::from_column_slice(d, r, v)
}

/// `JᵀJ·vec(Z)` reshaped, with `J` from [`jacobian`].
pub fn gram_apply(x: &DenseMatrix, z: &DenseMatrix, n: usize) -> DenseMatrix {
    let jac = jacobian(x, n);
    let v = nalgebra::DVector::from_column_slice(z.as_slice());
    let out = jac.transpose() * (&jac * v);
    unvec(out.as_slice(), x.nrows(), x.ncols())
}

/// `Jᵀ vec(M)` for a dense tensor `M`.
pub fn pullback_tensor(x: &DenseMatrix, n: usize, m: &DenseTensor) -> DenseMatrix {
    let jac = jacobian(x, n);
    let v = nalgebra::DVector::from_column_slice(&m.data);
    let out = jac.transpose() * v;
    unvec(out.as_slice(), x.nrows(), x.ncols())
}
