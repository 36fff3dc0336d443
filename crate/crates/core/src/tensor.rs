//! Low-rank symmetric tensor sensing with an `ℓ₁` loss.
//!
//! The map is `c(X) = Σᵢ xᵢ^{⊗n}` over the columns of `X ∈ ℝ^{d×r}` and the
//! measurements are `𝒜(M)ⱼ = M(pⱼ^{⊗n}) − M(qⱼ^{⊗n})` for Gaussian `pⱼ, qⱼ`.
//! Everything here is evaluated through inner products of the columns of
//! `X`, `X★`, `P` and `Q`; no order-`n` tensor is ever formed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::composite::{CompositeOracle, PullbackBundle};
use crate::error::{check_shape, Error, Result};
use crate::linalg::{self, hadamard_pow, DenseMatrix, RandomStream, SelfAdjointAction};

/// Parameters that determine an instance completely.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub n: usize,
    pub d: usize,
    pub r: usize,
    pub m: usize,
    pub kappa: f64,
    pub pfail: f64,
    pub seed: u64,
}

impl InstanceSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n < 2 {
            return bad(format!("tensor order must be at least 2, got {}", self.n));
        }
        if self.r == 0 || self.r > self.d {
            return bad(format!("need 1 <= r <= d, got r = {}, d = {}", self.r, self.d));
        }
        if self.m == 0 {
            return bad("need at least one measurement".into());
        }
        if !(self.kappa >= 1.0) {
            return bad(format!("kappa must be >= 1, got {}", self.kappa));
        }
        if !(0.0..0.5).contains(&self.pfail) {
            return bad(format!("pfail must lie in [0, 1/2), got {}", self.pfail));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<TensorSensingInstance> {
        generate_instance(
            &RandomStream::new(self.seed),
            self.n,
            self.d,
            self.r,
            self.m,
            self.kappa,
            self.pfail,
        )
    }
}

/// One generated sensing problem.
#[derive(Clone, Debug)]
pub struct TensorSensingInstance {
    pub spec: InstanceSpec,
    /// Planted `d × r` factor.
    pub x_star: DenseMatrix,
    /// `m × d`; row `j` is `pⱼ`.
    pub p: DenseMatrix,
    /// `m × d`; row `j` is `qⱼ`.
    pub q: DenseMatrix,
    pub b: DVector<f64>,
    pub noise: DVector<f64>,
    /// Outcome of the Bernoulli(pfail) draw behind each noise entry.
    pub corrupted: Vec<bool>,
    /// `‖c(X★)‖_F²`, cached for [`TensorSensingInstance::image_distance`].
    star_sq_norm: f64,
    /// `h(c(X★))`, equal to `‖ε‖₁` up to rounding.
    star_objective: f64,
}

/// Draws an instance. Each ingredient comes from its own substream of the
/// stream's seed, so e.g. changing `pfail` leaves `X★`, `P` and `Q` intact.
pub fn generate_instance(
    stream: &RandomStream,
    n: usize,
    d: usize,
    r: usize,
    m: usize,
    kappa: f64,
    pfail: f64,
) -> Result<TensorSensingInstance> {
    let spec = InstanceSpec {
        n,
        d,
        r,
        m,
        kappa,
        pfail,
        seed: stream.seed(),
    };
    spec.validate()?;

    let x_star = linalg::conditioned_factor(&mut stream.substream("x_star"), d, r, kappa)?;
    let p = linalg::gaussian_matrix(&mut stream.substream("p"), m, d);
    let q = linalg::gaussian_matrix(&mut stream.substream("q"), m, d);

    let mut mask = stream.substream("noise_mask");
    let mut values = stream.substream("noise_values");
    let mut corrupted = Vec::with_capacity(m);
    let mut noise = DVector::zeros(m);
    for j in 0..m {
        let hit = mask.bernoulli(pfail);
        corrupted.push(hit);
        if hit {
            noise[j] = values.normal();
        }
    }

    let star_gram = x_star.tr_mul(&x_star);
    let star_sq_norm = hadamard_pow(&star_gram, n as u32).sum();
    let mut inst = TensorSensingInstance {
        spec,
        x_star,
        p,
        q,
        b: DVector::zeros(m),
        noise,
        corrupted,
        star_sq_norm,
        star_objective: 0.0,
    };
    inst.b = inst.measure_unchecked(&inst.x_star) + &inst.noise;
    inst.star_objective = (inst.measure_unchecked(&inst.x_star) - &inst.b).lp_norm(1);
    Ok(inst)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl TensorSensingInstance {
    pub fn order(&self) -> usize {
        self.spec.n
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.spec.d, self.spec.r)
    }

    fn check(&self, x: &DenseMatrix) -> Result<()> {
        check_shape(self.shape(), x.shape())
    }

    /// `𝒜(c(X))`: entry `j` is `Σᵢ ⟨pⱼ, xᵢ⟩ⁿ − ⟨qⱼ, xᵢ⟩ⁿ`.
    pub fn measure(&self, x: &DenseMatrix) -> Result<DVector<f64>> {
        self.check(x)?;
        Ok(self.measure_unchecked(x))
    }

    fn measure_unchecked(&self, x: &DenseMatrix) -> DVector<f64> {
        let n = self.spec.n as i32;
        let px = &self.p * x;
        let qx = &self.q * x;
        DVector::from_fn(self.spec.m, |j, _| {
            px.row(j)
                .iter()
                .zip(qx.row(j).iter())
                .map(|(a, b)| a.powi(n) - b.powi(n))
                .sum()
        })
    }

    /// `𝒜(c(X)) − b`.
    pub fn residual(&self, x: &DenseMatrix) -> Result<DVector<f64>> {
        Ok(self.measure(x)? - &self.b)
    }

    /// `‖𝒜(c(X)) − b‖₁`.
    pub fn objective(&self, x: &DenseMatrix) -> Result<f64> {
        Ok(self.residual(x)?.lp_norm(1))
    }

    /// `h(c(X))` together with `∇c(X)ᵀv` for `v = Σⱼ sign(ρⱼ)(pⱼ^{⊗n} − qⱼ^{⊗n})`
    /// and the Gauss-Newton operator at `X`. `sign(0) = 0`.
    pub fn subgradient_pullback(&self, x: &DenseMatrix) -> Result<PullbackBundle<'static>> {
        self.check(x)?;
        let n = self.spec.n;
        let px = &self.p * x;
        let qx = &self.q * x;
        let mut h_value = 0.0;
        let mut wp = DMatrix::zeros(self.spec.m, self.spec.r);
        let mut wq = DMatrix::zeros(self.spec.m, self.spec.r);
        for j in 0..self.spec.m {
            let meas: f64 = px
                .row(j)
                .iter()
                .zip(qx.row(j).iter())
                .map(|(a, b)| a.powi(n as i32) - b.powi(n as i32))
                .sum();
            let rho = meas - self.b[j];
            h_value += rho.abs();
            let s = sign(rho);
            if s != 0.0 {
                for i in 0..self.spec.r {
                    wp[(j, i)] = s * px[(j, i)].powi(n as i32 - 1);
                    wq[(j, i)] = s * qx[(j, i)].powi(n as i32 - 1);
                }
            }
        }
        let g = (self.p.tr_mul(&wp) - self.q.tr_mul(&wq)) * n as f64;
        Ok(PullbackBundle {
            h_value,
            g,
            gram: Box::new(TensorGram::new(x.clone(), n)),
        })
    }

    /// `‖c(X) − c(X★)‖_F` through the Gram identity
    /// `Σ⟨xᵢ,xⱼ⟩ⁿ − 2Σ⟨xᵢ,x★ⱼ⟩ⁿ + Σ⟨x★ᵢ,x★ⱼ⟩ⁿ`.
    ///
    /// Cancellation limits the accuracy to roughly `1e-8·‖c(X★)‖_F`.
    pub fn image_distance(&self, x: &DenseMatrix) -> Result<f64> {
        self.check(x)?;
        let n = self.spec.n as u32;
        let own = hadamard_pow(&x.tr_mul(x), n).sum();
        let cross = hadamard_pow(&x.tr_mul(&self.x_star), n).sum();
        let radicand = own - 2.0 * cross + self.star_sq_norm;
        if radicand < -1e-9 {
            log::warn!("image distance radicand {radicand:e} is negative; clamping to zero");
        }
        Ok(radicand.max(0.0).sqrt())
    }

    /// `∇c(X)ᵀ(c(X) − c(X★))`; column `i` is
    /// `n Σⱼ ⟨xᵢ,xⱼ⟩^{n−1} xⱼ − ⟨xᵢ,x★ⱼ⟩^{n−1} x★ⱼ`.
    pub fn pullback_of_image_difference(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.check(x)?;
        let k = self.spec.n as u32 - 1;
        let own = x * hadamard_pow(&x.tr_mul(x), k);
        let cross = &self.x_star * hadamard_pow(&self.x_star.tr_mul(x), k);
        Ok((own - cross) * self.spec.n as f64)
    }

    /// `h(c(X★)) = ‖ε‖₁`; exactly `h★ = 0` without noise, an upper bound on
    /// `h★` otherwise. Evaluated through the objective so that it matches
    /// `objective(X★)` bit for bit.
    pub fn reference_optimal_value(&self) -> f64 {
        self.star_objective
    }

    pub fn nonzero_noise_count(&self) -> usize {
        self.noise.iter().filter(|v| **v != 0.0).count()
    }
}

/// `∇c(X)ᵀ∇c(X)Z = n(n−1) X((XᵀX)^{⊙(n−2)} ⊙ ZᵀX) + n Z (XᵀX)^{⊙(n−1)}`,
/// with `A^{⊙0}` the all-ones matrix.
pub fn gram_apply(x: &DenseMatrix, z: &DenseMatrix, n: usize) -> Result<DenseMatrix> {
    check_shape(x.shape(), z.shape())?;
    if n < 2 {
        return Err(Error::InvalidParameter(format!("tensor order must be >= 2, got {n}")));
    }
    Ok(TensorGram::new(x.clone(), n).apply(z))
}

/// The Gauss-Newton operator of `c(X) = Σᵢ xᵢ^{⊗n}` at a fixed `X`, with the
/// Hadamard powers of `XᵀX` precomputed.
#[derive(Clone, Debug)]
pub struct TensorGram {
    x: DenseMatrix,
    n: usize,
    /// `(XᵀX)^{⊙(n−2)}`
    inner_low: DenseMatrix,
    /// `(XᵀX)^{⊙(n−1)}`
    inner_high: DenseMatrix,
}

impl TensorGram {
    pub fn new(x: DenseMatrix, n: usize) -> Self {
        let xtx = x.tr_mul(&x);
        let inner_low = hadamard_pow(&xtx, n as u32 - 2);
        let inner_high = hadamard_pow(&xtx, n as u32 - 1);
        Self {
            x,
            n,
            inner_low,
            inner_high,
        }
    }
}

impl SelfAdjointAction for TensorGram {
    fn shape(&self) -> (usize, usize) {
        self.x.shape()
    }

    fn apply(&self, z: &DenseMatrix) -> DenseMatrix {
        let n = self.n as f64;
        let ztx = z.tr_mul(&self.x);
        let mixed = &self.x * self.inner_low.component_mul(&ztx);
        let direct = z * &self.inner_high;
        mixed * (n * (n - 1.0)) + direct * n
    }
}

/// [`CompositeOracle`] view of an instance.
#[derive(Clone, Copy, Debug)]
pub struct SensingOracle<'a> {
    pub instance: &'a TensorSensingInstance,
    optimal_value: Option<f64>,
}

impl<'a> SensingOracle<'a> {
    /// Uses `‖ε‖₁` as the optimal value: exact without noise, a reference
    /// level otherwise.
    pub fn new(instance: &'a TensorSensingInstance) -> Self {
        Self {
            instance,
            optimal_value: Some(instance.reference_optimal_value()),
        }
    }

    pub fn with_optimal_value(instance: &'a TensorSensingInstance, value: Option<f64>) -> Self {
        Self {
            instance,
            optimal_value: value,
        }
    }
}

// Solvers only pass iterates of the shape reported by `shape()`, so the
// shape checks below cannot fail inside a solver run.
impl CompositeOracle for SensingOracle<'_> {
    fn shape(&self) -> (usize, usize) {
        self.instance.shape()
    }

    fn objective(&self, x: &DenseMatrix) -> f64 {
        self.instance.objective(x).expect("iterate shape")
    }

    fn pullback(&self, x: &DenseMatrix) -> PullbackBundle<'_> {
        self.instance.subgradient_pullback(x).expect("iterate shape")
    }

    fn optimal_value(&self) -> Option<f64> {
        self.optimal_value
    }

    fn image_distance(&self, x: &DenseMatrix) -> Option<f64> {
        self.instance.image_distance(x).ok()
    }

    fn image_difference_pullback(&self, x: &DenseMatrix) -> Option<DenseMatrix> {
        self.instance.pullback_of_image_difference(x).ok()
    }
}

/// On-disk description of an instance. The parameters regenerate it; the
/// extra fields let a reader detect a generator that no longer reproduces
/// the same draws.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstanceFile {
    pub spec: InstanceSpec,
    pub reference_optimal_value: f64,
    pub x_star_frobenius: f64,
    pub corrupted_count: usize,
}

impl InstanceFile {
    pub fn describe(inst: &TensorSensingInstance) -> Self {
        Self {
            spec: inst.spec.clone(),
            reference_optimal_value: inst.reference_optimal_value(),
            x_star_frobenius: inst.x_star.norm(),
            corrupted_count: inst.corrupted.iter().filter(|c| **c).count(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance description serialises")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Regenerates the instance and checks it against the recorded summary.
    pub fn regenerate(&self) -> Result<TensorSensingInstance> {
        let inst = self.spec.generate()?;
        let again = Self::describe(&inst);
        if again.reference_optimal_value != self.reference_optimal_value
            || again.x_star_frobenius != self.x_star_frobenius
            || again.corrupted_count != self.corrupted_count
        {
            return Err(Error::InvalidParameter(
                "regenerated instance does not match the recorded summary".into(),
            ));
        }
        Ok(inst)
    }
}
