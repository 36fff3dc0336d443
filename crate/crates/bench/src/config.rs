//! Experiment configuration.
//!
//! A config is a JSON object. Grid axes (`method`, `n`, `d`, `r`, `kappa`,
//! `pfail`, `seed`) take either a single value or a list; the experiment is
//! the Cartesian product of all axes. A `preset` supplies a complete base
//! config and every other key in the file overrides it.
//!
//! ```json
//! { "preset": "fig1-desk", "seed": [0, 1], "out_dir": "out/fig1" }
//! ```
//!
//! Keys and defaults:
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `method` | required | `gnp`, `rgnp`, `polyak`, `rpolyak`, `scaledsm` |
//! | `n`, `d`, `r` | required | tensor order, dimension, rank |
//! | `m` | rule | measurement count; `m_multiplier·d·r` for `n = 2`, `m_multiplier·n·d·r` otherwise |
//! | `m_multiplier` | 8 | |
//! | `kappa` | 1 | condition number of `X★` |
//! | `pfail` | 0 | corruption probability |
//! | `seed` | 0 | instance and initialization seed |
//! | `steps` | 5000 | `T`: steps per run (per round for restarted methods) |
//! | `rounds` | none | `K`: restarts; required by `rgnp`/`rpolyak` |
//! | `h0` | none | initial lower bound; required by `rgnp`/`rpolyak` |
//! | `theta` | 1 | step fraction for non-restarted methods |
//! | `max_oracle_calls` | 10000 | per-run budget |
//! | `time_budget_sec` | none | per-run wall-clock budget |
//! | `target_gap` | none | stop once the objective gap is at most this |
//! | `init_radius` | 0.1 | `X₀` is uniform in the ball of radius `init_radius·‖X★‖_F` |
//! | `cg_tol` | 1e-10 | relative residual target of the CG solves |
//! | `monitor_aiming` | false | record the aiming inner product (GNP) |
//! | `wall_clock` | false | fill `time_sec`; off keeps CSVs byte-reproducible |
//! | `out_dir` | `out` | output directory |
//! | `check` | see [`CheckSettings`] | settings of the `check` command |

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::BenchError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gnp,
    Rgnp,
    Polyak,
    Rpolyak,
    Scaledsm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gnp => "gnp",
            Method::Rgnp => "rgnp",
            Method::Polyak => "polyak",
            Method::Rpolyak => "rpolyak",
            Method::Scaledsm => "scaledsm",
        }
    }

    pub fn is_restarted(self) -> bool {
        matches!(self, Method::Rgnp | Method::Rpolyak)
    }
}

/// A scalar or a list of scalars.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Axis<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> Axis<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            Axis::One(v) => vec![v.clone()],
            Axis::Many(v) => v.clone(),
        }
    }
}

impl<T> From<T> for Axis<T> {
    fn from(v: T) -> Self {
        Axis::One(v)
    }
}

/// Settings of the `check` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSettings {
    /// Random points for the finite-difference check.
    pub fd_points: usize,
    pub fd_step: f64,
    pub fd_tol: f64,
    /// Points in the `init_radius` ball for the rank check.
    pub rank_points: usize,
    pub rank_tol: f64,
    pub sharpness_samples: usize,
    /// GNP steps of the run fed to the rate report.
    pub rate_steps: usize,
    /// `μ_c`, `L_∇c`, `L_c`, `C` and `R`. They have no estimator and only
    /// enter `δ` and `η`; the rate report itself depends on `μ_h` and `L_h`,
    /// which are estimated.
    pub mu_c: f64,
    pub l_grad_c: f64,
    pub l_c: f64,
    pub curvature: f64,
    pub radius: f64,
}

impl Default for CheckSettings {
    fn default() -> Self {
        Self {
            fd_points: 20,
            fd_step: 1e-6,
            fd_tol: 1e-4,
            rank_points: 10,
            rank_tol: 1e-8,
            sharpness_samples: 200,
            rate_steps: 200,
            mu_c: 1.0,
            l_grad_c: 1.0,
            l_c: 1.0,
            curvature: 1.0,
            radius: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub preset: Option<String>,
    pub method: Axis<Method>,
    pub n: Axis<usize>,
    pub d: Axis<usize>,
    pub r: Axis<usize>,
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default = "default_m_multiplier")]
    pub m_multiplier: usize,
    #[serde(default = "default_kappa")]
    pub kappa: Axis<f64>,
    #[serde(default = "default_pfail")]
    pub pfail: Axis<f64>,
    #[serde(default = "default_seed")]
    pub seed: Axis<u64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub rounds: Option<usize>,
    #[serde(default)]
    pub h0: Option<f64>,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_budget")]
    pub max_oracle_calls: usize,
    #[serde(default)]
    pub time_budget_sec: Option<f64>,
    #[serde(default)]
    pub target_gap: Option<f64>,
    #[serde(default = "default_init_radius")]
    pub init_radius: f64,
    #[serde(default = "default_cg_tol")]
    pub cg_tol: f64,
    #[serde(default)]
    pub monitor_aiming: bool,
    #[serde(default)]
    pub wall_clock: bool,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub check: CheckSettings,
}

fn default_m_multiplier() -> usize {
    8
}
fn default_kappa() -> Axis<f64> {
    Axis::One(1.0)
}
fn default_pfail() -> Axis<f64> {
    Axis::One(0.0)
}
fn default_seed() -> Axis<u64> {
    Axis::One(0)
}
fn default_steps() -> usize {
    5000
}
fn default_theta() -> f64 {
    1.0
}
fn default_budget() -> usize {
    10_000
}
fn default_init_radius() -> f64 {
    0.1
}
fn default_cg_tol() -> f64 {
    1e-10
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Names accepted by the `preset` key.
pub const PRESETS: [&str; 7] = [
    "fig1-desk",
    "fig2-desk",
    "fig3-desk",
    "fig4-desk",
    "fig5-desk",
    "restart-desk",
    "check-desk",
];

/// Desk-scale benchmark grids (`d = 100` for `n = 2`,
/// `d = 50` otherwise).
pub fn preset(name: &str) -> Option<Value> {
    let v = match name {
        "fig1-desk" => json!({
            "method": ["gnp", "polyak"], "n": 2, "d": 100, "r": 5,
            "kappa": [1.0, 10.0], "pfail": 0.0,
            "steps": 5000, "max_oracle_calls": 5000, "target_gap": 1e-9,
            "out_dir": "out/fig1-desk",
        }),
        "fig2-desk" => json!({
            "method": ["gnp", "scaledsm"], "n": 2, "d": 100, "r": 5,
            "kappa": [1.0, 10.0], "pfail": 0.0,
            "steps": 5000, "max_oracle_calls": 5000, "target_gap": 1e-9,
            "out_dir": "out/fig2-desk",
        }),
        "fig3-desk" => json!({
            "method": ["gnp", "polyak"], "n": [2, 3, 4], "d": 50, "r": 5,
            "kappa": 3.0, "pfail": 0.0,
            "steps": 5000, "max_oracle_calls": 5000, "target_gap": 1e-9,
            "out_dir": "out/fig3-desk",
        }),
        "fig4-desk" => json!({
            "method": ["rgnp", "rpolyak"], "n": 2, "d": 50, "r": 5,
            "kappa": 5.0, "pfail": [0.1, 0.2], "h0": 0.0,
            "steps": 200, "rounds": 50, "max_oracle_calls": 10000,
            "out_dir": "out/fig4-desk",
        }),
        "fig5-desk" => json!({
            "method": ["gnp", "polyak"], "n": 3, "d": 50, "r": [2, 5, 8],
            "kappa": 3.0, "pfail": 0.0,
            "steps": 5000, "max_oracle_calls": 5000, "target_gap": 1e-9,
            "out_dir": "out/fig5-desk",
        }),
        "restart-desk" => json!({
            "method": "rgnp", "n": 2, "d": 50, "r": 5,
            "kappa": 1.0, "pfail": 0.0, "h0": -1.0,
            "steps": 200, "rounds": 23, "max_oracle_calls": 10000,
            "out_dir": "out/restart-desk",
        }),
        "check-desk" => json!({
            "method": "gnp", "n": 2, "d": 6, "r": 2,
            "kappa": 2.0, "pfail": 0.0,
            "steps": 200, "max_oracle_calls": 1000,
            "out_dir": "out/check-desk",
        }),
        _ => return None,
    };
    Some(v)
}

impl ExperimentConfig {
    /// Parses a config, expanding a `preset` key if present.
    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let value: Value = serde_json::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self, BenchError> {
        let Value::Object(overrides) = value else {
            return Err(BenchError::Config("config must be a JSON object".into()));
        };
        let merged = match overrides.get("preset") {
            Some(Value::String(name)) => {
                let Some(Value::Object(mut base)) = preset(name) else {
                    return Err(BenchError::Config(format!(
                        "unknown preset {name:?}; expected one of {}",
                        PRESETS.join(", ")
                    )));
                };
                merge(&mut base, overrides);
                base
            }
            Some(other) => return Err(BenchError::Config(format!("preset must be a string, got {other}"))),
            None => overrides,
        };
        let cfg: Self =
            serde_json::from_value(Value::Object(merged)).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_preset(name: &str) -> Result<Self, BenchError> {
        Self::from_value(json!({ "preset": name }))
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let cells = self.cells();
        if cells.is_empty() {
            return Err(BenchError::Config("the grid is empty".into()));
        }
        for cell in &cells {
            cell.validate()?;
        }
        Ok(())
    }

    /// The grid in a fixed order: seed, n, d, r, kappa, pfail, method
    /// (method varies fastest).
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for seed in self.seed.values() {
            for n in self.n.values() {
                for d in self.d.values() {
                    for r in self.r.values() {
                        for kappa in self.kappa.values() {
                            for pfail in self.pfail.values() {
                                for method in self.method.values() {
                                    out.push(self.cell(method, n, d, r, kappa, pfail, seed));
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn cell(&self, method: Method, n: usize, d: usize, r: usize, kappa: f64, pfail: f64, seed: u64) -> Cell {
        Cell {
            method,
            n,
            d,
            r,
            m: self.m.unwrap_or_else(|| measurement_count(self.m_multiplier, n, d, r)),
            kappa,
            pfail,
            seed,
            steps: self.steps,
            rounds: self.rounds,
            h0: self.h0,
            theta: self.theta,
            max_oracle_calls: self.max_oracle_calls,
            time_budget_sec: self.time_budget_sec,
            target_gap: self.target_gap,
            init_radius: self.init_radius,
            cg_tol: self.cg_tol,
            monitor_aiming: self.monitor_aiming,
            wall_clock: self.wall_clock,
        }
    }
}

fn merge(base: &mut Map<String, Value>, overrides: Map<String, Value>) {
    for (k, v) in overrides {
        if k == "preset" {
            base.insert(k, v);
            continue;
        }
        match (base.get_mut(&k), v) {
            (Some(Value::Object(b)), Value::Object(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// `mult·d·r` for matrices, `mult·n·d·r` for higher-order tensors.
pub fn measurement_count(mult: usize, n: usize, d: usize, r: usize) -> usize {
    if n == 2 {
        mult * d * r
    } else {
        mult * n * d * r
    }
}

/// One fully specified run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: Method,
    pub n: usize,
    pub d: usize,
    pub r: usize,
    pub m: usize,
    pub kappa: f64,
    pub pfail: f64,
    pub seed: u64,
    pub steps: usize,
    pub rounds: Option<usize>,
    pub h0: Option<f64>,
    pub theta: f64,
    pub max_oracle_calls: usize,
    pub time_budget_sec: Option<f64>,
    pub target_gap: Option<f64>,
    pub init_radius: f64,
    pub cg_tol: f64,
    pub monitor_aiming: bool,
    pub wall_clock: bool,
}

impl Cell {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |msg: String| Err(BenchError::Config(msg));
        if self.method == Method::Scaledsm && self.n != 2 {
            return bad(format!("scaledsm is defined for n = 2 only, got n = {}", self.n));
        }
        if self.method.is_restarted() {
            if self.h0.is_none() {
                return bad(format!("{} needs h0", self.method.name()));
            }
            if !self.rounds.is_some_and(|k| k > 0) {
                return bad(format!("{} needs rounds >= 1", self.method.name()));
            }
        }
        if !(0.5..=1.0).contains(&self.theta) {
            return bad(format!("theta must lie in [1/2, 1], got {}", self.theta));
        }
        if !(self.init_radius >= 0.0 && self.init_radius.is_finite()) {
            return bad(format!("init_radius must be nonnegative, got {}", self.init_radius));
        }
        if self.max_oracle_calls == 0 {
            return bad("max_oracle_calls must be positive".into());
        }
        if self.time_budget_sec.is_some_and(|t| !(t > 0.0 && t.is_finite())) {
            return bad("time_budget_sec must be positive".into());
        }
        self.instance_spec()
            .validate()
            .or_else(|e| bad(e.to_string()))
    }

    pub fn instance_spec(&self) -> gnp_core::tensor::InstanceSpec {
        gnp_core::tensor::InstanceSpec {
            n: self.n,
            d: self.d,
            r: self.r,
            m: self.m,
            kappa: self.kappa,
            pfail: self.pfail,
            seed: self.seed,
        }
    }

    /// File stem shared by the trace and artifact of this cell.
    pub fn id(&self) -> String {
        format!(
            "{}_n{}_d{}_r{}_m{}_k{}_p{}_s{}",
            self.method.name(),
            self.n,
            self.d,
            self.r,
            self.m,
            self.kappa,
            self.pfail,
            self.seed
        )
    }
}
