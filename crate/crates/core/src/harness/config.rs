//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensing::{StorageMode, DEFAULT_AMPLITUDE};
use crate::solver::{
    Init, Method, SolverConfig, StepPolicy, DEFAULT_MAX_ITERS, DEFAULT_PINV_CUTOFF,
};

/// A scalar or a sweep list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(vs) => vs.clone(),
        }
    }
}

impl<T> From<T> for OneOrMany<T> {
    fn from(v: T) -> Self {
        OneOrMany::One(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NamedRule {
    #[serde(rename = "8nr")]
    EightNr,
}

/// Measurement count: explicit, or `"8nr"` for `p = 8·n·r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PRule {
    Explicit(usize),
    Named(NamedRule),
}

impl Default for PRule {
    fn default() -> Self {
        PRule::Named(NamedRule::EightNr)
    }
}

impl PRule {
    pub fn resolve(self, n: usize, r: usize) -> usize {
        match self {
            PRule::Explicit(p) => p,
            PRule::Named(NamedRule::EightNr) => 8 * n * r,
        }
    }
}

fn zero() -> OneOrMany<f64> {
    OneOrMany::One(0.0)
}
fn default_amplitude() -> f64 {
    DEFAULT_AMPLITUDE
}
fn yes() -> bool {
    true
}
fn default_methods() -> Vec<Method> {
    vec![Method::Opsa]
}
fn default_lambda() -> OneOrMany<f64> {
    OneOrMany::One(1.0)
}
fn default_pinv_cutoff() -> f64 {
    DEFAULT_PINV_CUTOFF
}
fn default_seeds() -> Vec<u64> {
    vec![1]
}
fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}
fn default_tag() -> String {
    "run".into()
}
fn default_thresholds() -> Vec<f64> {
    vec![1e-4, 1e-6]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub d: OneOrMany<usize>,
    pub kappa: OneOrMany<f64>,
    #[serde(default = "zero")]
    pub outlier_fraction: OneOrMany<f64>,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default)]
    pub p: PRule,
    /// Pins `σ_r(X⋆) = 1`; otherwise the random-product scale is kept.
    #[serde(default = "yes")]
    pub normalize: bool,
    #[serde(default = "default_storage")]
    pub storage: StorageMode,
}

fn default_storage() -> StorageMode {
    StorageMode::Dense
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_lambda")]
    pub lambda: OneOrMany<f64>,
    #[serde(default)]
    pub step_policy: StepPolicy,
    /// `None` picks the fraction-based default per cell.
    #[serde(default)]
    pub truncation_quantile: Option<f64>,
    #[serde(default = "default_pinv_cutoff")]
    pub pinv_cutoff: f64,
}

impl Default for SolverBlock {
    fn default() -> Self {
        SolverBlock {
            methods: default_methods(),
            lambda: default_lambda(),
            step_policy: StepPolicy::default(),
            truncation_quantile: None,
            pinv_cutoff: DEFAULT_PINV_CUTOFF,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub rel_err_stop: f64,
    #[serde(default)]
    pub dist_every: usize,
    #[serde(default)]
    pub record_wall_time: bool,
}

impl Default for RunBlock {
    fn default() -> Self {
        RunBlock {
            seeds: default_seeds(),
            max_iters: DEFAULT_MAX_ITERS,
            rel_err_stop: 0.0,
            dist_every: 0,
            record_wall_time: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub directory: PathBuf,
    #[serde(default = "default_tag")]
    pub tag: String,
    /// Error levels whose first-hit iteration is summarized per cell.
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub run: RunBlock,
    pub output: OutputBlock,
}

/// One point of the sweep product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub d: usize,
    pub kappa: f64,
    pub lambda: f64,
    pub outlier_fraction: f64,
    pub method: Method,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn p(&self) -> usize {
        self.problem.p.resolve(self.problem.n, self.problem.r)
    }

    /// Checks every sweep value up front so no cell fails on bad input.
    pub fn validate(&self) -> Result<()> {
        let pr = &self.problem;
        let bad = |msg: String| Err(Error::Config(msg));
        if pr.m == 0 || pr.n == 0 || pr.r == 0 {
            return bad(format!(
                "m, n, r must be positive; got {}, {}, {}",
                pr.m, pr.n, pr.r
            ));
        }
        for d in pr.d.values() {
            if d < pr.r || d > pr.m.min(pr.n) {
                return bad(format!("d = {d} outside {}..={}", pr.r, pr.m.min(pr.n)));
            }
        }
        for k in pr.kappa.values() {
            if !(k >= 1.0 && k.is_finite()) || (pr.r == 1 && k != 1.0) {
                return bad(format!("kappa = {k} invalid for r = {}", pr.r));
            }
        }
        for f in pr.outlier_fraction.values() {
            if !(0.0..0.5).contains(&f) {
                return bad(format!("outlier_fraction = {f} outside [0, 0.5)"));
            }
        }
        if !(pr.amplitude >= 0.0 && pr.amplitude.is_finite()) {
            return bad(format!(
                "amplitude = {} must be finite and >= 0",
                pr.amplitude
            ));
        }
        if self.p() == 0 {
            return bad("p must be positive".into());
        }
        let so = &self.solver;
        for l in so.lambda.values() {
            if !(l >= 0.0 && l.is_finite()) {
                return bad(format!("lambda = {l} must be finite and >= 0"));
            }
        }
        if let Some(q) = so.truncation_quantile {
            if !(q > 0.0 && q <= 1.0) {
                return bad(format!("truncation_quantile = {q} outside (0, 1]"));
            }
        }
        if !(so.pinv_cutoff >= 0.0 && so.pinv_cutoff < 1.0) {
            return bad(format!("pinv_cutoff = {} outside [0, 1)", so.pinv_cutoff));
        }
        if so.methods.is_empty() || self.run.seeds.is_empty() {
            return Err(Error::NoCells);
        }
        for cell in self.cells()? {
            self.solver_config(&cell)
                .validate()
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.output.thresholds.iter().any(|t| !(*t > 0.0)) {
            return bad("thresholds must be positive".into());
        }
        if self.output.tag.is_empty() || self.output.tag.contains(['/', '\\']) {
            return bad(format!(
                "tag {:?} must be a non-empty file-name fragment",
                self.output.tag
            ));
        }
        Ok(())
    }

    pub fn solver_config(&self, cell: &Cell) -> SolverConfig {
        SolverConfig {
            lambda: cell.lambda,
            method: cell.method,
            step_policy: self.solver.step_policy,
            init: Init::Spectral {
                truncation_quantile: self.solver.truncation_quantile,
            },
            max_iters: self.run.max_iters,
            rel_err_stop: self.run.rel_err_stop,
            seed: cell.seed,
            dist_every: self.run.dist_every,
            pinv_cutoff: self.solver.pinv_cutoff,
            record_wall_time: self.run.record_wall_time,
        }
    }

    /// Cartesian product in (d, κ, λ, fraction, method, seed) order, seed
    /// varying fastest.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let ds = self.problem.d.values();
        let kappas = self.problem.kappa.values();
        let lambdas = self.solver.lambda.values();
        let fractions = self.problem.outlier_fraction.values();
        let methods = &self.solver.methods;
        let seeds = &self.run.seeds;
        let mut cells = Vec::new();
        for &d in &ds {
            for &kappa in &kappas {
                for &lambda in &lambdas {
                    for &outlier_fraction in &fractions {
                        for &method in methods {
                            for &seed in seeds {
                                cells.push(Cell {
                                    index: cells.len(),
                                    d,
                                    kappa,
                                    lambda,
                                    outlier_fraction,
                                    method,
                                    seed,
                                });
                            }
                        }
                    }
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::NoCells);
        }
        Ok(cells)
    }
}
