//! JSON run configuration. Every block rejects unknown fields; points are
//! written as `[x_1, ..., x_n, t]` with the weighted coordinate last.

use degenheat::dirichlet_bem::SolveOptions;
use degenheat::kernel::SpaceTimePoint;
use degenheat::meanvalue::MeanOptions;
use degenheat::wiener::{DomainDescriptor, WienerOptions};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: Params,
    pub kernel: Option<KernelBlock>,
    pub check: Option<CheckBlock>,
    pub dirichlet: Option<DirichletBlock>,
    pub capacity: Option<CapacityBlock>,
    pub wiener: Option<WienerBlock>,
    pub meanvalue: Option<MeanBlock>,
    pub harnack: Option<HarnackBlock>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub n: usize,
    pub a: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
    pub times: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelBlock {
    pub pole: Vec<f64>,
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
    pub grid: Option<Grid>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualCase {
    pub point: Vec<f64>,
    pub pole: Vec<f64>,
    #[serde(default = "default_fd_step")]
    pub h: f64,
}

fn default_fd_step() -> f64 {
    0.08
}

/// Omitted lists fall back to a built-in suite; explicitly empty lists are
/// a configuration error.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckBlock {
    pub mass: Option<Vec<Vec<f64>>>,
    /// `[x, eta, t, s]` tuples for the weighted one-dimensional factor.
    pub semigroup: Option<Vec<[f64; 4]>>,
    pub residual: Option<Vec<ResidualCase>>,
    #[serde(default = "default_check_tol")]
    pub tol: f64,
    #[serde(default = "default_min_order")]
    pub min_order: f64,
    /// Multiplies the kernel by `1 + perturb` in the mass and semigroup checks.
    #[serde(default)]
    pub perturb: f64,
}

fn default_check_tol() -> f64 {
    1e-6
}

fn default_min_order() -> f64 {
    1.8
}

impl Default for CheckBlock {
    fn default() -> Self {
        Self {
            mass: None,
            semigroup: None,
            residual: None,
            tol: default_check_tol(),
            min_order: default_min_order(),
            perturb: 0.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryDataSpec {
    Constant { value: f64 },
    Gamma { pole: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirichletBlock {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub t_end: f64,
    pub cells: Vec<usize>,
    pub steps: usize,
    pub data: BoundaryDataSpec,
    pub probes: Vec<Vec<f64>>,
    /// Also solve on the once-refined mesh and report the observed order.
    #[serde(default)]
    pub refine: bool,
    /// Points at which to tabulate the indicator identity `u0`.
    #[serde(default)]
    pub u0: Vec<Vec<f64>>,
    #[serde(default)]
    pub solver: SolveOptions,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityBlock {
    pub set: DomainDescriptor,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub t: [f64; 2],
    pub cells: usize,
    pub ht: f64,
    #[serde(default = "yes")]
    pub refine: bool,
    #[serde(default = "default_lp_tol")]
    pub tol: f64,
}

fn yes() -> bool {
    true
}

fn default_lp_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WienerBlock {
    pub point: Vec<f64>,
    pub domain: DomainDescriptor,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub options: WienerOptions,
}

fn default_lambdas() -> Vec<f64> {
    vec![0.3, 0.5, 0.7]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedPole {
    pub pole: Vec<f64>,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub point: Vec<f64>,
    pub mass: f64,
    #[serde(default)]
    pub half_width: f64,
}

/// Test functions: `constant + sum w_i Gamma(.; pole_i)` or the potential
/// of a nonnegative discrete measure.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionSpec {
    Solution {
        #[serde(default)]
        constant: f64,
        #[serde(default)]
        poles: Vec<WeightedPole>,
    },
    Potential {
        atoms: Vec<AtomSpec>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanBlock {
    pub point: Vec<f64>,
    pub radii: Vec<f64>,
    pub function: FunctionSpec,
    #[serde(default)]
    pub options: MeanOptions,
    /// Monotonicity tolerance for potentials.
    #[serde(default = "default_mono_tol")]
    pub tol: f64,
}

fn default_mono_tol() -> f64 {
    1e-4
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnackBlock {
    pub r: f64,
    #[serde(default = "default_levels")]
    pub levels: Vec<usize>,
    pub function: FunctionSpec,
    /// Compare the quotient of `u(sqrt(l) X, l t)` at `r` with that of `u` at `l r`.
    pub scale: Option<f64>,
}

fn default_levels() -> Vec<usize> {
    vec![0, 1, 2]
}

/// Configuration problems, reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn bad<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))?;
        if cfg.params.n < 2 {
            return bad("params.n must be at least 2");
        }
        if !(cfg.params.a > -1.0 && cfg.params.a < 1.0) {
            return bad("params.a must lie in (-1, 1)");
        }
        Ok(cfg)
    }

    /// Converts `[x_1, ..., x_n, t]` into a point, checking the length.
    pub fn point(&self, v: &[f64], what: &str) -> Result<SpaceTimePoint, ConfigError> {
        let n = self.params.n;
        if v.len() != n + 1 {
            return bad(format!("{what}: expected {} numbers (n coordinates and a time), got {}", n + 1, v.len()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return bad(format!("{what}: non-finite coordinate"));
        }
        Ok(SpaceTimePoint::from_coords(v[..n].to_vec(), v[n]))
    }

    pub fn points(&self, vs: &[Vec<f64>], what: &str) -> Result<Vec<SpaceTimePoint>, ConfigError> {
        vs.iter().map(|v| self.point(v, what)).collect()
    }

    pub fn spatial(&self, v: &[f64], what: &str) -> Result<(), ConfigError> {
        if v.len() != self.params.n {
            return bad(format!("{what}: expected {} coordinates, got {}", self.params.n, v.len()));
        }
        Ok(())
    }
}

pub fn positive(v: f64, what: &str) -> Result<(), ConfigError> {
    if !(v > 0.0 && v.is_finite()) {
        return bad(format!("{what} must be positive"));
    }
    Ok(())
}

impl Grid {
    /// Tensor lattice with inclusive endpoints, times outermost.
    pub fn points(&self, n: usize) -> Result<Vec<Vec<f64>>, ConfigError> {
        if self.lo.len() != n || self.hi.len() != n || self.counts.len() != n {
            return bad("kernel.grid: lo, hi and counts need n entries");
        }
        if self.counts.iter().any(|&c| c == 0) || self.times.is_empty() {
            return bad("kernel.grid: counts must be positive and times nonempty");
        }
        let total: usize = self.counts.iter().product();
        let mut out = Vec::with_capacity(total * self.times.len());
        for &t in &self.times {
            for flat in 0..total {
                let mut rem = flat;
                let mut p: Vec<f64> = (0..n)
                    .map(|i| {
                        let j = rem % self.counts[i];
                        rem /= self.counts[i];
                        if self.counts[i] == 1 {
                            self.lo[i]
                        } else {
                            self.lo[i] + (self.hi[i] - self.lo[i]) * j as f64 / (self.counts[i] - 1) as f64
                        }
                    })
                    .collect();
                p.push(t);
                out.push(p);
            }
        }
        Ok(out)
    }
}
