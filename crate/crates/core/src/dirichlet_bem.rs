//! Double-layer boundary element solver for the Dirichlet problem on a
//! space-time box `Q x (0, T]`.
//!
//! The density is piecewise constant on panels (a tensor grid on each face)
//! times uniform time steps and is collocated at panel centroids at step
//! midpoints. Centroids never lie on an edge, so the corner term of the jump
//! relation does not enter the collocation equations and the second-kind
//! equation reads `phi = 2 D phi - 2 g`.
//!
//! Panel integrals are exact in space: on a face `y_i = c` the kernel
//! `D_{y_i} Gamma = (x_i - c)/(2s) Gamma` factors into a 1D Gaussian in the
//! normal direction, erf masses along the other unweighted axes and the
//! weighted-axis mass `W(s) = int_I u~(x, y, s) |y|^a dy`. On faces normal to
//! the weighted axis the kernel is `|c|^a D_y u~(x, c, s)` (or its weighted
//! limit at `c = 0`) times erf masses. Time integrals use Gauss-Legendre on
//! panels of ratio at most two, geometrically graded toward zero lag.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoxDomain;
use crate::kernel::{Kernel, SpaceTimePoint};
use crate::weighted_quadrature::{integrate, integrate_weighted_interval, GaussLegendre, Tolerance, WeightedRule1D};

const TIME_GL: usize = 8;
const DYADIC_LEVELS: usize = 48;
/// Gaussian exponent beyond which a factor is treated as zero.
const NEGLIGIBLE_EXPONENT: f64 = 60.0;

/// One face panel. `lo[axis] == hi[axis]` is the face position.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Panel {
    pub axis: usize,
    /// Outward orientation, `-1` on the lower face and `+1` on the upper.
    pub sigma: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub centroid: Vec<f64>,
    /// Index of the weighted-axis cell for faces transverse to that axis.
    pub y_cell: Option<usize>,
}

impl Panel {
    pub fn position(&self) -> f64 {
        self.lo[self.axis]
    }
}

/// Lateral boundary grid: `cells[i]` cells along axis `i` on every face
/// that axis crosses, and `steps` uniform time steps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryMesh {
    pub domain: BoxDomain,
    pub cells: Vec<usize>,
    pub steps: usize,
    pub panels: Vec<Panel>,
    pub y_edges: Vec<f64>,
}

impl BoundaryMesh {
    pub fn new(domain: BoxDomain, cells: Vec<usize>, steps: usize) -> Result<Self> {
        let n = domain.dim();
        if cells.len() != n || cells.iter().any(|&c| c == 0) || steps == 0 {
            return Err(Error::Params("mesh needs one positive cell count per axis and steps >= 1".into()));
        }
        let edges: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let h = (domain.hi[i] - domain.lo[i]) / cells[i] as f64;
                (0..=cells[i]).map(|j| domain.lo[i] + h * j as f64).collect()
            })
            .collect();
        let mut panels = Vec::new();
        for axis in 0..n {
            for (sigma, c) in [(-1.0, domain.lo[axis]), (1.0, domain.hi[axis])] {
                let others: Vec<usize> = (0..n).filter(|&j| j != axis).collect();
                let mut idx = vec![0usize; others.len()];
                loop {
                    let mut lo = vec![c; n];
                    let mut hi = vec![c; n];
                    for (q, &j) in others.iter().enumerate() {
                        lo[j] = edges[j][idx[q]];
                        hi[j] = edges[j][idx[q] + 1];
                    }
                    let centroid = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
                    let y_cell = if axis == n - 1 { None } else { Some(idx[others.len() - 1]) };
                    panels.push(Panel {
                        axis,
                        sigma,
                        lo,
                        hi,
                        centroid,
                        y_cell,
                    });
                    let mut q = 0;
                    while q < others.len() {
                        idx[q] += 1;
                        if idx[q] < cells[others[q]] {
                            break;
                        }
                        idx[q] = 0;
                        q += 1;
                    }
                    if q == others.len() {
                        break;
                    }
                }
            }
        }
        Ok(Self {
            y_edges: edges[n - 1].clone(),
            domain,
            cells,
            steps,
            panels,
        })
    }

    pub fn dt(&self) -> f64 {
        self.domain.t_end / self.steps as f64
    }

    pub fn num_panels(&self) -> usize {
        self.panels.len()
    }

    /// Collocation node of panel `p` at the midpoint of step `k` (0-based).
    pub fn node(&self, p: usize, k: usize) -> SpaceTimePoint {
        SpaceTimePoint::from_coords(self.panels[p].centroid.clone(), self.dt() * (k as f64 + 0.5))
    }

    /// Doubles every cell count and the number of steps.
    pub fn refined(&self) -> Result<Self> {
        Self::new(
            self.domain.clone(),
            self.cells.iter().map(|c| 2 * c).collect(),
            2 * self.steps,
        )
    }
}

/// Pointwise double-layer kernel `(D Gamma / D nu_Y) |y|^a` for a source on
/// the face normal to `axis` with outward orientation `sigma`. On the
/// weighted hyperplane the weighted limit is used.
pub fn dl_kernel_entry(k: &Kernel, obs: &SpaceTimePoint, src: &SpaceTimePoint, axis: usize, sigma: f64) -> f64 {
    let n = k.n();
    let s = obs.t - src.t;
    if s <= 0.0 {
        return 0.0;
    }
    let y = src.x();
    if axis == n - 1 {
        let d2: f64 = (0..n - 1).map(|j| (obs.coords[j] - src.coords[j]).powi(2)).sum();
        let tan = (4.0 * std::f64::consts::PI * s).powf(-0.5 * (n as f64 - 1.0)) * (-d2 / (4.0 * s)).exp();
        sigma * tan * k.weighted_du_tilde_dy(obs.x(), y, s)
    } else {
        let w = if k.a() == 0.0 || y == 0.0 { 1.0 } else { y.abs().powf(k.a()) };
        if y == 0.0 && k.a() < 0.0 {
            return f64::INFINITY * sigma * (obs.coords[axis] - src.coords[axis]).signum();
        }
        let w = if y == 0.0 && k.a() > 0.0 { 0.0 } else { w };
        sigma * (obs.coords[axis] - src.coords[axis]) / (2.0 * s) * k.gamma(obs, src) * w
    }
}

/// Evaluates panel integrals for one observation point, caching the
/// weighted-axis masses `W(y_cell, s)`.
struct PanelIntegrator<'a> {
    kernel: &'a Kernel,
    mesh: &'a BoundaryMesh,
    x: Vec<f64>,
    cache: HashMap<(usize, u64), f64>,
    failure: Option<Error>,
}

impl<'a> PanelIntegrator<'a> {
    fn new(kernel: &'a Kernel, mesh: &'a BoundaryMesh, x: &[f64]) -> Self {
        Self {
            kernel,
            mesh,
            x: x.to_vec(),
            cache: HashMap::new(),
            failure: None,
        }
    }

    fn w_mass(&mut self, cell: usize, s: f64) -> f64 {
        let key = (cell, s.to_bits());
        if let Some(&v) = self.cache.get(&key) {
            return v;
        }
        let (y0, y1) = (self.mesh.y_edges[cell], self.mesh.y_edges[cell + 1]);
        let v = weighted_mass(self.kernel, self.x[self.x.len() - 1], y0, y1, s).unwrap_or_else(|e| {
            self.failure.get_or_insert(e);
            0.0
        });
        self.cache.insert(key, v);
        v
    }

    /// Spatial panel integral of the kernel at lag `s`.
    fn kernel_at(&mut self, p: &Panel, s: f64) -> f64 {
        let n = self.kernel.n();
        let axis = p.axis;
        let c = p.position();
        let mut tan = 1.0;
        for j in 0..n - 1 {
            if j == axis {
                continue;
            }
            let m = Kernel::heat1d_mass(self.x[j], p.lo[j], p.hi[j], s);
            if m == 0.0 {
                return 0.0;
            }
            tan *= m;
        }
        if axis == n - 1 {
            p.sigma * tan * self.kernel.weighted_du_tilde_dy(self.x[n - 1], c, s)
        } else {
            let d = self.x[axis] - c;
            if d == 0.0 || d * d / (4.0 * s) > NEGLIGIBLE_EXPONENT {
                return 0.0;
            }
            let w = self.w_mass(p.y_cell.expect("transverse panel has a y cell"), s);
            p.sigma * d / (2.0 * s) * Kernel::heat1d(d, s) * tan * w
        }
    }

    /// `int_{s_lo}^{s_hi} kernel_at(p, s) ds`.
    fn integrate(&mut self, p: &Panel, s_lo: f64, s_hi: f64) -> f64 {
        let rule = GaussLegendre::cached(TIME_GL);
        if s_hi <= s_lo {
            return 0.0;
        }
        if s_lo > 0.0 {
            let mut total = 0.0;
            let mut a = s_lo;
            while a < s_hi {
                let b = (2.0 * a).min(s_hi);
                let b = if s_hi - b < 1e-12 * s_hi { s_hi } else { b };
                total += rule.integrate(|s| self.kernel_at(p, s), a, b);
                a = b;
            }
            return total;
        }
        let mut total = 0.0;
        let (mut prev, mut last) = (f64::NAN, f64::NAN);
        let mut hi = s_hi;
        let mut zeros = 0;
        for _ in 0..DYADIC_LEVELS {
            let lo = 0.5 * hi;
            let v = rule.integrate(|s| self.kernel_at(p, s), lo, hi);
            total += v;
            prev = last;
            last = v;
            hi = lo;
            if v == 0.0 {
                zeros += 1;
                if zeros >= 3 {
                    return total;
                }
            } else {
                zeros = 0;
            }
        }
        let q = last / prev;
        if q.is_finite() && q > 0.0 && q < 1.0 {
            total += last * q / (1.0 - q);
        }
        total
    }
}

/// `int_{y0}^{y1} u~(x, y, s) |y|^a dy`.
pub fn weighted_mass(k: &Kernel, x: f64, y0: f64, y1: f64, s: f64) -> Result<f64> {
    if s <= 0.0 {
        return Ok(0.0);
    }
    let dist = (y0 - x).max(x - y1).max(0.0);
    if dist * dist / (4.0 * s) > NEGLIGIBLE_EXPONENT {
        return Ok(0.0);
    }
    if k.a() == 0.0 {
        return Ok(Kernel::heat1d_mass(x, y0, y1, s));
    }
    // restrict to where the Gaussian factor is not negligible
    let reach = (4.0 * s * NEGLIGIBLE_EXPONENT).sqrt();
    let (lo, hi) = (y0.max(x - reach), y1.min(x + reach));
    if lo >= hi {
        return Ok(0.0);
    }
    let est = integrate_weighted_interval(
        |y| k.u_tilde(x, y, s),
        lo,
        hi,
        k.a(),
        &[x],
        Tolerance::abs(1e-13).with_max_panels(600),
    )?;
    Ok(est.value)
}

/// Assembled double-layer operator on a boundary mesh.
///
/// `blocks[l]` holds the `P x P` matrix (row = collocation panel, column =
/// source panel) for a source step `l` steps before the collocation step:
/// the time integral over `s in [(l - 1/2) dt, (l + 1/2) dt]`, clipped at
/// zero for `l = 0`.
#[derive(Debug, Clone)]
pub struct DoubleLayer {
    pub kernel: Kernel,
    pub mesh: BoundaryMesh,
    pub blocks: Vec<Vec<f64>>,
    /// `l(p, k) = sum of 2 |entries|` of the row of node `(p, k)`.
    pub l_weight: Vec<f64>,
}

impl DoubleLayer {
    pub fn assemble(kernel: &Kernel, mesh: &BoundaryMesh) -> Result<Self> {
        let n = kernel.n();
        if mesh.domain.dim() != n {
            return Err(Error::Params("mesh dimension does not match the kernel".into()));
        }
        let np = mesh.num_panels();
        let nt = mesh.steps;
        let dt = mesh.dt();
        // Rows sharing a weighted coordinate share W evaluations.
        let mut groups: Vec<(u64, Vec<usize>)> = Vec::new();
        for (i, p) in mesh.panels.iter().enumerate() {
            let key = p.centroid[n - 1].to_bits();
            match groups.iter_mut().find(|g| g.0 == key) {
                Some(g) => g.1.push(i),
                None => groups.push((key, vec![i])),
            }
        }
        let rows: Vec<Result<Vec<(usize, Vec<f64>)>>> = groups
            .par_iter()
            .map(|(_, members)| {
                let mut out = Vec::with_capacity(members.len());
                let x0 = &mesh.panels[members[0]].centroid;
                let mut integ = PanelIntegrator::new(kernel, mesh, x0);
                for &i in members {
                    integ.x = mesh.panels[i].centroid.clone();
                    let mut row = vec![0.0; nt * np];
                    for l in 0..nt {
                        for (q, p) in mesh.panels.iter().enumerate() {
                            row[l * np + q] = integ.integrate(p, (l as f64 - 0.5).max(0.0) * dt, (l as f64 + 0.5) * dt);
                        }
                    }
                    out.push((i, row));
                }
                match integ.failure {
                    Some(e) => Err(e),
                    None => Ok(out),
                }
            })
            .collect();
        let mut blocks = vec![vec![0.0; np * np]; nt];
        for group in rows {
            for (i, row) in group? {
                for l in 0..nt {
                    blocks[l][i * np..(i + 1) * np].copy_from_slice(&row[l * np..(l + 1) * np]);
                }
            }
        }
        let mut l_weight = vec![0.0; np * nt];
        for i in 0..np {
            let mut acc = 0.0;
            for k in 0..nt {
                // node (i, k) sees lags 0..=k
                acc += 2.0 * blocks[k][i * np..(i + 1) * np].iter().map(|v| v.abs()).sum::<f64>();
                l_weight[k * np + i] = acc;
            }
        }
        Ok(Self {
            kernel: kernel.clone(),
            mesh: mesh.clone(),
            blocks,
            l_weight,
        })
    }

    pub fn num_unknowns(&self) -> usize {
        self.mesh.num_panels() * self.mesh.steps
    }

    /// `(D phi)` at every collocation node; layout `[k * P + p]`.
    pub fn apply(&self, phi: &[f64]) -> Vec<f64> {
        let np = self.mesh.num_panels();
        let nt = self.mesh.steps;
        let mut out = vec![0.0; np * nt];
        for k in 0..nt {
            for l in 0..=k {
                let b = &self.blocks[l];
                let src = &phi[(k - l) * np..(k - l + 1) * np];
                for i in 0..np {
                    let row = &b[i * np..(i + 1) * np];
                    out[k * np + i] += row.iter().zip(src).map(|(a, c)| a * c).sum::<f64>();
                }
            }
        }
        out
    }

    /// Weighted sup-norm `max |v| exp(-4 l)`.
    pub fn weighted_norm(&self, v: &[f64]) -> f64 {
        v.iter()
            .zip(&self.l_weight)
            .map(|(x, l)| x.abs() * (-4.0 * l).exp())
            .fold(0.0, f64::max)
    }

    /// Coefficients `c` with `D phi (xi) = sum c[k * P + p] phi[k * P + p]`.
    pub fn eval_row(&self, xi: &SpaceTimePoint) -> Result<Vec<f64>> {
        let np = self.mesh.num_panels();
        let nt = self.mesh.steps;
        let dt = self.mesh.dt();
        let mut row = vec![0.0; np * nt];
        let mut integ = PanelIntegrator::new(&self.kernel, &self.mesh, &xi.coords);
        for j in 0..nt {
            let (t0, t1) = (dt * j as f64, dt * (j + 1) as f64);
            if t0 >= xi.t {
                break;
            }
            let s_lo = (xi.t - t1).max(0.0);
            let s_hi = xi.t - t0;
            for (q, p) in self.mesh.panels.iter().enumerate() {
                row[j * np + q] = integ.integrate(p, s_lo, s_hi);
            }
        }
        match integ.failure {
            Some(e) => Err(e),
            None => Ok(row),
        }
    }

    /// Direct value of the double-layer potential at `xi`.
    pub fn eval(&self, phi: &[f64], xi: &SpaceTimePoint) -> Result<f64> {
        Ok(self.eval_row(xi)?.iter().zip(phi).map(|(c, f)| c * f).sum())
    }

    /// `int_{-inf}^t int_{dQ} D_nu Gamma |y|^a`: the unit-density potential
    /// over `(0, t]` minus the weighted mass of `Gamma(X, t; ., 0)` over `Q`.
    pub fn u0(&self, xi: &SpaceTimePoint) -> Result<f64> {
        let ones = vec![1.0; self.num_unknowns()];
        let dl = self.eval(&ones, xi)?;
        Ok(dl - box_mass(&self.kernel, &self.mesh.domain, &xi.coords, xi.t)?)
    }

    /// Solves `phi = 2 D phi - 2 g` by time marching with an inner Picard
    /// iteration per step, then measures the global Picard contraction.
    pub fn solve_density(&self, g: &[f64], tol: f64, max_sweeps: usize) -> Result<DensitySolution> {
        let np = self.mesh.num_panels();
        let nt = self.mesh.steps;
        if g.len() != np * nt {
            return Err(Error::Precondition("boundary data length does not match the mesh".into()));
        }
        let mut phi = vec![0.0; np * nt];
        let mut inner_sweeps = 0;
        for k in 0..nt {
            let mut rhs: Vec<f64> = g[k * np..(k + 1) * np].iter().map(|v| -2.0 * v).collect();
            for l in 1..=k {
                let b = &self.blocks[l];
                let src = &phi[(k - l) * np..(k - l + 1) * np];
                for i in 0..np {
                    rhs[i] += 2.0 * b[i * np..(i + 1) * np].iter().zip(src).map(|(a, c)| a * c).sum::<f64>();
                }
            }
            let b0 = &self.blocks[0];
            let mut cur = rhs.clone();
            let mut last_step = f64::INFINITY;
            let mut streak = 0;
            let mut converged = false;
            for _ in 0..max_sweeps {
                inner_sweeps += 1;
                let next: Vec<f64> = (0..np)
                    .map(|i| rhs[i] + 2.0 * b0[i * np..(i + 1) * np].iter().zip(&cur).map(|(a, c)| a * c).sum::<f64>())
                    .collect();
                let step = next.iter().zip(&cur).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                let scale = next.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
                cur = next;
                if step <= tol * scale {
                    converged = true;
                    break;
                }
                if step >= last_step {
                    streak += 1;
                    if streak >= 5 {
                        return Err(Error::Divergence {
                            ratio: step / last_step,
                            streak,
                        });
                    }
                } else {
                    streak = 0;
                }
                last_step = step;
            }
            if !converged {
                return Err(Error::NonConvergence {
                    what: "time-marching inner Picard",
                    estimate: cur.iter().map(|v| v.abs()).fold(0.0, f64::max),
                    error: last_step,
                });
            }
            phi[k * np..(k + 1) * np].copy_from_slice(&cur);
        }
        let (ratio, single, global_sweeps) = self.picard_ratio(g, &phi, tol, max_sweeps)?;
        let residual = self.residual(&phi, g);
        Ok(DensitySolution {
            phi,
            contraction_ratio: ratio,
            max_single_ratio: single,
            global_sweeps,
            inner_sweeps,
            residual,
        })
    }

    /// `max |2 D phi - 2 g - phi|`.
    pub fn residual(&self, phi: &[f64], g: &[f64]) -> f64 {
        let dphi = self.apply(phi);
        dphi.iter()
            .zip(g)
            .zip(phi)
            .map(|((d, g), p)| (2.0 * d - 2.0 * g - p).abs())
            .fold(0.0, f64::max)
    }

    /// Global Picard from `phi_0 = -2 g`. Returns the largest two-sweep
    /// ratio `sqrt(step_{m+2} / step_m)`, the largest single-sweep ratio and
    /// the sweep count, with steps measured in the weighted norm. Single
    /// ratios alternate as the maximizing node moves between early and late
    /// steps; the two-sweep ratio averages that out.
    fn picard_ratio(&self, g: &[f64], fixed: &[f64], tol: f64, max_sweeps: usize) -> Result<(f64, f64, usize)> {
        let mut cur: Vec<f64> = g.iter().map(|v| -2.0 * v).collect();
        let scale = self.weighted_norm(fixed).max(self.weighted_norm(&cur));
        if scale == 0.0 {
            return Ok((0.0, 0.0, 0));
        }
        let mut steps: Vec<f64> = Vec::new();
        let (mut worst, mut worst_single): (f64, f64) = (0.0, 0.0);
        let mut streak = 0;
        // ratios of steps at roundoff level carry no information
        let floor = 1e3 * f64::EPSILON * scale;
        for sweep in 1..=max_sweeps {
            let d = self.apply(&cur);
            let next: Vec<f64> = d.iter().zip(g).map(|(d, g)| 2.0 * d - 2.0 * g).collect();
            let diff: Vec<f64> = next.iter().zip(&cur).map(|(a, b)| a - b).collect();
            let step = self.weighted_norm(&diff);
            cur = next;
            let m = steps.len();
            if m >= 1 && steps[m - 1] > floor {
                worst_single = worst_single.max(step / steps[m - 1]);
            }
            if m >= 2 && steps[m - 2] > floor {
                let r = (step / steps[m - 2]).sqrt();
                worst = worst.max(r);
                if r >= 1.0 {
                    streak += 1;
                    if streak >= 5 {
                        return Err(Error::Divergence { ratio: r, streak });
                    }
                } else {
                    streak = 0;
                }
            }
            steps.push(step);
            if step <= tol * scale {
                return Ok((worst, worst_single, sweep));
            }
        }
        Err(Error::NonConvergence {
            what: "global Picard iteration",
            estimate: scale,
            error: steps.last().copied().unwrap_or(f64::NAN),
        })
    }
}

/// Fixed point of the density equation with diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct DensitySolution {
    pub phi: Vec<f64>,
    /// Largest two-sweep ratio `sqrt(step_{m+2} / step_m)` of the global
    /// Picard iteration in the weighted norm.
    pub contraction_ratio: f64,
    /// Largest single-sweep ratio, for reference.
    pub max_single_ratio: f64,
    pub global_sweeps: usize,
    pub inner_sweeps: usize,
    /// `max |F phi - phi|` at the returned density.
    pub residual: f64,
}

/// `int_Q Gamma(X, t; Y, 0) |y|^a dY` by the product structure.
pub fn box_mass(k: &Kernel, q: &BoxDomain, x: &[f64], t: f64) -> Result<f64> {
    if t <= 0.0 {
        return Err(Error::Precondition("box mass needs t > 0".into()));
    }
    let n = q.dim();
    let mut m = 1.0;
    for j in 0..n - 1 {
        m *= Kernel::heat1d_mass(x[j], q.lo[j], q.hi[j], t);
    }
    Ok(m * weighted_mass(k, x[n - 1], q.lo[n - 1], q.hi[n - 1], t)?)
}

/// Boundary data on the parabolic boundary.
pub type BoundaryData<'a> = dyn Fn(&SpaceTimePoint) -> f64 + Send + Sync + 'a;

/// Solver knobs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    /// Absolute tolerance of the initial-data convolution.
    pub lift_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_sweeps: 500,
            lift_tol: 1e-10,
        }
    }
}

/// Solution `u = v + D phi` of the Dirichlet problem.
pub struct DirichletSolution<'f> {
    pub layer: DoubleLayer,
    pub density: DensitySolution,
    data: &'f BoundaryData<'f>,
    lift_tol: f64,
}

impl<'f> DirichletSolution<'f> {
    /// Initial-data lift `v(X, t) = int Gamma(X, t; Y, 0) f(proj Y, 0) |y|^a dY`,
    /// where `proj` clamps onto the closed box.
    pub fn lift(&self, xi: &SpaceTimePoint) -> Result<f64> {
        lift_value(&self.layer.kernel, &self.layer.mesh.domain, self.data, xi, self.lift_tol)
    }

    pub fn eval(&self, xi: &SpaceTimePoint) -> Result<f64> {
        Ok(self.lift(xi)? + self.layer.eval(&self.density.phi, xi)?)
    }
}

fn lift_value(k: &Kernel, q: &BoxDomain, f: &BoundaryData<'_>, xi: &SpaceTimePoint, tol: f64) -> Result<f64> {
    let clamp = |y: &[f64]| -> Vec<f64> { y.iter().enumerate().map(|(i, v)| v.clamp(q.lo[i], q.hi[i])).collect() };
    if xi.t <= 0.0 {
        return Ok(f(&SpaceTimePoint::from_coords(clamp(&xi.coords), 0.0)));
    }
    let g = |y: &[f64]| f(&SpaceTimePoint::from_coords(clamp(y), 0.0));
    let breaks: Vec<Vec<f64>> = (0..q.dim()).map(|i| vec![q.lo[i], q.hi[i]]).collect();
    k.cauchy_integral(&g, &xi.coords, xi.t, &breaks, tol)
}

/// Solves the Dirichlet problem with data `f` on the parabolic boundary.
pub fn solve_dirichlet<'f>(
    kernel: &Kernel,
    mesh: &BoundaryMesh,
    f: &'f BoundaryData<'f>,
    opts: SolveOptions,
) -> Result<DirichletSolution<'f>> {
    let layer = DoubleLayer::assemble(kernel, mesh)?;
    let np = mesh.num_panels();
    let nodes: Vec<(usize, usize)> = (0..mesh.steps).flat_map(|k| (0..np).map(move |p| (k, p))).collect();
    let g: Vec<Result<f64>> = nodes
        .par_iter()
        .map(|&(k, p)| {
            let xi = mesh.node(p, k);
            Ok(f(&xi) - lift_value(kernel, &mesh.domain, f, &xi, opts.lift_tol)?)
        })
        .collect();
    let g = g.into_iter().collect::<Result<Vec<f64>>>()?;
    let density = layer.solve_density(&g, opts.tol, opts.max_sweeps)?;
    Ok(DirichletSolution {
        layer,
        density,
        data: f,
        lift_tol: opts.lift_tol,
    })
}

/// Green function of `V = Q x (t_start, t_start + T)`:
/// `G(xi; zeta) = Gamma(xi; zeta) - H(xi)`, where `H` solves the Dirichlet
/// problem with lateral data `Gamma(.; zeta)` and zero initial data.
pub struct GreenFunction {
    pub layer: DoubleLayer,
    pub t_start: f64,
    pub opts: SolveOptions,
}

impl GreenFunction {
    pub fn new(kernel: &Kernel, mesh: &BoundaryMesh, t_start: f64, opts: SolveOptions) -> Result<Self> {
        Ok(Self {
            layer: DoubleLayer::assemble(kernel, mesh)?,
            t_start,
            opts,
        })
    }

    fn local(&self, z: &SpaceTimePoint) -> SpaceTimePoint {
        SpaceTimePoint::from_coords(z.coords.clone(), z.t - self.t_start)
    }

    /// Density of the correction `H` for the source `zeta`.
    ///
    /// The data `Gamma(.; zeta)` is a sharp pulse in time on faces near the
    /// source, so each step takes the time average of the data at the panel
    /// centroid rather than its midpoint value.
    pub fn source_density(&self, zeta: &SpaceTimePoint) -> Result<DensitySolution> {
        let mesh = &self.layer.mesh;
        let np = mesh.num_panels();
        let dt = mesh.dt();
        let z = self.local(zeta);
        let kernel = &self.layer.kernel;
        let g = (0..mesh.steps)
            .flat_map(|k| (0..np).map(move |p| (k, p)))
            .map(|(k, p)| {
                let lo = (k as f64 * dt).max(z.t);
                let hi = (k + 1) as f64 * dt;
                if hi <= lo {
                    return Ok(0.0);
                }
                let c = &mesh.panels[p].centroid;
                let f = |t: f64| kernel.gamma_at(c, t, &z.coords, z.t);
                // grade toward the pole time, where the pulse lives
                let cuts: Vec<f64> = (1..40).map(|j| z.t + (hi - z.t) * 0.5f64.powi(j)).collect();
                let est = integrate(f, lo, hi, &cuts, Tolerance { abs: 1e-14, rel: 1e-9, max_panels: 4000 })?;
                Ok(est.value / dt)
            })
            .collect::<Result<Vec<f64>>>()?;
        self.layer.solve_density(&g, self.opts.tol, self.opts.max_sweeps)
    }

    /// Double-layer coefficients at `xi` (reusable across sources).
    pub fn row(&self, xi: &SpaceTimePoint) -> Result<Vec<f64>> {
        self.layer.eval_row(&self.local(xi))
    }

    pub fn eval_with(&self, row: &[f64], density: &DensitySolution, xi: &SpaceTimePoint, zeta: &SpaceTimePoint) -> f64 {
        let h: f64 = row.iter().zip(&density.phi).map(|(c, f)| c * f).sum();
        self.layer.kernel.gamma(xi, zeta) - h
    }

    pub fn eval(&self, xi: &SpaceTimePoint, zeta: &SpaceTimePoint) -> Result<f64> {
        if xi.t <= zeta.t {
            return Ok(0.0);
        }
        let d = self.source_density(zeta)?;
        Ok(self.eval_with(&self.row(xi)?, &d, xi, zeta))
    }
}

impl GreenFunction {
    /// Compares `G(xi; zeta)` with `int_Q G(xi; Y, tau) G(Y, tau; zeta) |y|^a dY`
    /// for `zeta.t < tau < xi.t`, on a tensor Gauss rule with `nodes` points
    /// per axis. Returns `(direct, composed)`.
    pub fn reproduction(&self, xi: &SpaceTimePoint, zeta: &SpaceTimePoint, tau: f64, nodes: usize) -> Result<(f64, f64)> {
        if !(zeta.t < tau && tau < xi.t) {
            return Err(Error::Precondition("reproduction needs zeta.t < tau < xi.t".into()));
        }
        let q = &self.layer.mesh.domain;
        let n = q.dim();
        let gl = GaussLegendre::cached(nodes);
        let mut axes: Vec<Vec<(f64, f64)>> = Vec::with_capacity(n);
        for j in 0..n - 1 {
            let (lo, hi) = (q.lo[j], q.hi[j]);
            let h = 0.5 * (hi - lo);
            axes.push(gl.nodes.iter().zip(&gl.weights).map(|(x, w)| (lo + h * (x + 1.0), h * w)).collect());
        }
        axes.push(weighted_interval_rule(q.lo[n - 1], q.hi[n - 1], self.layer.kernel.a(), nodes)?);
        let mut points: Vec<(Vec<f64>, f64)> = vec![(Vec::new(), 1.0)];
        for axis in &axes {
            points = points
                .iter()
                .flat_map(|(c, w)| {
                    axis.iter().map(move |(x, v)| {
                        let mut c = c.clone();
                        c.push(*x);
                        (c, w * v)
                    })
                })
                .collect();
        }
        let first = self.source_density(zeta)?;
        let xi_row = self.row(xi)?;
        let terms: Vec<Result<f64>> = points
            .par_iter()
            .map(|(y, w)| {
                let mid = SpaceTimePoint::from_coords(y.clone(), tau);
                let inner = self.eval_with(&self.row(&mid)?, &first, &mid, zeta);
                let second = self.source_density(&mid)?;
                Ok(w * self.eval_with(&xi_row, &second, xi, &mid) * inner)
            })
            .collect();
        let composed = terms.into_iter().sum::<Result<f64>>()?;
        Ok((self.eval_with(&xi_row, &first, xi, zeta), composed))
    }
}

/// Nodes and weights for `int_lo^hi f(y) |y|^a dy`, split at `y = 0`.
fn weighted_interval_rule(lo: f64, hi: f64, a: f64, m: usize) -> Result<Vec<(f64, f64)>> {
    let unit = WeightedRule1D::unit(m, a)?;
    let from_zero = |b: f64| -> Vec<(f64, f64)> {
        let r = unit.scaled(b);
        r.nodes.into_iter().zip(r.weights).collect()
    };
    Ok(if lo < 0.0 && hi > 0.0 {
        let mut v = from_zero(lo);
        v.extend(from_zero(hi));
        v
    } else if lo == 0.0 {
        from_zero(hi)
    } else if hi == 0.0 {
        from_zero(lo)
    } else {
        // away from the hyperplane the weight is smooth
        let gl = GaussLegendre::cached(m);
        let h = 0.5 * (hi - lo);
        gl.nodes
            .iter()
            .zip(&gl.weights)
            .map(|(x, w)| {
                let y = lo + h * (x + 1.0);
                (y, h * w * y.abs().powf(a))
            })
            .collect()
    })
}
