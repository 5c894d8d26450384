//! Discrete thermal capacity.
//!
//! `cap(K) = sup { mu(R^{n+1}) : supp mu in K, P_mu <= 1 }` is discretized
//! by cell atoms: atom `i` spreads its mass uniformly, with respect to
//! `|y|^a dY`, over the spatial cube of side `h` centred at its lattice
//! point, at the lattice time. Its potential is then a product of exact 1D
//! masses, finite everywhere, which regularizes the self-interaction. The
//! potential constraint is imposed at each atom location shortly after its
//! time (lags `h^2/64 .. h^2`, plus half a time step) and on a collar above
//! the set. Capacities at spacings `h` and `h/2` are combined by Richardson
//! extrapolation, assuming first-order convergence.

use std::collections::HashMap;

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rayon::prelude::*;
use serde::Serialize;

use crate::dirichlet_bem::weighted_mass;
use crate::error::{Error, Result};
use crate::kernel::{Kernel, SpaceTimePoint};
use crate::weighted_quadrature::weighted_monomial_integral;

/// An atom of a discrete measure. `half_width == 0` is a point mass;
/// otherwise the mass is spread over the spatial cube of that half-width.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Atom {
    pub point: SpaceTimePoint,
    pub mass: f64,
    pub half_width: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DiscreteMeasure {
    pub atoms: Vec<Atom>,
}

impl DiscreteMeasure {
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }
}

/// Weighted volume `int_C |y|^a dY` of the cube of half-width `hw` around `x`.
pub fn cell_weight(k: &Kernel, x: &[f64], hw: f64) -> f64 {
    let n = x.len();
    let y = x[n - 1];
    (2.0 * hw).powi(n as i32 - 1) * weighted_monomial_integral(y - hw, y + hw, k.a(), 0)
}

/// Potential at `obs` of a unit mass spread over the cell of half-width
/// `hw` around `src` (a point mass when `hw == 0`).
pub fn cell_potential(k: &Kernel, obs: &SpaceTimePoint, src: &SpaceTimePoint, hw: f64) -> Result<f64> {
    let s = obs.t - src.t;
    if s <= 0.0 {
        return Ok(0.0);
    }
    if hw == 0.0 {
        return Ok(k.gamma(obs, src));
    }
    let n = k.n();
    let mut m = 1.0;
    for j in 0..n - 1 {
        m *= Kernel::heat1d_mass(obs.coords[j], src.coords[j] - hw, src.coords[j] + hw, s);
        if m == 0.0 {
            return Ok(0.0);
        }
    }
    let y = src.coords[n - 1];
    let w = weighted_mass(k, obs.coords[n - 1], y - hw, y + hw, s)?;
    Ok(m * w / cell_weight(k, &src.coords, hw))
}

/// `sum_i m_i Gamma(xi; zeta_i)` (cell-averaged for spread atoms).
pub fn potential_of_measure(k: &Kernel, mu: &DiscreteMeasure, xi: &SpaceTimePoint) -> Result<f64> {
    let mut total = 0.0;
    for atom in &mu.atoms {
        if atom.mass != 0.0 {
            total += atom.mass * cell_potential(k, xi, &atom.point, atom.half_width)?;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Serialize)]
pub struct CapacityResult {
    pub cap_estimate: f64,
    pub equilibrium: DiscreteMeasure,
    /// `max_j (P_mu(xi_j) - 1)^+` over the constraint points.
    pub max_constraint_violation: f64,
    pub refinement_level: usize,
    pub constraints: usize,
}

/// Cell-averaged potential matrix, row = constraint, column = atom.
/// Entries below `1e-15` are dropped.
fn potential_matrix(
    k: &Kernel,
    atoms: &[SpaceTimePoint],
    hw: f64,
    constraints: &[SpaceTimePoint],
) -> Result<Vec<Vec<(usize, f64)>>> {
    let n = k.n();
    let weights: Vec<f64> = atoms.iter().map(|p| cell_weight(k, &p.coords, hw)).collect();
    let rows: Vec<Result<Vec<(usize, f64)>>> = constraints
        .par_iter()
        .map(|c| {
            let mut cache: HashMap<(u64, u64), f64> = HashMap::new();
            let mut row = Vec::new();
            for (i, a) in atoms.iter().enumerate() {
                let s = c.t - a.t;
                if s <= 0.0 {
                    continue;
                }
                let mut m = 1.0;
                for j in 0..n - 1 {
                    m *= Kernel::heat1d_mass(c.coords[j], a.coords[j] - hw, a.coords[j] + hw, s);
                    if m == 0.0 {
                        break;
                    }
                }
                if m < 1e-300 {
                    continue;
                }
                let y = a.coords[n - 1];
                let key = (y.to_bits(), s.to_bits());
                let w = match cache.get(&key) {
                    Some(&w) => w,
                    None => {
                        let w = weighted_mass(k, c.coords[n - 1], y - hw, y + hw, s)?;
                        cache.insert(key, w);
                        w
                    }
                };
                let v = m * w / weights[i];
                if v > 1e-15 {
                    row.push((i, v));
                }
            }
            Ok(row)
        })
        .collect();
    rows.into_iter().collect()
}

/// Rows added per generation round, as a fraction of the atom count.
const ROUND_FRACTION: usize = 4;
const MAX_ROUNDS: usize = 200;

/// Simplex with lazily added constraints. The program starts from the
/// row where each atom has its largest coefficient and repeatedly adds the most violated rows, warm-starting from the
/// previous basis, until every row holds to `tol`.
fn solve_by_row_generation(natoms: usize, rows: &[Vec<(usize, f64)>], tol: f64) -> Result<(Vec<f64>, f64)> {
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = (0..natoms).map(|_| lp.add_var(1.0, (0.0, f64::INFINITY))).collect();
    let expr = |row: &Vec<(usize, f64)>| row.iter().map(|&(i, v)| (vars[i], v)).collect::<Vec<_>>();
    let mut active = vec![false; rows.len()];
    let mut best = vec![(0.0, usize::MAX); natoms];
    for (j, row) in rows.iter().enumerate() {
        for &(i, v) in row {
            if v > best[i].0 {
                best[i] = (v, j);
            }
        }
    }
    for &(_, j) in &best {
        if j != usize::MAX && !active[j] {
            active[j] = true;
            lp.add_constraint(expr(&rows[j]), ComparisonOp::Le, 1.0);
        }
    }
    let mut sol = lp.solve().map_err(|e| Error::Lp(e.to_string()))?;
    let batch = (natoms / ROUND_FRACTION).max(8);
    for _ in 0..MAX_ROUNDS {
        let masses: Vec<f64> = vars.iter().map(|&v| sol[v].max(0.0)).collect();
        let mut viol: Vec<(f64, usize)> = rows
            .iter()
            .enumerate()
            .filter(|(j, _)| !active[*j])
            .map(|(j, row)| (row.iter().map(|&(i, v)| v * masses[i]).sum::<f64>() - 1.0, j))
            .filter(|(e, _)| *e > tol)
            .collect();
        if viol.is_empty() {
            let worst = rows
                .iter()
                .map(|row| row.iter().map(|&(i, v)| v * masses[i]).sum::<f64>() - 1.0)
                .fold(0.0, f64::max);
            return Ok((masses, worst));
        }
        viol.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, j) in viol.iter().take(batch) {
            active[j] = true;
            sol = sol
                .add_constraint(expr(&rows[j]), ComparisonOp::Le, 1.0)
                .map_err(|e| Error::Lp(e.to_string()))?;
        }
    }
    Err(Error::NonConvergence {
        what: "capacity row generation",
        estimate: vars.iter().map(|&v| sol[v]).sum(),
        error: f64::NAN,
    })
}

/// Solves `max sum m_i` subject to `P_m <= 1` on `constraints`, `m >= 0`,
/// for cell atoms of half-width `hw`.
pub fn capacity_lp(
    k: &Kernel,
    atoms: &[SpaceTimePoint],
    hw: f64,
    constraints: &[SpaceTimePoint],
    tol: f64,
) -> Result<CapacityResult> {
    if atoms.is_empty() {
        return Ok(CapacityResult {
            cap_estimate: 0.0,
            equilibrium: DiscreteMeasure::default(),
            max_constraint_violation: 0.0,
            refinement_level: 0,
            constraints: constraints.len(),
        });
    }
    if hw <= 0.0 {
        return Err(Error::Params("cell half-width must be positive".into()));
    }
    let rows = potential_matrix(k, atoms, hw, constraints)?;
    // an atom no constraint sees would make the program unbounded
    let mut seen = vec![false; atoms.len()];
    for row in &rows {
        for &(i, _) in row {
            seen[i] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Lp("an atom has no constraint after it; the program is unbounded".into()));
    }
    let (masses, violation) = solve_by_row_generation(atoms.len(), &rows, tol)?;
    let equilibrium = DiscreteMeasure {
        atoms: atoms
            .iter()
            .zip(&masses)
            .map(|(p, &m)| Atom {
                point: p.clone(),
                mass: m,
                half_width: hw,
            })
            .collect(),
    };
    Ok(CapacityResult {
        cap_estimate: masses.iter().sum(),
        equilibrium,
        max_constraint_violation: violation,
        refinement_level: 0,
        constraints: constraints.len(),
    })
}

/// `int_A |y|^a dY` for the box `A = prod [lo_i, hi_i]` (weighted axis last).
pub fn flat_set_capacity(k: &Kernel, lo: &[f64], hi: &[f64]) -> f64 {
    let n = lo.len();
    let mut v = weighted_monomial_integral(lo[n - 1], hi[n - 1], k.a(), 0);
    for j in 0..n - 1 {
        v *= hi[j] - lo[j];
    }
    v
}

/// `w_a(B(X0, rho)) = int_B |y|^a dX`, by the 1D weighted integral of the
/// cross-sectional ball volume `omega_{n-1} (rho^2 - (y - x0)^2)^{(n-1)/2}`.
pub fn cylinder_capacity_bound(k: &Kernel, rho: f64, x0: &[f64]) -> Result<f64> {
    let n = k.n();
    if rho <= 0.0 || x0.len() != n {
        return Err(Error::Params("need rho > 0 and a point of dimension n".into()));
    }
    let m = (n - 1) as f64;
    let omega = std::f64::consts::PI.powf(0.5 * m) / crate::special_functions::gamma(0.5 * m + 1.0);
    let y0 = x0[n - 1];
    let est = crate::weighted_quadrature::integrate_weighted_interval(
        |y| omega * (rho * rho - (y - y0).powi(2)).max(0.0).powf(0.5 * m),
        y0 - rho,
        y0 + rho,
        k.a(),
        &[y0],
        crate::weighted_quadrature::Tolerance::abs(1e-13 * rho.powf(n as f64)),
    )?;
    Ok(est.value)
}

/// A compact set given by membership and a bounding box, sampled on a
/// space-time lattice: spatial cell centres at spacing `h`, time nodes at
/// spacing `ht` from `t_lo` (a single level when `t_lo == t_hi`).
pub struct LatticeSet<'a> {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub t_lo: f64,
    pub t_hi: f64,
    pub contains: &'a (dyn Fn(&SpaceTimePoint) -> bool + Sync),
}

/// Lattice sample of a set with its constraint cloud.
#[derive(Debug, Clone, Serialize)]
pub struct LatticeSample {
    pub h: f64,
    pub ht: f64,
    pub atoms: Vec<SpaceTimePoint>,
    pub constraints: Vec<SpaceTimePoint>,
}

/// Number of time levels of the collar above the set.
const COLLAR_LEVELS: [f64; 3] = [1.0, 2.0, 4.0];

impl<'a> LatticeSet<'a> {
    pub fn time_levels(&self, ht: f64) -> Vec<f64> {
        if self.t_hi <= self.t_lo {
            return vec![self.t_lo];
        }
        let m = ((self.t_hi - self.t_lo) / ht).round().max(1.0) as usize;
        (0..=m).map(|j| self.t_lo + (self.t_hi - self.t_lo) * j as f64 / m as f64).collect()
    }

    /// Lattice points of the set on cubic cells: `cells` along the longest
    /// spatial side of the bounding box, the other axes centred.
    pub fn sample(&self, cells: usize, ht: f64) -> LatticeSample {
        let n = self.lo.len();
        let h = (0..n).map(|i| (self.hi[i] - self.lo[i]) / cells as f64).fold(0.0, f64::max);
        let counts: Vec<usize> = (0..n)
            .map(|i| (((self.hi[i] - self.lo[i]) / h) * (1.0 - 1e-12)).ceil().max(1.0) as usize)
            .collect();
        let start: Vec<f64> = (0..n)
            .map(|i| 0.5 * (self.lo[i] + self.hi[i]) - 0.5 * counts[i] as f64 * h)
            .collect();
        let levels = self.time_levels(ht);
        let ht = if levels.len() > 1 { levels[1] - levels[0] } else { ht };
        let mut atoms = Vec::new();
        let total: usize = counts.iter().product();
        for &t in &levels {
            for flat in 0..total {
                let mut rem = flat;
                let coords: Vec<f64> = (0..n)
                    .map(|i| {
                        let j = rem % counts[i];
                        rem /= counts[i];
                        start[i] + (j as f64 + 0.5) * h
                    })
                    .collect();
                let p = SpaceTimePoint::from_coords(coords, t);
                if (self.contains)(&p) {
                    atoms.push(p);
                }
            }
        }
        let constraints = constraint_cloud(&atoms, h, ht);
        LatticeSample { h, ht, atoms, constraints }
    }
}

/// Constraint points after each atom at lags `h^2/64, h^2/16, h^2/4, h^2`
/// and `ht/2`, plus a collar `ht, 2 ht, 4 ht` above the last atom of each
/// spatial column.
pub fn constraint_cloud(atoms: &[SpaceTimePoint], h: f64, ht: f64) -> Vec<SpaceTimePoint> {
    let lags = [h * h / 64.0, h * h / 16.0, h * h / 4.0, h * h, 0.5 * ht];
    let mut out = Vec::new();
    let mut top: Vec<(Vec<u64>, f64, usize)> = Vec::new();
    for (i, a) in atoms.iter().enumerate() {
        for &l in &lags {
            out.push(SpaceTimePoint::from_coords(a.coords.clone(), a.t + l));
        }
        let key: Vec<u64> = a.coords.iter().map(|v| v.to_bits()).collect();
        match top.iter_mut().find(|e| e.0 == key) {
            Some(e) if a.t > e.1 => {
                e.1 = a.t;
                e.2 = i;
            }
            Some(_) => {}
            None => top.push((key, a.t, i)),
        }
    }
    for (_, t, i) in top {
        for c in COLLAR_LEVELS {
            out.push(SpaceTimePoint::from_coords(atoms[i].coords.clone(), t + c * ht));
        }
    }
    out
}

/// Capacity at two lattice spacings with the Richardson estimate.
#[derive(Debug, Clone, Serialize)]
pub struct RefinedCapacity {
    pub coarse: f64,
    pub fine: f64,
    pub richardson: f64,
    pub h: f64,
    pub max_constraint_violation: f64,
    /// Equilibrium measure on the fine lattice.
    pub equilibrium: DiscreteMeasure,
}

/// LP capacity of `set` at `cells` and `2 cells` (time step halved too).
pub fn refined_capacity(k: &Kernel, set: &LatticeSet, cells: usize, ht: f64, tol: f64) -> Result<RefinedCapacity> {
    let c = lattice_capacity(k, set, cells, ht, tol)?;
    let f = lattice_capacity(k, set, 2 * cells, 0.5 * ht, tol)?;
    Ok(RefinedCapacity {
        coarse: c.0.cap_estimate,
        fine: f.0.cap_estimate,
        richardson: 2.0 * f.0.cap_estimate - c.0.cap_estimate,
        h: c.1,
        max_constraint_violation: c.0.max_constraint_violation.max(f.0.max_constraint_violation),
        equilibrium: f.0.equilibrium,
    })
}

/// LP capacity of a lattice sample; returns the result and the spacing.
pub fn lattice_capacity(k: &Kernel, set: &LatticeSet, cells: usize, ht: f64, tol: f64) -> Result<(CapacityResult, f64)> {
    let s = set.sample(cells, ht);
    let r = capacity_lp(k, &s.atoms, 0.5 * s.h, &s.constraints, tol)?;
    Ok((r, s.h))
}

/// Time reflection `(X, t) -> (X, -t)` of a point cloud.
pub fn reflect_time(points: &[SpaceTimePoint]) -> Vec<SpaceTimePoint> {
    points
        .iter()
        .map(|p| SpaceTimePoint::from_coords(p.coords.clone(), -p.t))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_single_atom_potentials() {
        let k = Kernel::new(2, 0.3).unwrap();
        let xi = SpaceTimePoint::new(&[0.1], 0.4, 1.0);
        assert_eq!(potential_of_measure(&k, &DiscreteMeasure::default(), &xi).unwrap(), 0.0);
        let z = SpaceTimePoint::new(&[0.0], 0.2, 0.5);
        let mu = DiscreteMeasure {
            atoms: vec![Atom {
                point: z.clone(),
                mass: 1.0,
                half_width: 0.0,
            }],
        };
        assert_eq!(potential_of_measure(&k, &mu, &xi).unwrap(), k.gamma(&xi, &z));
        let later = SpaceTimePoint::new(&[0.0], 0.2, 1.5);
        let mu2 = DiscreteMeasure {
            atoms: vec![Atom {
                point: later,
                mass: 3.0,
                half_width: 0.0,
            }],
        };
        assert_eq!(potential_of_measure(&k, &mu2, &xi).unwrap(), 0.0);
    }

    #[test]
    fn small_cell_potential_approaches_point_potential() {
        let k = Kernel::new(2, -0.4).unwrap();
        let xi = SpaceTimePoint::new(&[0.3], 0.7, 1.0);
        let z = SpaceTimePoint::new(&[0.0], 0.5, 0.6);
        let want = k.gamma(&xi, &z);
        let got = cell_potential(&k, &xi, &z, 1e-3).unwrap();
        assert!(((got - want) / want).abs() < 1e-5);
    }

    #[test]
    fn flat_set_closed_forms() {
        let k0 = Kernel::new(2, 0.0).unwrap();
        assert!((flat_set_capacity(&k0, &[-1.0, -1.0], &[1.0, 1.0]) - 4.0).abs() < 1e-14);
        let k = Kernel::new(2, 0.5).unwrap();
        assert!((flat_set_capacity(&k, &[-1.0, -1.0], &[1.0, 1.0]) - 8.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn weighted_ball_volume() {
        let k0 = Kernel::new(3, 0.0).unwrap();
        let v = cylinder_capacity_bound(&k0, 0.7, &[0.0, 0.0, 0.3]).unwrap();
        assert!((v - 4.0 / 3.0 * std::f64::consts::PI * 0.343).abs() < 1e-10);
        let k = Kernel::new(2, 0.4).unwrap();
        let v1 = cylinder_capacity_bound(&k, 1.0, &[0.0, 0.0]).unwrap();
        let v2 = cylinder_capacity_bound(&k, 0.3, &[0.0, 0.0]).unwrap();
        assert!((v2 / v1 - 0.3f64.powf(2.4)).abs() < 1e-10);
    }

    #[test]
    fn flat_square_capacity() {
        let k = Kernel::new(2, 0.0).unwrap();
        let inside = |p: &SpaceTimePoint| p.coords.iter().all(|v| v.abs() < 1.0);
        let set = LatticeSet {
            lo: vec![-1.0, -1.0],
            hi: vec![1.0, 1.0],
            t_lo: 0.0,
            t_hi: 0.0,
            contains: &inside,
        };
        let (r, _) = lattice_capacity(&k, &set, 8, 0.25, 1e-8).unwrap();
        assert!((r.cap_estimate - 4.0).abs() < 0.2, "{}", r.cap_estimate);
        let pot = potential_of_measure(&k, &r.equilibrium, &SpaceTimePoint::new(&[0.1], 0.2, 0.3)).unwrap();
        assert!(pot <= 1.0 + 1e-6);
    }
}
