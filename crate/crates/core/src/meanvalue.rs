//! Heat-ball mean values and the Harnack-quotient experiment.
//!
//! The solid mean is
//! `u_r(xi0) = phi(r)^{-1} int_{Omega_r(xi0)} u E`, with
//! `E = |y|^a |grad_Y Gamma|^2 / Gamma^2`, computed by nested quadrature:
//! lag `s` outermost (cosine substitution toward the bottom of the ball),
//! then the `y`-intervals of the slice, then the `y'`-ball. The gradient
//! splits into the tangential part, carrying the weight `|y|^a`, and the
//! weighted-axis part `|y|^{-a} (|y|^a D_y u~ / u~)^2`, so each piece is a
//! Jacobi-weighted integral of a bounded function.

use std::cell::RefCell;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::capacity::{potential_of_measure, DiscreteMeasure};
use crate::error::{Error, Result};
use crate::geometry::{level_depth, level_margin, level_slice, phi, phi_prime, threshold, HeatBall};
use crate::kernel::{Kernel, KernelParams, SpaceTimePoint};
use crate::weighted_quadrature::{integrate, integrate_weighted_interval, GaussLegendre, Tolerance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanValueWeight {
    pub phi_r: f64,
    pub phi_r_prime: f64,
}

impl MeanValueWeight {
    pub fn new(p: &KernelParams, x0: f64, r: f64) -> Result<Self> {
        if !(r > 0.0) {
            return Err(Error::Params(format!("radius {r} must be positive")));
        }
        Ok(Self {
            phi_r: phi(p, x0, r),
            phi_r_prime: phi_prime(p, x0, r),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanValueKernelSample {
    pub point: SpaceTimePoint,
    pub value: f64,
}

/// `E(xi0; zeta)`; `None` when `zeta` is not strictly before `xi0`.
/// For `a > 0` and `x0 != 0` the value is `+inf` on `y = 0` (an integrable
/// `|y|^{-a}` singularity).
pub fn kernel_e(k: &Kernel, xi0: &SpaceTimePoint, zeta: &SpaceTimePoint) -> Option<MeanValueKernelSample> {
    let s = xi0.t - zeta.t;
    if s <= 0.0 {
        return None;
    }
    let n = k.n();
    let (x0, y) = (xi0.x(), zeta.x());
    let d2: f64 = (0..n - 1).map(|j| (xi0.coords[j] - zeta.coords[j]).powi(2)).sum();
    let u = k.u_tilde(x0, y, s);
    let wd = k.weighted_du_tilde_dy(x0, y, s) / u;
    let a = k.a();
    let tangential = if y == 0.0 && a != 0.0 {
        if a > 0.0 {
            0.0
        } else if d2 > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        y.abs().powf(a) * d2 / (4.0 * s * s)
    };
    let normal = if y == 0.0 && a != 0.0 {
        if wd == 0.0 {
            0.0
        } else if a > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        y.abs().powf(-a) * wd * wd
    };
    Some(MeanValueKernelSample {
        point: zeta.clone(),
        value: tangential + normal,
    })
}

/// Quadrature controls for the solid mean.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanOptions {
    /// Relative tolerance of the lag integral; inner levels use 1% of it.
    pub rel_tol: f64,
    /// Gauss-Legendre nodes per `y'` direction.
    pub ball_nodes: usize,
}

impl Default for MeanOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-7,
            ball_nodes: 16,
        }
    }
}

/// `(int_B f, int_B f |v|^2)` over the ball of radius `rho` about `c` in
/// `R^m`, by `v_1 = rho sin(phi)` and recursion on the cross-section.
fn ball_moments<F: FnMut(&[f64]) -> f64>(f: &mut F, c: &[f64], rho: f64, q: usize) -> (f64, f64) {
    let m = c.len();
    if m == 0 {
        let v = f(&[]);
        return (v, 0.0);
    }
    let mut buf = vec![0.0; m];
    ball_rec(f, c, rho, 0, &mut buf, 0.0, GaussLegendre::cached(q))
}

fn ball_rec<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    c: &[f64],
    rho: f64,
    axis: usize,
    buf: &mut Vec<f64>,
    r2: f64,
    rule: &GaussLegendre,
) -> (f64, f64) {
    let m = c.len();
    if rho <= 0.0 {
        return (0.0, 0.0);
    }
    if axis == m - 1 {
        // innermost axis: plain Gauss-Legendre on the chord
        let (mut s0, mut s2) = (0.0, 0.0);
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            let v = rho * x;
            buf[axis] = c[axis] + v;
            let val = f(buf);
            s0 += w * rho * val;
            s2 += w * rho * val * (r2 + v * v);
        }
        return (s0, s2);
    }
    let (mut s0, mut s2) = (0.0, 0.0);
    for (x, w) in rule.nodes.iter().zip(&rule.weights) {
        let ang = 0.5 * PI * x;
        let v = rho * ang.sin();
        let jac = 0.5 * PI * rho * ang.cos();
        buf[axis] = c[axis] + v;
        let (a0, a2) = ball_rec(f, c, rho * ang.cos(), axis + 1, buf, r2 + v * v, rule);
        s0 += w * jac * a0;
        s2 += w * jac * a2;
    }
    (s0, s2)
}

/// `int_{Omega_r(xi0)} u E` by nested quadrature.
pub fn mean_integral<U: Fn(&SpaceTimePoint) -> f64>(
    k: &Kernel,
    u: &U,
    xi0: &SpaceTimePoint,
    r: f64,
    opts: MeanOptions,
) -> Result<f64> {
    let n = k.n();
    let a = k.a();
    let x0 = xi0.x();
    let level = threshold(k.params(), x0, r);
    let depth = level_depth(k, x0, level, r)?;
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let inner_tol = Tolerance {
        abs: 1e-300,
        rel: 0.01 * opts.rel_tol,
        max_panels: 4000,
    };
    let c_prime: Vec<f64> = xi0.coords[..n - 1].to_vec();
    let slice_integral = |s: f64| -> f64 {
        let tau = xi0.t - s;
        let moments = |y: f64| -> (f64, f64) {
            let l = level_margin(k, x0, level, s, y);
            if !(l > 0.0) {
                return (0.0, 0.0);
            }
            let rho = (4.0 * s * l).sqrt();
            let mut coords = vec![0.0; n];
            coords[n - 1] = y;
            let mut f = |v: &[f64]| {
                coords[..n - 1].copy_from_slice(v);
                u(&SpaceTimePoint::from_coords(coords.clone(), tau))
            };
            if n == 1 {
                (f(&[]), 0.0)
            } else {
                ball_moments(&mut f, &c_prime, rho, opts.ball_nodes)
            }
        };
        let mut total = 0.0;
        for (lo, hi) in level_slice(k, x0, level, s) {
            let tangential = integrate_weighted_interval(
                |y| moments(y).1 / (4.0 * s * s),
                lo,
                hi,
                a,
                &[x0],
                inner_tol,
            );
            let normal = integrate_weighted_interval(
                |y| {
                    let wd = k.weighted_du_tilde_dy(x0, y, s) / k.u_tilde(x0, y, s);
                    if wd == 0.0 {
                        0.0
                    } else {
                        moments(y).0 * wd * wd
                    }
                },
                lo,
                hi,
                -a,
                &[x0],
                inner_tol,
            );
            match (tangential, normal) {
                (Ok(t), Ok(nm)) => total += t.value + nm.value,
                (Err(e), _) | (_, Err(e)) => {
                    failure.borrow_mut().get_or_insert(e);
                }
            }
        }
        total
    };
    // s = depth (1 - cos th) / 2
    let est = integrate(
        |th: f64| {
            let s = 0.5 * depth * (1.0 - th.cos());
            if s <= 0.0 {
                return 0.0;
            }
            slice_integral(s) * 0.5 * depth * th.sin()
        },
        0.0,
        PI,
        &[],
        Tolerance {
            abs: 1e-300,
            rel: opts.rel_tol,
            max_panels: 2000,
        },
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(est?.value)
}

/// Solid mean `u_r(xi0)`.
pub fn solid_mean<U: Fn(&SpaceTimePoint) -> f64>(
    k: &Kernel,
    u: &U,
    xi0: &SpaceTimePoint,
    r: f64,
    opts: MeanOptions,
) -> Result<f64> {
    let w = MeanValueWeight::new(k.params(), xi0.x(), r)?;
    Ok(mean_integral(k, u, xi0, r, opts)? / w.phi_r)
}

/// Solid means over increasing radii for a supersolution.
#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityReport {
    pub radii: Vec<f64>,
    pub means: Vec<f64>,
    pub center_value: f64,
    /// Largest increase `u_{r_{i+1}} - u_{r_i}` (nonpositive when monotone).
    pub max_increase: f64,
    /// `max_i u_{r_i} - u(xi0)` (nonpositive when the center dominates).
    pub max_excess: f64,
    /// Empirical constants `(u_{r_i} - u_{r_{i+1}}) / ((phi(r_i)^{-1} - phi(r_{i+1})^{-1}) mu(Omega_{r_{i+1}}))`,
    /// `None` where the ball carries no mass.
    pub gap_constants: Vec<Option<f64>>,
    pub monotone: bool,
}

/// Monotonicity of `r -> u_r(xi0)` for the potential of a nonnegative
/// discrete measure, judged with tolerance `tol`.
pub fn potential_monotonicity(
    k: &Kernel,
    mu: &DiscreteMeasure,
    xi0: &SpaceTimePoint,
    radii: &[f64],
    tol: f64,
    opts: MeanOptions,
) -> Result<MonotonicityReport> {
    if mu.atoms.iter().any(|a| a.mass < 0.0) {
        return Err(Error::Precondition("measure must be nonnegative".into()));
    }
    if radii.windows(2).any(|w| w[1] <= w[0]) || radii.is_empty() {
        return Err(Error::Params("radii must be increasing".into()));
    }
    let u = |z: &SpaceTimePoint| potential_of_measure(k, mu, z).unwrap_or(f64::NAN);
    let means = radii
        .iter()
        .map(|&r| solid_mean(k, &u, xi0, r, opts))
        .collect::<Result<Vec<f64>>>()?;
    if means.iter().any(|m| !m.is_finite()) {
        return Err(Error::Range("potential evaluation failed inside a heat ball".into()));
    }
    let center_value = potential_of_measure(k, mu, xi0)?;
    let p = k.params();
    let x0 = xi0.x();
    let max_increase = means.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let max_excess = means.iter().map(|m| m - center_value).fold(f64::NEG_INFINITY, f64::max);
    let gap_constants = radii
        .windows(2)
        .zip(means.windows(2))
        .map(|(r, m)| {
            let ball = HeatBall::new(xi0.clone(), r[1]).ok()?;
            let mass: f64 = mu.atoms.iter().filter(|at| ball.contains(k, &at.point)).map(|at| at.mass).sum();
            if mass == 0.0 {
                return None;
            }
            Some((m[0] - m[1]) / ((1.0 / phi(p, x0, r[0]) - 1.0 / phi(p, x0, r[1])) * mass))
        })
        .collect();
    Ok(MonotonicityReport {
        radii: radii.to_vec(),
        means,
        center_value,
        max_increase: if radii.len() > 1 { max_increase } else { 0.0 },
        max_excess,
        gap_constants,
        monotone: (radii.len() < 2 || max_increase <= tol) && max_excess <= tol,
    })
}

/// Outcome of the Harnack-quotient experiment about the origin.
#[derive(Debug, Clone, Serialize)]
pub struct HarnackReport {
    pub r: f64,
    pub level: usize,
    pub average: f64,
    pub infimum: f64,
    pub argmin: SpaceTimePoint,
    pub quotient: f64,
    pub samples: usize,
}

/// `|x|^a`-weighted average of `u(., -3r/2)` over `|X|^2 <= 3(n+a)r/4`
/// divided by the infimum of `u` over
/// `Omega(3r/4) = {-3r/4 < t < 0, |X|^2 < 2(n+a) t ln(-4t/3r)}`.
///
/// All sample points are built in the unit-scale variables
/// `(X/sqrt(r), t/r)`, so the quotient of `u(sqrt(l) X, l t)` at `r`
/// equals that of `u` at `l r`. `level` refines both the average (Gauss
/// nodes `8 * 2^level` per direction) and the infimum lattice
/// (`8 * 2^level` per axis).
pub fn harnack_quotient<U: Fn(&SpaceTimePoint) -> f64>(k: &Kernel, r: f64, u: &U, level: usize) -> Result<HarnackReport> {
    if !(r > 0.0) {
        return Err(Error::Params(format!("radius {r} must be positive")));
    }
    let n = k.n();
    let a = k.a();
    let na = k.params().homogeneity();
    let q = 8usize << level.min(3);
    let sr = r.sqrt();
    let to_point = |xh: &[f64], th: f64| SpaceTimePoint::from_coords(xh.iter().map(|v| sr * v).collect(), r * th);

    // numerator, in unit-scale variables
    let rho = (0.75 * na).sqrt();
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let weighted_ball = |g: &dyn Fn(&[f64]) -> f64| -> Result<f64> {
        let est = integrate_weighted_interval(
            |x| {
                let rr = (rho * rho - x * x).max(0.0).sqrt();
                let mut f = |v: &[f64]| {
                    let mut c = v.to_vec();
                    c.push(x);
                    g(&c)
                };
                ball_moments(&mut f, &vec![0.0; n - 1], rr, q).0
            },
            -rho,
            rho,
            a,
            &[],
            Tolerance {
                abs: 1e-300,
                rel: 1e-10,
                max_panels: 4000,
            },
        )?;
        Ok(est.value)
    };
    let num = weighted_ball(&|xh: &[f64]| {
        let v = u(&to_point(xh, -1.5));
        if !v.is_finite() {
            failure.borrow_mut().get_or_insert(Error::Range("solution is not finite on the bottom set".into()));
        }
        v
    })?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let den = weighted_ball(&|_: &[f64]| 1.0)?;
    let average = num / den;

    // infimum over a lattice of Omega(3/4)
    let m = 8usize << level;
    let radius2 = |th: f64| 2.0 * na * th * (-th / 0.75).ln();
    let rmax = (2.0 * na * 0.75 / std::f64::consts::E).sqrt();
    let h = 2.0 * rmax / m as f64;
    let mut infimum = f64::INFINITY;
    let mut argmin = to_point(&vec![0.0; n], -0.375);
    let mut samples = 0;
    let mut idx = vec![0usize; n];
    for it in 0..m {
        let th = -0.75 * (it as f64 + 0.5) / m as f64;
        let bound = radius2(th);
        idx.iter_mut().for_each(|v| *v = 0);
        loop {
            let xh: Vec<f64> = idx.iter().map(|&i| -rmax + (i as f64 + 0.5) * h).collect();
            if xh.iter().map(|v| v * v).sum::<f64>() < bound {
                let p = to_point(&xh, th);
                let v = u(&p);
                if !v.is_finite() {
                    return Err(Error::Range(format!("solution is not finite at {p:?}")));
                }
                samples += 1;
                if v < infimum {
                    infimum = v;
                    argmin = p;
                }
            }
            let mut j = 0;
            while j < n {
                idx[j] += 1;
                if idx[j] < m {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
            if j == n {
                break;
            }
        }
    }
    if samples == 0 {
        return Err(Error::EmptySample("no lattice point in the upper set".into()));
    }
    if infimum < 0.0 {
        return Err(Error::Precondition("solution must be nonnegative".into()));
    }
    Ok(HarnackReport {
        r,
        level,
        average,
        infimum,
        argmin,
        quotient: average / infimum,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_derivative_matches_difference_quotient() {
        for &(a, x0) in &[(-0.5, 0.0), (0.3, 0.8), (0.0, -1.2)] {
            let k = Kernel::new(3, a).unwrap();
            for &r in &[0.05, 0.4, 2.0] {
                let w = MeanValueWeight::new(k.params(), x0, r).unwrap();
                let h = 1e-5 * r;
                let fd = (phi(k.params(), x0, r + h) - phi(k.params(), x0, r - h)) / (2.0 * h);
                assert!(((fd - w.phi_r_prime) / w.phi_r_prime).abs() < 1e-8);
                assert!(w.phi_r_prime > 0.0);
            }
        }
    }

    #[test]
    fn ball_moments_of_polynomials() {
        let mut one = |_: &[f64]| 1.0;
        let (v, m2) = ball_moments(&mut one, &[0.3, -0.2], 0.5, 12);
        assert!((v - PI * 0.25).abs() < 1e-13);
        assert!((m2 - PI * 0.5f64.powi(4) / 2.0).abs() < 1e-13);
        let (v3, _) = ball_moments(&mut one, &[0.0, 0.0, 0.0], 1.0, 12);
        assert!((v3 - 4.0 * PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn kernel_e_is_nonnegative_and_undefined_after_the_center() {
        let k = Kernel::new(2, 0.4).unwrap();
        let xi0 = SpaceTimePoint::new(&[0.0], 0.5, 1.0);
        assert!(kernel_e(&k, &xi0, &SpaceTimePoint::new(&[0.0], 0.5, 1.0)).is_none());
        let e = kernel_e(&k, &xi0, &SpaceTimePoint::new(&[0.1], 0.3, 0.9)).unwrap();
        assert!(e.value > 0.0 && e.value.is_finite());
        let on_axis = kernel_e(&k, &xi0, &SpaceTimePoint::new(&[0.1], 0.0, 0.9)).unwrap();
        assert_eq!(on_axis.value, f64::INFINITY);
    }

    #[test]
    fn constants_have_unit_mean() {
        for &(a, x0) in &[(0.0, 0.0), (0.4, 0.3), (-0.5, 0.0)] {
            let k = Kernel::new(2, a).unwrap();
            let xi0 = SpaceTimePoint::new(&[0.2], x0, 1.0);
            let m = solid_mean(&k, &|_: &SpaceTimePoint| 1.0, &xi0, 0.2, MeanOptions::default()).unwrap();
            assert!((m - 1.0).abs() < 1e-4, "a={a}: {m}");
        }
    }

    #[test]
    fn harnack_quotient_of_constants_and_scaling() {
        let k = Kernel::new(2, 0.3).unwrap();
        let one = harnack_quotient(&k, 0.7, &|_: &SpaceTimePoint| 1.0, 0).unwrap();
        assert!((one.quotient - 1.0).abs() < 1e-9);
        let pole = SpaceTimePoint::new(&[0.1], 0.2, -3.0);
        let u = |z: &SpaceTimePoint| k.gamma(z, &pole);
        let q = harnack_quotient(&k, 1.0, &u, 0).unwrap();
        let u2 = |z: &SpaceTimePoint| 2.0 * u(z);
        let q2 = harnack_quotient(&k, 1.0, &u2, 0).unwrap();
        assert!(((q.quotient - q2.quotient) / q.quotient).abs() < 1e-12);
        assert!(q.quotient.is_finite() && q.quotient >= 1.0);
    }
}
