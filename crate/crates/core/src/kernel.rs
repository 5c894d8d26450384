//! Fundamental solution of the weighted degenerate heat operator.
//!
//! With `s = t - tau > 0`,
//! `Gamma(X,t;Y,tau) = C_{n,a} s^{-(n+a)/2} exp(-|X-Y|^2/4s) F(xy/s)`,
//! which factors as a product of one-dimensional Gaussians in the unweighted
//! directions times the weighted-axis kernel
//! `u~(x,y,s) = 2^{-1-a} s^{-(1+a)/2} exp(-(x-y)^2/4s) F(xy/s)`.
//! Every routine below exploits that product structure.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special_functions::Profile;
use crate::weighted_quadrature::{integrate, integrate_weighted_interval, Tolerance};

/// Dimension, weight exponent and derived constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub n: usize,
    pub a: f64,
    pub nu: f64,
    pub c_na: f64,
}

impl KernelParams {
    pub fn new(n: usize, a: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Params(format!("dimension n = {n} must be at least 2")));
        }
        if !(a > -1.0 && a < 1.0) {
            return Err(Error::Params(format!("weight exponent a = {a} outside (-1, 1)")));
        }
        Ok(Self {
            n,
            a,
            nu: 0.5 * (a - 1.0),
            c_na: 2f64.powf(-1.0 - a) * (4.0 * PI).powf(-0.5 * (n as f64 - 1.0)),
        })
    }

    /// Homogeneity exponent `n + a`.
    pub fn homogeneity(&self) -> f64 {
        self.n as f64 + self.a
    }
}

/// Space-time point; the last spatial coordinate is the weighted axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub coords: Vec<f64>,
    pub t: f64,
}

impl SpaceTimePoint {
    pub fn new(x_prime: &[f64], x: f64, t: f64) -> Self {
        let mut coords = x_prime.to_vec();
        coords.push(x);
        Self { coords, t }
    }

    pub fn from_coords(coords: Vec<f64>, t: f64) -> Self {
        Self { coords, t }
    }

    /// Weighted coordinate.
    pub fn x(&self) -> f64 {
        *self.coords.last().expect("point has at least one coordinate")
    }

    pub fn x_prime(&self) -> &[f64] {
        &self.coords[..self.coords.len() - 1]
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// `grad_Y Gamma`, with a flag when the weighted component is unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct GradY {
    pub components: Vec<f64>,
    /// Set at `y = 0`, `x != 0`, `a > 0`: the raw derivative blows up and the
    /// weighted limit `lim |y|^a D_y Gamma` is the meaningful object. The
    /// weighted component is then reported as that limit.
    pub singular_axis: bool,
}

/// Value of `Gamma` with structural envelopes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sandwich {
    pub value: f64,
    /// Gaussian `exp(-d^2/2s)` envelope with `max` of the decay factors.
    pub lower: f64,
    /// Gaussian `exp(-d^2/6s)` envelope with `min` of the decay factors.
    pub upper: f64,
    /// Same-Gaussian envelope `(1 + |xy|/s)^{-a/2}`.
    pub sharp: f64,
}

/// Evaluator for `Gamma` and friends at fixed `(n, a)`.
#[derive(Debug, Clone)]
pub struct Kernel {
    params: KernelParams,
    profile: Profile,
    /// `2^{-1-a}`.
    c1: f64,
    /// `(1 - a) 4^{a-1} / Gamma((3-a)/2)`, the weighted limit of `|s|^a F'(s)`.
    limit_factor: f64,
}

/// Spatial truncation in units of the Gaussian standard deviation.
pub const TRUNCATION_SIGMAS: f64 = 9.0;

impl Kernel {
    pub fn new(n: usize, a: f64) -> Result<Self> {
        let params = KernelParams::new(n, a)?;
        let profile = Profile::new(a)?;
        let limit_factor = (1.0 - a) * 4f64.powf(a - 1.0) * profile.recip_gamma_one_minus_nu();
        Ok(Self {
            params,
            profile,
            c1: 2f64.powf(-1.0 - a),
            limit_factor,
        })
    }

    pub fn from_params(p: &KernelParams) -> Result<Self> {
        Self::new(p.n, p.a)
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn a(&self) -> f64 {
        self.params.a
    }

    /// One-dimensional heat kernel `(4 pi s)^{-1/2} exp(-d^2/4s)`.
    #[inline]
    pub fn heat1d(d: f64, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        (4.0 * PI * s).powf(-0.5) * (-d * d / (4.0 * s)).exp()
    }

    /// `int_lo^hi heat1d(x - y, s) dy`.
    pub fn heat1d_mass(x: f64, lo: f64, hi: f64, s: f64) -> f64 {
        if s <= 0.0 {
            return if x > lo && x < hi {
                1.0
            } else if x == lo || x == hi {
                0.5
            } else {
                0.0
            };
        }
        let r = 2.0 * s.sqrt();
        let (u, v) = ((x - lo) / r, (x - hi) / r);
        // erf differences lose accuracy when both arguments share a sign and
        // are large; use erfc on the matching tail.
        use statrs::function::erf::{erf, erfc};
        if u > 0.0 && v > 0.0 {
            0.5 * (erfc(v) - erfc(u))
        } else if u < 0.0 && v < 0.0 {
            0.5 * (erfc(-u) - erfc(-v))
        } else {
            0.5 * (erf(u) - erf(v))
        }
    }

    /// Weighted-axis kernel `u~(x, y, s)`; zero for `s <= 0`.
    #[inline]
    pub fn u_tilde(&self, x: f64, y: f64, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let g = -(x - y) * (x - y) / (4.0 * s);
        if g < -745.0 {
            return 0.0;
        }
        self.c1 * s.powf(-0.5 * (1.0 + self.params.a)) * g.exp() * self.profile.f(x * y / s)
    }

    /// `D_y u~(x, y, s)`; `None` when the derivative is unbounded
    /// (`y = 0`, `x != 0`, `a > 0`).
    pub fn du_tilde_dy(&self, x: f64, y: f64, s: f64) -> Option<f64> {
        if s <= 0.0 {
            return Some(0.0);
        }
        let g = -(x - y) * (x - y) / (4.0 * s);
        if g < -745.0 {
            return Some(0.0);
        }
        let pre = self.c1 * s.powf(-0.5 * (1.0 + self.params.a)) * g.exp();
        let z = x * y / s;
        let fp = if z == 0.0 {
            if x == 0.0 {
                // z is identically zero along y when x = 0
                0.0
            } else {
                self.profile.f_prime(0.0).ok()?
            }
        } else {
            self.profile.f_prime_nonzero(z)
        };
        Some(pre * ((x - y) / (2.0 * s) * self.profile.f(z) + x / s * fp))
    }

    /// `lim_{y -> 0} |y|^a D_y u~(x, y, s)`; the same from both sides.
    pub fn weighted_limit_1d(&self, x: f64, s: f64) -> f64 {
        if s <= 0.0 || x == 0.0 {
            return 0.0;
        }
        let a = self.params.a;
        let g = -x * x / (4.0 * s);
        self.c1 * self.limit_factor * s.powf(-0.5 * (1.0 + a)) * (x / s) * (x.abs() / s).powf(-a) * g.exp()
    }

    /// `|y|^a D_y u~(x, y, s)`, finite for every `y` including `y = 0`.
    pub fn weighted_du_tilde_dy(&self, x: f64, y: f64, s: f64) -> f64 {
        if y == 0.0 {
            return self.weighted_limit_1d(x, s);
        }
        let w = if self.params.a == 0.0 { 1.0 } else { y.abs().powf(self.params.a) };
        w * self.du_tilde_dy(x, y, s).unwrap_or(0.0)
    }

    /// Product of the unweighted Gaussian factors.
    #[inline]
    fn tangential(&self, x: &[f64], y: &[f64], s: f64) -> f64 {
        let n = self.params.n;
        let d2: f64 = (0..n - 1).map(|j| (x[j] - y[j]).powi(2)).sum();
        (4.0 * PI * s).powf(-0.5 * (n as f64 - 1.0)) * (-d2 / (4.0 * s)).exp()
    }

    /// `Gamma(X, t; Y, tau)` from raw coordinates.
    #[inline]
    pub fn gamma_at(&self, x: &[f64], t: f64, y: &[f64], tau: f64) -> f64 {
        let s = t - tau;
        if s <= 0.0 {
            return 0.0;
        }
        let n = self.params.n;
        let tan = self.tangential(x, y, s);
        if tan == 0.0 {
            return 0.0;
        }
        tan * self.u_tilde(x[n - 1], y[n - 1], s)
    }

    /// `Gamma(xi; zeta)`; zero unless `t > tau`.
    pub fn gamma(&self, xi: &SpaceTimePoint, zeta: &SpaceTimePoint) -> f64 {
        self.gamma_at(&xi.coords, xi.t, &zeta.coords, zeta.t)
    }

    /// `grad_Y Gamma(X, t; Y, tau)`.
    pub fn grad_y(&self, xi: &SpaceTimePoint, zeta: &SpaceTimePoint) -> GradY {
        let n = self.params.n;
        let s = xi.t - zeta.t;
        let mut components = vec![0.0; n];
        if s <= 0.0 {
            return GradY {
                components,
                singular_axis: false,
            };
        }
        let (x, y) = (&xi.coords, &zeta.coords);
        let tan = self.tangential(x, y, s);
        let ut = self.u_tilde(x[n - 1], y[n - 1], s);
        let g = tan * ut;
        for j in 0..n - 1 {
            components[j] = (x[j] - y[j]) / (2.0 * s) * g;
        }
        match self.du_tilde_dy(x[n - 1], y[n - 1], s) {
            Some(d) => {
                components[n - 1] = tan * d;
                GradY {
                    components,
                    singular_axis: false,
                }
            }
            None => {
                components[n - 1] = tan * self.weighted_limit_1d(x[n - 1], s);
                GradY {
                    components,
                    singular_axis: true,
                }
            }
        }
    }

    /// `lim_{y -> 0} |y|^a D_y Gamma(X, t; y', y, tau)`.
    pub fn weighted_normal_limit(&self, xi: &SpaceTimePoint, y_prime: &[f64], tau: f64) -> f64 {
        let s = xi.t - tau;
        if s <= 0.0 {
            return 0.0;
        }
        let mut y = y_prime.to_vec();
        y.push(0.0);
        self.tangential(&xi.coords, &y, s) * self.weighted_limit_1d(xi.x(), s)
    }

    /// `int Gamma(X, t; Y, 0) |y|^a dY`, which equals one.
    pub fn mass_integral(&self, x: &[f64], t: f64, tol: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Precondition(format!("mass integral needs t > 0 (t = {t})")));
        }
        let n = self.params.n;
        if x.len() != n {
            return Err(Error::Precondition("point dimension mismatch".into()));
        }
        let half = TRUNCATION_SIGMAS * (2.0 * t).sqrt();
        let tolr = Tolerance::abs(tol * 1e-2).with_max_panels(4000);
        let mut total = 1.0;
        for &xj in &x[..n - 1] {
            let e = integrate(|y| Self::heat1d(xj - y, t), xj - half, xj + half, &[xj], tolr)?;
            total *= e.value;
        }
        let xn = x[n - 1];
        let e = integrate_weighted_interval(
            |y| self.u_tilde(xn, y, t),
            xn - half,
            xn + half,
            self.params.a,
            &[xn],
            tolr,
        )?;
        Ok(total * e.value)
    }

    /// `|u~(x,eta,t+s) - int u~(x,y,t) u~(y,eta,s) |y|^a dy| / u~(x,eta,t+s)`.
    pub fn semigroup_residual(&self, x: f64, eta: f64, t: f64, s: f64, tol: f64) -> Result<f64> {
        let (exact, composed) = self.semigroup_parts(x, eta, t, s, tol)?;
        Ok((exact - composed).abs() / exact)
    }

    /// `(u~(x,eta,t+s), int u~(x,y,t) u~(y,eta,s) |y|^a dy)`, the latter to
    /// relative accuracy about `tol / 10`.
    pub fn semigroup_parts(&self, x: f64, eta: f64, t: f64, s: f64, tol: f64) -> Result<(f64, f64)> {
        if !(t > 0.0 && s > 0.0) {
            return Err(Error::Precondition("semigroup needs t, s > 0".into()));
        }
        let exact = self.u_tilde(x, eta, t + s);
        let half = TRUNCATION_SIGMAS * (2.0 * t.max(s)).sqrt();
        let lo = x.min(eta) - half;
        let hi = x.max(eta) + half;
        let e = integrate_weighted_interval(
            |y| self.u_tilde(x, y, t) * self.u_tilde(y, eta, s),
            lo,
            hi,
            self.params.a,
            &[x, eta],
            Tolerance::abs(0.1 * tol * exact).with_max_panels(4000),
        )?;
        Ok((exact, e.value))
    }

    /// `Gamma` with its structural envelopes (all constants set to one).
    pub fn bounds_sandwich(&self, xi: &SpaceTimePoint, zeta: &SpaceTimePoint) -> Result<Sandwich> {
        let s = xi.t - zeta.t;
        if !(s > 0.0) {
            return Err(Error::Precondition("envelopes need t > tau".into()));
        }
        let n = self.params.n;
        let a = self.params.a;
        let (x, y) = (xi.x(), zeta.x());
        let tan = self.tangential(&xi.coords, &zeta.coords, s);
        let base = tan * s.powf(-0.5 * (1.0 + a));
        let d2 = (x - y) * (x - y);
        let fx = (1.0 + x * x / s).powf(-0.5 * a);
        let fy = (1.0 + y * y / s).powf(-0.5 * a);
        debug_assert_eq!(xi.dim(), n);
        Ok(Sandwich {
            value: self.gamma(xi, zeta),
            lower: base * (-d2 / (2.0 * s)).exp() * fx.max(fy),
            upper: base * (-d2 / (6.0 * s)).exp() * fx.min(fy),
            sharp: base * (-d2 / (4.0 * s)).exp() * (1.0 + (x * y).abs() / s).powf(-0.5 * a),
        })
    }

    /// `int Gamma(X, t; Y, 0) g(Y) |y|^a dY` over the box `[X - L, X + L]`
    /// (`L` = nine standard deviations), split at the given per-axis
    /// breakpoints where `g` has kinks.
    pub fn cauchy_integral<G: Fn(&[f64]) -> f64>(
        &self,
        g: &G,
        x: &[f64],
        t: f64,
        breaks: &[Vec<f64>],
        tol: f64,
    ) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Precondition("Cauchy integral needs t > 0".into()));
        }
        let n = self.params.n;
        let half = TRUNCATION_SIGMAS * (2.0 * t).sqrt();
        let tolr = Tolerance::abs(tol).with_max_panels(2000);
        let mut y = x.to_vec();
        self.cauchy_level(g, x, t, breaks, half, tolr, &mut y, n - 1)
    }

    #[allow(clippy::too_many_arguments)]
    fn cauchy_level<G: Fn(&[f64]) -> f64>(
        &self,
        g: &G,
        x: &[f64],
        t: f64,
        breaks: &[Vec<f64>],
        half: f64,
        tol: Tolerance,
        y: &mut Vec<f64>,
        axis: usize,
    ) -> Result<f64> {
        let n = self.params.n;
        let mut bps: Vec<f64> = breaks.get(axis).cloned().unwrap_or_default();
        bps.push(x[axis]);
        let mut failure = None;
        let mut inner = |v: f64| -> f64 {
            let mut yy = y.clone();
            yy[axis] = v;
            let factor = if axis == n - 1 {
                self.u_tilde(x[axis], v, t)
            } else {
                Self::heat1d(x[axis] - v, t)
            };
            if factor == 0.0 {
                return 0.0;
            }
            if axis == 0 {
                factor * g(&yy)
            } else {
                match self.cauchy_level(g, x, t, breaks, half, tol, &mut yy, axis - 1) {
                    Ok(v) => factor * v,
                    Err(e) => {
                        failure = Some(e);
                        0.0
                    }
                }
            }
        };
        let (lo, hi) = (x[axis] - half, x[axis] + half);
        let e = if axis == n - 1 {
            integrate_weighted_interval(&mut inner, lo, hi, self.params.a, &bps, tol)?
        } else {
            integrate(&mut inner, lo, hi, &bps, tol)?
        };
        if let Some(err) = failure {
            return Err(err);
        }
        Ok(e.value)
    }

    /// Fourth-order central-difference residual of
    /// `D_t Gamma - Delta_X Gamma - (a/x) D_x Gamma` in the pole variables,
    /// relative to `|D_t Gamma|`. Valid away from `x = 0` and the pole.
    pub fn equation_residual_fd(&self, xi: &SpaceTimePoint, zeta: &SpaceTimePoint, h: f64) -> f64 {
        let n = self.params.n;
        let eval = |dx: &[f64], dt: f64| -> f64 {
            let c: Vec<f64> = xi.coords.iter().zip(dx).map(|(p, q)| p + q).collect();
            self.gamma_at(&c, xi.t + dt, &zeta.coords, zeta.t)
        };
        let zero = vec![0.0; n];
        let d1 = |f: &dyn Fn(f64) -> f64| (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h);
        let d2 = |f: &dyn Fn(f64) -> f64| {
            (-f(2.0 * h) + 16.0 * f(h) - 30.0 * f(0.0) + 16.0 * f(-h) - f(-2.0 * h)) / (12.0 * h * h)
        };
        let dt = d1(&|e| eval(&zero, e));
        let mut lap = 0.0;
        let mut dxw = 0.0;
        for j in 0..n {
            let along = |e: f64| {
                let mut d = zero.clone();
                d[j] = e;
                eval(&d, 0.0)
            };
            lap += d2(&along);
            if j == n - 1 {
                dxw = d1(&along);
            }
        }
        let res = dt - lap - self.params.a / xi.x() * dxw;
        (res / dt).abs()
    }
}
