//! Level-set regions of the fundamental solution and simple space-time sets.
//!
//! A heat ball is `Omega_r(xi0) = {zeta : Gamma(xi0; zeta) > thr(r)}` with
//! `thr(r) = (4 pi r)^{-(n+a)/2} (1 + x0^2/r)^{-a/2}`. Because Gamma factors,
//! membership at lag `s = t0 - tau` reads
//! `|y' - x0'|^2 < 4 s L(s, y)` with
//! `L(s, y) = ln u~(x0, y, s) - (n-1)/2 ln(4 pi s) - ln thr(r)`,
//! so every time slice is a union of y-intervals carrying balls in `y'`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Kernel, KernelParams, SpaceTimePoint};

/// Level `(4 pi r)^{-(n+a)/2} (1 + x0^2/r)^{-a/2}`.
pub fn threshold(p: &KernelParams, x0: f64, r: f64) -> f64 {
    (4.0 * PI * r).powf(-0.5 * p.homogeneity()) * (1.0 + x0 * x0 / r).powf(-0.5 * p.a)
}

/// Normalizer `phi(r) = 1 / threshold`.
pub fn phi(p: &KernelParams, x0: f64, r: f64) -> f64 {
    (4.0 * PI * r).powf(0.5 * p.homogeneity()) * (1.0 + x0 * x0 / r).powf(0.5 * p.a)
}

/// `d phi / dr`, strictly positive.
pub fn phi_prime(p: &KernelParams, x0: f64, r: f64) -> f64 {
    let n = p.n as f64;
    (4.0 * PI * r).powf(0.5 * p.homogeneity())
        * (1.0 + x0 * x0 / r).powf(0.5 * p.a - 1.0)
        * (0.5 * p.homogeneity() / r + 0.5 * n * x0 * x0 / (r * r))
}

/// Log-margin `L(s, y)` of the level set `Gamma(xi0; .) > level` at lag `s`.
/// Positive exactly where the slice ball in `y'` has positive radius.
pub fn level_margin(k: &Kernel, x0: f64, level: f64, s: f64, y: f64) -> f64 {
    let u = k.u_tilde(x0, y, s);
    if u <= 0.0 {
        return f64::NEG_INFINITY;
    }
    u.ln() - 0.5 * (k.n() as f64 - 1.0) * (4.0 * PI * s).ln() - level.ln()
}

/// Search window in `y` beyond which the margin is certainly negative.
fn slice_window(x0: f64, s: f64) -> (f64, f64) {
    let w = (4.0 * s * 90.0).sqrt();
    (x0.min(0.0) - w, x0.max(0.0) + w)
}

const SLICE_GRID: usize = 400;

/// Maximal `y`-intervals where `level_margin > 0`, endpoints refined by
/// bisection.
pub fn level_slice(k: &Kernel, x0: f64, level: f64, s: f64) -> Vec<(f64, f64)> {
    let (lo, hi) = slice_window(x0, s);
    let h = (hi - lo) / SLICE_GRID as f64;
    let m = |y: f64| level_margin(k, x0, level, s, y);
    let root = |mut a: f64, mut b: f64| {
        // m(a) and m(b) differ in sign
        let sa = m(a) > 0.0;
        for _ in 0..60 {
            let c = 0.5 * (a + b);
            if (m(c) > 0.0) == sa {
                a = c;
            } else {
                b = c;
            }
        }
        0.5 * (a + b)
    };
    let mut out = Vec::new();
    let mut start: Option<f64> = None;
    let mut prev_y = lo;
    let mut prev_in = m(lo) > 0.0;
    if prev_in {
        start = Some(lo);
    }
    for i in 1..=SLICE_GRID {
        let y = lo + h * i as f64;
        let inside = m(y) > 0.0;
        if inside != prev_in {
            let r = root(prev_y, y);
            if inside {
                start = Some(r);
            } else if let Some(s0) = start.take() {
                out.push((s0, r));
            }
        }
        prev_in = inside;
        prev_y = y;
    }
    if let Some(s0) = start {
        out.push((s0, hi));
    }
    out
}

/// Largest margin over `y` at lag `s` (grid maximum refined by golden search).
pub fn max_margin(k: &Kernel, x0: f64, level: f64, s: f64) -> f64 {
    let (lo, hi) = slice_window(x0, s);
    let h = (hi - lo) / SLICE_GRID as f64;
    let m = |y: f64| level_margin(k, x0, level, s, y);
    let mut best = (lo, f64::NEG_INFINITY);
    for i in 0..=SLICE_GRID {
        let y = lo + h * i as f64;
        let v = m(y);
        if v > best.1 {
            best = (y, v);
        }
    }
    let (mut a, mut b) = (best.0 - h, best.0 + h);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if m(c) > m(d) {
            b = d;
        } else {
            a = c;
        }
    }
    best.1.max(m(0.5 * (a + b)))
}

/// Largest lag `s` at which the level set is nonempty.
pub fn level_depth(k: &Kernel, x0: f64, level: f64, scale: f64) -> Result<f64> {
    // The margin is +inf as s -> 0 and -inf as s -> inf; scan a log grid.
    let steps = 8;
    let mut last_pos = None;
    for j in -20 * steps..=20 * steps {
        let s = scale * 2f64.powf(j as f64 / steps as f64);
        if max_margin(k, x0, level, s) > 0.0 {
            last_pos = Some(s);
        }
    }
    let s_pos = last_pos.ok_or_else(|| Error::EmptySample("level set is empty at every lag".into()))?;
    let (mut a, mut b) = (s_pos, s_pos * 2f64.powf(1.0 / steps as f64));
    for _ in 0..60 {
        let c = 0.5 * (a + b);
        if max_margin(k, x0, level, c) > 0.0 {
            a = c;
        } else {
            b = c;
        }
    }
    Ok(b)
}

/// Lattice point with the space-time volume of its cell.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPoint {
    pub point: SpaceTimePoint,
    pub volume: f64,
}

/// Axis-aligned bounding region of a level set, in lag and space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelBox {
    pub depth: f64,
    pub y_lo: f64,
    pub y_hi: f64,
    /// Half-width of the `y'` box.
    pub radius_prime: f64,
}

/// Bounding region of `{Gamma(xi0; .) > level}` from slices on a lag grid.
/// Each edge is padded by 2%, which dominates the slice variation between
/// grid lags.
pub fn level_box(k: &Kernel, x0: f64, level: f64, scale: f64) -> Result<LevelBox> {
    let depth = level_depth(k, x0, level, scale)?;
    let (mut y_lo, mut y_hi, mut rho) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    let m = 200;
    for i in 1..=m {
        // cluster toward s = 0 where slices are thin but sharply peaked
        let s = depth * (i as f64 / m as f64).powi(2);
        for (lo, hi) in level_slice(k, x0, level, s) {
            y_lo = y_lo.min(lo);
            y_hi = y_hi.max(hi);
            let mm = max_margin(k, x0, level, s).max(0.0);
            rho = rho.max((4.0 * s * mm).sqrt());
        }
    }
    if !y_lo.is_finite() {
        return Err(Error::EmptySample("level set has no slices".into()));
    }
    let pad = 0.02 * (y_hi - y_lo);
    Ok(LevelBox {
        depth,
        y_lo: y_lo - pad,
        y_hi: y_hi + pad,
        radius_prime: rho * 1.02,
    })
}

/// Heat ball `Omega_r(xi0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatBall {
    pub center: SpaceTimePoint,
    pub r: f64,
}

impl HeatBall {
    pub fn new(center: SpaceTimePoint, r: f64) -> Result<Self> {
        if !(r > 0.0) {
            return Err(Error::Params(format!("heat ball radius {r} must be positive")));
        }
        Ok(Self { center, r })
    }

    pub fn level(&self, p: &KernelParams) -> f64 {
        threshold(p, self.center.x(), self.r)
    }

    /// Strict membership; always false at or after the center time.
    pub fn contains(&self, k: &Kernel, z: &SpaceTimePoint) -> bool {
        z.t < self.center.t && k.gamma(&self.center, z) > self.level(k.params())
    }

    pub fn bounding_box(&self, k: &Kernel) -> Result<LevelBox> {
        level_box(k, self.center.x(), self.level(k.params()), self.r)
    }

    /// Deterministic midpoint lattice with `density` cells per axis over the
    /// bounding box, filtered by membership.
    pub fn sample(&self, k: &Kernel, density: usize) -> Result<Vec<WeightedPoint>> {
        let bx = self.bounding_box(k)?;
        let pts = lattice(&self.center, &bx, density, |z| self.contains(k, z));
        if pts.is_empty() {
            return Err(Error::EmptySample(format!("no lattice point inside the heat ball at density {density}")));
        }
        Ok(pts)
    }
}

/// Shell `A(xi0, lambda^k) = {thr(lambda^k) <= Gamma <= thr(lambda^{k+1})}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shell {
    pub center: SpaceTimePoint,
    pub lambda: f64,
    pub k: u32,
}

impl Shell {
    pub fn new(center: SpaceTimePoint, lambda: f64, k: u32) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) || k == 0 {
            return Err(Error::Params(format!("shell needs lambda in (0,1) and k >= 1 (got {lambda}, {k})")));
        }
        Ok(Self { center, lambda, k })
    }

    /// Outer parameter `lambda^k`.
    pub fn outer_r(&self) -> f64 {
        self.lambda.powi(self.k as i32)
    }

    pub fn inner_r(&self) -> f64 {
        self.lambda.powi(self.k as i32 + 1)
    }

    pub fn contains(&self, k: &Kernel, z: &SpaceTimePoint) -> bool {
        if z.t >= self.center.t {
            return false;
        }
        let g = k.gamma(&self.center, z);
        let p = k.params();
        let x0 = self.center.x();
        g >= threshold(p, x0, self.outer_r()) && g <= threshold(p, x0, self.inner_r())
    }

    pub fn bounding_box(&self, k: &Kernel) -> Result<LevelBox> {
        let x0 = self.center.x();
        level_box(k, x0, threshold(k.params(), x0, self.outer_r()), self.outer_r())
    }

    pub fn sample(&self, k: &Kernel, density: usize) -> Result<Vec<WeightedPoint>> {
        let bx = self.bounding_box(k)?;
        Ok(lattice(&self.center, &bx, density, |z| self.contains(k, z)))
    }
}

fn lattice<P: Fn(&SpaceTimePoint) -> bool>(
    center: &SpaceTimePoint,
    bx: &LevelBox,
    density: usize,
    keep: P,
) -> Vec<WeightedPoint> {
    let n = center.dim();
    let m = density.max(1);
    let hs = bx.depth / m as f64;
    let hy = (bx.y_hi - bx.y_lo) / m as f64;
    let hp = 2.0 * bx.radius_prime / m as f64;
    let volume = hs * hy * hp.powi(n as i32 - 1);
    let mut out = Vec::new();
    let mut idx = vec![0usize; n - 1];
    for is in 0..m {
        let t = center.t - (is as f64 + 0.5) * hs;
        for iy in 0..m {
            let y = bx.y_lo + (iy as f64 + 0.5) * hy;
            idx.iter_mut().for_each(|v| *v = 0);
            loop {
                let mut coords: Vec<f64> = idx
                    .iter()
                    .enumerate()
                    .map(|(j, &i)| center.coords[j] - bx.radius_prime + (i as f64 + 0.5) * hp)
                    .collect();
                coords.push(y);
                let z = SpaceTimePoint::from_coords(coords, t);
                if keep(&z) {
                    out.push(WeightedPoint { point: z, volume });
                }
                // odometer over the y' axes
                let mut j = 0;
                while j < n - 1 {
                    idx[j] += 1;
                    if idx[j] < m {
                        break;
                    }
                    idx[j] = 0;
                    j += 1;
                }
                if j == n - 1 {
                    break;
                }
            }
        }
    }
    out
}

/// Lens region `Q(r) = {-3r/4 < t < 0, |X|^2 < 2(n+a) t ln(-t/r)}` about the origin.
pub fn lens_region_contains(p: &KernelParams, r: f64, z: &SpaceTimePoint) -> bool {
    let t = z.t;
    if !(t > -0.75 * r && t < 0.0) {
        return false;
    }
    let x2: f64 = z.coords.iter().map(|c| c * c).sum();
    x2 < 2.0 * p.homogeneity() * t * (-t / r).ln()
}

/// Closed cylinder `{-c1 r^2 <= t - t0 <= 0, |X - X0| <= c2 r}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    pub center: SpaceTimePoint,
    pub r: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Cylinder {
    pub fn new(center: SpaceTimePoint, r: f64) -> Self {
        Self {
            center,
            r,
            c1: 1.0,
            c2: 1.0,
        }
    }

    pub fn contains(&self, z: &SpaceTimePoint) -> bool {
        let dt = z.t - self.center.t;
        let d2: f64 = z.coords.iter().zip(&self.center.coords).map(|(a, b)| (a - b).powi(2)).sum();
        dt <= 0.0 && dt >= -self.c1 * self.r * self.r && d2.sqrt() <= self.c2 * self.r
    }
}

/// Where a point sits relative to a space-time box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoxPosition {
    Interior,
    /// On exactly one lateral face.
    Face,
    /// On two or more lateral faces (an edge or vertex of the spatial box).
    Corner { faces: usize },
    Exterior,
}

/// Space-time box `Q x [0, T]` with `Q = prod (lo_i, hi_i)`; the last axis
/// is the weighted one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub t_end: f64,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, t_end: f64) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() < 2 {
            return Err(Error::Params("box bounds must have equal length >= 2".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) || !(t_end > 0.0) {
            return Err(Error::Params("box must be nonempty with T > 0".into()));
        }
        Ok(Self { lo, hi, t_end })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Spatial position with a relative face tolerance.
    pub fn classify(&self, x: &[f64], tol: f64) -> BoxPosition {
        let mut faces = 0;
        for i in 0..self.dim() {
            let w = tol * (self.hi[i] - self.lo[i]);
            if x[i] < self.lo[i] - w || x[i] > self.hi[i] + w {
                return BoxPosition::Exterior;
            }
            if (x[i] - self.lo[i]).abs() <= w || (x[i] - self.hi[i]).abs() <= w {
                faces += 1;
            }
        }
        match faces {
            0 => BoxPosition::Interior,
            1 => BoxPosition::Face,
            f => BoxPosition::Corner { faces: f },
        }
    }

    /// Open space-time interior `Q x (0, T)`.
    pub fn contains_open(&self, z: &SpaceTimePoint) -> bool {
        z.t > 0.0
            && z.t < self.t_end
            && z.coords.iter().enumerate().all(|(i, &c)| c > self.lo[i] && c < self.hi[i])
    }

    /// `int_Q |y|^a dY` in closed form.
    pub fn weighted_volume(&self, a: f64) -> f64 {
        let n = self.dim();
        let mut v = crate::weighted_quadrature::weighted_monomial_integral(self.lo[n - 1], self.hi[n - 1], a, 0);
        for i in 0..n - 1 {
            v *= self.hi[i] - self.lo[i];
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classical_in_ball(n: usize, center: &SpaceTimePoint, r: f64, z: &SpaceTimePoint) -> bool {
        let s = center.t - z.t;
        if s <= 0.0 {
            return false;
        }
        let d2: f64 = center.coords.iter().zip(&z.coords).map(|(a, b)| (a - b).powi(2)).sum();
        (4.0 * PI * s).powf(-0.5 * n as f64) * (-d2 / (4.0 * s)).exp() > (4.0 * PI * r).powf(-0.5 * n as f64)
    }

    #[test]
    fn phi_prime_matches_finite_difference() {
        for a in [-0.6, 0.0, 0.5] {
            let p = KernelParams::new(3, a).unwrap();
            for (x0, r) in [(0.0, 0.3), (0.7, 0.5), (-1.2, 2.0)] {
                let h = 1e-6 * r;
                let fd = (phi(&p, x0, r + h) - phi(&p, x0, r - h)) / (2.0 * h);
                let exact = phi_prime(&p, x0, r);
                assert!(exact > 0.0);
                assert!(((fd - exact) / exact).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn classical_ball_at_a_zero() {
        let k = Kernel::new(2, 0.0).unwrap();
        let c = SpaceTimePoint::new(&[0.1], 0.4, 1.0);
        let ball = HeatBall::new(c.clone(), 0.3).unwrap();
        let mut agree = 0;
        for i in 0..40 {
            for j in 0..40 {
                let z = SpaceTimePoint::new(&[0.1 + 0.03 * (i as f64 - 20.0)], 0.4 + 0.05 * (j as f64 - 20.0), 0.9 - 0.01 * i as f64);
                assert_eq!(ball.contains(&k, &z), classical_in_ball(2, &c, 0.3, &z));
                agree += 1;
            }
        }
        assert_eq!(agree, 1600);
        assert!(!ball.contains(&k, &c));
        assert!(!ball.contains(&k, &SpaceTimePoint::new(&[0.1], 0.4, 1.2)));
    }

    #[test]
    fn depth_at_a_zero_is_classical() {
        // classical heat ball reaches back exactly to lag r
        let k = Kernel::new(3, 0.0).unwrap();
        let d = level_depth(&k, 0.5, threshold(k.params(), 0.5, 0.2), 0.2).unwrap();
        assert!((d - 0.2).abs() < 1e-9, "{d}");
    }

    #[test]
    fn sample_volume_matches_classical() {
        // classical heat ball volume in n = 2: |Omega_r| = (pi/2) r^2 * int_0^1 s ln(1/s)... computed by brute force
        let k = Kernel::new(2, 0.0).unwrap();
        let c = SpaceTimePoint::new(&[0.0], 0.0, 0.0);
        let r: f64 = 0.5;
        let ball = HeatBall::new(c, r).unwrap();
        let v: f64 = ball.sample(&k, 64).unwrap().iter().map(|w| w.volume).sum();
        // slice at lag s is a disc of radius^2 = 4 s (n/2) ln(r/s) = 4 s ln(r/s)
        // volume = int_0^r pi 4 s ln(r/s) ds = pi r^2
        let exact = PI * r * r;
        assert!(((v - exact) / exact).abs() < 0.01, "{v} {exact}");
    }

    #[test]
    fn nested_balls_and_shell_partition() {
        let k = Kernel::new(2, 0.4).unwrap();
        let c = SpaceTimePoint::new(&[0.0], 0.3, 0.0);
        let small = HeatBall::new(c.clone(), 0.1).unwrap();
        let big = HeatBall::new(c.clone(), 0.2).unwrap();
        for w in small.sample(&k, 16).unwrap() {
            assert!(big.contains(&k, &w.point));
        }
        let shell = Shell::new(c.clone(), 0.5, 1).unwrap();
        // points of Omega_{1/2} \ Omega_{1/4} belong to shell k = 1
        for w in HeatBall::new(c.clone(), 0.5).unwrap().sample(&k, 16).unwrap() {
            let inner = HeatBall::new(c.clone(), 0.25).unwrap().contains(&k, &w.point);
            assert_eq!(shell.contains(&k, &w.point), !inner);
        }
        assert!(!shell.contains(&k, &c));
    }

    #[test]
    fn lens_and_cylinder() {
        let p = KernelParams::new(2, 0.3).unwrap();
        assert!(lens_region_contains(&p, 1.0, &SpaceTimePoint::new(&[0.0], 0.0, -0.5)));
        assert!(!lens_region_contains(&p, 1.0, &SpaceTimePoint::new(&[0.0], 0.0, -0.75)));
        let t: f64 = -0.5;
        let rhs = 2.0 * 2.3 * t * (-t).ln();
        assert!(!lens_region_contains(&p, 1.0, &SpaceTimePoint::new(&[0.0], rhs.sqrt() * (1.0 + 1e-12), t)));
        assert!(lens_region_contains(&p, 1.0, &SpaceTimePoint::new(&[0.0], rhs.sqrt() * (1.0 - 1e-12), t)));
        let cyl = Cylinder::new(SpaceTimePoint::new(&[0.0], 0.0, 0.0), 0.5);
        assert!(cyl.contains(&SpaceTimePoint::new(&[0.3], 0.0, -0.25)));
        assert!(!cyl.contains(&SpaceTimePoint::new(&[0.3], 0.0, -0.26)));
    }

    #[test]
    fn box_classification() {
        let b = BoxDomain::new(vec![0.0, -1.0], vec![1.0, 1.0], 1.0).unwrap();
        assert_eq!(b.classify(&[0.5, 0.0], 1e-12), BoxPosition::Interior);
        assert_eq!(b.classify(&[0.0, 0.2], 1e-12), BoxPosition::Face);
        assert_eq!(b.classify(&[1.0, -1.0], 1e-12), BoxPosition::Corner { faces: 2 });
        assert_eq!(b.classify(&[1.5, 0.0], 1e-12), BoxPosition::Exterior);
        assert!((b.weighted_volume(0.5) - 4.0 / 3.0).abs() < 1e-14);
    }
}
