//! Quadrature for `|y|^a`-weighted integrands.
//!
//! The workhorse is a globally adaptive Gauss–Kronrod (10/21) integrator.
//! Panels that touch `y = 0` switch to Gauss–Jacobi rules carrying the
//! weight exactly, so smooth integrands stay cheap near the degeneracy.
//! Time integrals with an integrable singularity at the upper end use a
//! geometrically graded mesh with a geometric tail correction.

use std::sync::OnceLock;

use crate::error::{Error, Result};

const XGK: [f64; 11] = [
    0.995_657_163_025_808_1,
    0.973_906_528_517_171_7,
    0.930_157_491_355_708_2,
    0.865_063_366_688_984_5,
    0.780_817_726_586_416_9,
    0.679_409_568_299_024_4,
    0.562_757_134_668_604_7,
    0.433_395_394_129_247_2,
    0.294_392_862_701_460_2,
    0.148_874_338_981_631_2,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874,
    0.032_558_162_307_964_73,
    0.054_755_896_574_352,
    0.075_039_674_810_919_95,
    0.093_125_454_583_697_6,
    0.109_387_158_802_297_64,
    0.123_491_976_262_065_85,
    0.134_709_217_311_473_33,
    0.142_775_938_577_060_08,
    0.147_739_104_901_338_5,
    0.149_445_554_002_916_9,
];

const WG: [f64; 5] = [
    0.066_671_344_308_688_14,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982_04,
    0.269_266_719_309_996_35,
    0.295_524_224_714_752_87,
];

/// Value with an error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// 21-point Kronrod rule on `[a, b]` with a QUADPACK-style error estimate.
pub fn gauss_kronrod21<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Estimate {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut resk = fc * WGK[10];
    let mut resg = 0.0;
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        resk += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * resk;
    let mut resasc = WGK[10] * (fc - mean).abs();
    let mut resabs = WGK[10] * fc.abs();
    for j in 0..10 {
        resasc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
        resabs += WGK[j] * (fv1[j].abs() + fv2[j].abs());
    }
    let ah = h.abs();
    resasc *= ah;
    resabs *= ah;
    let mut err = ((resk - resg) * h).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    Estimate { value: resk * h, error: err }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..(n + 1) / 2 {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                let pn = if n == 1 { x } else { p1 };
                let pm = if n == 1 { 1.0 } else { p0 };
                dp = nf * (x * pn - pm) / (x * x - 1.0);
                let dx = pn / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Cached rule for `n <= 64`.
    pub fn cached(n: usize) -> &'static GaussLegendre {
        static CACHE: OnceLock<Vec<GaussLegendre>> = OnceLock::new();
        let all = CACHE.get_or_init(|| (1..=64).map(GaussLegendre::new).collect());
        &all[n - 1]
    }

    /// Applies the rule on `[a, b]`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64) -> f64 {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(c + h * x))
            .sum::<f64>()
            * h
    }
}

/// Eigen-decomposition of a symmetric tridiagonal matrix by implicit QL.
/// Returns eigenvalues and the first component of each normalized eigenvector.
fn tridiagonal_eigen(diag: &[f64], off: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(off);
    // z holds the first row of the eigenvector matrix.
    let mut z = vec![0.0; n];
    z[0] = 1.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m < n - 1 {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                break;
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut early = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    early = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                let zf = z[i + 1];
                z[i + 1] = s * z[i] + c * zf;
                z[i] = c * z[i] - s * zf;
            }
            if early {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    (d, z)
}

/// Gauss rule for the weight `y^a` on `[0, 1]`, exact for polynomials of
/// degree `2m - 1`.
#[derive(Debug, Clone)]
pub struct WeightedRule1D {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub a: f64,
    pub interval: (f64, f64),
}

impl WeightedRule1D {
    /// `m`-point Gauss–Jacobi rule with weight `y^a` on `[0, 1]`.
    pub fn unit(m: usize, a: f64) -> Result<Self> {
        if !(a > -1.0) || m == 0 {
            return Err(Error::Domain(format!("weighted rule needs a > -1 and m > 0 (a = {a})")));
        }
        // Jacobi weight (1 - x)^alpha (1 + x)^beta on [-1, 1], alpha = 0, beta = a.
        let (al, be) = (0.0_f64, a);
        let ab = al + be;
        let mut diag = Vec::with_capacity(m);
        let mut off = Vec::with_capacity(m.saturating_sub(1));
        for k in 0..m {
            let kf = k as f64;
            let den = (2.0 * kf + ab) * (2.0 * kf + ab + 2.0);
            let dk = if den.abs() < 1e-300 {
                (be - al) / (ab + 2.0)
            } else {
                (be * be - al * al) / den
            };
            diag.push(if k == 0 { (be - al) / (ab + 2.0) } else { dk });
            if k + 1 < m {
                let k1 = kf + 1.0;
                let num = 4.0 * k1 * (k1 + al) * (k1 + be) * (k1 + ab);
                let t = 2.0 * k1 + ab;
                off.push((num / (t * t * (t + 1.0) * (t - 1.0))).sqrt());
            }
        }
        let (x, z) = tridiagonal_eigen(&diag, &off);
        // mu0 = int_{-1}^{1} (1+x)^a dx = 2^{a+1}/(a+1); map to [0,1]: y = (1+x)/2.
        let mu0 = 2f64.powf(a + 1.0) / (a + 1.0);
        let scale = 0.5f64.powf(a + 1.0);
        let mut pairs: Vec<(f64, f64)> = x
            .iter()
            .zip(&z)
            .map(|(xi, zi)| (0.5 * (1.0 + xi), mu0 * zi * zi * scale))
            .collect();
        pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
        Ok(Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
            a,
            interval: (0.0, 1.0),
        })
    }

    /// Same rule mapped to `[0, b]` (or `[b, 0]` when `b < 0`), weight `|y|^a`.
    pub fn scaled(&self, b: f64) -> Self {
        let s = b.abs().powf(self.a + 1.0);
        let mut nodes: Vec<f64> = self.nodes.iter().map(|x| x * b).collect();
        let mut weights: Vec<f64> = self.weights.iter().map(|w| w * s).collect();
        if b < 0.0 {
            nodes.reverse();
            weights.reverse();
        }
        Self {
            nodes,
            weights,
            a: self.a,
            interval: if b < 0.0 { (b, 0.0) } else { (0.0, b) },
        }
    }

    pub fn apply<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }
}

/// Exact `int_lo^hi |y|^a y^m dy`.
pub fn weighted_monomial_integral(lo: f64, hi: f64, a: f64, m: u32) -> f64 {
    // int_0^y |s|^a s^m ds; odd powers keep the sign of y, even ones flip it.
    let prim = |y: f64| -> f64 {
        let p = a + m as f64 + 1.0;
        let mag = y.abs().powf(p) / p;
        if y >= 0.0 || m % 2 == 1 {
            mag
        } else {
            -mag
        }
    };
    prim(hi) - prim(lo)
}

/// Tolerances for the adaptive integrators.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_panels: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            abs: 1e-8,
            rel: 0.0,
            max_panels: 2000,
        }
    }
}

impl Tolerance {
    pub fn abs(abs: f64) -> Self {
        Self { abs, ..Self::default() }
    }

    pub fn rel(rel: f64) -> Self {
        Self {
            abs: 0.0,
            rel,
            ..Self::default()
        }
    }

    pub fn with_max_panels(mut self, n: usize) -> Self {
        self.max_panels = n;
        self
    }

    fn target(&self, value: f64) -> f64 {
        self.abs.max(self.rel * value.abs())
    }
}

#[derive(Clone, Copy)]
enum PanelKind {
    Plain,
    /// Weight singularity sits at the left end.
    JacobiLeft,
    /// Weight singularity sits at the right end.
    JacobiRight,
}

struct Panel {
    lo: f64,
    hi: f64,
    kind: PanelKind,
    est: Estimate,
}

type RulePair = (WeightedRule1D, WeightedRule1D);

/// 10- and 20-point Jacobi rules for exponent `a`, memoized per thread.
fn jacobi_rules(a: f64) -> std::rc::Rc<RulePair> {
    thread_local! {
        static CACHE: std::cell::RefCell<Vec<(u64, std::rc::Rc<RulePair>)>> =
            const { std::cell::RefCell::new(Vec::new()) };
    }
    CACHE.with(|c| {
        let key = a.to_bits();
        if let Some((_, r)) = c.borrow().iter().find(|(k, _)| *k == key) {
            return r.clone();
        }
        let r = std::rc::Rc::new((
            WeightedRule1D::unit(10, a).expect("valid exponent"),
            WeightedRule1D::unit(20, a).expect("valid exponent"),
        ));
        let mut v = c.borrow_mut();
        if v.len() > 16 {
            v.remove(0);
        }
        v.push((key, r.clone()));
        r
    })
}

struct Engine {
    a: f64,
    rules: Option<std::rc::Rc<RulePair>>,
}

impl Engine {
    fn eval<F: FnMut(f64) -> f64>(&self, f: &mut F, lo: f64, hi: f64, kind: PanelKind) -> Estimate {
        match kind {
            PanelKind::Plain => {
                let a = self.a;
                if a == 0.0 {
                    gauss_kronrod21(f, lo, hi)
                } else {
                    gauss_kronrod21(&mut |y: f64| f(y) * y.abs().powf(a), lo, hi)
                }
            }
            PanelKind::JacobiLeft | PanelKind::JacobiRight => {
                let rules = self.rules.as_ref().expect("Jacobi rules available");
                let (r10, r20) = (&rules.0, &rules.1);
                // Singular endpoint e, other endpoint o; nodes y = e + (o - e) u.
                let (e, o) = match kind {
                    PanelKind::JacobiLeft => (lo, hi),
                    _ => (hi, lo),
                };
                let len = (o - e).abs();
                let scale = len.powf(self.a + 1.0);
                let mut apply = |r: &WeightedRule1D| -> f64 {
                    r.nodes
                        .iter()
                        .zip(&r.weights)
                        .map(|(u, w)| w * f(e + (o - e) * u))
                        .sum::<f64>()
                        * scale
                };
                let coarse = apply(r10);
                let fine = apply(r20);
                Estimate {
                    value: fine,
                    error: (fine - coarse).abs().max(50.0 * f64::EPSILON * fine.abs()),
                }
            }
        }
    }
}

fn adaptive_core<F: FnMut(f64) -> f64>(
    f: &mut F,
    mut panels: Vec<(f64, f64, PanelKind)>,
    a: f64,
    tol: Tolerance,
    what: &'static str,
) -> Result<Estimate> {
    let rules = if panels.iter().any(|p| !matches!(p.2, PanelKind::Plain)) {
        Some(jacobi_rules(a))
    } else {
        None
    };
    let engine = Engine { a, rules };
    panels.retain(|p| p.1 > p.0);
    let mut live: Vec<Panel> = panels
        .into_iter()
        .map(|(lo, hi, kind)| Panel {
            lo,
            hi,
            kind,
            est: engine.eval(f, lo, hi, kind),
        })
        .collect();
    loop {
        let value: f64 = live.iter().map(|p| p.est.value).sum();
        let error: f64 = live.iter().map(|p| p.est.error).sum();
        if error <= tol.target(value) {
            return Ok(Estimate { value, error });
        }
        if live.len() >= tol.max_panels || live.is_empty() {
            return Err(Error::NonConvergence {
                what,
                estimate: value,
                error,
            });
        }
        let (idx, _) = live
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |acc, (i, p)| {
                if p.est.error > acc.1 {
                    (i, p.est.error)
                } else {
                    acc
                }
            });
        let p = live.swap_remove(idx);
        let mid = 0.5 * (p.lo + p.hi);
        if !(mid > p.lo && mid < p.hi) {
            // Interval cannot be split further in floating point.
            return Err(Error::NonConvergence {
                what,
                estimate: value,
                error,
            });
        }
        let (kl, kr) = match p.kind {
            PanelKind::Plain => (PanelKind::Plain, PanelKind::Plain),
            PanelKind::JacobiLeft => (PanelKind::JacobiLeft, PanelKind::Plain),
            PanelKind::JacobiRight => (PanelKind::Plain, PanelKind::JacobiRight),
        };
        let left = Panel {
            lo: p.lo,
            hi: mid,
            kind: kl,
            est: engine.eval(f, p.lo, mid, kl),
        };
        let right = Panel {
            lo: mid,
            hi: p.hi,
            kind: kr,
            est: engine.eval(f, mid, p.hi, kr),
        };
        live.push(left);
        live.push(right);
    }
}

/// Adaptive integral of `f` over `[lo, hi]` split at the given breakpoints.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    breakpoints: &[f64],
    tol: Tolerance,
) -> Result<Estimate> {
    if lo == hi {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }
    let (lo, hi, sign) = if lo < hi { (lo, hi, 1.0) } else { (hi, lo, -1.0) };
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|b| *b > lo && *b < hi)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut edges = vec![lo];
    edges.extend(cuts);
    edges.push(hi);
    let panels = edges
        .windows(2)
        .map(|w| (w[0], w[1], PanelKind::Plain))
        .collect();
    let est = adaptive_core(&mut f, panels, 0.0, tol, "adaptive quadrature")?;
    Ok(Estimate {
        value: sign * est.value,
        error: est.error,
    })
}

/// `int_lo^hi f(y) |y|^a dy` with exact treatment of the weight at `y = 0`.
pub fn integrate_weighted_interval<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    a: f64,
    breakpoints: &[f64],
    tol: Tolerance,
) -> Result<Estimate> {
    if !(a > -1.0) {
        return Err(Error::Domain(format!("weight exponent a = {a} must exceed -1")));
    }
    if lo == hi {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }
    let (lo, hi, sign) = if lo < hi { (lo, hi, 1.0) } else { (hi, lo, -1.0) };
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|b| *b > lo && *b < hi)
        .collect();
    if a != 0.0 && lo < 0.0 && hi > 0.0 {
        cuts.push(0.0);
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut edges = vec![lo];
    edges.extend(cuts);
    edges.push(hi);
    let panels: Vec<(f64, f64, PanelKind)> = edges
        .windows(2)
        .map(|w| {
            let kind = if a == 0.0 {
                PanelKind::Plain
            } else if w[0] == 0.0 {
                PanelKind::JacobiLeft
            } else if w[1] == 0.0 {
                PanelKind::JacobiRight
            } else {
                PanelKind::Plain
            };
            (w[0], w[1], kind)
        })
        .collect();
    let est = adaptive_core(&mut f, panels, a, tol, "weighted quadrature")?;
    Ok(Estimate {
        value: sign * est.value,
        error: est.error,
    })
}

/// Axis-aligned face of a box: one axis frozen at `fixed_value`, the others
/// ranging over `ranges` (in axis order, skipping the frozen axis).
#[derive(Debug, Clone, PartialEq)]
pub struct BoxFace {
    pub dim: usize,
    pub fixed_axis: usize,
    pub fixed_value: f64,
    pub ranges: Vec<(f64, f64)>,
}

/// `int_face f |y|^a dsigma` where `y` is the last coordinate.
/// On faces `y = c` the weight is the constant `|c|^a`.
pub fn integrate_face<F: Fn(&[f64]) -> f64>(f: F, face: &BoxFace, a: f64, tol: Tolerance) -> Result<Estimate> {
    let n = face.dim;
    if face.ranges.len() + 1 != n || face.fixed_axis >= n {
        return Err(Error::Precondition("face ranges do not match the dimension".into()));
    }
    let free: Vec<usize> = (0..n).filter(|&i| i != face.fixed_axis).collect();
    let mut point = vec![0.0; n];
    point[face.fixed_axis] = face.fixed_value;
    let const_weight = if face.fixed_axis == n - 1 {
        if a == 0.0 {
            1.0
        } else {
            face.fixed_value.abs().powf(a)
        }
    } else {
        1.0
    };
    let est = nested(&f, &mut point, &free, &face.ranges, 0, a, tol)?;
    Ok(Estimate {
        value: est.value * const_weight,
        error: est.error * const_weight,
    })
}

fn nested<F: Fn(&[f64]) -> f64>(
    f: &F,
    point: &mut Vec<f64>,
    axes: &[usize],
    ranges: &[(f64, f64)],
    level: usize,
    a: f64,
    tol: Tolerance,
) -> Result<Estimate> {
    let axis = axes[level];
    let (lo, hi) = ranges[level];
    let weighted = axis == point.len() - 1;
    let last = level + 1 == axes.len();
    let mut failure = None;
    let mut inner_err = 0.0_f64;
    let mut g = |v: f64| -> f64 {
        let mut p = point.clone();
        p[axis] = v;
        if last {
            f(&p)
        } else {
            match nested(f, &mut p, axes, ranges, level + 1, a, tol) {
                Ok(e) => {
                    inner_err = inner_err.max(e.error);
                    e.value
                }
                Err(e) => {
                    failure = Some(e);
                    0.0
                }
            }
        }
    };
    let est = if weighted {
        integrate_weighted_interval(&mut g, lo, hi, a, &[], tol)?
    } else {
        integrate(&mut g, lo, hi, &[], tol)?
    };
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(Estimate {
        value: est.value,
        error: est.error + inner_err * (hi - lo).abs(),
    })
}

/// Geometrically graded mesh on `[t_end - span, t_end]` clustered toward `t_end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradedTimeMesh {
    pub t_end: f64,
    pub span: f64,
    pub levels: usize,
    pub ratio: f64,
}

impl GradedTimeMesh {
    pub fn new(t_end: f64, span: f64) -> Self {
        Self {
            t_end,
            span,
            levels: 40,
            ratio: 0.5,
        }
    }

    /// Mesh nodes, strictly increasing; the last gap is `span * ratio^levels`.
    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.levels)
            .map(|k| self.t_end - self.span * self.ratio.powi(k as i32))
            .collect()
    }
}

/// Result of an improper time integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImproperEstimate {
    pub value: f64,
    /// Change when the number of levels is doubled.
    pub increment: f64,
    /// Geometric tail added beyond the last node.
    pub tail: f64,
}

fn graded_sum<G: FnMut(f64) -> f64>(g: &mut G, mesh: &GradedTimeMesh, levels: usize) -> (f64, f64) {
    let rule = GaussLegendre::cached(24);
    let mut total = 0.0;
    let mut prev = f64::NAN;
    let mut last = f64::NAN;
    for k in 0..levels {
        let hi = mesh.span * mesh.ratio.powi(k as i32);
        let lo = mesh.span * mesh.ratio.powi(k as i32 + 1);
        let p = rule.integrate(&mut *g, lo, hi);
        total += p;
        prev = last;
        last = p;
    }
    let q = last / prev;
    let tail = if q.is_finite() && (0.0..1.0).contains(&q) {
        last * q / (1.0 - q)
    } else {
        0.0
    };
    (total + tail, tail)
}

/// `int_0^span g(s) ds` for `g` with an integrable singularity at `s = 0`,
/// where `s = t_end - tau` is the lag. Working in the lag keeps the finest
/// panels exact in floating point.
pub fn integrate_time_improper<G: FnMut(f64) -> f64>(mut g: G, mesh: &GradedTimeMesh) -> Result<ImproperEstimate> {
    if mesh.levels < 4 || !(mesh.ratio > 0.0 && mesh.ratio < 1.0) || !(mesh.span > 0.0) {
        return Err(Error::Precondition("graded mesh needs levels >= 4, ratio in (0,1), span > 0".into()));
    }
    let (half, _) = graded_sum(&mut g, mesh, mesh.levels / 2);
    let (base, _) = graded_sum(&mut g, mesh, mesh.levels);
    let (fine, tail) = graded_sum(&mut g, mesh, 2 * mesh.levels);
    let inc_coarse = (base - half).abs();
    let inc_fine = (fine - base).abs();
    let floor = 1e-12 * fine.abs().max(1e-300);
    if inc_fine > floor && inc_fine >= inc_coarse {
        return Err(Error::NonConvergence {
            what: "graded time integral",
            estimate: fine,
            error: inc_fine,
        });
    }
    Ok(ImproperEstimate {
        value: fine,
        increment: inc_fine,
        tail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronrod_is_exact_for_polynomials() {
        let e = gauss_kronrod21(&mut |x: f64| x.powi(30) + 3.0 * x.powi(7), 0.0, 1.0);
        assert!((e.value - (1.0 / 31.0 + 3.0 / 8.0)).abs() < 1e-15);
        // the embedded Gauss rule is exact to degree 19 as well
        let e = gauss_kronrod21(&mut |x: f64| x.powi(19), -1.0, 2.0);
        assert!((e.value - (2f64.powi(20) - 1.0) / 20.0).abs() < 1e-9);
        assert!(e.error < 1e-9);
    }

    #[test]
    fn legendre_rule_sums() {
        for n in [1, 2, 5, 12, 33, 64] {
            let r = GaussLegendre::cached(n);
            let s: f64 = r.weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n={n}");
            let m = (2 * n - 1) as i32;
            let v = r.integrate(|x| (x + 1.0).powi(m), -1.0, 1.0);
            let want = 2f64.powi(m + 1) / (m + 1) as f64;
            assert!(((v - want) / want).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn jacobi_rule_is_exact_on_weighted_monomials() {
        for a in [-0.9, -0.5, 0.0, 0.3, 0.95] {
            let r = WeightedRule1D::unit(20, a).unwrap();
            for m in 0..=39 {
                let got = r.apply(|y| y.powi(m));
                let want = 1.0 / (a + m as f64 + 1.0);
                assert!(((got - want) / want).abs() < 1e-12, "a={a} m={m}: {got} {want}");
            }
        }
    }

    #[test]
    fn weighted_interval_closed_forms() {
        let t = Tolerance::abs(1e-13);
        let v = integrate_weighted_interval(|_| 1.0, -1.0, 1.0, 0.5, &[], t).unwrap();
        assert!((v.value - 4.0 / 3.0).abs() < 1e-12);
        let v = integrate_weighted_interval(|y| y * y, 0.0, 1.0, -0.5, &[], t).unwrap();
        assert!((v.value - 0.4).abs() < 1e-12);
        let v = integrate_weighted_interval(|y| (-y * y).exp(), -9.0, 9.0, 0.0, &[], t).unwrap();
        assert!((v.value - std::f64::consts::PI.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn weighted_monomials_match_closed_form() {
        let t = Tolerance::rel(1e-13);
        for a in [-0.7, 0.0, 0.6] {
            for k in 0..=4 {
                // integrand |y|^{a+k} written as f(y) |y|^a with f = |y|^k
                let got = integrate_weighted_interval(|y| y.abs().powi(k), -0.5, 2.0, a, &[], t).unwrap();
                let p = a + k as f64 + 1.0;
                let want = (0.5f64.powf(p) + 2f64.powf(p)) / p;
                assert!(((got.value - want) / want).abs() < 1e-12);
            }
            let m = weighted_monomial_integral(-0.5, 2.0, a, 3);
            let got = integrate_weighted_interval(|y| y.powi(3), -0.5, 2.0, a, &[], t).unwrap();
            assert!(((got.value - m) / m).abs() < 1e-12);
        }
    }

    #[test]
    fn face_integrals() {
        let t = Tolerance::abs(1e-12);
        let face = BoxFace {
            dim: 3,
            fixed_axis: 2,
            fixed_value: -0.5,
            ranges: vec![(0.0, 1.0), (0.0, 1.0)],
        };
        let v = integrate_face(|_| 1.0, &face, 0.4, t).unwrap();
        assert!((v.value - 0.5f64.powf(0.4)).abs() < 1e-12);
        let face = BoxFace {
            dim: 2,
            fixed_axis: 0,
            fixed_value: 0.0,
            ranges: vec![(-1.0, 1.0)],
        };
        for a in [-0.5, 0.25] {
            let v = integrate_face(|_| 1.0, &face, a, t).unwrap();
            assert!((v.value - 2.0 / (1.0 + a)).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_sphere_measure() {
        use crate::special_functions::gamma;
        use std::f64::consts::PI;
        let t = Tolerance::abs(1e-13);
        for a in [-0.6, 0.0, 0.7] {
            for r in [0.5_f64, 2.0] {
                let want = |n: f64| {
                    2.0 * r.powf(n - 1.0 + a) * PI.powf(0.5 * (n - 1.0)) * gamma(0.5 * (1.0 + a))
                        / gamma(0.5 * (n + a))
                };
                // circle: 4 r^{1+a} int_0^{pi/2} sin^a
                let s = integrate_weighted_interval(
                    |th| if th == 0.0 { 1.0 } else { (th.sin() / th).powf(a) },
                    0.0,
                    0.5 * PI,
                    a,
                    &[],
                    t,
                )
                .unwrap();
                let got = 4.0 * r.powf(1.0 + a) * s.value;
                assert!(((got - want(2.0)) / want(2.0)).abs() < 1e-11);
                // sphere: 2 pi r^{2+a} int_{-1}^{1} |u|^a du
                let s = integrate_weighted_interval(|_| 1.0, -1.0, 1.0, a, &[], t).unwrap();
                let got = 2.0 * PI * r.powf(2.0 + a) * s.value;
                assert!(((got - want(3.0)) / want(3.0)).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn graded_time_integrals() {
        let mesh = GradedTimeMesh::new(1.0, 1.0);
        let e = integrate_time_improper(|s: f64| s.powf(-0.5), &mesh).unwrap();
        assert!((e.value - 2.0).abs() < 1e-10);
        let e = integrate_time_improper(|s: f64| s.powf(-0.75), &mesh).unwrap();
        assert!((e.value - 4.0).abs() < 1e-9, "{}", e.value);
        let mesh = GradedTimeMesh::new(2.5, 2.5);
        let e = integrate_time_improper(|s: f64| s.powf(-0.5), &mesh).unwrap();
        assert!((e.value - 2.0 * 2.5f64.sqrt()).abs() < 1e-10);
        let nodes = mesh.nodes();
        assert!(nodes.windows(2).all(|w| w[1] > w[0]));
        assert!((nodes[40] - nodes[39]) <= 2.5 * 0.5f64.powi(40) + 1e-15);
    }

    #[test]
    fn adaptive_reports_nonconvergence() {
        let r = integrate(|x: f64| 1.0 / x.abs().sqrt().max(1e-300), -1.0, 1.0, &[], Tolerance::abs(1e-14).with_max_panels(30));
        assert!(r.is_err());
    }
}
