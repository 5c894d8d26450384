//! Modified Bessel functions of real order and the kernel profile `F`.
//!
//! Only the orders that appear in the weighted heat kernel are supported:
//! `nu`, `-nu`, `nu + 1` and `-nu - 1` with `nu = (a - 1) / 2` in `(-1, 0)`.
//! `I` uses the power series up to `w = 30` and the large-argument expansion
//! beyond. `K` follows Temme's series for `w <= 2` and Steed's continued
//! fraction above; it is needed only for negative profile arguments, where
//! `I_nu - I_{-nu}` cancels catastrophically.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Series/asymptotic crossover for `I`.
pub const I_CROSSOVER: f64 = 30.0;

/// Profile arguments with `|s|` at most this use the two power series directly.
const PROFILE_SERIES_NEG: f64 = 2.0;
/// Positive profile arguments up to this use the series (`w = s/2 <= 30`).
const PROFILE_SERIES_POS: f64 = 2.0 * I_CROSSOVER;

const EPS: f64 = 1e-17;
const SERIES_TERMS: usize = 160;

/// Taylor coefficients of `1/Gamma(x) = sum c_k x^k`, `k = 1..26`.
const RGAMMA_TAYLOR: [f64; 26] = [
    1.0,
    0.577_215_664_901_532_9,
    -0.655_878_071_520_253_8,
    -0.042_002_635_034_095_2,
    0.166_538_611_382_291_5,
    -0.042_197_734_555_544_3,
    -0.009_621_971_527_877_0,
    0.007_218_943_246_663_0,
    -0.001_165_167_591_859_1,
    -0.000_215_241_674_114_9,
    0.000_128_050_282_388_2,
    -0.000_020_134_854_780_7,
    -0.000_001_250_493_482_1,
    0.000_001_133_027_232_0,
    -0.000_000_205_633_841_7,
    0.000_000_006_116_095_0,
    0.000_000_005_002_007_5,
    -0.000_000_001_181_274_6,
    0.000_000_000_104_342_7,
    0.000_000_000_007_782_3,
    -0.000_000_000_003_696_8,
    0.000_000_000_000_510_0,
    -0.000_000_000_000_020_6,
    -0.000_000_000_000_005_4,
    0.000_000_000_000_001_4,
    0.000_000_000_000_000_1,
];

/// `1/Gamma(x)`, zero at the poles.
pub fn recip_gamma(x: f64) -> f64 {
    if x <= 0.0 && x == x.floor() {
        return 0.0;
    }
    1.0 / statrs::function::gamma::gamma(x)
}

/// Euler gamma function.
pub fn gamma(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}

fn check_order(nu: f64) -> Result<()> {
    if !nu.is_finite() || nu <= -2.0 || nu >= 2.0 {
        return Err(Error::Domain(format!("Bessel order {nu} outside (-2, 2)")));
    }
    Ok(())
}

/// `sum_k (-1)^k a_k(mu) w^{-k}` from the large-argument expansion of `I_mu`.
fn asymptotic_sum(mu: f64, w: f64) -> f64 {
    let m4 = 4.0 * mu * mu;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..80 {
        let kf = k as f64;
        let next = -term * (m4 - (2.0 * kf - 1.0).powi(2)) / (8.0 * kf * w);
        if next.abs() > term.abs() && k > 2 {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < EPS * sum.abs() {
            break;
        }
    }
    sum
}

/// Same expansion for the difference `I_{mu+1} - I_mu` (leading term cancels).
fn asymptotic_diff(mu: f64, w: f64) -> f64 {
    let m4 = 4.0 * mu * mu;
    let p4 = 4.0 * (mu + 1.0).powi(2);
    let (mut am, mut ap) = (1.0_f64, 1.0_f64);
    let mut sum = 0.0;
    let mut wk = 1.0;
    for k in 1..80 {
        let kf = k as f64;
        let odd = (2.0 * kf - 1.0).powi(2);
        am *= (m4 - odd) / (8.0 * kf);
        ap *= (p4 - odd) / (8.0 * kf);
        wk /= -w;
        let term = (ap - am) * wk;
        sum += term;
        if term.abs() < EPS * sum.abs() || (k > 2 * w as usize + 4) {
            break;
        }
    }
    sum
}

/// `exp(-w) I_nu(w)` for `w >= 0`, `nu in (-2, 2)`.
pub fn bessel_i_scaled(nu: f64, w: f64) -> Result<f64> {
    check_order(nu)?;
    if !(w >= 0.0) || !w.is_finite() {
        return Err(Error::Domain(format!("Bessel argument {w} must be finite and >= 0")));
    }
    // I_{-m} = I_m for integer m.
    let nu = if nu < 0.0 && nu == nu.floor() { -nu } else { nu };
    if w == 0.0 {
        return if nu == 0.0 {
            Ok(1.0)
        } else if nu > 0.0 {
            Ok(0.0)
        } else {
            Err(Error::Range(format!("I_{nu}(0) is infinite")))
        };
    }
    if w > I_CROSSOVER {
        return Ok(asymptotic_sum(nu, w) / (2.0 * PI * w).sqrt());
    }
    let h = 0.5 * w;
    let h2 = h * h;
    let mut term = h.powf(nu) * recip_gamma(nu + 1.0);
    let mut sum = term;
    if term == 0.0 {
        // nu + 1 is a pole only when nu = -1, already mapped away.
        term = h.powf(nu + 2.0) * recip_gamma(nu + 2.0);
        sum = term;
        for k in 2..SERIES_TERMS {
            let kf = k as f64;
            term *= h2 / (kf * (kf + nu));
            sum += term;
            if term.abs() < EPS * sum.abs() {
                break;
            }
        }
        return Ok(sum * (-w).exp());
    }
    for k in 1..SERIES_TERMS {
        let kf = k as f64;
        term *= h2 / (kf * (kf + nu));
        sum += term;
        if term.abs() < EPS * sum.abs() {
            break;
        }
    }
    Ok(sum * (-w).exp())
}

/// Modified Bessel function of the first kind `I_nu(w)`.
pub fn bessel_i(nu: f64, w: f64) -> Result<f64> {
    let scaled = bessel_i_scaled(nu, w)?;
    let v = scaled * w.exp();
    if !v.is_finite() {
        return Err(Error::Range(format!("I_{nu}({w}) overflows")));
    }
    Ok(v)
}

/// `(1/Gamma(1+mu), 1/Gamma(1-mu), gam1, gam2)` for `|mu| <= 1/2`.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    let mut plus = 0.0;
    let mut minus = 0.0;
    let mut gam1 = 0.0;
    let mut gam2 = 0.0;
    let mut p = 1.0;
    for (j, c) in RGAMMA_TAYLOR.iter().enumerate() {
        plus += c * p;
        if j % 2 == 0 {
            minus += c * p;
            gam2 += c * p;
        } else {
            minus -= c * p;
            // gam1 = -sum_{j odd} c_{j+1} mu^{j-1}
            gam1 -= c * p / if mu == 0.0 { 1.0 } else { mu };
        }
        p *= mu;
    }
    if mu == 0.0 {
        gam1 = -RGAMMA_TAYLOR[1];
    }
    (plus, minus, gam1, gam2)
}

/// `(e^x K_mu(x), e^x K_{mu+1}(x))` for `|mu| <= 1/2`, `x > 0`.
fn k_pair_scaled(mu: f64, x: f64) -> (f64, f64) {
    if x <= 2.0 {
        let (gampl, gammi, gam1, gam2) = temme_gammas(mu);
        let x2 = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < 1e-15 { 1.0 } else { pimu / pimu.sin() };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < 1e-15 { 1.0 } else { e.sinh() / e };
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        for i in 1..200 {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu * mu);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            let del1 = c * p - fi * del;
            sum1 += del1;
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        let scale = x.exp();
        (sum * scale, sum1 * (2.0 / x) * scale)
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut delh = d;
        let mut h = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu * mu;
        let mut c = a1;
        let mut q = c;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 1..10_000 {
            let fi = i as f64;
            a -= 2.0 * fi;
            c = -a * c / (fi + 1.0);
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh = (b * d - 1.0) * delh;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        let h = a1 * h;
        let kmu = (PI / (2.0 * x)).sqrt() / s;
        let k1 = kmu * (mu + x + 0.5 - h) / x;
        (kmu, k1)
    }
}

/// `e^x K_nu(x)` for `nu in (-2, 2)`, `x > 0`.
pub fn bessel_k_scaled(nu: f64, x: f64) -> Result<f64> {
    check_order(nu)?;
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("K argument {x} must be finite and > 0")));
    }
    let order = nu.abs();
    let nl = (order + 0.5).floor();
    let mu = order - nl;
    let (mut k0, mut k1) = k_pair_scaled(mu, x);
    let mut m = mu;
    for _ in 0..(nl as usize) {
        let next = 2.0 * (m + 1.0) / x * k1 + k0;
        k0 = k1;
        k1 = next;
        m += 1.0;
    }
    Ok(k0)
}

/// Precomputed evaluator of the kernel profile
/// `F(s) = e^{-s/2} (|s|/4)^{-nu} [I_nu(|s|/2) + sgn(s) I_{-nu}(|s|/2)]`
/// and its derivative, for a fixed weight exponent `a`.
#[derive(Debug, Clone)]
pub struct Profile {
    a: f64,
    nu: f64,
    /// `1/(j! Gamma(j + mu + 1))` for `mu = nu, -nu, nu + 1, 1 - nu`.
    coef: [Vec<f64>; 4],
    /// `-(2/pi) sin(nu pi)`, positive for `nu in (-1, 0)`.
    k_factor: f64,
}

fn series_coefficients(mu: f64) -> Vec<f64> {
    let mut c = Vec::with_capacity(SERIES_TERMS);
    let mut v = recip_gamma(mu + 1.0);
    for j in 0..SERIES_TERMS {
        c.push(v);
        let jf = j as f64;
        v /= (jf + 1.0) * (jf + mu + 1.0);
    }
    c
}

fn series_eval(c: &[f64], q: f64) -> f64 {
    let mut sum = c[0];
    let mut qp = 1.0;
    for cj in &c[1..] {
        qp *= q;
        let t = cj * qp;
        sum += t;
        if t < EPS * sum {
            break;
        }
    }
    sum
}

impl Profile {
    /// Builds the evaluator for `a in (-1, 1)`.
    pub fn new(a: f64) -> Result<Self> {
        if !(a > -1.0 && a < 1.0) {
            return Err(Error::Params(format!("weight exponent a = {a} outside (-1, 1)")));
        }
        let nu = 0.5 * (a - 1.0);
        Ok(Self {
            a,
            nu,
            coef: [
                series_coefficients(nu),
                series_coefficients(-nu),
                series_coefficients(nu + 1.0),
                series_coefficients(1.0 - nu),
            ],
            k_factor: -(2.0 / PI) * (nu * PI).sin(),
        })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// `F(0) = 1/Gamma(nu + 1)`.
    pub fn at_zero(&self) -> f64 {
        self.coef[0][0]
    }

    /// `F(s)`; strictly positive for every finite `s`.
    pub fn f(&self, s: f64) -> f64 {
        if s == 0.0 {
            return self.at_zero();
        }
        let z = s.abs();
        if z <= PROFILE_SERIES_NEG || (s > 0.0 && s <= PROFILE_SERIES_POS) {
            let q = s * s / 16.0;
            let a_ser = series_eval(&self.coef[0], q);
            let b_ser = series_eval(&self.coef[1], q);
            let t = s.signum() * (z / 4.0).powf(1.0 - self.a) * b_ser;
            return (-0.5 * s).exp() * (a_ser + t);
        }
        let w = 0.5 * z;
        let pre = (0.5 * w).powf(-self.nu);
        if s > 0.0 {
            pre * 2.0 * asymptotic_sum(self.nu, w) / (2.0 * PI * w).sqrt()
        } else {
            // Order |nu| < 1 is always supported.
            pre * self.k_factor * bessel_k_scaled(self.nu, w).unwrap_or(f64::NAN)
        }
    }

    /// `dF/ds`. At `s = 0` the derivative is finite only for `a <= 0`.
    pub fn f_prime(&self, s: f64) -> Result<f64> {
        if s == 0.0 {
            return if self.a < 0.0 {
                Ok(-0.5 * self.at_zero())
            } else if self.a == 0.0 {
                Ok(0.0)
            } else {
                Err(Error::Range(format!(
                    "F'(0) is unbounded for a = {} > 0 (|s|^(-a) singularity)",
                    self.a
                )))
            };
        }
        Ok(self.f_prime_nonzero(s))
    }

    /// `dF/ds` for `s != 0`.
    pub fn f_prime_nonzero(&self, s: f64) -> f64 {
        let z = s.abs();
        if z <= PROFILE_SERIES_NEG || (s > 0.0 && s <= PROFILE_SERIES_POS) {
            let q = s * s / 16.0;
            let a_ser = series_eval(&self.coef[0], q);
            let b_ser = series_eval(&self.coef[1], q);
            let ap_ser = series_eval(&self.coef[2], q);
            let bp_ser = series_eval(&self.coef[3], q);
            let sg = s.signum();
            let z4 = z / 4.0;
            let t = sg * z4.powf(1.0 - self.a) * b_ser;
            let da = s / 8.0 * ap_ser;
            let dt = 0.25 * (1.0 - self.a) * z4.powf(-self.a) * b_ser
                + sg * z4.powf(1.0 - self.a) * (s / 8.0) * bp_ser;
            return (-0.5 * s).exp() * (da + dt - 0.5 * (a_ser + t));
        }
        let w = 0.5 * z;
        let pre = (0.5 * w).powf(-self.nu);
        if s > 0.0 {
            pre * asymptotic_diff(self.nu, w) / (2.0 * PI * w).sqrt()
        } else {
            let k0 = bessel_k_scaled(self.nu, w).unwrap_or(f64::NAN);
            let k1 = bessel_k_scaled(self.nu + 1.0, w).unwrap_or(f64::NAN);
            0.5 * self.k_factor * pre * (k1 - k0)
        }
    }

    /// `1/Gamma(1 - nu) = 1/Gamma((3 - a)/2)`.
    pub fn recip_gamma_one_minus_nu(&self) -> f64 {
        self.coef[1][0]
    }
}
