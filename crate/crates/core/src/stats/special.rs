//! Log-gamma, the regularized incomplete beta function and its inverse.
//!
//! Everything here is self-contained: `I_x(a, b)` is evaluated with the
//! modified Lentz continued fraction and inverted with a bracketed Newton
//! iteration.

use super::StatsError;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

const CF_MAX_ITER: usize = 300;
const CF_EPS: f64 = 1e-16;
const CF_TINY: f64 = 1e-300;

/// Newton/bisection iteration cap for [`beta_inv`].
pub const BETA_INV_MAX_ITER: usize = 200;
/// Target `|I_x(a,b) - p|` for [`beta_inv`].
pub const BETA_INV_TOL: f64 = 1e-10;

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection: Γ(x)Γ(1-x) = π / sin(πx)
        let s = (std::f64::consts::PI * x).sin().abs();
        return std::f64::consts::PI.ln() - s.ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEFFS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// `Γ(x)`, including negative non-integers via reflection. Poles give NaN.
pub fn gamma(x: f64) -> f64 {
    if x <= 0.0 && x == x.floor() {
        return f64::NAN;
    }
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return pi / ((pi * x).sin() * gamma(1.0 - x));
    }
    ln_gamma(x).exp()
}

/// `ln B(a, b)`.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

fn check_shapes(a: f64, b: f64) -> Result<(), StatsError> {
    if !a.is_finite() || !b.is_finite() {
        return Err(StatsError::NonFinite);
    }
    if a <= 0.0 || b <= 0.0 {
        return Err(StatsError::Domain(format!(
            "beta shapes must be positive, got a={a}, b={b}"
        )));
    }
    Ok(())
}

/// Regularized incomplete beta function `I_x(a, b)`, i.e. the Beta(a, b) CDF.
pub fn reg_inc_beta(x: f64, a: f64, b: f64) -> Result<f64, StatsError> {
    check_shapes(a, b)?;
    if !x.is_finite() {
        return Err(StatsError::NonFinite);
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(StatsError::Domain(format!("x must lie in [0, 1], got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    // The fraction converges fast below the mean-ish switch point; use the
    // symmetry I_x(a,b) = 1 - I_{1-x}(b,a) above it.
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front_factor(x, a, b) * continued_fraction(x, a, b)? / a)
    } else {
        Ok(1.0 - front_factor(1.0 - x, b, a) * continued_fraction(1.0 - x, b, a)? / b)
    }
}

fn front_factor(x: f64, a: f64, b: f64) -> f64 {
    (a * x.ln() + b * (-x).ln_1p() - ln_beta(a, b)).exp()
}

/// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn continued_fraction(x: f64, a: f64, b: f64) -> Result<f64, StatsError> {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;

    let clamp = |v: f64| if v.abs() < CF_TINY { CF_TINY } else { v };

    let mut c = 1.0;
    let mut d = 1.0 / clamp(1.0 - qab * x / qap);
    let mut h = d;

    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;

        let even = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / clamp(1.0 + even * d);
        c = clamp(1.0 + even / c);
        h *= d * c;

        let odd = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / clamp(1.0 + odd * d);
        c = clamp(1.0 + odd / c);
        let delta = d * c;
        h *= delta;

        if (delta - 1.0).abs() < CF_EPS {
            return Ok(h);
        }
    }
    Err(StatsError::NoConvergence("incomplete beta continued fraction"))
}

/// Beta(a, b) density at `x`, used for Newton steps.
fn beta_pdf(x: f64, a: f64, b: f64) -> f64 {
    ((a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_beta(a, b)).exp()
}

/// Inverse of the Beta(a, b) CDF: the `x` with `I_x(a, b) = p`.
///
/// Newton steps on `I_x(a,b) - p` are kept inside a shrinking bisection
/// bracket, so the iteration cannot escape `[0, 1]` and never diverges.
pub fn beta_inv(p: f64, a: f64, b: f64) -> Result<f64, StatsError> {
    check_shapes(a, b)?;
    if !p.is_finite() {
        return Err(StatsError::NonFinite);
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(StatsError::Domain(format!(
            "probability must lie in [0, 1], got {p}"
        )));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }

    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    let mut x = initial_guess(p, a, b).clamp(1e-300, 1.0 - 1e-16);

    for _ in 0..BETA_INV_MAX_ITER {
        let f = reg_inc_beta(x, a, b)? - p;
        if f.abs() <= BETA_INV_TOL * 1e-2 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= f64::EPSILON * x.max(f64::MIN_POSITIVE) {
            return Ok(x);
        }

        let density = beta_pdf(x, a, b);
        let newton = if density.is_finite() && density > 0.0 {
            x - f / density
        } else {
            f64::NAN
        };
        x = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }

    let residual = (reg_inc_beta(x, a, b)? - p).abs();
    if residual <= BETA_INV_TOL {
        Ok(x)
    } else {
        Err(StatsError::NoConvergence("beta_inv"))
    }
}

/// Starting point for the inverse: a normal approximation for moderate
/// shapes, otherwise the tail power-law forms.
fn initial_guess(p: f64, a: f64, b: f64) -> f64 {
    if a >= 1.0 && b >= 1.0 {
        let t = (-2.0 * p.min(1.0 - p).ln()).sqrt();
        let mut z = t - (2.30753 + 0.27061 * t) / (1.0 + t * (0.99229 + 0.04481 * t));
        if p < 0.5 {
            z = -z;
        }
        let al = (z * z - 3.0) / 6.0;
        let h = 2.0 / (1.0 / (2.0 * a - 1.0) + 1.0 / (2.0 * b - 1.0));
        let w = z * (al + h).sqrt() / h
            - (1.0 / (2.0 * b - 1.0) - 1.0 / (2.0 * a - 1.0)) * (al + 5.0 / 6.0 - 2.0 / (3.0 * h));
        a / (a + b * (2.0 * w).exp())
    } else {
        let lna = (a / (a + b)).ln();
        let lnb = (b / (a + b)).ln();
        let t = (a * lna).exp() / a;
        let u = (b * lnb).exp() / b;
        let w = t + u;
        if p < t / w {
            (a * w * p).powf(1.0 / a)
        } else {
            1.0 - (b * w * (1.0 - p)).powf(1.0 / b)
        }
    }
}
