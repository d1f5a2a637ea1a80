//! Scalar special functions backing the significance tests: the
//! log-gamma function, the regularized incomplete beta function, and
//! Student's t distribution built from it.
//!
//! `ln_gamma` is the Lanczos approximation (g = 7, nine coefficients),
//! good to roughly 15 significant digits on the positive reals, with
//! the reflection formula covering arguments below ½. The incomplete
//! beta is the standard continued fraction evaluated with the modified
//! Lentz algorithm; arguments past the symmetry point are flipped with
//! `I_x(a, b) = 1 − I_{1−x}(b, a)` so the fraction always runs in its
//! fast-converging region. The test suite checks both against an
//! independent power-series evaluation and against the closed-form t
//! distributions at 1 and 2 degrees of freedom.

use std::f64::consts::PI;

use crate::error::{Error, Result};

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

/// Natural log of the gamma function for `x > 0`; NaN outside that
/// domain.
pub fn ln_gamma(x: f64) -> f64 {
    if !x.is_finite() || x <= 0.0 {
        return f64::NAN;
    }
    if x < 0.5 {
        // Reflection: Γ(x)·Γ(1−x) = π / sin(πx).
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let z = x - 1.0;
    let mut acc = LANCZOS_COEFFS[0];
    for (i, &c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz). Only
/// valid in the region `x < (a + 1)/(a + b + 2)`, which the caller
/// guarantees.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> Result<f64> {
    const MAX_ITER: usize = 400;
    const EPS: f64 = 1e-15;
    const FPMIN: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let mf = m as f64;
        let m2 = 2.0 * mf;
        // Even step.
        let aa = mf * (b - mf) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        // Odd step.
        let aa = -(a + mf) * (qab + mf) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            return Ok(h);
        }
    }
    Err(Error::Analysis(format!(
        "incomplete beta continued fraction did not converge for a = {a}, b = {b}, x = {x}"
    )))
}

/// Regularized incomplete beta function `I_x(a, b)` for `a, b > 0` and
/// `x ∈ [0, 1]`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a.is_finite() && a > 0.0 && b.is_finite() && b > 0.0) {
        return Err(Error::Analysis(format!(
            "incomplete beta parameters must be positive; got a = {a}, b = {b}"
        )));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Analysis(format!(
            "incomplete beta argument {x} outside [0, 1]"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_continued_fraction(a, b, x)? / a)
    } else {
        Ok(1.0 - front * beta_continued_fraction(b, a, 1.0 - x)? / b)
    }
}

fn check_t_inputs(t: f64, df: f64) -> Result<()> {
    if !(df.is_finite() && df > 0.0) {
        return Err(Error::Analysis(format!(
            "degrees of freedom {df} must be positive and finite"
        )));
    }
    if !t.is_finite() {
        return Err(Error::Analysis(format!("t statistic {t} must be finite")));
    }
    Ok(())
}

/// CDF of Student's t distribution with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> Result<f64> {
    check_t_inputs(t, df)?;
    let tail = 0.5 * regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t * t))?;
    Ok(if t < 0.0 { tail } else { 1.0 - tail })
}

/// Two-sided p-value `P(|T| ≥ |t|)` for Student's t: exactly
/// `I_{df/(df+t²)}(df/2, ½)`, which is 1 at `t = 0` with no rounding.
pub fn two_sided_t_p(t: f64, df: f64) -> Result<f64> {
    check_t_inputs(t, df)?;
    regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t * t))
}
