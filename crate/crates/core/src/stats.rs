//! Special functions and classical tests: log-gamma, regularized incomplete gamma
//! and beta, chi-square survival, pooled two-sample t.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("need at least {needed} observations per sample, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("pooled variance is zero")]
    ZeroVariance,
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma<F: Scalar>(x: F) -> F {
    let half = F::lit(0.5);
    if x < half {
        // Reflection: Γ(x)Γ(1−x) = π / sin(πx).
        let pi = F::lit(std::f64::consts::PI);
        return (pi / (pi * x).sin()).abs().ln() - ln_gamma(F::one() - x);
    }
    let x = x - F::one();
    let mut acc = F::lit(LANCZOS[0]);
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += F::lit(c) / (x + F::of_usize(i));
    }
    let t = x + F::lit(LANCZOS_G) + half;
    F::lit(0.5 * (2.0 * std::f64::consts::PI).ln()) + (x + half) * t.ln() - t + acc.ln()
}

const MAX_ITER: usize = 10_000;

fn tiny<F: Scalar>() -> F {
    F::min_positive_value() / F::epsilon()
}

/// Series for the lower regularized gamma P(a, x), valid for x < a + 1.
fn gamma_p_series<F: Scalar>(a: F, x: F) -> F {
    let mut ap = a;
    let mut del = F::one() / a;
    let mut sum = del;
    for _ in 0..MAX_ITER {
        ap += F::one();
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * F::epsilon() {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Continued fraction (modified Lentz) for the upper regularized gamma Q(a, x),
/// valid for x ≥ a + 1.
fn gamma_q_fraction<F: Scalar>(a: F, x: F) -> F {
    let two = F::lit(2.0);
    let mut b = x + F::one() - a;
    let mut c = F::one() / tiny::<F>();
    let mut d = F::one() / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let i = F::of_usize(i);
        let an = -i * (i - a);
        b += two;
        d = an * d + b;
        if d.abs() < tiny() {
            d = tiny();
        }
        c = b + an / c;
        if c.abs() < tiny() {
            c = tiny();
        }
        d = F::one() / d;
        let del = d * c;
        h *= del;
        if (del - F::one()).abs() < F::epsilon() {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Upper regularized incomplete gamma Q(a, x) = Γ(a, x) / Γ(a).
pub fn gamma_q<F: Scalar>(a: F, x: F) -> F {
    if x <= F::zero() {
        return F::one();
    }
    if x < a + F::one() {
        F::one() - gamma_p_series(a, x)
    } else {
        gamma_q_fraction(a, x)
    }
}

/// Lower regularized incomplete gamma P(a, x).
pub fn gamma_p<F: Scalar>(a: F, x: F) -> F {
    if x <= F::zero() {
        return F::zero();
    }
    if x < a + F::one() {
        gamma_p_series(a, x)
    } else {
        F::one() - gamma_q_fraction(a, x)
    }
}

/// P(X > x) for X ~ χ²(df).
pub fn chi_square_sf<F: Scalar>(x: F, df: usize) -> F {
    assert!(df > 0, "chi-square needs positive degrees of freedom");
    if x <= F::zero() {
        return F::one();
    }
    let half = F::lit(0.5);
    gamma_q(F::of_usize(df) * half, x * half)
}

fn beta_fraction<F: Scalar>(a: F, b: F, x: F) -> F {
    let one = F::one();
    let two = F::lit(2.0);
    let qab = a + b;
    let qap = a + one;
    let qam = a - one;
    let mut c = one;
    let mut d = one - qab * x / qap;
    if d.abs() < tiny() {
        d = tiny();
    }
    d = one / d;
    let mut h = d;
    for m in 1..MAX_ITER {
        let m = F::of_usize(m);
        let m2 = two * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = one + aa * d;
        if d.abs() < tiny() {
            d = tiny();
        }
        c = one + aa / c;
        if c.abs() < tiny() {
            c = tiny();
        }
        d = one / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = one + aa * d;
        if d.abs() < tiny() {
            d = tiny();
        }
        c = one + aa / c;
        if c.abs() < tiny() {
            c = tiny();
        }
        d = one / d;
        let del = d * c;
        h *= del;
        if (del - one).abs() < F::epsilon() {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn beta_inc<F: Scalar>(a: F, b: F, x: F) -> F {
    if x <= F::zero() {
        return F::zero();
    }
    if x >= F::one() {
        return F::one();
    }
    let one = F::one();
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (one - x).ln();
    let front = ln_front.exp();
    if x < (a + one) / (a + b + F::lit(2.0)) {
        front * beta_fraction(a, b, x) / a
    } else {
        one - front * beta_fraction(b, a, one - x) / b
    }
}

/// Two-sided p-value of a Student t statistic.
pub fn student_t_two_sided<F: Scalar>(t: F, df: usize) -> F {
    let nu = F::of_usize(df);
    let x = nu / (nu + t * t);
    beta_inc(nu * F::lit(0.5), F::lit(0.5), x).min(F::one())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult<F> {
    pub mean_a: F,
    pub mean_b: F,
    /// `(mean_a − mean_b) / se`.
    pub t: F,
    pub df: usize,
    pub p_value: F,
}

/// Pooled-variance Student t test of `xs` (sample a) against `ys` (sample b),
/// with df = |xs| + |ys| − 2.
pub fn two_sample_t<F: Scalar>(xs: &[F], ys: &[F]) -> Result<TTestResult<F>, StatsError> {
    let shortest = xs.len().min(ys.len());
    if shortest < 2 {
        return Err(StatsError::TooFewObservations { needed: 2, got: shortest });
    }
    let (n1, n2) = (F::of_usize(xs.len()), F::of_usize(ys.len()));
    let mean_a = xs.iter().copied().sum::<F>() / n1;
    let mean_b = ys.iter().copied().sum::<F>() / n2;
    let ss = |v: &[F], m: F| v.iter().map(|&x| (x - m) * (x - m)).sum::<F>();
    let df = xs.len() + ys.len() - 2;
    let pooled = (ss(xs, mean_a) + ss(ys, mean_b)) / F::of_usize(df);
    if pooled <= F::zero() {
        return Err(StatsError::ZeroVariance);
    }
    let se = (pooled * (F::one() / n1 + F::one() / n2)).sqrt();
    let t = (mean_a - mean_b) / se;
    Ok(TTestResult {
        mean_a,
        mean_b,
        t,
        df,
        p_value: student_t_two_sided(t, df),
    })
}
