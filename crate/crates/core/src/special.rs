//! Special functions used by the closed-form divergences and predictives.
//!
//! Thin wrappers around `statrs` plus a few log-space helpers.  All beta
//! function arithmetic goes through `ln_gamma` so that counts around 10^3
//! stay far from overflow.

use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::beta as sbeta;
use statrs::function::gamma as sgamma;

/// Natural log of the gamma function.
pub fn ln_gamma(x: f64) -> f64 {
    sgamma::ln_gamma(x)
}

/// Digamma function (derivative of `ln_gamma`).
pub fn digamma(x: f64) -> f64 {
    sgamma::digamma(x)
}

/// Natural log of the beta function, `ln B(a, b)`.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
    sbeta::beta_reg(a, b, x)
}

/// Log of the binomial coefficient `C(n, y)`.
pub fn ln_choose(n: u64, y: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(y as f64 + 1.0) - ln_gamma((n - y) as f64 + 1.0)
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// CDF of a standard Student-t variate with `df` degrees of freedom.
pub fn student_t_cdf(x: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df)
        .expect("df > 0")
        .cdf(x)
}

/// `ln |e^x - 1|`, stable over the whole real line.
pub fn ln_abs_expm1(x: f64) -> f64 {
    if x > 0.0 {
        // e^x - 1 = e^x (1 - e^-x)
        x + (-(-x).exp()).ln_1p()
    } else if x < 0.0 {
        (-(x.exp())).ln_1p()
    } else {
        f64::NEG_INFINITY
    }
}

/// `ln ((e^{s y} - 1) / s)` for `y > 0`, with the removable singularity at
/// `s = 0` (value `ln y`) evaluated by series.
pub fn ln_expm1_over(s: f64, y: f64) -> f64 {
    let x = s * y;
    if x.abs() < 1e-8 {
        // (e^x - 1)/x = 1 + x/2 + x^2/6 + ...
        y.ln() + (x / 2.0 + x * x / 6.0).ln_1p()
    } else {
        // (e^{sy}-1)/s = y * (e^x - 1)/x, and (e^x-1)/x > 0 for all x.
        ln_abs_expm1(x) - s.abs().ln()
    }
}

/// `log(sum(exp(v)))` without overflow.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
