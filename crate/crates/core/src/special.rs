//! Special functions and log-domain helpers.

use core::f64::consts::PI;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Digamma function for positive arguments.
pub fn digamma(mut x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Asymptotic expansion with Bernoulli coefficients.
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
    acc + libm::log(x) - 0.5 * inv - series
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Normal log-density with the given variance.
pub fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    -0.5 * (LN_2PI + libm::log(var)) - 0.5 * r * r / var
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|&v| libm::exp(v - max)).sum();
    max + libm::log(sum)
}

/// Normalizes log-weights in place into probabilities; returns the log normalizer.
pub fn softmax_in_place(values: &mut [f64]) -> f64 {
    let lse = log_sum_exp(values);
    if lse.is_finite() {
        for v in values.iter_mut() {
            *v = libm::exp(*v - lse);
        }
    }
    lse
}

/// Entropy of a Beta(a, b) distribution.
pub fn beta_entropy(a: f64, b: f64) -> f64 {
    ln_beta(a, b) - (a - 1.0) * digamma(a) - (b - 1.0) * digamma(b)
        + (a + b - 2.0) * digamma(a + b)
}

/// Entropy of a Gamma distribution in shape/rate form.
pub fn gamma_entropy(shape: f64, rate: f64) -> f64 {
    shape - libm::log(rate) + ln_gamma(shape) + (1.0 - shape) * digamma(shape)
}

pub fn gaussian_entropy(var: f64) -> f64 {
    0.5 * (libm::log(2.0 * PI * var) + 1.0)
}

pub(crate) fn ceil_with_tolerance(x: f64) -> f64 {
    libm::ceil(x - 1e-9 * x.abs().max(1.0))
}
