//! Stable scalar math shared by tape ops, entropy models, and oracles.

pub const LN_2: f64 = std::f64::consts::LN_2;
pub const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) without overflow on either tail.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Standard normal CDF via erfc, accurate in both tails.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * INV_SQRT_2)
}

pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Logistic CDF with location and scale.
pub fn logistic_cdf(x: f64, loc: f64, scale: f64) -> f64 {
    sigmoid((x - loc) / scale)
}
