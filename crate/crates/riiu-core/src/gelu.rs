//! Exact-erf GELU and its derivative.
//!
//! The exact form `gelu(x) = x * Phi(x)` (standard normal CDF, not the
//! tanh approximation) keeps finite-difference gradient checks clean.
//! `erf` is evaluated through the regularized incomplete gamma
//! functions, series for small arguments and a continued fraction for
//! large ones, accurate to near machine precision.

const ITMAX: usize = 300;
const EPS: f64 = 3.0e-16;
const FPMIN: f64 = f64::MIN_POSITIVE / EPS;
// ln Gamma(1/2) = ln sqrt(pi)
const LN_GAMMA_HALF: f64 = 0.572_364_942_924_700_1;

/// Series expansion of the regularized lower incomplete gamma P(a, x),
/// good for x < a + 1.
fn gamma_p_series(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut del = sum;
    for _ in 0..ITMAX {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - LN_GAMMA_HALF).exp()
}

/// Continued fraction for the regularized upper incomplete gamma
/// Q(a, x), good for x >= a + 1 (modified Lentz).
fn gamma_q_cf(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / FPMIN;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=ITMAX {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = b + an / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - LN_GAMMA_HALF).exp() * h
}

/// Error function.
pub fn erf(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let x2 = x * x;
    let mag = if x2 < 1.5 {
        gamma_p_series(0.5, x2)
    } else {
        1.0 - gamma_q_cf(0.5, x2)
    };
    if x < 0.0 {
        -mag
    } else {
        mag
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `gelu(x) = x * Phi(x)` with the exact normal CDF.
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

/// Derivative of [`gelu`]: `Phi(x) + x * phi(x)`.
pub fn gelu_grad(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn erf_reference_values() {
        // Abramowitz & Stegun reference points.
        assert!((erf(0.5) - 0.5204998778130465).abs() < 1e-14);
        assert!((erf(1.0) - 0.8427007929497149).abs() < 1e-14);
        assert!((erf(2.0) - 0.9953222650189527).abs() < 1e-14);
        assert!((erf(-1.0) + 0.8427007929497149).abs() < 1e-14);
    }

    #[test]
    fn gelu_zero_and_asymptote() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(10.0) - 10.0).abs() < 1e-6);
        assert!(gelu(-10.0).abs() < 1e-6);
    }

    #[test]
    fn gelu_grad_matches_central_differences() {
        let mut rng = RngStream::new(20);
        let h = 1e-5;
        for _ in 0..20 {
            let x = rng.range(-4.0, 4.0);
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            let an = gelu_grad(x);
            let rel = (fd - an).abs() / an.abs().max(1e-8);
            assert!(rel < 1e-6, "x={x} fd={fd} an={an} rel={rel}");
        }
    }
}
