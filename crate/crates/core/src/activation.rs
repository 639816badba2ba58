//! Swish activation `s(x) = x * sigmoid(x)` and its first three derivatives.

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

/// s'(x) = σ (1 + x (1 - σ))
#[inline]
pub fn swish_d1(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// s''(x) = σ (1 - σ) (2 + x (1 - 2σ))
#[inline]
pub fn swish_d2(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))
}

/// s'''(x) = σ' [(1 - 2σ)(3 + x (1 - 2σ)) - 2 x σ']
#[inline]
pub fn swish_d3(x: f64) -> f64 {
    let s = sigmoid(x);
    let ds = s * (1.0 - s);
    let c = 1.0 - 2.0 * s;
    ds * (c * (3.0 + x * c) - 2.0 * x * ds)
}

/// Value and first three derivatives in one sigmoid evaluation.
#[inline]
pub fn swish_all(x: f64) -> [f64; 4] {
    let s = sigmoid(x);
    let ds = s * (1.0 - s);
    let c = 1.0 - 2.0 * s;
    [
        x * s,
        s * (1.0 + x * (1.0 - s)),
        ds * (2.0 + x * c),
        ds * (c * (3.0 + x * c) - 2.0 * x * ds),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn matches_reciprocal_form() {
        for &x in &[-30.0, -3.2, -1.0, -1e-3, 0.0, 0.5, 2.0, 17.0] {
            let expected = x / (1.0 + (-x as f64).exp());
            assert!((swish(x) - expected).abs() <= 1e-15 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn values_at_zero() {
        assert_eq!(swish(0.0), 0.0);
        assert_eq!(swish_d1(0.0), 0.5);
        assert_eq!(swish_d2(0.0), 0.5);
        assert_eq!(swish_d3(0.0), 0.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for &x in &[-4.0, -1.3, -0.2, 0.0, 0.7, 1.0, 3.5] {
            assert!((swish_d1(x) - central(swish, x, 1e-5)).abs() < 1e-9);
            assert!((swish_d2(x) - central(swish_d1, x, 1e-5)).abs() < 1e-9);
            assert!((swish_d3(x) - central(swish_d2, x, 1e-5)).abs() < 1e-9);
            let all = swish_all(x);
            assert_eq!(all, [swish(x), swish_d1(x), swish_d2(x), swish_d3(x)]);
        }
    }
}
