//! Overflow-free logistic helpers.

/// Logistic function evaluated without overflow for any finite input.
#[inline]
pub fn sigmoid(theta: f64) -> f64 {
    if theta >= 0.0 {
        1.0 / (1.0 + (-theta).exp())
    } else {
        let e = theta.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid clamped into the open interval `(0, 1)`: saturated values are
/// pulled to the nearest representable probability strictly inside it.
#[inline]
pub fn probability(theta: f64) -> f64 {
    sigmoid(theta).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// `log(1 + exp(z))`, computed as `log1p(exp(-|z|)) + max(z, 0)`.
#[inline]
pub fn softplus(z: f64) -> f64 {
    (-z.abs()).exp().ln_1p() + z.max(0.0)
}

/// Bernoulli negative log-likelihood of `x` under natural parameter `theta`.
#[inline]
pub fn cross_entropy(x: bool, theta: f64) -> f64 {
    if x {
        softplus(-theta)
    } else {
        softplus(theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        // 1 / (1 + e^-2) evaluated with 50-digit arithmetic
        assert!((sigmoid(2.0) - 0.880_797_077_977_882_4).abs() < 1e-15);
        let big = sigmoid(800.0);
        assert!(big.is_finite() && big > 1.0 - 1e-12 && big <= 1.0);
        let small = sigmoid(-800.0);
        assert!(small.is_finite() && small >= 0.0);
    }

    #[test]
    fn probability_is_strictly_inside_unit_interval() {
        for theta in [-1e6, -800.0, -40.0, 0.0, 40.0, 800.0, 1e6] {
            let p = probability(theta);
            assert!(p > 0.0 && p < 1.0, "theta = {theta}: {p}");
            assert!((probability(theta) + probability(-theta) - 1.0).abs() <= 1e-15);
        }
        assert_eq!(probability(2.0), sigmoid(2.0));
    }

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for z in [-30.0, -2.5, -1e-3, 0.0, 0.7, 12.0, 30.0] {
            let naive = (1.0 + f64::exp(z)).ln();
            assert!((softplus(z) - naive).abs() < 1e-14, "z = {z}");
        }
        assert_eq!(softplus(1e4), 1e4);
        assert!(softplus(-1e4) >= 0.0);
    }

    #[test]
    fn cross_entropy_positive_at_two() {
        // -log sigmoid(2) = 0.12692801104297249644...
        assert!((cross_entropy(true, 2.0) - 0.126_928_011_042_972_5).abs() < 1e-15);
        assert!((cross_entropy(false, 0.0) - std::f64::consts::LN_2).abs() < 1e-16);
    }
}
