//! Scalar functions shared by the model and its losses.

/// ½a² for |a| ≤ 1, |a| − ½ otherwise.
pub fn huber(a: f64) -> f64 {
    if a.abs() <= 1.0 {
        0.5 * a * a
    } else {
        a.abs() - 0.5
    }
}

/// Derivative of [`huber`]; at the kink both branches give ±1.
pub fn huber_grad(a: f64) -> f64 {
    if a.abs() <= 1.0 {
        a
    } else {
        a.signum()
    }
}

/// log(1 + eᵃ) in the overflow-safe form max(a, 0) + log1p(e^−|a|).
pub fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

pub fn relu(a: f64) -> f64 {
    a.max(0.0)
}

/// Binary cross-entropy of `label` against sigmoid(`logit`), computed from the logit.
pub fn bce_with_logit(logit: f64, label: f64) -> f64 {
    softplus(logit) - label * logit
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn huber_values() {
        assert_eq!(huber(0.5), 0.125);
        assert_eq!(huber(-1.0), 0.5);
        assert_eq!(huber(1.0), 0.5);
        assert_eq!(huber(2.0), 1.5);
    }

    #[test]
    fn softplus_values() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(100.0) - 100.0).abs() < 1e-12);
        let tiny = softplus(-100.0);
        assert!(((tiny - (-100.0f64).exp()) / (-100.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn sigmoid_values() {
        assert!((sigmoid(1.0) - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn huber_is_c1_at_kink() {
        let h = 1e-7;
        for kink in [-1.0, 1.0] {
            let left = (huber(kink) - huber(kink - h)) / h;
            let right = (huber(kink + h) - huber(kink)) / h;
            assert!((left - right).abs() < 1e-6, "kink {kink}: {left} vs {right}");
            assert!((huber_grad(kink) - left).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn softplus_bounds(a in -700.0f64..700.0) {
            let s = softplus(a);
            prop_assert!(s > 0.0 || a < -700.0);
            let gap = s - a.max(0.0);
            prop_assert!(gap >= 0.0 && gap <= std::f64::consts::LN_2 + 1e-15);
        }

        #[test]
        fn huber_grad_matches_difference(a in -3.0f64..3.0) {
            let h = 1e-6;
            let fd = (huber(a + h) - huber(a - h)) / (2.0 * h);
            prop_assert!((fd - huber_grad(a)).abs() < 1e-6);
        }
    }
}
