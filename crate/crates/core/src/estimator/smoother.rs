use serde::{Deserialize, Serialize};
use libm::erfc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SmootherFamily {
    #[default]
    NormalCdf,
}

/// Smooth surrogate `G(w / h)` for the indicator `I(w > 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmootherSpec {
    pub family: SmootherFamily,
    pub h: f64,
}

impl SmootherSpec {
    pub fn normal_cdf(h: f64) -> Self {
        Self {
            family: SmootherFamily::NormalCdf,
            h,
        }
    }

    #[inline]
    pub fn eval(&self, w: f64) -> f64 {
        smooth_indicator(w, self)
    }
}

#[inline]
pub fn smooth_indicator(w: f64, spec: &SmootherSpec) -> f64 {
    match spec.family {
        SmootherFamily::NormalCdf => 0.5 * erfc(-w / (spec.h * std::f64::consts::SQRT_2)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Standard normal CDF by composite Simpson quadrature of the density.
    fn phi_quadrature(x: f64) -> f64 {
        let n = 2_000;
        let (a, b) = (0.0, x);
        let h = (b - a) / n as f64;
        let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = f(a) + f(b);
        for k in 1..n {
            let t = a + k as f64 * h;
            s += if k % 2 == 1 { 4.0 * f(t) } else { 2.0 * f(t) };
        }
        0.5 + s * h / 3.0
    }

    #[test]
    fn center_is_half() {
        assert_eq!(smooth_indicator(0.0, &SmootherSpec::normal_cdf(0.3)), 0.5);
    }

    #[test]
    fn matches_quadrature_oracle() {
        let h = 0.27;
        let spec = SmootherSpec::normal_cdf(h);
        let v = smooth_indicator(1.96 * h, &spec);
        assert!((v - phi_quadrature(1.96)).abs() < 1e-12);
        assert!((v - 0.975).abs() < 1e-4);
        for x in [-3.1, -0.4, 0.2, 1.0, 2.5] {
            assert!((smooth_indicator(x * h, &spec) - phi_quadrature(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn tails() {
        let spec = SmootherSpec::normal_cdf(0.1);
        assert!(smooth_indicator(-10.0, &spec) < 1e-300);
        assert_eq!(smooth_indicator(10.0, &spec), 1.0);
    }

    proptest! {
        #[test]
        fn symmetric_and_monotone(w in -20.0f64..20.0, dw in 0.0f64..3.0, h in 0.01f64..2.0) {
            let spec = SmootherSpec::normal_cdf(h);
            let a = smooth_indicator(w, &spec);
            prop_assert!((a + smooth_indicator(-w, &spec) - 1.0).abs() < 1e-14);
            prop_assert!(smooth_indicator(w + dw, &spec) >= a);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
