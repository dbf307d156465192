use std::f64::consts::PI;

/// Log density of `N(0, var)` at `value`.
#[inline]
pub fn normal_logpdf(value: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - 0.5 * value * value / var
}

/// Spike-and-slab log prior of a coefficient.
///
/// The spike is a point mass at zero, contributing 0 when the coefficient is
/// exactly zero and `-inf` otherwise.
pub fn spike_slab_logprior(value: f64, included: bool, slab_var: f64) -> f64 {
    if included {
        normal_logpdf(value, slab_var)
    } else if value == 0.0 {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

/// Beta-binomial log prior of a single inclusion indicator with the Bernoulli
/// probability integrated out against `Beta(a, b)`.
pub fn beta_binomial_logprior(included: bool, a: f64, b: f64) -> f64 {
    if b.is_infinite() {
        return if included { f64::NEG_INFINITY } else { 0.0 };
    }
    if a.is_infinite() {
        return if included { 0.0 } else { f64::NEG_INFINITY };
    }
    // B(1 + a, b) / B(a, b) = a / (a + b)
    if included {
        (a / (a + b)).ln()
    } else {
        (b / (a + b)).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::beta::ln_beta;

    #[test]
    fn spike_conventions() {
        assert_eq!(spike_slab_logprior(0.0, false, 10.0), 0.0);
        assert_eq!(spike_slab_logprior(1.5, false, 10.0), f64::NEG_INFINITY);
        let v = spike_slab_logprior(0.0, true, 10.0);
        assert!((v + 0.5 * (2.0 * std::f64::consts::PI * 10.0).ln()).abs() < 1e-12, "{v}");
        assert!((v + 2.070_231).abs() < 1e-6);
    }

    #[test]
    fn beta_binomial_matches_beta_function_ratio() {
        assert!((beta_binomial_logprior(true, 1.0, 9.0) - 0.1f64.ln()).abs() < 1e-14);
        assert!((beta_binomial_logprior(false, 1.0, 9.0) - 0.9f64.ln()).abs() < 1e-14);
        assert!((beta_binomial_logprior(true, 1.0, 1.0) - 0.5f64.ln()).abs() < 1e-14);
        for &(a, b) in &[(0.3, 2.0), (1.0, 99.0), (5.0, 7.5)] {
            for inc in [false, true] {
                let k = if inc { 1.0 } else { 0.0 };
                let oracle = ln_beta(k + a, 1.0 - k + b) - ln_beta(a, b);
                assert!((beta_binomial_logprior(inc, a, b) - oracle).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn infinite_b_excludes() {
        assert_eq!(beta_binomial_logprior(true, 1.0, f64::INFINITY), f64::NEG_INFINITY);
        assert_eq!(beta_binomial_logprior(false, 1.0, f64::INFINITY), 0.0);
    }
}
