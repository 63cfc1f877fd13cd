//! Small statistical helpers: compensated sums, moments and
//! Kolmogorov–Smirnov tests with the asymptotic Kolmogorov distribution.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    compensated_sum(values.iter().copied()) / values.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    compensated_sum(values.iter().map(|v| (v - m) * (v - m))) / (n - 1) as f64
}

pub fn normal_cdf(x: f64, mean: f64, variance: f64) -> f64 {
    Normal::new(mean, variance.sqrt())
        .expect("normal distribution with positive variance")
        .cdf(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi theta form converges fast for small arguments.
        let c = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=20)
            .map(|k| {
                let odd = (2 * k - 1) as f64;
                (c * odd * odd).exp()
            })
            .sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let kf = k as f64;
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * kf * kf * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

fn ks_p_value(statistic: f64, effective_n: f64) -> f64 {
    let sq = effective_n.sqrt();
    kolmogorov_survival((sq + 0.12 + 0.11 / sq) * statistic)
}

/// One-sample KS test of `samples` against a continuous `cdf`.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> KsResult {
    let mut xs: Vec<f64> = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    KsResult {
        statistic: d,
        p_value: ks_p_value(d, nf),
        n,
    }
}

/// Two-sample KS test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    KsResult {
        statistic: d,
        p_value: ks_p_value(d, na * nb / (na + nb)),
        n: xa.len() + xb.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_of_repeated_values() {
        let v = vec![0.1; 1000];
        assert!((compensated_sum(v) - 100.0).abs() < 1e-13);
    }

    #[test]
    fn kolmogorov_branches_agree_near_switch() {
        let lo = kolmogorov_survival(1.1799999);
        let hi = kolmogorov_survival(1.18);
        assert!((lo - hi).abs() < 1e-6);
        // Reference value P(K > 1.36) ~ 0.0494.
        assert!((kolmogorov_survival(1.36) - 0.0494).abs() < 5e-4);
    }

    #[test]
    fn ks_detects_shifted_sample() {
        let xs: Vec<f64> = (0..500).map(|i| (i as f64 + 0.5) / 500.0).collect();
        let uniform = ks_one_sample(&xs, |x| x.clamp(0.0, 1.0));
        assert!(uniform.p_value > 0.99);
        let shifted: Vec<f64> = xs.iter().map(|x| x * 0.8).collect();
        let bad = ks_one_sample(&shifted, |x| x.clamp(0.0, 1.0));
        assert!(bad.p_value < 1e-6);
        let two = ks_two_sample(&xs, &shifted);
        assert!(two.p_value < 1e-3);
        assert!(ks_two_sample(&xs, &xs).statistic == 0.0);
    }
}
