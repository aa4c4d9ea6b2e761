//! Shared helpers for the integration suites.
// Not every test target uses every helper.
#![allow(dead_code)]

use statrs::distribution::{ContinuousCDF, Normal};

/// One-sample Kolmogorov-Smirnov test against Normal(mean, sd). Returns
/// (statistic, asymptotic p-value).
pub fn ks_test_normal(samples: &[f64], mean: f64, sd: f64) -> (f64, f64) {
    let normal = Normal::new(mean, sd).expect("valid normal");
    let mut sorted: Vec<f64> = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut statistic: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = normal.cdf(x);
        let upper = (i as f64 + 1.0) / n - cdf;
        let lower = cdf - i as f64 / n;
        statistic = statistic.max(upper).max(lower);
    }
    (statistic, kolmogorov_survival(n.sqrt() * statistic))
}

/// Survival function of the Kolmogorov distribution,
/// `2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 t^2)`.
fn kolmogorov_survival(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let mut total = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * t * t).exp();
        if term < 1e-16 {
            break;
        }
        total += if k % 2 == 1 { term } else { -term };
    }
    (2.0 * total).clamp(0.0, 1.0)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
