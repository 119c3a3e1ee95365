//! Goodness-of-fit tests against a fully specified normal distribution.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const MIN_SAMPLES: usize = 100;

/// 5% critical value of A² when both normal parameters are known.
pub const AD_CRITICAL_5PCT: f64 = 2.492;

pub const SIGNIFICANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

impl KsResult {
    pub fn passes(&self) -> bool {
        self.p_value > SIGNIFICANCE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdResult {
    pub statistic: f64,
    pub critical_value: f64,
    pub pass: bool,
}

fn check(samples: &[f64], mu: f64, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma = {sigma} must be > 0"
        )));
    }
    if !mu.is_finite() {
        return Err(Error::NonFinite("mu"));
    }
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InvalidParameter(format!(
            "need at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("sample"));
    }
    let mut z: Vec<f64> = samples.iter().map(|x| (x - mu) / sigma).collect();
    z.sort_by(f64::total_cmp);
    Ok(z)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Survival function of the Kolmogorov distribution,
/// `P(K > t) = 2 Σ (−1)^{k−1} e^{−2k²t²}`.
pub fn kolmogorov_survival(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t < 1.18 {
        // Jacobi-transformed series converges fast for small t
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        let w = -pi2 / (8.0 * t * t);
        let s: f64 = (1..=20)
            .map(|k| {
                let j = (2 * k - 1) as f64;
                (w * j * j).exp()
            })
            .sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / t * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                let kf = k as f64;
                sign * (-2.0 * kf * kf * t * t).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// One-sample Kolmogorov–Smirnov test against `N(mu, sigma²)`, with the
/// asymptotic p-value `Q(√n·D)`.
pub fn ks_test(samples: &[f64], mu: f64, sigma: f64) -> Result<KsResult> {
    let z = check(samples, mu, sigma)?;
    let n = z.len() as f64;
    let phi = std_normal();
    let statistic = z
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = phi.cdf(x);
            let lo = i as f64 / n;
            let hi = (i + 1) as f64 / n;
            (hi - f).max(f - lo)
        })
        .fold(0.0, f64::max);
    Ok(KsResult {
        statistic,
        p_value: kolmogorov_survival(n.sqrt() * statistic),
    })
}

/// Anderson–Darling `A²` against `N(mu, sigma²)`.
pub fn ad_test(samples: &[f64], mu: f64, sigma: f64) -> Result<AdResult> {
    let z = check(samples, mu, sigma)?;
    let n = z.len();
    let phi = std_normal();
    let ln_cdf: Vec<f64> = z.iter().map(|&x| phi.cdf(x).ln()).collect();
    // ln(1 − Φ(x)) = ln Φ(−x), which keeps precision in the upper tail
    let ln_sf: Vec<f64> = z.iter().map(|&x| phi.cdf(-x).ln()).collect();
    let s: f64 = (0..n)
        .map(|i| (2 * i + 1) as f64 * (ln_cdf[i] + ln_sf[n - 1 - i]))
        .sum();
    let statistic = -(n as f64) - s / n as f64;
    Ok(AdResult {
        statistic,
        critical_value: AD_CRITICAL_5PCT,
        pass: statistic < AD_CRITICAL_5PCT,
    })
}
