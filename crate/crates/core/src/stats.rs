//! Goodness-of-fit statistics at the 99% level.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Asymptotic Kolmogorov-Smirnov coefficient for a 1% significance level.
pub const KS_COEFF_99: f64 = 1.628;

/// One-sample KS statistic `sup |F_n(x) - F(x)|` against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample KS statistic `sup |F_a(x) - F_b(x)|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
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
    d
}

pub fn ks_critical_one_sample(n: usize) -> f64 {
    KS_COEFF_99 / (n as f64).sqrt()
}

pub fn ks_critical_two_sample(n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    KS_COEFF_99 * ((n + m) / (n * m)).sqrt()
}

/// Pearson statistic `sum (O - E)^2 / E`.
pub fn chi_square(observed: &[f64], expected: &[f64]) -> f64 {
    observed
        .iter()
        .zip(expected)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum()
}

/// 99% quantile of the chi-square distribution with `dof` degrees of freedom.
pub fn chi_square_critical(dof: usize) -> f64 {
    ChiSquared::new(dof.max(1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.99)
}
