//! Two-sample Kolmogorov–Smirnov test.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KsMethod {
    /// Limiting Kolmogorov distribution at sqrt(n m / (n + m)) D. Approximate
    /// when either sample has fewer than about 10 values.
    #[default]
    Asymptotic,
    /// Lattice-path enumeration of the null distribution (assumes no ties).
    Exact,
    /// Exact when both samples have at most 12 values, asymptotic otherwise.
    Auto,
}

/// Largest sample size per side for which `Auto` enumerates.
pub const EXACT_AUTO_MAX: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsTestResult {
    pub statistic: f64,
    pub p_value: f64,
    /// min(1, m p) for family size `bonferroni_m`.
    pub p_bonferroni: f64,
    pub bonferroni_m: usize,
    pub n_a: usize,
    pub n_b: usize,
    pub method: KsMethod,
}

pub fn bonferroni(p: f64, m: usize) -> f64 {
    (p * m.max(1) as f64).min(1.0)
}

fn sorted(sample: &[f64], name: &str) -> Result<Vec<f64>> {
    if sample.is_empty() {
        return Err(Error::EmptySample(name.to_string()));
    }
    if sample.iter().any(|v| v.is_nan()) {
        return Err(Error::malformed(name, "sample contains NaN"));
    }
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Sup-distance between the two empirical CDFs, evaluated after every
/// distinct value of the merged sample.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    let a = sorted(a, "sample a")?;
    let b = sorted(b, "sample b")?;
    Ok(statistic_sorted(&a, &b))
}

fn statistic_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    // once one sample is exhausted the remaining gap only shrinks
    d
}

/// Survival function of the Kolmogorov distribution, P(K > lambda).
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // Jacobi theta form of the CDF converges fast for small lambda
        let c = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut cdf = 0.0;
        for k in 1..=20 {
            let odd = (2 * k - 1) as f64;
            let term = (c * odd * odd).exp();
            cdf += term;
            if term < 1e-18 {
                break;
            }
        }
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * cdf).clamp(0.0, 1.0)
    } else {
        let mut sum = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sum += if k % 2 == 1 { term } else { -term };
            if term < 1e-18 {
                break;
            }
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

pub fn asymptotic_p_value(n: usize, m: usize, d: f64) -> f64 {
    let en = (n * m) as f64 / (n + m) as f64;
    kolmogorov_sf(en.sqrt() * d)
}

/// P(D >= d) under the null for continuous data, by counting monotone
/// lattice paths whose ECDF gap stays strictly below `d`.
pub fn exact_p_value(n: usize, m: usize, d: f64) -> f64 {
    let nm = (n * m) as i64;
    // D is always a multiple of 1 / (n m)
    let threshold = (d * nm as f64).round() as i64;
    if threshold <= 0 {
        return 1.0;
    }
    let inside = |i: usize, j: usize| ((i * m) as i64 - (j * n) as i64).abs() < threshold;
    // prob[j] is the mass at (i, j) of a uniformly random path that has not
    // left the band; steps use the conditional draw probabilities
    let mut prob = vec![0.0f64; m + 1];
    prob[0] = 1.0;
    for i in 0..=n {
        for j in 0..=m {
            if i == 0 && j == 0 {
                continue;
            }
            if !inside(i, j) {
                prob[j] = 0.0;
                continue;
            }
            let from_a = if i > 0 {
                // previous row value at j, step taking an `a` observation
                let (ri, rj) = ((n - (i - 1)) as f64, (m - j) as f64);
                prob[j] * ri / (ri + rj)
            } else {
                0.0
            };
            let from_b = if j > 0 {
                let (ri, rj) = ((n - i) as f64, (m - (j - 1)) as f64);
                prob[j - 1] * rj / (ri + rj)
            } else {
                0.0
            };
            prob[j] = from_a + from_b;
        }
    }
    (1.0 - prob[m]).clamp(0.0, 1.0)
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsTestResult> {
    ks_two_sample_with(a, b, KsMethod::Asymptotic, 1)
}

pub fn ks_two_sample_with(a: &[f64], b: &[f64], method: KsMethod, bonferroni_m: usize) -> Result<KsTestResult> {
    let sa = sorted(a, "sample a")?;
    let sb = sorted(b, "sample b")?;
    let (n, m) = (sa.len(), sb.len());
    let statistic = statistic_sorted(&sa, &sb);
    let resolved = match method {
        KsMethod::Auto if n <= EXACT_AUTO_MAX && m <= EXACT_AUTO_MAX => KsMethod::Exact,
        KsMethod::Auto => KsMethod::Asymptotic,
        other => other,
    };
    let p_value = match resolved {
        KsMethod::Exact => exact_p_value(n, m, statistic),
        _ => asymptotic_p_value(n, m, statistic),
    }
    .max(f64::MIN_POSITIVE);
    Ok(KsTestResult {
        statistic,
        p_value,
        p_bonferroni: bonferroni(p_value, bonferroni_m),
        bonferroni_m: bonferroni_m.max(1),
        n_a: n,
        n_b: m,
        method: resolved,
    })
}

/// (value, F(value)) at every distinct value of the sample.
pub fn ecdf_points(sample: &[f64]) -> Vec<(f64, f64)> {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (k, v) in s.iter().enumerate() {
        let f = (k + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *v => last.1 = f,
            _ => out.push((*v, f)),
        }
    }
    out
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute force: max over all merged points of |F_a(x) - F_b(x)|.
    fn brute_force(a: &[f64], b: &[f64]) -> f64 {
        let ecdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
        a.iter()
            .chain(b)
            .map(|&x| (ecdf(a, x) - ecdf(b, x)).abs())
            .fold(0.0, f64::max)
    }

    fn binomial(n: usize, k: usize) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    /// Enumerates every assignment of ranks to the two samples.
    fn exact_by_enumeration(n: usize, m: usize, d: f64) -> f64 {
        let total = n + m;
        let mut hits = 0u64;
        let mut count = 0u64;
        for mask in 0u32..(1 << total) {
            if mask.count_ones() as usize != n {
                continue;
            }
            count += 1;
            let a: Vec<f64> = (0..total).filter(|k| mask >> k & 1 == 1).map(|k| k as f64).collect();
            let b: Vec<f64> = (0..total).filter(|k| mask >> k & 1 == 0).map(|k| k as f64).collect();
            if brute_force(&a, &b) >= d - 1e-12 {
                hits += 1;
            }
        }
        assert_eq!(count as f64, binomial(total, n));
        hits as f64 / count as f64
    }

    #[test]
    fn trivial_cases() {
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(ks_statistic(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[1.5, 2.5]).unwrap(), 0.5);
        assert!(matches!(ks_statistic(&[], &[1.0]), Err(Error::EmptySample(_))));
    }

    #[test]
    fn identical_samples_have_p_one() {
        let r = ks_two_sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn kolmogorov_reference_values() {
        // 1 - K(lambda) evaluated with mpmath at 50 digits
        let table = [
            (0.3, 0.999_990_694_198_665_4),
            (0.5, 0.963_945_243_664_875),
            (0.8, 0.544_142_411_574_198_2),
            (1.0, 0.26999967167735452),
            (1.2, 0.11224966667072496),
            (1.36, 0.04948587675537791),
            (1.63, 0.0098463648884865244),
            (2.0, 0.00067092525577969535),
        ];
        for (lambda, sf) in table {
            let got = kolmogorov_sf(lambda);
            assert!((got - sf).abs() < 1e-12, "lambda {lambda}: {got} vs {sf}");
        }
    }

    #[test]
    fn exact_matches_enumeration() {
        for (n, m) in [(3, 3), (4, 5), (2, 6), (5, 5)] {
            for k in 1..=(n * m) {
                let d = k as f64 / (n * m) as f64;
                let a = exact_p_value(n, m, d);
                let b = exact_by_enumeration(n, m, d);
                assert!((a - b).abs() < 1e-12, "n={n} m={m} d={d}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn auto_switches_method() {
        let small = ks_two_sample_with(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], KsMethod::Auto, 1).unwrap();
        assert_eq!(small.method, KsMethod::Exact);
        // all 3 of a below all of b: 2 of 20 arrangements reach D = 1
        assert!((small.p_value - 0.1).abs() < 1e-12);
        let big: Vec<f64> = (0..20).map(f64::from).collect();
        assert_eq!(ks_two_sample_with(&big, &big, KsMethod::Auto, 1).unwrap().method, KsMethod::Asymptotic);
    }

    #[test]
    fn bonferroni_caps_and_scales() {
        assert_eq!(bonferroni(0.01, 3), 0.03);
        assert_eq!(bonferroni(0.5, 3), 1.0);
        let r = ks_two_sample_with(&[0.0, 1.0, 2.0, 3.0], &[2.5, 3.5, 4.5, 5.5], KsMethod::Asymptotic, 8).unwrap();
        assert!(r.p_bonferroni >= r.p_value);
    }

    #[test]
    fn ecdf_steps() {
        assert_eq!(ecdf_points(&[2.0, 1.0, 2.0, 3.0]), vec![(1.0, 0.25), (2.0, 0.75), (3.0, 1.0)]);
    }

    proptest! {
        #[test]
        fn statistic_matches_brute_force(
            a in prop::collection::vec(-5i32..5, 1..60),
            b in prop::collection::vec(-5i32..5, 1..60),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let d = ks_statistic(&a, &b).unwrap();
            prop_assert_eq!(d, brute_force(&a, &b));
            prop_assert!((0.0..=1.0).contains(&d));
        }

        #[test]
        fn statistic_invariant_under_monotone_transform(
            a in prop::collection::vec(-3.0f64..3.0, 1..40),
            b in prop::collection::vec(-3.0f64..3.0, 1..40),
        ) {
            let f = |v: &Vec<f64>| v.iter().map(|x| x.exp() * 2.0 + 1.0).collect::<Vec<_>>();
            prop_assert_eq!(ks_statistic(&a, &b).unwrap(), ks_statistic(&f(&a), &f(&b)).unwrap());
        }

        #[test]
        fn bonferroni_monotone(p in 0.0f64..1.0, m in 1usize..50) {
            prop_assert!(bonferroni(p, m) <= bonferroni(p, m + 1));
            prop_assert!(bonferroni(p, m) >= p);
        }
    }
}
