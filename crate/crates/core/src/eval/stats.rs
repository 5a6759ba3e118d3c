//! Small statistics kit: Welch's t-test and helpers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StatsError {
    #[error("each sample needs at least two values")]
    SampleTooSmall,
    #[error("both samples have zero variance")]
    ZeroVariance,
    #[error("reference fraction at level {0} is zero")]
    ZeroReference(usize),
    #[error("score level must be 1-5, got {0}")]
    BadLevel(usize),
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn sample_std(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + 7.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

// Continued fraction for the incomplete beta, modified Lentz.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail probability of Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    incomplete_beta(df / (df + t * t), df / 2.0, 0.5).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Welch's unequal-variance t-test.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchResult, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::SampleTooSmall);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_variance(a), sample_variance(b));
    if va == 0.0 && vb == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let (sa, sb) = (va / na, vb / nb);
    let t = (mean(a) - mean(b)) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(WelchResult {
        t,
        df,
        p: t_two_sided_p(t, df),
    })
}

/// Relative change of `b` against `a` at a score level (1-5):
/// `(a - b) / a`.
pub fn distribution_delta(dist_a: &[f64; 5], dist_b: &[f64; 5], level: usize) -> Result<f64, StatsError> {
    if !(1..=5).contains(&level) {
        return Err(StatsError::BadLevel(level));
    }
    let a = dist_a[level - 1];
    if a == 0.0 {
        return Err(StatsError::ZeroReference(level));
    }
    Ok((a - dist_b[level - 1]) / a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Independent p-value: fraction of the t density's angular form
    // integral beyond atan(|t|/sqrt(df)), by composite Simpson.
    fn p_oracle(t: f64, df: f64) -> f64 {
        let f = |th: f64| th.cos().powf(df - 1.0);
        let simpson = |lo: f64, hi: f64| {
            let n = 20_000;
            let h = (hi - lo) / n as f64;
            let mut s = f(lo) + f(hi);
            for i in 1..n {
                s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        let half = std::f64::consts::FRAC_PI_2;
        let th0 = (t.abs() / df.sqrt()).atan();
        simpson(th0, half) / simpson(0.0, half)
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-13);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-12);
    }

    #[test]
    fn welch_fixture() {
        let r = welch_t(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.t, -1.0);
        assert_eq!(r.df, 8.0);
        assert!((r.p - 0.346_593_507_087_334_16).abs() < 1e-9);
        assert!((r.p - p_oracle(r.t, r.df)).abs() < 1e-6);
    }

    #[test]
    fn welch_unequal_sizes() {
        let r = welch_t(&[3.1, 2.2, 4.8, 5.0], &[1.0, 1.5, 2.5, 2.0, 1.2, 0.9]).unwrap();
        assert!((r.t - 3.125_032_911_185_438_2).abs() < 1e-12);
        assert!((r.df - 3.865_843_742_665_987_3).abs() < 1e-12);
        assert!((r.p - 0.037_038_664_701_234_486).abs() < 1e-9);
    }

    #[test]
    fn welch_symmetric_and_errors() {
        let a = [1.0, 2.0, 4.0];
        let r = welch_t(&a, &a).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.p, 1.0);
        assert_eq!(welch_t(&[1.0], &a).unwrap_err(), StatsError::SampleTooSmall);
        assert_eq!(welch_t(&[2.0, 2.0], &[3.0, 3.0]).unwrap_err(), StatsError::ZeroVariance);
    }

    #[test]
    fn delta_fixture() {
        let mut a = [0.0; 5];
        let mut b = [0.0; 5];
        a[0] = 0.226;
        b[0] = 0.0511;
        assert!((distribution_delta(&a, &b, 1).unwrap() - 0.774).abs() < 5e-3);
        assert_eq!(distribution_delta(&a, &a, 1).unwrap(), 0.0);
        assert_eq!(distribution_delta(&b, &a, 2).unwrap_err(), StatsError::ZeroReference(2));
        assert_eq!(distribution_delta(&a, &b, 0).unwrap_err(), StatsError::BadLevel(0));
    }

    #[test]
    fn std_of_run_means() {
        let xs = [3.42, 3.43, 3.44];
        assert!((mean(&xs) - 3.43).abs() < 1e-12);
        assert!((sample_std(&xs) - 0.01).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn p_matches_numerical_integration(
            a in prop::collection::vec(1u8..=5, 3..12),
            b in prop::collection::vec(1u8..=5, 3..12),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            if let Ok(r) = welch_t(&a, &b) {
                prop_assert!((r.p - p_oracle(r.t, r.df)).abs() < 1e-4, "t={} df={} p={}", r.t, r.df, r.p);
            }
        }
    }
}
