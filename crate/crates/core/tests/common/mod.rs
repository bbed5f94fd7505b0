//! Reference implementations that share no code with the library: plain
//! power series for erf and the lower incomplete gamma function, inverted by
//! bisection.

#![allow(dead_code)]

use std::f64::consts::PI;

/// erf by the all-positive series `2/sqrt(pi) e^{-x^2} sum 2^n x^{2n+1} / (2n+1)!!`.
pub fn erf(x: f64) -> f64 {
    if x < 0.0 {
        return -erf(-x);
    }
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term > sum * 1e-17 {
        n += 1.0;
        term *= 2.0 * x * x / (2.0 * n + 1.0);
        sum += term;
    }
    2.0 / PI.sqrt() * (-x * x).exp() * sum
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / 2f64.sqrt()))
}

/// Gamma at positive integers and half-integers.
pub fn gamma_half_integer(a: f64) -> f64 {
    let twice = (2.0 * a).round();
    assert!((twice - 2.0 * a).abs() < 1e-12 && a > 0.0);
    let (mut g, mut k) = if twice as i64 % 2 == 0 { (1.0, 1.0) } else { (PI.sqrt(), 0.5) };
    while k < a - 1e-9 {
        g *= k;
        k += 1.0;
    }
    g
}

/// Regularized lower incomplete gamma by its power series.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut k = 0.0;
    while term > sum * 1e-17 {
        k += 1.0;
        term *= x / (a + k);
        sum += term;
    }
    (a * x.ln() - x).exp() * sum / gamma_half_integer(a)
}

pub fn chisq_cdf(x: f64, df: f64) -> f64 {
    gamma_p(df / 2.0, x / 2.0)
}

pub fn bisect(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn normal_quantile(p: f64) -> f64 {
    bisect(normal_cdf, p, -12.0, 12.0)
}

pub fn chisq_quantile(p: f64, df: f64) -> f64 {
    bisect(|x| chisq_cdf(x, df), p, 0.0, 20.0 * df + 200.0)
}

/// Spearman rank correlation without tie handling.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        for (rank, i) in idx.into_iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}
