//! Small statistics helpers shared by the Monte-Carlo checks.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Kahan-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Mean, unbiased variance and standard error of a sample.
#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
}

pub fn summarize(xs: &[f64]) -> Summary {
    let count = xs.len();
    if count == 0 {
        return Summary { count, mean: f64::NAN, variance: f64::NAN, std_error: f64::NAN };
    }
    let mut s = KahanSum::default();
    xs.iter().for_each(|&x| s.add(x));
    let mean = s.value() / count as f64;
    let mut ss = KahanSum::default();
    xs.iter().for_each(|&x| ss.add((x - mean) * (x - mean)));
    let variance = if count > 1 { ss.value() / (count - 1) as f64 } else { 0.0 };
    Summary { count, mean, variance, std_error: (variance / count as f64).sqrt() }
}

/// Standard error of the sample variance, estimated from the fourth
/// central moment.
pub fn variance_std_error(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let s = summarize(xs);
    let m4 = xs.iter().map(|x| (x - s.mean).powi(4)).sum::<f64>() / n;
    ((m4 - s.variance * s.variance * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt()
}

/// Linear-interpolated empirical quantile, `q ∈ [0, 1]`.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Pearson chi-square p-value for observed counts against expected counts.
/// Cells with tiny expectation are pooled into their neighbour.
pub fn chi_square_p_value(observed: &[f64], expected: &[f64]) -> f64 {
    let mut obs = Vec::new();
    let mut exp = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (&o, &e) in observed.iter().zip(expected) {
        o_acc += o;
        e_acc += e;
        if e_acc >= 5.0 {
            obs.push(o_acc);
            exp.push(e_acc);
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 || o_acc > 0.0 {
        if let (Some(lo), Some(le)) = (obs.last_mut(), exp.last_mut()) {
            *lo += o_acc;
            *le += e_acc;
        } else {
            obs.push(o_acc);
            exp.push(e_acc);
        }
    }
    if obs.len() < 2 {
        return 1.0;
    }
    let stat: f64 = obs.iter().zip(&exp).map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dist = ChiSquared::new((obs.len() - 1) as f64).expect("positive degrees of freedom");
    1.0 - dist.cdf(stat)
}

/// Two-sample Kolmogorov-Smirnov p-value (asymptotic).
pub fn ks_two_sample_p_value(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal, stream};

    #[test]
    fn kahan_beats_naive_on_cancellation() {
        let mut k = KahanSum::default();
        k.add(1.0);
        for _ in 0..1_000_000 {
            k.add(1e-16);
        }
        assert!((k.value() - (1.0 + 1e-10)).abs() < 1e-15);
    }

    #[test]
    fn summary_of_known_sample() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.variance - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
    }

    #[test]
    fn chi_square_accepts_fair_and_rejects_biased() {
        let fair = chi_square_p_value(&[98.0, 102.0, 100.0, 100.0], &[100.0; 4]);
        assert!(fair > 0.9);
        let biased = chi_square_p_value(&[150.0, 50.0, 100.0, 100.0], &[100.0; 4]);
        assert!(biased < 1e-6);
    }

    #[test]
    fn ks_same_vs_shifted() {
        let mut r = stream(5, "ks", 0);
        let a: Vec<f64> = (0..2000).map(|_| standard_normal(&mut r)).collect();
        let b: Vec<f64> = (0..2000).map(|_| standard_normal(&mut r)).collect();
        let c: Vec<f64> = b.iter().map(|x| x + 0.5).collect();
        assert!(ks_two_sample_p_value(&a, &b) > 0.001);
        assert!(ks_two_sample_p_value(&a, &c) < 1e-6);
    }
}
