//! Spiked tensors `β·z^{⊗k} + G` in the set-indexed model, noise splitting,
//! and the Kikuchi distinguisher for tensor PCA.
//!
//! `beta` doubles as the signal-to-noise ratio; there is no separate λ.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::combinat::{binomial_u64, BinomialTable};
use crate::error::{invalid, Error, Result};
use crate::guiding::{guiding_vector, GuidingVector};
use crate::kikuchi::{lift_real, operator_from_dense, tensor_regular_degree, KikuchiOperator};
use crate::rng::{rademacher, standard_normal, stream};
use crate::spectral::{decision_max_iter, lambda_max, verdict_for, DecisionResult};
use crate::stats::{summarize, Summary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpikePrior {
    /// Uniform ±1 entries, so `‖z‖² = n` exactly.
    Boolean,
    /// Raw i.i.d. `N(0,1)` entries, not renormalized.
    Gaussian,
}

impl fmt::Display for SpikePrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpikePrior::Boolean => "boolean",
            SpikePrior::Gaussian => "gaussian",
        })
    }
}

impl FromStr for SpikePrior {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "boolean" => Ok(SpikePrior::Boolean),
            "gaussian" => Ok(SpikePrior::Gaussian),
            other => invalid(format!("unknown spike prior '{other}'")),
        }
    }
}

/// Whether the additive Gaussian part is drawn. `Off` is a test hook for
/// the noiseless limit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Noise {
    Gaussian,
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpikedTensor {
    pub n: u32,
    pub k: u32,
    pub beta: f64,
    pub prior: SpikePrior,
    /// `None` when the tensor was read from a file.
    pub spike: Option<Vec<f64>>,
    /// `a_S` indexed by k-subset rank.
    pub coeffs: Vec<f64>,
}

fn validate_shape(n: u32, k: u32) -> Result<()> {
    if k == 0 || k % 2 != 0 {
        return invalid(format!("k must be even and positive, got {k}"));
    }
    if n < k {
        return invalid(format!("need n >= k, got n = {n}, k = {k}"));
    }
    Ok(())
}

fn draw_spike(n: u32, prior: SpikePrior, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, "tensor-spike", 0);
    (0..n)
        .map(|_| match prior {
            SpikePrior::Boolean => rademacher(&mut rng) as f64,
            SpikePrior::Gaussian => standard_normal(&mut rng),
        })
        .collect()
}

/// `β·z^S` for every k-subset `S`, in rank order.
pub fn spike_coefficients(z: &[f64], k: u32, beta: f64) -> Result<Vec<f64>> {
    let n = z.len() as u32;
    let total = binomial_u64(n as u64, k as i64)? as usize;
    let table = BinomialTable::new(n as usize);
    let mut s = Vec::new();
    Ok((0..total as u64)
        .map(|r| {
            table.unrank_into(r, n, k as usize, &mut s);
            beta * s.iter().map(|&i| z[i as usize - 1]).product::<f64>()
        })
        .collect())
}

pub fn sample_spiked_tensor(n: u32, k: u32, beta: f64, prior: SpikePrior, seed: u64) -> Result<SpikedTensor> {
    sample_spiked_tensor_with(n, k, beta, prior, Noise::Gaussian, seed)
}

pub fn sample_spiked_tensor_with(n: u32, k: u32, beta: f64, prior: SpikePrior, noise: Noise, seed: u64) -> Result<SpikedTensor> {
    validate_shape(n, k)?;
    if !(beta >= 0.0) || !beta.is_finite() {
        return invalid(format!("beta must be finite and nonnegative, got {beta}"));
    }
    let z = draw_spike(n, prior, seed);
    let mut coeffs = spike_coefficients(&z, k, beta)?;
    if noise == Noise::Gaussian {
        let mut rng = stream(seed, "tensor-noise", 0);
        for a in &mut coeffs {
            *a += standard_normal(&mut rng);
        }
    }
    Ok(SpikedTensor { n, k, beta, prior, spike: Some(z), coeffs })
}

impl SpikedTensor {
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn operator(&self, ell: u32) -> Result<KikuchiOperator<f64>> {
        operator_from_dense(self.n, self.k, ell, &self.coeffs)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("tensorpca n={} k={} beta={:?} prior={}\n", self.n, self.k, self.beta, self.prior);
        for (r, a) in self.coeffs.iter().enumerate() {
            out.push_str(&format!("{r} {a:?}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse { line, message };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| perr(1, "missing header".into()))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("tensorpca") {
            return Err(perr(1, "header must start with 'tensorpca'".into()));
        }
        let (mut n, mut k, mut beta, mut prior) = (None, None, None, None);
        for f in fields {
            let (key, value) = f.split_once('=').ok_or_else(|| perr(1, format!("bad header field '{f}'")))?;
            let bad = |_| perr(1, format!("bad value in '{f}'"));
            match key {
                "n" => n = Some(value.parse::<u32>().map_err(|e| bad(e.to_string()))?),
                "k" => k = Some(value.parse::<u32>().map_err(|e| bad(e.to_string()))?),
                "beta" => beta = Some(value.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                "prior" => prior = Some(value.parse::<SpikePrior>().map_err(|e| bad(e.to_string()))?),
                _ => return Err(perr(1, format!("unknown header key '{key}'"))),
            }
        }
        let missing = |name: &str| perr(1, format!("header lacks {name}"));
        let (n, k) = (n.ok_or_else(|| missing("n"))?, k.ok_or_else(|| missing("k"))?);
        let beta = beta.ok_or_else(|| missing("beta"))?;
        let prior = prior.ok_or_else(|| missing("prior"))?;
        validate_shape(n, k).map_err(|e| perr(1, e.to_string()))?;
        let total = binomial_u64(n as u64, k as i64)? as usize;
        let mut coeffs = Vec::with_capacity(total);
        for (i, line) in lines {
            let mut parts = line.split_whitespace();
            let rank: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| perr(i + 1, "expected a rank".into()))?;
            if rank != coeffs.len() {
                return Err(perr(i + 1, format!("rank {rank} out of order, expected {}", coeffs.len())));
            }
            let value: f64 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| perr(i + 1, "expected a value".into()))?;
            if parts.next().is_some() {
                return Err(perr(i + 1, "trailing fields".into()));
            }
            coeffs.push(value);
        }
        if coeffs.len() != total {
            return Err(perr(0, format!("expected {total} coefficients, found {}", coeffs.len())));
        }
        Ok(SpikedTensor { n, k, beta, prior, spike: None, coeffs })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorSplit {
    /// `T + ζH`.
    pub plus: SpikedTensor,
    /// `T − H/ζ`.
    pub minus: SpikedTensor,
    pub zeta: f64,
    /// `β/√(1+ζ²)`.
    pub snr_plus: f64,
    /// `β/√(1+ζ⁻²)`.
    pub snr_minus: f64,
}

pub fn default_split_zeta(n: u32) -> f64 {
    1.0 / (n as f64).ln()
}

pub fn split_snrs(beta: f64, zeta: f64) -> (f64, f64) {
    (beta / (1.0 + zeta * zeta).sqrt(), beta / (1.0 + 1.0 / (zeta * zeta)).sqrt())
}

/// Splits `T` into two tensors with independent noise by adding fresh
/// noise `H` with opposite-signed weights.
pub fn split_tensor(tensor: &SpikedTensor, zeta: f64, seed: u64) -> Result<TensorSplit> {
    if zeta == 0.0 || !zeta.is_finite() {
        return invalid(format!("zeta must be finite and nonzero, got {zeta}"));
    }
    let mut rng = stream(seed, "tensor-split", 0);
    let h: Vec<f64> = (0..tensor.len()).map(|_| standard_normal(&mut rng)).collect();
    let mut plus = tensor.clone();
    let mut minus = tensor.clone();
    for ((p, m), hs) in plus.coeffs.iter_mut().zip(minus.coeffs.iter_mut()).zip(&h) {
        *p += zeta * hs;
        *m -= hs / zeta;
    }
    let (snr_plus, snr_minus) = split_snrs(tensor.beta, zeta);
    Ok(TensorSplit { plus, minus, zeta, snr_plus, snr_minus })
}

pub fn tensor_guiding_vector(tensor: &SpikedTensor, ell: u32) -> Result<GuidingVector> {
    guiding_vector(&tensor.coeffs, tensor.n, tensor.k, ell)
}

/// `√d_ℓ·√(2(1+ε)·ℓ·ln n)`: the noise-only spectral-norm bound.
pub fn noise_threshold(n: u32, k: u32, ell: u32, epsilon: f64) -> Result<f64> {
    let d = tensor_regular_degree(n, ell, k)? as f64;
    Ok(d.sqrt() * (2.0 * (1.0 + epsilon) * ell as f64 * (n as f64).ln()).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum TensorThreshold {
    /// `(1 − γ/2)·β·d_ℓ`.
    SignalFraction { gamma: f64 },
    /// The noise-only bound with slack `ε`.
    NoiseBound { epsilon: f64 },
    Absolute { threshold: f64 },
}

impl TensorThreshold {
    pub fn resolve(&self, n: u32, k: u32, ell: u32, beta: f64) -> Result<f64> {
        match *self {
            TensorThreshold::SignalFraction { gamma } => {
                if !(0.0..=2.0).contains(&gamma) {
                    return invalid(format!("gamma must lie in [0, 2], got {gamma}"));
                }
                Ok((1.0 - gamma / 2.0) * beta * tensor_regular_degree(n, ell, k)? as f64)
            }
            TensorThreshold::NoiseBound { epsilon } => {
                if !(epsilon >= 0.0) {
                    return invalid(format!("epsilon must be nonnegative, got {epsilon}"));
                }
                noise_threshold(n, k, ell, epsilon)
            }
            TensorThreshold::Absolute { threshold } => Ok(threshold),
        }
    }
}

pub fn tensor_decide(tensor: &SpikedTensor, ell: u32, threshold: &TensorThreshold, tol: f64, seed: u64) -> Result<DecisionResult> {
    let th = threshold.resolve(tensor.n, tensor.k, ell, tensor.beta)?;
    let op = tensor.operator(ell)?;
    let report = lambda_max(&op, tol, decision_max_iter(op.dimension()), seed)?;
    Ok(DecisionResult {
        verdict: verdict_for(report.lambda_max, th),
        lambda_estimate: report.lambda_max,
        threshold_used: th,
        expected_degree: tensor_regular_degree(tensor.n, ell, tensor.k)? as f64,
        dimension: op.dimension(),
        iterations: report.iterations,
        method: report.method,
        calibrated: false,
    })
}

/// Rayleigh quotient of the lifted spike: `⟨z^{⊙ℓ}|K|z^{⊙ℓ}⟩/⟨z^{⊙ℓ}|z^{⊙ℓ}⟩`.
pub fn spike_rayleigh_quotient(tensor: &SpikedTensor, ell: u32) -> Result<f64> {
    let z = tensor.spike.as_ref().ok_or_else(|| Error::Validation("tensor has no recorded spike".into()))?;
    let lift = lift_real(z, ell)?;
    let norm_sq: f64 = lift.iter().map(|x| x * x).sum();
    if norm_sq == 0.0 {
        return invalid("lifted spike is zero");
    }
    Ok(tensor.operator(ell)?.quadratic_form(&lift)? / norm_sq)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCheckConfig {
    pub n: u32,
    pub k: u32,
    pub ell: u32,
    pub beta: f64,
    pub prior: SpikePrior,
    pub noise: Noise,
    pub trials: usize,
    pub seed: u64,
    /// Required upper bound on `Var/E²`.
    pub ratio_bound: f64,
}

impl QuadraticCheckConfig {
    pub fn new(n: u32, k: u32, ell: u32, beta: f64, trials: usize, seed: u64) -> Self {
        QuadraticCheckConfig { n, k, ell, beta, prior: SpikePrior::Gaussian, noise: Noise::Gaussian, trials, seed, ratio_bound: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuadraticCheckReport {
    pub config: QuadraticCheckConfig,
    /// `ℓ² < n`, a finite-size stand-in for `ℓ = o(√n)`.
    pub small_ell_regime: bool,
    /// `C(n,k)·β²/n`.
    pub signal_strength: f64,
    pub predicted_mean: f64,
    pub summary: Summary,
    pub mean_z_score: f64,
    pub variance_ratio: f64,
    pub passed: bool,
}

/// Concentration of the spike Rayleigh quotient over fresh tensors.
pub fn gaussian_spike_quadratic_check(config: &QuadraticCheckConfig) -> Result<QuadraticCheckReport> {
    let c = config;
    if c.trials < 2 {
        return invalid("need at least two trials");
    }
    let values: Vec<f64> = (0..c.trials)
        .map(|t| {
            let seed = crate::rng::derive_seed(c.seed, "quadratic-check", t as u64);
            let tensor = sample_spiked_tensor_with(c.n, c.k, c.beta, c.prior, c.noise, seed)?;
            spike_rayleigh_quotient(&tensor, c.ell)
        })
        .collect::<Result<_>>()?;
    let summary = summarize(&values);
    let predicted_mean = c.beta * tensor_regular_degree(c.n, c.ell, c.k)? as f64;
    let variance_ratio = summary.variance / (summary.mean * summary.mean);
    let mean_z_score = if summary.std_error > 0.0 { (summary.mean - predicted_mean) / summary.std_error } else { 0.0 };
    Ok(QuadraticCheckReport {
        config: c.clone(),
        small_ell_regime: (c.ell as u64).pow(2) < c.n as u64,
        signal_strength: binomial_u64(c.n as u64, c.k as i64)? as f64 * c.beta * c.beta / c.n as f64,
        predicted_mean,
        summary,
        mean_z_score,
        variance_ratio,
        passed: variance_ratio.is_finite() && variance_ratio <= c.ratio_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kikuchi::lift_real;
    use crate::spectral::Verdict;
    use proptest::prelude::*;

    #[test]
    fn pure_noise_moments() {
        let mut all = Vec::new();
        for s in 0..20 {
            all.extend(sample_spiked_tensor(10, 4, 0.0, SpikePrior::Boolean, s).unwrap().coeffs);
        }
        let sm = summarize(&all);
        assert!(sm.mean.abs() < 4.0 * sm.std_error);
        let var_se = (2.0 / all.len() as f64).sqrt();
        assert!((sm.variance - 1.0).abs() < 4.0 * var_se, "{sm:?}");
    }

    #[test]
    fn signed_coefficients_center_on_beta() {
        let t = sample_spiked_tensor(12, 4, 0.7, SpikePrior::Boolean, 3).unwrap();
        let signs = spike_coefficients(t.spike.as_ref().unwrap(), 4, 1.0).unwrap();
        let aligned: Vec<f64> = t.coeffs.iter().zip(&signs).map(|(a, s)| a * s).collect();
        let sm = summarize(&aligned);
        assert!((sm.mean - 0.7).abs() < 4.0 * sm.std_error, "{sm:?}");
        assert!((sm.variance - 1.0).abs() < 0.15);
    }

    #[test]
    fn noiseless_hook_is_exact_spike() {
        let t = sample_spiked_tensor_with(8, 2, 1.5, SpikePrior::Boolean, Noise::Off, 9).unwrap();
        let z = t.spike.clone().unwrap();
        assert_eq!(z.iter().map(|x| x * x).sum::<f64>(), 8.0);
        assert_eq!(t.coeffs, spike_coefficients(&z, 2, 1.5).unwrap());
    }

    #[test]
    fn noiseless_rayleigh_quotient_is_beta_d() {
        for seed in 0..5 {
            let t = sample_spiked_tensor_with(10, 4, 2.0, SpikePrior::Boolean, Noise::Off, seed).unwrap();
            let q = spike_rayleigh_quotient(&t, 3).unwrap();
            assert_eq!(q, 2.0 * 63.0);
            let d = tensor_decide(&t, 3, &TensorThreshold::SignalFraction { gamma: 0.5 }, 1e-9, seed).unwrap();
            assert_eq!(d.verdict, Verdict::Planted);
        }
    }

    #[test]
    fn regular_rows() {
        let t = sample_spiked_tensor(6, 4, 1.0, SpikePrior::Boolean, 1).unwrap();
        let op = t.operator(3).unwrap();
        for r in 0..op.dimension() as u64 {
            assert_eq!(op.row_nonzeros(r).unwrap().len(), 9);
        }
    }

    #[test]
    fn decomposition_is_linear() {
        let t = sample_spiked_tensor(8, 2, 1.3, SpikePrior::Boolean, 4).unwrap();
        let signal = spike_coefficients(t.spike.as_ref().unwrap(), 2, 1.3).unwrap();
        let noise: Vec<f64> = t.coeffs.iter().zip(&signal).map(|(a, s)| a - s).collect();
        let v = lift_real(&(0..8).map(|i| (i as f64).sin()).collect::<Vec<_>>(), 3).unwrap();
        let whole = t.operator(3).unwrap().matvec(&v).unwrap();
        let a = operator_from_dense(8, 2, 3, &signal).unwrap().matvec(&v).unwrap();
        let b = operator_from_dense(8, 2, 3, &noise).unwrap().matvec(&v).unwrap();
        for i in 0..v.len() {
            assert!((whole[i] - a[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn split_formulas() {
        let t = sample_spiked_tensor(10, 2, 2.0, SpikePrior::Boolean, 5).unwrap();
        let s = split_tensor(&t, 1.0, 6).unwrap();
        assert_eq!(s.snr_plus, 2.0 / 2f64.sqrt());
        assert_eq!(s.snr_minus, s.snr_plus);
        let z = 0.37;
        let s = split_tensor(&t, z, 7).unwrap();
        for i in 0..t.len() {
            let back = (s.plus.coeffs[i] + z * z * s.minus.coeffs[i]) / (1.0 + z * z);
            assert!((back - t.coeffs[i]).abs() < 1e-12);
            let lhs = s.plus.coeffs[i] - t.coeffs[i];
            let rhs = -z * z * (s.minus.coeffs[i] - t.coeffs[i]);
            assert!((lhs - rhs).abs() < 1e-12);
        }
        assert!(split_tensor(&t, 0.0, 1).is_err());
    }

    #[test]
    fn guiding_at_level_k_is_scaled_tensor() {
        let t = sample_spiked_tensor(7, 2, 1.0, SpikePrior::Gaussian, 2).unwrap();
        let g = tensor_guiding_vector(&t, 2).unwrap();
        let scale = (21f64).sqrt();
        for (a, b) in g.coords.iter().zip(&t.coeffs) {
            assert!((a - b / scale).abs() < 1e-12);
        }
    }

    #[test]
    fn pure_noise_is_rejected_under_noise_bound() {
        let th = TensorThreshold::NoiseBound { epsilon: 0.1 };
        let mut random = 0;
        for s in 0..20 {
            let t = sample_spiked_tensor(10, 4, 0.0, SpikePrior::Boolean, 100 + s).unwrap();
            if tensor_decide(&t, 3, &th, 1e-8, s).unwrap().verdict == Verdict::Random {
                random += 1;
            }
        }
        assert!(random >= 19);
    }

    #[test]
    fn file_round_trip_and_errors() {
        let t = sample_spiked_tensor(7, 2, 0.123456789, SpikePrior::Gaussian, 8).unwrap();
        let back = SpikedTensor::parse(&t.to_text()).unwrap();
        assert_eq!(back.coeffs, t.coeffs);
        assert_eq!(back.beta, t.beta);
        assert_eq!(back.prior, t.prior);
        assert!(back.spike.is_none());
        assert!(SpikedTensor::parse("tensorpca n=4 k=2 beta=1 prior=boolean\n0 1\n").is_err());
        assert!(SpikedTensor::parse("tensor n=4 k=2 beta=1 prior=boolean\n").is_err());
        assert!(SpikedTensor::parse("tensorpca n=4 k=2 beta=1 prior=laplace\n").is_err());
        assert!(sample_spiked_tensor(5, 3, 1.0, SpikePrior::Boolean, 0).is_err());
    }

    #[test]
    fn quadratic_check_mean_and_concentration() {
        let cfg = QuadraticCheckConfig::new(40, 2, 2, 1.0, 300, 11);
        let r = gaussian_spike_quadratic_check(&cfg).unwrap();
        assert!(r.small_ell_regime);
        assert!(r.passed, "{r:?}");
        // Gaussian spikes are not normalized, so allow a relative bias.
        assert!((r.summary.mean - r.predicted_mean).abs() < 0.1 * r.predicted_mean, "{r:?}");
        let mut ctl = cfg.clone();
        ctl.prior = SpikePrior::Boolean;
        let r = gaussian_spike_quadratic_check(&ctl).unwrap();
        assert!(r.mean_z_score.abs() < 4.0, "{r:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn text_round_trip(seed in any::<u64>(), beta in 0.0f64..5.0) {
            let t = sample_spiked_tensor(6, 2, beta, SpikePrior::Gaussian, seed).unwrap();
            let back = SpikedTensor::parse(&t.to_text()).unwrap();
            prop_assert_eq!(back.coeffs, t.coeffs);
            prop_assert_eq!(back.beta, t.beta);
        }
    }
}
