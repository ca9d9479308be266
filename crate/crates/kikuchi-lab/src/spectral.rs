//! Top-eigenvalue estimation, dense spectra, cutoff projections and the
//! classical spectral distinguisher.

use faer::{Mat, Side};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::combinat::binomial_u64;
use crate::error::{invalid, Error, Result};
use crate::instances::{sample_random_instance, KXorInstance};
use crate::kikuchi::{delta_f64, operator_from_instance, CsrMatrix, KikuchiOperator, Weight};
use crate::rng::{derive_seed, standard_normal, stream};
use crate::stats::quantile;

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DENSE_CAP: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralMethod {
    Power,
    Dense,
    /// The operator has no nonzero entry.
    Trivial,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpectralReport {
    pub lambda_max: f64,
    pub iterations: usize,
    pub residual: f64,
    pub method: SpectralMethod,
}

/// Default iteration budget `10·√N + 500`.
pub fn default_max_iter(dimension: usize) -> usize {
    (10.0 * (dimension as f64).sqrt()).ceil() as usize + 500
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Power iteration on `A + shift·I` for a CSR matrix, reporting the
/// Rayleigh quotient of `A`.
///
/// Converged when the relative Rayleigh-quotient change is below `tol` and
/// `‖Av − λv‖ ≤ √tol·max(1, |λ|)`.
pub fn power_method(csr: &CsrMatrix, shift: f64, tol: f64, max_iter: usize, seed: u64) -> Result<SpectralReport> {
    let n = csr.dimension;
    if n == 0 {
        return invalid("empty operator");
    }
    let mut rng = stream(seed, "power-start", 0);
    let mut v: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
    normalize(&mut v);
    let mut av = vec![0.0; n];
    let mut prev = f64::NAN;
    let mut best = (f64::NAN, f64::INFINITY);
    for it in 1..=max_iter {
        csr.matvec_into(&v, &mut av);
        let lambda: f64 = v.iter().zip(&av).map(|(a, b)| a * b).sum();
        let residual = av.iter().zip(&v).map(|(a, x)| (a - lambda * x).powi(2)).sum::<f64>().sqrt();
        best = (lambda, residual);
        let rel = (lambda - prev).abs() / lambda.abs().max(1e-300);
        if rel < tol && residual <= tol.sqrt() * lambda.abs().max(1.0) {
            return Ok(SpectralReport { lambda_max: lambda, iterations: it, residual, method: SpectralMethod::Power });
        }
        prev = lambda;
        for (x, a) in v.iter_mut().zip(&av) {
            *x = a + shift * *x;
        }
        if normalize(&mut v) == 0.0 {
            // (A + shift) v = 0: v is an eigenvector with eigenvalue -shift.
            return Ok(SpectralReport { lambda_max: lambda, iterations: it, residual, method: SpectralMethod::Power });
        }
    }
    Err(Error::NonConvergence { estimate: best.0, residual: best.1, iterations: max_iter })
}

/// Largest algebraic eigenvalue of the operator.
///
/// Runs the shifted power method; on non-convergence falls back to the dense
/// solver when `N ≤ 4096`, otherwise returns the convergence error.
pub fn lambda_max<W: Weight>(op: &KikuchiOperator<W>, tol: f64, max_iter: usize, seed: u64) -> Result<SpectralReport> {
    let csr = op.to_csr();
    lambda_max_csr(&csr, tol, max_iter, seed)
}

pub fn lambda_max_csr(csr: &CsrMatrix, tol: f64, max_iter: usize, seed: u64) -> Result<SpectralReport> {
    if csr.values.is_empty() {
        return Ok(SpectralReport { lambda_max: 0.0, iterations: 0, residual: 0.0, method: SpectralMethod::Trivial });
    }
    let shift = csr.max_abs_row_sum();
    match power_method(csr, shift, tol, max_iter, seed) {
        Ok(r) => Ok(r),
        Err(e @ Error::NonConvergence { .. }) => {
            if csr.dimension <= DENSE_CAP {
                let spectrum = dense_spectrum(&csr_to_dense(csr))?;
                Ok(SpectralReport {
                    lambda_max: spectrum.values[0],
                    iterations: max_iter,
                    residual: 0.0,
                    method: SpectralMethod::Dense,
                })
            } else {
                Err(e)
            }
        }
        Err(e) => Err(e),
    }
}

fn csr_to_dense(csr: &CsrMatrix) -> Mat<f64> {
    let mut m = Mat::zeros(csr.dimension, csr.dimension);
    for r in 0..csr.dimension {
        for idx in csr.row_ptr[r]..csr.row_ptr[r + 1] {
            m[(r, csr.cols[idx] as usize)] = csr.values[idx];
        }
    }
    m
}

/// Full spectrum with eigenvalues in descending order; column `i` of
/// `vectors` is the unit eigenvector for `values[i]`.
#[derive(Clone, Debug)]
pub struct DenseSpectrum {
    pub values: Vec<f64>,
    pub vectors: Mat<f64>,
}

impl DenseSpectrum {
    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, i: usize) -> Vec<f64> {
        self.vectors.col(i).iter().copied().collect()
    }

    /// Squared overlaps `|⟨v_i|x⟩|²/‖x‖²` for every eigenvector.
    pub fn squared_overlaps(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dimension() {
            return invalid(format!("vector length {} != dimension {}", x.len(), self.dimension()));
        }
        let norm2: f64 = x.iter().map(|v| v * v).sum();
        if norm2 == 0.0 {
            return invalid("zero vector");
        }
        Ok((0..self.dimension())
            .map(|i| {
                let c: f64 = self.vectors.col(i).iter().zip(x).map(|(a, b)| a * b).sum();
                c * c / norm2
            })
            .collect())
    }

    /// `‖Π_{≥λ_th} x‖² / ‖x‖²`.
    pub fn cutoff_overlap(&self, x: &[f64], lambda_th: f64) -> Result<f64> {
        let sq = self.squared_overlaps(x)?;
        Ok(sq.iter().zip(&self.values).filter(|(_, &l)| l >= lambda_th).map(|(s, _)| s).sum::<f64>().min(1.0))
    }

    /// Largest entry of `|V Λ Vᵀ − A|`.
    pub fn reconstruction_error(&self, matrix: &Mat<f64>) -> f64 {
        let n = self.dimension();
        let scaled = Mat::from_fn(n, n, |r, c| self.vectors[(r, c)] * self.values[c]);
        let rec = &scaled * self.vectors.transpose();
        let mut err = 0.0f64;
        for c in 0..n {
            for r in 0..n {
                err = err.max((rec[(r, c)] - matrix[(r, c)]).abs());
            }
        }
        err
    }
}

fn dense_spectrum(matrix: &Mat<f64>) -> Result<DenseSpectrum> {
    let n = matrix.nrows();
    if n > DENSE_CAP {
        return Err(Error::Capacity(format!("dense solver limited to N <= {DENSE_CAP}, got {n}")));
    }
    let eig = matrix
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Validation(format!("dense eigensolver failed: {e:?}")))?;
    let s = eig.S().column_vector();
    // Ascending from the solver; reverse for descending order.
    let values = (0..n).rev().map(|i| s[i]).collect();
    let u = eig.U();
    let vectors = Mat::from_fn(n, n, |r, c| u[(r, n - 1 - c)]);
    Ok(DenseSpectrum { values, vectors })
}

/// Dense symmetric eigendecomposition, `N ≤ 4096`.
pub fn dense_eigendecomposition<W: Weight>(op: &KikuchiOperator<W>) -> Result<DenseSpectrum> {
    if op.dimension() > DENSE_CAP {
        return Err(Error::Capacity(format!("dense solver limited to N <= {DENSE_CAP}, got {}", op.dimension())));
    }
    dense_spectrum(&dense_matrix(op))
}

pub fn dense_matrix<W: Weight>(op: &KikuchiOperator<W>) -> Mat<f64> {
    csr_to_dense(&op.to_csr())
}

/// Spectrum of an explicit symmetric matrix given row-major.
pub fn dense_spectrum_of(rows: &[Vec<f64>]) -> Result<DenseSpectrum> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return invalid("matrix must be square");
    }
    dense_spectrum(&Mat::from_fn(n, n, |r, c| rows[r][c]))
}

/// `‖Π_≥ v‖²/‖v‖²` where `Π_≥` projects onto eigenvalues `≥ lambda_th`.
pub fn cutoff_projector_overlap<W: Weight>(op: &KikuchiOperator<W>, v: &[f64], lambda_th: f64) -> Result<f64> {
    dense_eigendecomposition(op)?.cutoff_overlap(v, lambda_th)
}

/// Constants of the random-instance eigenvalue bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomBound {
    pub kappa: f64,
    pub epsilon: f64,
    pub k: u32,
    /// Multiply the prefactor by `ln n`.
    pub includes_log: bool,
}

impl RandomBound {
    pub fn validate(&self) -> Result<()> {
        let (kappa, eps) = (self.kappa, self.epsilon);
        if !(kappa > 0.0 && kappa <= 1.0) {
            return invalid(format!("kappa must lie in (0, 1], got {kappa}"));
        }
        if !(eps > 0.0 && eps <= kappa / (2.0 + kappa)) {
            return invalid(format!("epsilon must lie in (0, kappa/(2+kappa)], got {eps}"));
        }
        if self.k == 0 || self.k % 2 != 0 {
            return invalid(format!("k = {} must be a positive even number", self.k));
        }
        Ok(())
    }

    /// `2(1+ε)(1+κ)/κ² · C(k,k/2)^{-1}`, times `ln n` when `includes_log`.
    pub fn constant(&self, n: u32) -> Result<f64> {
        self.validate()?;
        let central = binomial_u64(self.k as u64, (self.k / 2) as i64)? as f64;
        let base = 2.0 * (1.0 + self.epsilon) * (1.0 + self.kappa) / (self.kappa * self.kappa) / central;
        Ok(if self.includes_log { base * (n as f64).ln() } else { base })
    }
}

/// Prefactor without the logarithm.
pub fn random_bound_constant(kappa: f64, epsilon: f64, k: u32) -> Result<f64> {
    RandomBound { kappa, epsilon, k, includes_log: false }.constant(0)
}

/// `Δ ≥ C_κ·(n/ℓ)^{(k−2)/2}` with `C_κ = random_bound_constant·ln n`, floored at
/// `C(k,k/2)^{-1}/ℓ` (the Kikuchi graph needs degree at least one).
pub fn random_bound_min_density(kappa: f64, epsilon: f64, k: u32, n: u32, ell: u32) -> Result<f64> {
    if ell == 0 || n < 2 {
        return invalid("need ell >= 1 and n >= 2");
    }
    let c = RandomBound { kappa, epsilon, k, includes_log: true }.constant(n)?;
    let floor = 1.0 / (ell as f64 * binomial_u64(k as u64, (k / 2) as i64)? as f64);
    Ok(c.max(floor) * (n as f64 / ell as f64).powf((k as f64 - 2.0) / 2.0))
}

/// How the decision threshold is derived from the expected degree `d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum CutoffSpec {
    Absolute { threshold: f64 },
    KappaTimesD { kappa: f64 },
    OneMinusGammaRhoD { gamma: f64, rho: f64 },
    /// Empirical threshold from a random-instance calibration run.
    Calibrated { threshold: f64, seed: u64, quantile: f64 },
}

impl CutoffSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CutoffSpec::Absolute { threshold } | CutoffSpec::Calibrated { threshold, .. } if !threshold.is_finite() => {
                invalid("threshold must be finite")
            }
            CutoffSpec::KappaTimesD { kappa } if !(kappa > 0.0 && kappa <= 1.0) => invalid("kappa must lie in (0, 1]"),
            CutoffSpec::OneMinusGammaRhoD { gamma, rho } if !(gamma > 0.0 && gamma < 1.0 && (0.0..=1.0).contains(&rho)) => {
                invalid("need gamma in (0,1) and rho in [0,1]")
            }
            _ => Ok(()),
        }
    }

    pub fn resolve(&self, d: f64) -> f64 {
        match *self {
            CutoffSpec::Absolute { threshold } | CutoffSpec::Calibrated { threshold, .. } => threshold,
            CutoffSpec::KappaTimesD { kappa } => kappa * d,
            CutoffSpec::OneMinusGammaRhoD { gamma, rho } => (1.0 - gamma) * rho * d,
        }
    }

    pub fn is_calibrated(&self) -> bool {
        matches!(self, CutoffSpec::Calibrated { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Planted,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecisionResult {
    pub verdict: Verdict,
    pub lambda_estimate: f64,
    pub threshold_used: f64,
    /// `d = δ·|𝓘|`.
    pub expected_degree: f64,
    pub dimension: usize,
    pub iterations: usize,
    pub method: SpectralMethod,
    pub calibrated: bool,
}

/// Iteration budget used by the distinguisher: far above the default so
/// that clustered random spectra still converge by the power method.
pub fn decision_max_iter(dimension: usize) -> usize {
    default_max_iter(dimension).max(20 * dimension)
}

/// `Planted` iff `lambda >= threshold`.
pub fn verdict_for(lambda: f64, threshold: f64) -> Verdict {
    if lambda >= threshold {
        Verdict::Planted
    } else {
        Verdict::Random
    }
}

/// Builds the level-ℓ operator, estimates its top eigenvalue and compares
/// it with the resolved threshold. Ties go to `Planted`; an instance with no
/// constraints carries no evidence and is always `Random`.
pub fn classical_decide(instance: &KXorInstance, ell: u32, cutoff: &CutoffSpec, tol: f64, seed: u64) -> Result<DecisionResult> {
    cutoff.validate()?;
    let op = operator_from_instance(instance, ell)?;
    let d = delta_f64(ell, instance.n(), instance.k())? * instance.len() as f64;
    let threshold = cutoff.resolve(d);
    let report = lambda_max(&op, tol, decision_max_iter(op.dimension()), seed)?;
    Ok(DecisionResult {
        verdict: if instance.is_empty() { Verdict::Random } else { verdict_for(report.lambda_max, threshold) },
        lambda_estimate: report.lambda_max,
        threshold_used: threshold,
        expected_degree: d,
        dimension: op.dimension(),
        iterations: report.iterations,
        method: report.method,
        calibrated: cutoff.is_calibrated(),
    })
}

/// Top-eigenvalue samples over random instances.
pub fn random_lambda_samples(n: u32, k: u32, ell: u32, m: f64, trials: usize, seed: u64) -> Result<Vec<f64>> {
    (0..trials)
        .map(|t| {
            let inst = sample_random_instance(n, k, m, true, derive_seed(seed, "calibration-instance", t as u64))?;
            let op = operator_from_instance(&inst, ell)?;
            Ok(lambda_max(&op, DEFAULT_TOLERANCE, decision_max_iter(op.dimension()), derive_seed(seed, "calibration-power", t as u64))?
                .lambda_max)
        })
        .collect()
}

/// An empirical threshold: the `quantile` of the random-instance top
/// eigenvalue at constraint count `m`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Calibration {
    pub m: f64,
    pub threshold: f64,
    pub quantile: f64,
    pub seed: u64,
    pub trials: usize,
    pub samples_max: f64,
    pub samples_mean: f64,
}

impl Calibration {
    pub fn cutoff(&self) -> CutoffSpec {
        CutoffSpec::Calibrated { threshold: self.threshold, seed: self.seed, quantile: self.quantile }
    }
}

pub fn calibrate_threshold(n: u32, k: u32, ell: u32, m: f64, trials: usize, q: f64, seed: u64) -> Result<Calibration> {
    if trials == 0 || !(0.0..=1.0).contains(&q) {
        return invalid("calibration needs trials >= 1 and quantile in [0, 1]");
    }
    let samples = random_lambda_samples(n, k, ell, m, trials, seed)?;
    Ok(Calibration {
        m,
        threshold: quantile(&samples, q),
        quantile: q,
        seed,
        trials,
        samples_max: samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        samples_mean: samples.iter().sum::<f64>() / trials as f64,
    })
}

/// Picks the smallest `m` on `grid` whose calibrated threshold sits below
/// the planted lower bound `(1 − gap)·ρ·δ·m`.
pub fn calibrate_constraint_count(
    n: u32,
    k: u32,
    ell: u32,
    rho: f64,
    gap_gamma: f64,
    grid: &[f64],
    trials: usize,
    q: f64,
    seed: u64,
) -> Result<Calibration> {
    let delta = delta_f64(ell, n, k)?;
    let mut last = None;
    for &m in grid {
        let cal = calibrate_threshold(n, k, ell, m, trials, q, seed)?;
        let planted_floor = (1.0 - gap_gamma) * rho * delta * m;
        if cal.threshold < planted_floor {
            return Ok(cal);
        }
        last = Some(cal);
    }
    last.ok_or_else(|| Error::Validation("empty calibration grid".into()))
}

/// A uniformly random unit vector (used as a guide-free baseline).
pub fn random_unit_vector(dimension: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, "unit-vector", 0);
    let mut v: Vec<f64> = (0..dimension).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
    normalize(&mut v);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{sample_planted_instance, Assignment, PlantedParams};
    use crate::kikuchi::{build_operator, lift_assignment};
    use proptest::prelude::*;

    #[test]
    fn single_edge_has_top_eigenvalue_one() {
        // n=2, k=2, ℓ=1: the two singletons are matched by {1,2}.
        let op = build_operator(vec![(vec![1, 2], 1i64, 1)], 2, 2, 1).unwrap();
        let r = lambda_max(&op, 1e-10, 1000, 1).unwrap();
        assert!((r.lambda_max - 1.0).abs() < 1e-9);
        let spectrum = dense_eigendecomposition(&op).unwrap();
        assert!((spectrum.values[0] - 1.0).abs() < 1e-12 && (spectrum.values[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_operator() {
        let op = build_operator(Vec::<(Vec<u32>, i64, u32)>::new(), 6, 2, 2).unwrap();
        let r = lambda_max(&op, 1e-8, 100, 0).unwrap();
        assert_eq!((r.lambda_max, r.method), (0.0, SpectralMethod::Trivial));
        assert!(dense_eigendecomposition(&op).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_three_by_three() {
        // n=3, k=2, ℓ=1: K = [[0,a,b],[a,0,c],[b,c,0]] with a=w{1,2}, b=w{1,3}, c=w{2,3}.
        let op = build_operator(vec![(vec![1, 2], 1i64, 1), (vec![1, 3], 1, 1), (vec![2, 3], 1, 1)], 3, 2, 1).unwrap();
        // Characteristic polynomial λ³ − 3λ − 2 = (λ−2)(λ+1)².
        let vals = dense_eigendecomposition(&op).unwrap().values;
        for (v, e) in vals.iter().zip([2.0, -1.0, -1.0]) {
            assert!((v - e).abs() < 1e-12);
        }
    }

    #[test]
    fn power_matches_dense_on_random_operators() {
        for seed in 0..50u64 {
            let (n, ell) = if seed % 2 == 0 { (8, 3) } else { (9, 2) };
            let inst = sample_random_instance(n, 4, 20.0 + seed as f64, true, seed).unwrap();
            let op = operator_from_instance(&inst, ell).unwrap();
            assert!(op.dimension() <= 200);
            let dense = dense_eigendecomposition(&op).unwrap();
            let power = lambda_max(&op, 1e-12, 200_000, seed).unwrap();
            assert!((power.lambda_max - dense.values[0]).abs() < 1e-8, "seed {seed}: {} vs {}", power.lambda_max, dense.values[0]);
            let trace: f64 = dense.values.iter().sum();
            assert!(trace.abs() < 1e-9);
            let m = dense_matrix(&op);
            let err = dense.reconstruction_error(&m);
            assert!(err <= 1e-9 * m.norm_l2().max(1.0), "recon {err}");
            // λ_max ≤ ‖K‖ ≤ max row ℓ1 norm ≤ max degree.
            let stats = op.degree_stats();
            let opnorm = dense.values[0].abs().max(dense.values.last().unwrap().abs());
            assert!(dense.values[0] <= opnorm + 1e-12);
            assert!(opnorm <= stats.max_abs_row_sum + 1e-9);
            assert!(stats.max_abs_row_sum <= stats.max_degree as f64);
        }
    }

    #[test]
    fn cutoff_overlap_contract() {
        let inst = sample_random_instance(8, 4, 30.0, true, 3).unwrap();
        let op = operator_from_instance(&inst, 3).unwrap();
        let spectrum = dense_eigendecomposition(&op).unwrap();
        let v = random_unit_vector(op.dimension(), 9);
        let lo = spectrum.values.last().unwrap() - 1.0;
        assert!((spectrum.cutoff_overlap(&v, lo).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(spectrum.cutoff_overlap(&v, spectrum.values[0] + 1.0).unwrap(), 0.0);
        let top = spectrum.vector(0);
        assert!((spectrum.cutoff_overlap(&top, spectrum.values[0]).unwrap() - 1.0).abs() < 1e-10);
        // Overlaps of an orthonormal basis sum to the cutoff-space dimension.
        let th = spectrum.values[5];
        let cut_dim = spectrum.values.iter().filter(|&&l| l >= th).count() as f64;
        let total: f64 = (0..spectrum.dimension())
            .map(|i| {
                let mut e = vec![0.0; spectrum.dimension()];
                e[i] = 1.0;
                spectrum.cutoff_overlap(&e, th).unwrap()
            })
            .sum();
        assert!((total - cut_dim).abs() < 1e-9);
    }

    #[test]
    fn random_bound_values() {
        let c = random_bound_constant(0.24, 0.1, 4).unwrap();
        assert!((c - 7.89).abs() < 0.01, "{c}");
        let mut prev = f64::INFINITY;
        for i in 1..=20 {
            let kappa = i as f64 * 0.05;
            let v = random_bound_constant(kappa, kappa / (2.0 + kappa) / 2.0, 4).unwrap();
            assert!(v.is_finite() && v > 0.0);
            let fixed = random_bound_constant(kappa, 0.01, 4).unwrap();
            assert!(fixed < prev);
            prev = fixed;
        }
        assert!(random_bound_constant(0.1, 0.1, 4).is_err());
        assert!(random_bound_constant(1.5, 0.1, 4).is_err());
        // k = 4: Δ-threshold = C·ln n·n/ℓ, linear in n/ℓ.
        let a = random_bound_min_density(0.24, 0.1, 4, 100, 5).unwrap();
        let b = random_bound_min_density(0.24, 0.1, 4, 100, 10).unwrap();
        assert!((a / b - 2.0).abs() < 1e-12);
        let expect = c / 5.0 * 100.0 * 100f64.ln();
        assert!((a - expect).abs() < 1e-9);
    }

    #[test]
    fn decisions() {
        let z = Assignment::random(10, 4);
        let p = PlantedParams { n: 10, k: 4, m: 60.0, rho: 1.0, poissonized: false };
        let inst = sample_planted_instance(&p, &z, 2).unwrap();
        let r = classical_decide(&inst, 4, &CutoffSpec::KappaTimesD { kappa: 0.5 }, 1e-8, 1).unwrap();
        assert_eq!(r.verdict, Verdict::Planted);
        assert!(r.lambda_estimate >= r.expected_degree - 1e-6);
        let empty = KXorInstance::empty(10, 4);
        let r = classical_decide(&empty, 4, &CutoffSpec::KappaTimesD { kappa: 0.5 }, 1e-8, 1).unwrap();
        assert_eq!((r.verdict, r.lambda_estimate), (Verdict::Random, 0.0));
        let r = classical_decide(&empty, 4, &CutoffSpec::Absolute { threshold: 0.0 }, 1e-8, 1).unwrap();
        assert_eq!(r.verdict, Verdict::Random);
        assert_eq!(verdict_for(2.5, 2.5), Verdict::Planted);
        assert_eq!(verdict_for(2.5, 2.5 + 1e-12), Verdict::Random);
    }

    #[test]
    fn planted_rho_one_lambda_at_least_d() {
        for seed in 0..10 {
            let z = Assignment::random(9, seed);
            let p = PlantedParams { n: 9, k: 4, m: 40.0, rho: 1.0, poissonized: true };
            let inst = sample_planted_instance(&p, &z, seed).unwrap();
            let op = operator_from_instance(&inst, 3).unwrap();
            let d = delta_f64(3, 9, 4).unwrap() * inst.len() as f64;
            let lift: Vec<f64> = lift_assignment(&z, 3).unwrap().iter().map(|&x| x as f64).collect();
            let rq = op.quadratic_form(&lift).unwrap() / lift.len() as f64;
            assert!((rq - d).abs() < 1e-9);
            assert!(lambda_max(&op, 1e-10, 100_000, seed).unwrap().lambda_max >= d - 1e-6);
        }
    }

    #[test]
    fn cutoff_spec_resolution() {
        assert_eq!(CutoffSpec::KappaTimesD { kappa: 0.5 }.resolve(10.0), 5.0);
        assert!((CutoffSpec::OneMinusGammaRhoD { gamma: 0.2, rho: 0.5 }.resolve(10.0) - 4.0).abs() < 1e-15);
        assert!(CutoffSpec::KappaTimesD { kappa: 0.0 }.validate().is_err());
        assert!(CutoffSpec::Absolute { threshold: f64::NAN }.validate().is_err());
        let json = serde_json::to_string(&CutoffSpec::Calibrated { threshold: 1.5, seed: 3, quantile: 0.95 }).unwrap();
        assert!(json.contains("\"form\":\"calibrated\""));
    }

    #[test]
    fn dense_cap_enforced() {
        let op = build_operator(vec![(vec![1, 2], 1i64, 1)], 16, 2, 8).unwrap();
        assert!(matches!(dense_eigendecomposition(&op), Err(Error::Capacity(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn top_eigenvalue_bounded_by_row_sums(seed in any::<u64>()) {
            let inst = sample_random_instance(8, 2, 10.0, true, seed).unwrap();
            let op = operator_from_instance(&inst, 2).unwrap();
            let vals = dense_eigendecomposition(&op).unwrap().values;
            let s = op.degree_stats();
            prop_assert!(vals[0] <= s.max_abs_row_sum + 1e-9);
            prop_assert!(vals[0] >= -1e-9);
        }
    }
}
