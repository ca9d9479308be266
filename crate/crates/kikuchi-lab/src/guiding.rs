//! Guiding vectors: the one-copy coefficient state and its symmetrized
//! c-fold product over ℓ-subsets, with Monte-Carlo checks of their overlap
//! with the planted lift.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::combinat::{
    binomial_u64, checked_dimension, partition_count_f64, position_partitions, BinomialTable,
    DEFAULT_DIMENSION_CAP,
};
use crate::error::{invalid, Error, Result};
use crate::instances::{coefficient_map, sample_planted_instance, split_instance, Assignment, CoefficientMap, KXorInstance, PlantedParams};
use crate::kikuchi::{delta_f64, lift_assignment, operator_from_instance};
use crate::rng::derive_seed;
use crate::spectral::{dense_eigendecomposition, DENSE_CAP};
use crate::stats::{summarize, variance_std_error};

/// A dense vector over the `C(n, ℓ)` ranks.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GuidingVector {
    pub n: u32,
    pub k: u32,
    pub ell: u32,
    /// Number of blocks `c = ℓ/k`.
    pub blocks: u32,
    pub coords: Vec<f64>,
    pub norm: f64,
    /// The divisor applied to the raw partition sums.
    pub normalization: f64,
}

impl GuidingVector {
    fn from_coords(n: u32, k: u32, ell: u32, coords: Vec<f64>, normalization: f64) -> Self {
        let norm = coords.iter().map(|x| x * x).sum::<f64>().sqrt();
        GuidingVector { n, k, ell, blocks: ell / k, coords, norm, normalization }
    }

    pub fn dimension(&self) -> usize {
        self.coords.len()
    }

    pub fn recompute_norm(&self) -> f64 {
        self.coords.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.norm == 0.0
    }

    /// Unit vector in the same direction.
    pub fn unit(&self) -> Result<Vec<f64>> {
        if self.norm == 0.0 {
            return Err(Error::EmptyGuide);
        }
        Ok(self.coords.iter().map(|x| x / self.norm).collect())
    }
}

/// `χ = √C(n,ℓ)·√Part_k(ℓ)`.
pub fn normalization(n: u32, k: u32, ell: u32) -> Result<f64> {
    Ok((binomial_u64(n as u64, ell as i64)? as f64).sqrt() * partition_count_f64(ell as usize, k as usize)?.sqrt())
}

/// `ψ_S = B(S)/√m` over k-subsets.
pub fn small_guide(coeffs: &CoefficientMap, m: usize) -> Result<GuidingVector> {
    if m == 0 {
        return Err(Error::EmptyGuide);
    }
    let scale = (m as f64).sqrt();
    let coords = coeffs.to_dense(1.0 / scale)?;
    Ok(GuidingVector::from_coords(coeffs.n, coeffs.k, coeffs.k, coords, scale))
}

/// `a_S = B(S)/√q`: the guide polynomial with unit-variance coefficients.
pub fn kxor_guide_coefficients(guide: &KXorInstance, q: f64) -> Result<Vec<f64>> {
    if !(q > 0.0) {
        return invalid(format!("q must be positive, got {q}"));
    }
    coefficient_map(guide).to_dense(1.0 / q.sqrt())
}

fn check_shape(coeffs: &[f64], n: u32, k: u32, ell: u32) -> Result<usize> {
    if k == 0 || ell == 0 || ell % k != 0 {
        return invalid(format!("k = {k} must divide ell = {ell}"));
    }
    let total = binomial_u64(n as u64, k as i64)? as usize;
    if coeffs.len() != total {
        return invalid(format!("expected {total} coefficients, got {}", coeffs.len()));
    }
    checked_dimension(n, ell, DEFAULT_DIMENSION_CAP)
}

/// Raw partition sums `H^{⊛c}_T` by direct enumeration of `Part_k(T)`.
pub fn partition_sums_dense(coeffs: &[f64], n: u32, k: u32, ell: u32) -> Result<Vec<f64>> {
    let dim = check_shape(coeffs, n, k, ell)?;
    let table = BinomialTable::new(n as usize);
    let parts = position_partitions(ell as usize, k as usize)?;
    let mut t = Vec::new();
    let mut block = Vec::with_capacity(k as usize);
    let mut out = vec![0.0; dim];
    for (rank, slot) in out.iter_mut().enumerate() {
        table.unrank_into(rank as u64, n, ell as usize, &mut t);
        let mut sum = 0.0;
        'partition: for partition in &parts {
            let mut prod = 1.0;
            for positions in partition {
                block.clear();
                block.extend(positions.iter().map(|&p| t[p]));
                let a = coeffs[table.rank_unchecked(&block) as usize];
                if a == 0.0 {
                    continue 'partition;
                }
                prod *= a;
            }
            sum += prod;
        }
        *slot = sum;
    }
    Ok(out)
}

/// Raw partition sums as a sorted sparse list, by enumerating sets of `c`
/// pairwise-disjoint nonzero scopes. Cost grows like `nnz^c / c!`.
pub fn partition_sums_sparse(coeffs: &[f64], n: u32, k: u32, ell: u32) -> Result<Vec<(u64, f64)>> {
    check_shape(coeffs, n, k, ell)?;
    let table = BinomialTable::new(n as usize);
    let words = (n as usize).div_ceil(64) + 1;
    let nonzero: Vec<(Vec<u64>, f64)> = coeffs
        .iter()
        .enumerate()
        .filter(|(_, &a)| a != 0.0)
        .map(|(r, &a)| {
            let mut bits = vec![0u64; words];
            let mut scope = Vec::new();
            table.unrank_into(r as u64, n, k as usize, &mut scope);
            for e in scope {
                bits[e as usize / 64] |= 1 << (e % 64);
            }
            (bits, a)
        })
        .collect();
    let c = (ell / k) as usize;
    let mut acc: HashMap<u64, f64> = HashMap::new();
    let mut union = vec![0u64; words];
    let mut elements = Vec::with_capacity(ell as usize);
    fn recurse(
        nonzero: &[(Vec<u64>, f64)],
        start: usize,
        depth: usize,
        prod: f64,
        union: &mut Vec<u64>,
        elements: &mut Vec<u32>,
        table: &BinomialTable,
        acc: &mut HashMap<u64, f64>,
    ) {
        if depth == 0 {
            elements.clear();
            for (w, &bits) in union.iter().enumerate() {
                let mut b = bits;
                while b != 0 {
                    elements.push((w * 64) as u32 + b.trailing_zeros());
                    b &= b - 1;
                }
            }
            *acc.entry(table.rank_unchecked(elements)).or_insert(0.0) += prod;
            return;
        }
        for i in start..nonzero.len() {
            let (bits, a) = &nonzero[i];
            if bits.iter().zip(union.iter()).any(|(x, y)| x & y != 0) {
                continue;
            }
            union.iter_mut().zip(bits).for_each(|(u, b)| *u |= b);
            recurse(nonzero, i + 1, depth - 1, prod * a, union, elements, table, acc);
            union.iter_mut().zip(bits).for_each(|(u, b)| *u &= !b);
        }
    }
    recurse(&nonzero, 0, c, 1.0, &mut union, &mut elements, &table, &mut acc);
    let mut out: Vec<(u64, f64)> = acc.into_iter().collect();
    out.sort_by_key(|e| e.0);
    Ok(out)
}

fn sparse_is_cheaper(coeffs: &[f64], n: u32, k: u32, ell: u32) -> Result<bool> {
    let nnz = coeffs.iter().filter(|&&a| a != 0.0).count() as f64;
    let c = (ell / k) as i32;
    let factorial: f64 = (1..=c).map(|i| i as f64).product();
    let dense_cost = binomial_u64(n as u64, ell as i64)? as f64 * partition_count_f64(ell as usize, k as usize)?;
    Ok(nnz.powi(c) / factorial < dense_cost)
}

/// `Γ^ℓ(𝒜)_T = (1/χ)·Σ_{Part_k(T)} Π a_{S_j}`.
///
/// Chooses the partition-sum or the disjoint-scope engine by estimated cost;
/// both give the same vector.
pub fn guiding_vector(coeffs: &[f64], n: u32, k: u32, ell: u32) -> Result<GuidingVector> {
    let chi = normalization(n, k, ell)?;
    let dim = check_shape(coeffs, n, k, ell)?;
    let raw = if sparse_is_cheaper(coeffs, n, k, ell)? {
        let mut dense = vec![0.0; dim];
        for (r, v) in partition_sums_sparse(coeffs, n, k, ell)? {
            dense[r as usize] = v;
        }
        dense
    } else {
        partition_sums_dense(coeffs, n, k, ell)?
    };
    Ok(GuidingVector::from_coords(n, k, ell, raw.into_iter().map(|x| x / chi).collect(), chi))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapTarget {
    Vector,
    PlantedLift,
    CutoffSpace,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OverlapReport {
    pub inner: f64,
    pub squared: f64,
    pub target: OverlapTarget,
    pub bound: Option<f64>,
    pub passed: Option<bool>,
}

/// Inner product of the normalized inputs.
pub fn overlap(u: &[f64], v: &[f64]) -> Result<OverlapReport> {
    if u.len() != v.len() {
        return invalid(format!("length mismatch {} vs {}", u.len(), v.len()));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return invalid("overlap of a zero vector");
    }
    let inner = u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (nu * nv);
    Ok(OverlapReport { inner, squared: inner * inner, target: OverlapTarget::Vector, bound: None, passed: None })
}

/// Parameters of the overlap Monte Carlo.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapCheckConfig {
    pub n: u32,
    pub k: u32,
    pub ell: u32,
    /// Expected size `m̂` of the full instance before splitting.
    pub m: f64,
    pub rho: f64,
    pub zeta: f64,
    pub trials: usize,
    pub seed: u64,
    /// Spectral slack for the cutoff `(1−γ)ρd` in the cutoff-overlap check.
    pub gap_gamma: f64,
    pub epsilon: f64,
    pub nu: f64,
    /// Run the cutoff-space check (needs a dense spectrum per trial).
    pub cutoff_check: bool,
    /// Ablation: build the guide from the same constraints as the operator.
    pub same_source: bool,
}

impl OverlapCheckConfig {
    pub fn new(n: u32, k: u32, ell: u32, m: f64, rho: f64, zeta: f64, trials: usize, seed: u64) -> Self {
        OverlapCheckConfig {
            n,
            k,
            ell,
            m,
            rho,
            zeta,
            trials,
            seed,
            gap_gamma: 0.5,
            epsilon: 0.1,
            nu: 0.5,
            cutoff_check: false,
            same_source: false,
        }
    }

    /// `μ = ρ·√(ζm̂/C(n,k))`.
    pub fn mu(&self) -> Result<f64> {
        Ok(self.rho * (self.zeta * self.m / binomial_u64(self.n as u64, self.k as i64)? as f64).sqrt())
    }
}

/// Parameter-window conditions evaluated at the configured parameters.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HypothesisEcho {
    pub n_at_least_k_ell: bool,
    pub mu: f64,
    /// `ℓ/√C(n,k)`.
    pub mu_lower: f64,
    /// `0.1/ℓ^{k/2}`.
    pub mu_upper: f64,
    /// Whether `mu_lower ≤ mu_upper` at all.
    pub window_nonempty: bool,
    pub violations: Vec<String>,
}

pub fn hypotheses(n: u32, k: u32, ell: u32, mu: f64) -> Result<HypothesisEcho> {
    let mu_lower = ell as f64 / (binomial_u64(n as u64, k as i64)? as f64).sqrt();
    let mu_upper = 0.1 / (ell as f64).powf(k as f64 / 2.0);
    let mut violations = Vec::new();
    let n_at_least_k_ell = n >= k * ell;
    if !n_at_least_k_ell {
        violations.push(format!("n = {n} < k*ell = {}", k * ell));
    }
    if mu < mu_lower {
        violations.push(format!("mu = {mu:.6} below lower bound {mu_lower:.6}"));
    }
    if mu > mu_upper {
        violations.push(format!("mu = {mu:.6} above upper bound {mu_upper:.6}"));
    }
    Ok(HypothesisEcho { n_at_least_k_ell, mu, mu_lower, mu_upper, window_nonempty: mu_lower <= mu_upper, violations })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CutoffOverlapStats {
    /// `ξ = Part·ρεν/(200ℓ ln n)·(ρ²ζ)^{ℓ/k}`.
    pub xi: f64,
    pub trials_checked: usize,
    /// Fraction of trials with `‖Π_≥ Γ‖² ≥ ξ·(m̂/C(n,k))^{ℓ/k}`.
    pub frequency: f64,
    pub mean_overlap: f64,
    pub mean_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OverlapStatsReport {
    pub config: OverlapCheckConfig,
    pub hypotheses: HypothesisEcho,
    pub mu_ideal: f64,
    /// `ρ·√(|𝓘_guide|/C(n,k))` averaged over trials.
    pub mu_realized: f64,
    pub mean_inner: f64,
    pub mean_std_error: f64,
    /// `√Part_k(ℓ)·μ^c`.
    pub predicted_mean: f64,
    pub mean_z_score: f64,
    pub mean_passed: bool,
    pub variance: f64,
    pub variance_std_error: f64,
    pub variance_bound: f64,
    pub variance_passed: bool,
    pub mean_norm_sq: f64,
    pub norm_sq_std_error: f64,
    pub norm_passed: bool,
    pub cutoff: Option<CutoffOverlapStats>,
}

/// `2.04(ℓ/k)²·Part·C(n,ℓ−k)/(C(ℓ,k)C(n,ℓ))·μ^{2c−2}`.
pub fn variance_bound(n: u32, k: u32, ell: u32, mu: f64) -> Result<f64> {
    let c = (ell / k) as i32;
    let ratio = binomial_u64(n as u64, (ell - k) as i64)? as f64
        / (binomial_u64(ell as u64, k as i64)? as f64 * binomial_u64(n as u64, ell as i64)? as f64);
    Ok(2.04 * (ell as f64 / k as f64).powi(2) * partition_count_f64(ell as usize, k as usize)? * ratio * mu.powi(2 * c - 2))
}

/// Monte Carlo over planted draws of the mean, variance and norm statements
/// for `⟨v|Γ^ℓ(𝒜)⟩`, with `v` the unit planted lift, plus (optionally) the
/// cutoff-space overlap of the unit guiding state.
pub fn check_overlap_statistics(config: &OverlapCheckConfig) -> Result<OverlapStatsReport> {
    let OverlapCheckConfig { n, k, ell, m, rho, zeta, trials, seed, .. } = *config;
    if trials < 2 {
        return invalid("need at least two trials");
    }
    if !(zeta > 0.0 && zeta < 1.0) {
        return invalid(format!("zeta must lie in (0, 1), got {zeta}"));
    }
    let dim = check_shape(&vec![0.0; binomial_u64(n as u64, k as i64)? as usize], n, k, ell)?;
    let total_k = binomial_u64(n as u64, k as i64)? as f64;
    let c = (ell / k) as i32;
    let part = partition_count_f64(ell as usize, k as usize)?;
    let chi = normalization(n, k, ell)?;
    let q = zeta * m / total_k;
    let mu = config.mu()?;
    let echo = hypotheses(n, k, ell, mu)?;
    let z = Assignment::random(n, derive_seed(seed, "overlap-secret", 0));
    let lift = lift_assignment(&z, ell)?;
    let inv_sqrt_dim = 1.0 / (dim as f64).sqrt();
    let params = PlantedParams { n, k, m, rho, poissonized: true };

    let do_cutoff = config.cutoff_check && dim <= DENSE_CAP;
    let xi = part * rho * config.epsilon * config.nu / (200.0 * ell as f64 * (n as f64).ln())
        * (rho * rho * zeta).powf(ell as f64 / k as f64);

    let (mut inners, mut norms, mut mus) = (Vec::with_capacity(trials), Vec::with_capacity(trials), Vec::new());
    let (mut hits, mut cut_overlaps, mut cut_bounds) = (0usize, Vec::new(), Vec::new());
    for t in 0..trials as u64 {
        let full = sample_planted_instance(&params, &z, derive_seed(seed, "overlap-instance", t))?;
        let split = split_instance(&full, zeta, derive_seed(seed, "overlap-split", t))?;
        mus.push(rho * (split.guide.len() as f64 / total_k).sqrt());
        let coeffs = kxor_guide_coefficients(&split.guide, q)?;
        let sums = partition_sums_sparse(&coeffs, n, k, ell)?;
        let inner: f64 = sums.iter().map(|&(r, v)| v / chi * lift[r as usize] as f64).sum::<f64>() * inv_sqrt_dim;
        let norm_sq: f64 = sums.iter().map(|&(_, v)| (v / chi).powi(2)).sum();
        inners.push(inner);
        norms.push(norm_sq);

        if do_cutoff && norm_sq > 0.0 {
            let main = if config.same_source { &full } else { &split.main };
            let op = operator_from_instance(main, ell)?;
            let d = delta_f64(ell, n, k)? * main.len() as f64;
            let spectrum = dense_eigendecomposition(&op)?;
            let mut gamma = vec![0.0; dim];
            for &(r, v) in &sums {
                gamma[r as usize] = v;
            }
            let cut = spectrum.cutoff_overlap(&gamma, (1.0 - config.gap_gamma) * rho * d)?;
            let bound = xi * (full.len() as f64 / total_k).powf(ell as f64 / k as f64);
            if cut >= bound {
                hits += 1;
            }
            cut_overlaps.push(cut);
            cut_bounds.push(bound);
        }
    }
    let s = summarize(&inners);
    let predicted = part.sqrt() * mu.powi(c);
    let z_score = (s.mean - predicted) / s.std_error.max(1e-300);
    let var_bound = variance_bound(n, k, ell, mu)?;
    let var_se = variance_std_error(&inners);
    let ns = summarize(&norms);
    let cutoff = do_cutoff.then(|| CutoffOverlapStats {
        xi,
        trials_checked: cut_overlaps.len(),
        frequency: hits as f64 / cut_overlaps.len().max(1) as f64,
        mean_overlap: summarize(&cut_overlaps).mean,
        mean_bound: summarize(&cut_bounds).mean,
    });
    Ok(OverlapStatsReport {
        config: config.clone(),
        hypotheses: echo,
        mu_ideal: mu,
        mu_realized: summarize(&mus).mean,
        mean_inner: s.mean,
        mean_std_error: s.std_error,
        predicted_mean: predicted,
        mean_z_score: z_score,
        mean_passed: z_score.abs() <= 4.0,
        variance: s.variance,
        variance_std_error: var_se,
        variance_bound: var_bound,
        variance_passed: s.variance <= var_bound,
        mean_norm_sq: ns.mean,
        norm_sq_std_error: ns.std_error,
        norm_passed: ns.mean <= 1.0202 + 4.0 * ns.std_error,
        cutoff,
    })
}
