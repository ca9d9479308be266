//! Semantics-level simulation of the guided quantum decision pipeline:
//! guiding-state preparation amplitudes, phase-estimation sampling with a
//! failure model, amplitude amplification as an exact 2-D rotation, and a
//! closed-form resource estimator with all hidden constants set to 1.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::combinat::{binomial_u64, checked_dimension, ln_binomial, BinomialTable, DEFAULT_DIMENSION_CAP};
use crate::error::{invalid, Error, Result};
use crate::guiding::{guiding_vector, kxor_guide_coefficients};
use crate::instances::{coefficient_map, split_instance, KXorInstance};
use crate::kikuchi::{delta_f64, operator_from_instance, KikuchiOperator, Weight};
use crate::rng::{derive_seed, stream};
use crate::spectral::{dense_eigendecomposition, random_unit_vector, CutoffSpec, DenseSpectrum};

fn ceil_log2(x: f64) -> u32 {
    if x <= 1.0 {
        0
    } else {
        x.log2().ceil() as u32
    }
}

/// Result of pushing `φ^{⊗c}` through distinct-projection and sorting.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineState {
    /// Amplitude on each sorted ℓ-subset, by rank. Not normalized.
    pub sorted: Vec<f64>,
    /// Squared norm of the disjoint-block part of `φ^{⊗c}`.
    pub good_mass: f64,
}

/// Runs the product → distinct-projection → sort pipeline on the unit
/// direction of `coeffs` (dense over k-subset ranks).
pub fn product_pipeline(coeffs: &[f64], n: u32, k: u32, ell: u32) -> Result<PipelineState> {
    if k == 0 || ell % k != 0 || ell == 0 {
        return invalid(format!("k = {k} must divide ell = {ell}"));
    }
    let total = binomial_u64(n as u64, k as i64)? as usize;
    if coeffs.len() != total {
        return invalid(format!("expected {total} coefficients, got {}", coeffs.len()));
    }
    let dim = checked_dimension(n, ell, DEFAULT_DIMENSION_CAP)?;
    let norm = coeffs.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::EmptyGuide);
    }
    let table = BinomialTable::new(n as usize);
    let words = (n as usize + 64) / 64;
    let mut scratch = Vec::new();
    let support: Vec<(Vec<u64>, f64)> = coeffs
        .iter()
        .enumerate()
        .filter(|(_, &a)| a != 0.0)
        .map(|(r, &a)| {
            table.unrank_into(r as u64, n, k as usize, &mut scratch);
            let mut bits = vec![0u64; words];
            for &e in &scratch {
                bits[e as usize / 64] |= 1 << (e % 64);
            }
            (bits, a / norm)
        })
        .collect();
    let blocks = (ell / k) as usize;
    let mut sorted: HashMap<u64, f64> = HashMap::new();
    let mut good_mass = 0.0;
    let mut used = vec![0u64; words];
    let mut elems = Vec::with_capacity(ell as usize);

    struct Walk<'a> {
        support: &'a [(Vec<u64>, f64)],
        table: &'a BinomialTable,
        blocks: usize,
    }
    fn walk(w: &Walk, depth: usize, amp: f64, used: &mut Vec<u64>, elems: &mut Vec<u32>, out: &mut HashMap<u64, f64>, good: &mut f64) {
        if depth == w.blocks {
            *good += amp * amp;
            elems.clear();
            for (i, word) in used.iter().enumerate() {
                let mut b = *word;
                while b != 0 {
                    elems.push((i * 64) as u32 + b.trailing_zeros());
                    b &= b - 1;
                }
            }
            *out.entry(w.table.rank_unchecked(elems)).or_insert(0.0) += amp;
            return;
        }
        for (bits, a) in w.support {
            if bits.iter().zip(used.iter()).any(|(x, y)| x & y != 0) {
                continue;
            }
            for (u, b) in used.iter_mut().zip(bits) {
                *u |= b;
            }
            walk(w, depth + 1, amp * a, used, elems, out, good);
            for (u, b) in used.iter_mut().zip(bits) {
                *u &= !b;
            }
        }
    }
    let w = Walk { support: &support, table: &table, blocks };
    walk(&w, 0, 1.0, &mut used, &mut elems, &mut sorted, &mut good_mass);
    let mut dense = vec![0.0; dim];
    for (r, a) in sorted {
        dense[r as usize] = a;
    }
    Ok(PipelineState { sorted: dense, good_mass })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StatePrepPlan {
    pub n: u32,
    pub k: u32,
    pub ell: u32,
    pub blocks: u32,
    /// `m̃`, the number of guide constraints.
    pub guide_constraints: usize,
    /// ℓ²-fraction of `φ^{⊗c}` on pairwise disjoint blocks.
    pub good_mass: f64,
    /// Fraction of `Σ B(S)²` carried by scopes with `|B(S)| ≥ 2`.
    pub epsilon_bad: f64,
    /// Flag-conditioned amplitude of the guiding state after sorting.
    pub success_amplitude: f64,
    /// `success_amplitude · ℓ^{ℓ/2}`.
    pub scaled_amplitude: f64,
    /// `ℓ·m̃·⌈log₂ n⌉`.
    pub gate_model: u64,
    /// `ℓ·⌈log₂ ℓ⌉ + 3`.
    pub ancilla_qubits: u64,
}

pub fn plan_state_preparation(guide: &KXorInstance, ell: u32) -> Result<StatePrepPlan> {
    if guide.is_empty() {
        return Err(Error::EmptyInstance);
    }
    let (n, k) = (guide.n(), guide.k());
    let map = coefficient_map(guide);
    let coeffs = map.to_dense(1.0)?;
    let total: f64 = coeffs.iter().map(|x| x * x).sum();
    if total == 0.0 {
        return Err(Error::EmptyGuide);
    }
    let bad: f64 = coeffs.iter().filter(|b| b.abs() >= 2.0).map(|x| x * x).sum();
    let pipeline = product_pipeline(&coeffs, n, k, ell)?;
    let blocks = ell / k;
    let (good_mass, scaled) = if blocks == 1 {
        (1.0, (ell as f64).powf(ell as f64 / 2.0))
    } else {
        (pipeline.good_mass, pipeline.sorted.iter().map(|x| x * x).sum::<f64>().sqrt())
    };
    let success_amplitude = if blocks == 1 { 1.0 } else { scaled / (ell as f64).powf(ell as f64 / 2.0) };
    Ok(StatePrepPlan {
        n,
        k,
        ell,
        blocks,
        guide_constraints: guide.len(),
        good_mass,
        epsilon_bad: bad / total,
        success_amplitude,
        scaled_amplitude: success_amplitude * (ell as f64).powf(ell as f64 / 2.0),
        gate_model: ell as u64 * guide.len() as u64 * ceil_log2(n as f64) as u64,
        ancilla_qubits: ell as u64 * ceil_log2(ell as f64) as u64 + 3,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PESettings {
    /// `t = π/(2s)`.
    pub time: f64,
    /// `ε_PE = α·λ·t`.
    pub precision: f64,
    /// `δ_PE`.
    pub failure: f64,
    /// `⌈log₂(1/ε_PE)⌉` phase bits plus `⌈ln(1/δ_PE)⌉` majority repetitions.
    pub bits: u32,
}

impl PESettings {
    /// `failure` may be 0, which disables corruption.
    pub fn new(sparsity: f64, alpha: f64, lambda: f64, failure: f64) -> Result<Self> {
        if !(sparsity > 0.0) {
            return invalid(format!("sparsity must be positive, got {sparsity}"));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return invalid(format!("alpha must lie in (0, 1), got {alpha}"));
        }
        if !(lambda != 0.0 && lambda.is_finite()) {
            return invalid(format!("lambda must be finite and nonzero, got {lambda}"));
        }
        if !(0.0..=1.0).contains(&failure) {
            return invalid(format!("failure probability must lie in [0, 1], got {failure}"));
        }
        let time = PI / (2.0 * sparsity);
        let precision = alpha * lambda.abs() * time;
        let reps = if failure > 0.0 { (1.0 / failure).ln().ceil() as u32 } else { 0 };
        Ok(PESettings { time, precision, failure, bits: ceil_log2(1.0 / precision) + reps })
    }

    /// Probability that one phase-estimation run on an eigenvector with
    /// eigenvalue `h` raises the above-threshold flag.
    pub fn flag_probability(&self, h: f64, lambda: f64) -> f64 {
        let eps = self.precision;
        let gap = lambda * self.time - h * self.time;
        let exact = if gap <= 0.0 { 1.0 } else { 0.0 };
        // Corrupted shift is uniform on [ε/2, 3ε/2) with a uniform sign.
        let up = ((1.5 * eps - gap.max(0.5 * eps)) / eps).clamp(0.0, 1.0);
        let down = (((-gap).min(1.5 * eps) - 0.5 * eps) / eps).clamp(0.0, 1.0);
        (1.0 - self.failure) * exact + self.failure * 0.5 * (up + down)
    }
}

/// A guided sparse Hamiltonian instance with its exact spectrum.
/// `H` is the operator divided by `scale` so that max-entry ≤ 1.
#[derive(Clone, Debug)]
pub struct GuidedProblem {
    pub spectrum: DenseSpectrum,
    /// Unit guide `|Ψ⟩`.
    pub guide: Vec<f64>,
    /// `λ` in rescaled units.
    pub lambda: f64,
    pub alpha: f64,
    pub overlap_gamma: f64,
    pub sparsity: usize,
    pub scale: f64,
    overlaps: Vec<f64>,
}

impl GuidedProblem {
    /// `lambda_raw` is in the operator's own units.
    pub fn new<W: Weight>(op: &KikuchiOperator<W>, guide: &[f64], lambda_raw: f64, alpha: f64, overlap_gamma: f64) -> Result<Self> {
        let scale = match op.max_abs_weight() {
            s if s > 0.0 => s,
            _ => 1.0,
        };
        let mut spectrum = dense_eigendecomposition(op)?;
        for v in &mut spectrum.values {
            *v /= scale;
        }
        Self::from_spectrum(spectrum, guide, lambda_raw / scale, alpha, overlap_gamma, op.sparsity_bound().max(1), scale)
    }

    pub fn from_spectrum(
        spectrum: DenseSpectrum,
        guide: &[f64],
        lambda: f64,
        alpha: f64,
        overlap_gamma: f64,
        sparsity: usize,
        scale: f64,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return invalid(format!("alpha must lie in (0, 1), got {alpha}"));
        }
        if !(overlap_gamma > 0.0 && overlap_gamma <= 1.0) {
            return invalid(format!("overlap gamma must lie in (0, 1], got {overlap_gamma}"));
        }
        if !(lambda.abs() <= sparsity as f64) {
            return invalid(format!("|lambda| = {} exceeds the sparsity bound {sparsity}", lambda.abs()));
        }
        let overlaps = spectrum.squared_overlaps(guide)?;
        let norm = guide.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(GuidedProblem {
            spectrum,
            guide: guide.iter().map(|x| x / norm).collect(),
            lambda,
            alpha,
            overlap_gamma,
            sparsity,
            scale,
            overlaps,
        })
    }

    /// `|⟨v_i|Ψ⟩|²` in descending eigenvalue order.
    pub fn squared_overlaps(&self) -> &[f64] {
        &self.overlaps
    }

    /// `‖Π_{≥λ}Ψ‖`.
    pub fn good_overlap(&self) -> f64 {
        self.overlaps
            .iter()
            .zip(&self.spectrum.values)
            .filter(|(_, &h)| h >= self.lambda)
            .map(|(w, _)| w)
            .sum::<f64>()
            .min(1.0)
            .sqrt()
    }

    /// `‖H‖` in rescaled units.
    pub fn norm(&self) -> f64 {
        self.spectrum.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    pub fn promise(&self) -> PromiseStatus {
        if self.good_overlap() >= self.overlap_gamma * (1.0 - 1e-12) {
            PromiseStatus::Yes
        } else if self.norm() <= (1.0 - self.alpha) * self.lambda {
            PromiseStatus::No
        } else {
            PromiseStatus::UndeterminedPromise
        }
    }

    /// Default settings: `δ_PE = γ³`, sparsity from the operator.
    pub fn default_settings(&self) -> Result<PESettings> {
        PESettings::new(self.sparsity as f64, self.alpha, self.lambda, self.overlap_gamma.powi(3))
    }

    /// Probability that a single phase-estimation run raises the flag.
    pub fn marked_probability(&self, settings: &PESettings) -> f64 {
        self.overlaps
            .iter()
            .zip(&self.spectrum.values)
            .map(|(w, &h)| w * settings.flag_probability(h, self.lambda))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PhaseSample {
    pub eigen_index: usize,
    pub eigenvalue: f64,
    pub phase_estimate: f64,
    pub corrupted: bool,
    pub above_threshold: bool,
}

fn one_shot<R: Rng>(problem: &GuidedProblem, settings: &PESettings, index: usize, rng: &mut R) -> PhaseSample {
    let eigenvalue = problem.spectrum.values[index];
    let phase = eigenvalue * settings.time;
    let corrupted = settings.failure > 0.0 && rng.gen::<f64>() < settings.failure;
    let phase_estimate = if corrupted {
        let shift = settings.precision * (0.5 + rng.gen::<f64>());
        if rng.gen::<bool>() {
            phase + shift
        } else {
            phase - shift
        }
    } else {
        phase
    };
    PhaseSample {
        eigen_index: index,
        eigenvalue,
        phase_estimate,
        corrupted,
        above_threshold: phase_estimate >= problem.lambda * settings.time,
    }
}

pub fn simulate_phase_estimation(problem: &GuidedProblem, settings: &PESettings, shots: usize, seed: u64) -> Result<Vec<PhaseSample>> {
    let dist = WeightedIndex::new(&problem.overlaps).map_err(|e| Error::Validation(format!("overlap weights: {e}")))?;
    let mut rng = stream(seed, "phase-estimation", 0);
    Ok((0..shots).map(|_| {
        let i = dist.sample(&mut rng);
        one_shot(problem, settings, i, &mut rng)
    })
    .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AASchedule {
    pub overlap_gamma: f64,
    /// `θ = arcsin γ`.
    pub angle: f64,
    pub rounds: u64,
    pub success_probability: f64,
}

/// `sin²((2r+1)·arcsin γ)`.
pub fn amplification_success(overlap_gamma: f64, rounds: u64) -> Result<f64> {
    Ok(aa_schedule(overlap_gamma, rounds)?.success_probability)
}

pub fn aa_schedule(overlap_gamma: f64, rounds: u64) -> Result<AASchedule> {
    if !(overlap_gamma > 0.0 && overlap_gamma <= 1.0) {
        return invalid(format!("overlap gamma must lie in (0, 1], got {overlap_gamma}"));
    }
    let angle = overlap_gamma.asin();
    let s = ((2 * rounds + 1) as f64 * angle).sin();
    Ok(AASchedule { overlap_gamma, angle, rounds, success_probability: s * s })
}

/// Applies `r` Grover iterates to `(√(1−γ²), γ)` in the (bad, good) plane
/// and returns the good-component weight.
pub fn rotation_success(overlap_gamma: f64, rounds: u64) -> f64 {
    let start = ((1.0 - overlap_gamma * overlap_gamma).max(0.0).sqrt(), overlap_gamma);
    let mut v = start;
    for _ in 0..rounds {
        // Oracle flips the good component, then reflect about the start.
        v.1 = -v.1;
        let dot = v.0 * start.0 + v.1 * start.1;
        v = (2.0 * dot * start.0 - v.0, 2.0 * dot * start.1 - v.1);
    }
    v.1 * v.1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromiseStatus {
    Yes,
    No,
    UndeterminedPromise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
}

pub const DEFAULT_SCHEDULE_PASSES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Transcript {
    pub promise: PromiseStatus,
    pub lambda: f64,
    pub alpha: f64,
    pub scale: f64,
    pub overlap_gamma: f64,
    /// Exact `‖Π_{≥λ}Ψ‖`.
    pub good_overlap: f64,
    /// Flag probability of one phase-estimation run on `Ψ`.
    pub marked_probability: f64,
    pub epsilon_pe: f64,
    pub delta_pe: f64,
    pub max_rounds: u64,
    pub rounds_tried: Vec<u64>,
    /// Phase-estimation applications, `Σ (2r+1)`.
    pub pe_applications: u64,
    pub shots: usize,
    pub observed: Option<PhaseSample>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GuidedDecision {
    pub answer: Answer,
    pub transcript: Transcript,
}

/// Round counts `0, 1, 2, 4, …` below `⌈1/γ⌉`, then `⌈1/γ⌉` itself.
pub fn round_schedule(overlap_gamma: f64) -> Vec<u64> {
    let max = (1.0 / overlap_gamma).ceil() as u64;
    let mut out = vec![0];
    let mut r = 1;
    while r < max {
        out.push(r);
        r *= 2;
    }
    if max > 0 && *out.last().unwrap() != max {
        out.push(max);
    }
    out
}

/// Runs the amplified search for an above-threshold phase. Each schedule
/// pass tries every round count once; the first flagged measurement
/// answers YES.
pub fn guided_decide(problem: &GuidedProblem, settings: &PESettings, passes: usize, seed: u64) -> Result<GuidedDecision> {
    let mut rng = stream(seed, "guided-decide", 0);
    let p = problem.marked_probability(settings);
    let theta = p.sqrt().asin();
    let rounds = round_schedule(problem.overlap_gamma);
    let flagged: Vec<f64> = problem
        .overlaps
        .iter()
        .zip(&problem.spectrum.values)
        .map(|(w, &h)| w * settings.flag_probability(h, problem.lambda))
        .collect();
    let mut transcript = Transcript {
        promise: problem.promise(),
        lambda: problem.lambda,
        alpha: problem.alpha,
        scale: problem.scale,
        overlap_gamma: problem.overlap_gamma,
        good_overlap: problem.good_overlap(),
        marked_probability: p,
        epsilon_pe: settings.precision,
        delta_pe: settings.failure,
        max_rounds: *rounds.last().unwrap(),
        rounds_tried: Vec::new(),
        pe_applications: 0,
        shots: 0,
        observed: None,
    };
    for _ in 0..passes {
        for &r in &rounds {
            transcript.rounds_tried.push(r);
            transcript.pe_applications += 2 * r + 1;
            transcript.shots += 1;
            let s = ((2 * r + 1) as f64 * theta).sin();
            if rng.gen::<f64>() < s * s {
                // Measure the marked component: draw an eigenindex from the
                // flag-weighted distribution and replay one flagged run.
                let dist = WeightedIndex::new(&flagged).map_err(|e| Error::Validation(format!("flag weights: {e}")))?;
                let i = dist.sample(&mut rng);
                let mut sample = one_shot(problem, settings, i, &mut rng);
                sample.above_threshold = true;
                transcript.observed = Some(sample);
                return Ok(GuidedDecision { answer: Answer::Yes, transcript });
            }
        }
    }
    Ok(GuidedDecision { answer: Answer::No, transcript })
}

/// Outcome of running the guided decision on one kXOR instance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GuidedInstanceOutcome {
    pub decision: GuidedDecision,
    /// Threshold in the operator's own units.
    pub lambda_raw: f64,
    /// Exact `‖Π_{≥λ}Ψ‖` of the guide actually used.
    pub measured_gamma: f64,
    /// The promised overlap handed to the decider (floored at `N^{-1/2}`).
    pub promised_gamma: f64,
    /// The split guide was empty or cancelled, so a random unit guide was used.
    pub random_guide: bool,
    pub guide_constraints: usize,
}

/// Splits `instance` with fraction `zeta`, builds the operator from the main
/// part and the guiding state from the guide part, and runs the guided
/// decision with `δ_PE = γ³` where `γ` is the measured overlap.
pub fn guided_instance_decision(
    instance: &KXorInstance,
    ell: u32,
    zeta: f64,
    cutoff: &CutoffSpec,
    alpha: f64,
    seed: u64,
) -> Result<GuidedInstanceOutcome> {
    let (n, k) = (instance.n(), instance.k());
    let split = split_instance(instance, zeta, derive_seed(seed, "guided-split", 0))?;
    let op = operator_from_instance(&split.main, ell)?;
    let d = delta_f64(ell, n, k)? * split.main.len() as f64;
    let lambda_raw = cutoff.resolve(d);
    let q = (zeta * instance.len().max(1) as f64 / binomial_u64(n as u64, k as i64)? as f64).max(f64::MIN_POSITIVE);
    let guide = if split.guide.is_empty() {
        None
    } else {
        let coeffs = kxor_guide_coefficients(&split.guide, q)?;
        guiding_vector(&coeffs, n, k, ell)?.unit().ok()
    };
    let random_guide = guide.is_none();
    let guide = guide.unwrap_or_else(|| random_unit_vector(op.dimension(), derive_seed(seed, "guided-fallback", 0)));
    let floor = 1.0 / (op.dimension() as f64).sqrt();
    // Probe with the floor first to learn the exact overlap, then re-promise it.
    let probe = GuidedProblem::new(&op, &guide, lambda_raw, alpha, 1.0)?;
    let measured_gamma = probe.good_overlap();
    let promised_gamma = measured_gamma.max(floor).min(1.0);
    let problem = GuidedProblem { overlap_gamma: promised_gamma, ..probe };
    let settings = problem.default_settings()?;
    let decision = guided_decide(&problem, &settings, DEFAULT_SCHEDULE_PASSES, derive_seed(seed, "guided-decide", 0))?;
    Ok(GuidedInstanceOutcome { decision, lambda_raw, measured_gamma, promised_gamma, random_guide, guide_constraints: split.guide.len() })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceInputs {
    /// Row sparsity `s`.
    pub sparsity: f64,
    pub overlap_gamma: f64,
    pub alpha: f64,
    /// `λ` in max-entry-1 units.
    pub lambda: f64,
    /// System qubits.
    pub n_qubits: f64,
    /// Gates to prepare the guide once.
    pub prep_gates: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ResourceEstimate {
    pub time: f64,
    pub epsilon_pe: f64,
    pub delta_pe: f64,
    pub epsilon_hs: f64,
    pub q_pe: f64,
    pub q_aa: f64,
    pub q_hs: f64,
    /// `Q = Q_HS·Q_PE·Q_AA`.
    pub queries: f64,
    /// `G_prep/γ`.
    pub prep_term: f64,
    /// `Q·(N_qubits + ln^{2.5} Q)`.
    pub query_term: f64,
    pub gates: f64,
    pub phase_qubits: f64,
    pub counter_qubits: f64,
    pub qubits: f64,
}

/// Counts are `f64` because the worked example overflows `u64`.
pub fn estimate_resources(inputs: &ResourceInputs) -> Result<ResourceEstimate> {
    let i = inputs;
    for (name, v) in [
        ("sparsity", i.sparsity),
        ("overlap gamma", i.overlap_gamma),
        ("alpha", i.alpha),
        ("lambda", i.lambda),
        ("qubits", i.n_qubits),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return invalid(format!("{name} must be positive and finite, got {v}"));
        }
    }
    if i.overlap_gamma > 1.0 || !(i.prep_gates >= 0.0) {
        return invalid("need gamma <= 1 and nonnegative preparation gates");
    }
    let time = PI / (2.0 * i.sparsity);
    let epsilon_pe = i.alpha * i.lambda * time;
    let delta_pe = i.overlap_gamma.powi(3);
    let epsilon_hs = i.overlap_gamma * epsilon_pe;
    let q_pe = ((1.0 / epsilon_pe) * (1.0 / delta_pe).ln()).ceil().max(1.0);
    let q_aa = (1.0 / i.overlap_gamma).ceil();
    let q_hs = (1.0 / epsilon_hs).ln().ceil().max(1.0);
    let queries = q_hs * q_pe * q_aa;
    let prep_term = i.prep_gates / i.overlap_gamma;
    let query_term = queries * (i.n_qubits + queries.ln().max(0.0).powf(2.5));
    let phase_qubits = (1.0 / epsilon_pe).log2().ceil().max(1.0);
    let counter_qubits = queries.log2().ceil().max(1.0);
    Ok(ResourceEstimate {
        time,
        epsilon_pe,
        delta_pe,
        epsilon_hs,
        q_pe,
        q_aa,
        q_hs,
        queries,
        prep_term,
        query_term,
        gates: prep_term + query_term,
        phase_qubits,
        counter_qubits,
        qubits: i.n_qubits + phase_qubits + counter_qubits,
    })
}

/// Parameters of the large worked example: `m = density·n²·ln n`,
/// `γ² = n^{−gamma_exponent}`, `λ = lambda_fraction·d` with `d = δ·m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkedExample {
    pub k: u32,
    pub ell: u32,
    pub density: f64,
    pub gamma_exponent: f64,
    pub alpha: f64,
    pub lambda_fraction: f64,
}

impl Default for WorkedExample {
    fn default() -> Self {
        WorkedExample { k: 4, ell: 32, density: 12.5, gamma_exponent: 16.1, alpha: 0.1, lambda_fraction: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub n: f64,
    pub k: u32,
    pub ell: u32,
    pub m: f64,
    pub overlap_gamma: f64,
    pub expected_degree: f64,
    pub estimate: ResourceEstimate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(x, y)`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return invalid("fit needs two or more paired points");
    }
    let len = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / len;
    let my = ys.iter().sum::<f64>() / len;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return invalid("degenerate x values");
    }
    let slope = sxy / sxx;
    Ok(LineFit { slope, intercept: my - slope * mx, r_squared: if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) } })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub example: WorkedExample,
    pub points: Vec<SweepPoint>,
    pub gate_fit: LineFit,
    pub query_fit: LineFit,
    /// The classical cost exponent, `ℓ`.
    pub classical_exponent: f64,
    /// `classical_exponent / gate_fit.slope`.
    pub exponent_ratio: f64,
}

pub fn worked_example_point(example: &WorkedExample, n: f64) -> Result<SweepPoint> {
    let (k, ell) = (example.k as f64, example.ell as f64);
    if !(n >= ell) || k <= 0.0 || example.ell % example.k != 0 {
        return invalid(format!("worked example needs n >= ell and k | ell, got n = {n}"));
    }
    let m = example.density * n * n * n.ln();
    let ln_delta = ln_binomial(k, k / 2.0) + ln_binomial(n - k, ell - k / 2.0) - ln_binomial(n, ell);
    let d = ln_delta.exp() * m;
    let sparsity = d.ceil().max(1.0);
    let overlap_gamma = n.powf(-example.gamma_exponent / 2.0);
    let n_qubits = ell * ceil_log2(n) as f64;
    let estimate = estimate_resources(&ResourceInputs {
        sparsity,
        overlap_gamma,
        alpha: example.alpha,
        lambda: example.lambda_fraction * d,
        n_qubits,
        prep_gates: ell * m * ceil_log2(n) as f64,
    })?;
    Ok(SweepPoint { n, k: example.k, ell: example.ell, m, overlap_gamma, expected_degree: d, estimate })
}

/// Log-log fit of gates and queries against `n` over `grid`.
pub fn sweep_worked_example(example: &WorkedExample, grid: &[f64]) -> Result<SweepReport> {
    let points: Vec<SweepPoint> = grid.iter().map(|&n| worked_example_point(example, n)).collect::<Result<_>>()?;
    let xs: Vec<f64> = points.iter().map(|p| p.n.ln()).collect();
    let gate_fit = fit_line(&xs, &points.iter().map(|p| p.estimate.gates.ln()).collect::<Vec<_>>())?;
    let query_fit = fit_line(&xs, &points.iter().map(|p| p.estimate.queries.ln()).collect::<Vec<_>>())?;
    let classical_exponent = example.ell as f64;
    Ok(SweepReport { example: *example, points, gate_fit, query_fit, classical_exponent, exponent_ratio: classical_exponent / gate_fit.slope })
}

/// `count` log-spaced values from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count < 2 {
        return vec![lo];
    }
    (0..count).map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (count - 1) as f64).exp().round()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinat::subset_rank;
    use crate::guiding::{guiding_vector, kxor_guide_coefficients};
    use crate::instances::{sample_random_instance, Constraint};
    use crate::spectral::dense_spectrum_of;
    use crate::stats::chi_square_p_value;
    use proptest::prelude::*;

    fn instance(n: u32, k: u32, scopes: &[&[u32]]) -> KXorInstance {
        let cs = scopes.iter().map(|s| Constraint { scope: s.to_vec(), rhs: 1 }).collect();
        KXorInstance::new(n, k, cs).unwrap()
    }

    fn diagonal_problem(values: &[f64], guide: &[f64], lambda: f64, alpha: f64, gamma: f64) -> GuidedProblem {
        let rows: Vec<Vec<f64>> = (0..values.len())
            .map(|i| (0..values.len()).map(|j| if i == j { values[i] } else { 0.0 }).collect())
            .collect();
        GuidedProblem::from_spectrum(dense_spectrum_of(&rows).unwrap(), guide, lambda, alpha, gamma, 4, 1.0).unwrap()
    }

    #[test]
    fn single_block_needs_no_symmetrization() {
        let p = plan_state_preparation(&instance(8, 4, &[&[1, 2, 3, 4], &[2, 3, 5, 6]]), 4).unwrap();
        assert_eq!((p.good_mass, p.success_amplitude, p.epsilon_bad), (1.0, 1.0, 0.0));
        assert_eq!(p.ancilla_qubits, 4 * 2 + 3);
        assert_eq!(p.gate_model, 4 * 2 * 3);
    }

    #[test]
    fn disjoint_scopes_closed_form() {
        let inst = instance(16, 4, &[&[1, 2, 3, 4], &[5, 6, 7, 8], &[9, 10, 11, 12], &[13, 14, 15, 16]]);
        let p = plan_state_preparation(&inst, 8).unwrap();
        assert!((p.good_mass - 0.75).abs() < 1e-12);
        // Each union is hit by exactly two ordered tuples: ‖·‖² = 2f.
        assert!((p.scaled_amplitude - (2.0 * 0.75f64).sqrt()).abs() < 1e-12);
        assert!((p.success_amplitude - 1.5f64.sqrt() / 8f64.powi(4)).abs() < 1e-18);
    }

    #[test]
    fn bad_mass_counts_repeated_scopes() {
        let inst = instance(8, 2, &[&[1, 2], &[1, 2], &[3, 4]]);
        let p = plan_state_preparation(&inst, 2).unwrap();
        assert!((p.epsilon_bad - 0.8).abs() < 1e-12);
        assert!(plan_state_preparation(&KXorInstance::empty(8, 2), 4).is_err());
    }

    #[test]
    fn pipeline_is_proportional_to_partition_sums() {
        for seed in 0..10 {
            let inst = sample_random_instance(10, 2, 12.0, true, seed).unwrap();
            if inst.is_empty() {
                continue;
            }
            let coeffs = kxor_guide_coefficients(&inst, 1.0).unwrap();
            let g = guiding_vector(&coeffs, 10, 2, 4).unwrap();
            let p = product_pipeline(&coeffs, 10, 2, 4).unwrap();
            let (gi, pi) = (g.unit(), p.sorted.iter().map(|x| x * x).sum::<f64>().sqrt());
            if let Ok(gu) = gi {
                for (a, b) in gu.iter().zip(&p.sorted) {
                    assert!((a - b / pi).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn pipeline_accumulates_sorted_unions() {
        let mut coeffs = vec![0.0; 28];
        coeffs[subset_rank(&[1, 2], 8).unwrap() as usize] = 1.0;
        coeffs[subset_rank(&[3, 4], 8).unwrap() as usize] = 1.0;
        let p = product_pipeline(&coeffs, 8, 2, 4).unwrap();
        let r = subset_rank(&[1, 2, 3, 4], 8).unwrap() as usize;
        assert!((p.sorted[r] - 1.0).abs() < 1e-15);
        assert!((p.good_mass - 0.5).abs() < 1e-15);
    }

    #[test]
    fn phase_estimation_on_eigenvector() {
        let prob = diagonal_problem(&[2.0, 1.0, -1.0], &[0.0, 1.0, 0.0], 1.5, 0.2, 0.5);
        let s = PESettings::new(4.0, 0.2, 1.5, 0.0).unwrap();
        for sample in simulate_phase_estimation(&prob, &s, 200, 1).unwrap() {
            assert_eq!(sample.eigenvalue, 1.0);
            assert_eq!(sample.phase_estimate, 1.0 * s.time);
            assert!(!sample.above_threshold);
        }
        assert!((s.time * 4.0 - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn phase_samples_follow_overlaps() {
        let guide = [0.5, 0.5f64.sqrt(), 0.5];
        let prob = diagonal_problem(&[2.0, 1.0, -1.0], &guide, 1.5, 0.2, 0.5);
        let s = PESettings::new(4.0, 0.2, 1.5, 0.01).unwrap();
        let samples = simulate_phase_estimation(&prob, &s, 10_000, 2).unwrap();
        let mut counts = vec![0.0; 3];
        for x in &samples {
            counts[x.eigen_index] += 1.0;
        }
        let expected: Vec<f64> = prob.squared_overlaps().iter().map(|w| w * 10_000.0).collect();
        assert!(chi_square_p_value(&counts, &expected) > 0.001);
    }

    #[test]
    fn no_case_flag_rate_is_bounded() {
        let guide = [0.5; 4];
        let prob = diagonal_problem(&[0.9, 0.85, -0.5, -0.9], &guide, 1.0, 0.1, 0.5);
        assert_eq!(prob.promise(), PromiseStatus::No);
        let s = PESettings::new(4.0, 0.1, 1.0, 0.05).unwrap();
        let n = 20_000;
        let flagged = simulate_phase_estimation(&prob, &s, n, 3).unwrap().iter().filter(|x| x.above_threshold).count();
        let rate = flagged as f64 / n as f64;
        let sigma = (0.05 * 0.95 / n as f64).sqrt();
        assert!(rate <= 0.05 + 4.0 * sigma, "{rate}");
        assert!((rate - prob.marked_probability(&s)).abs() < 4.0 * sigma);
    }

    #[test]
    fn aa_values() {
        assert_eq!(amplification_success(1.0, 0).unwrap(), 1.0);
        assert!((amplification_success(0.5, 1).unwrap() - 1.0).abs() < 1e-15);
        assert!(amplification_success(0.0, 1).is_err());
        assert!(amplification_success(1.1, 1).is_err());
        assert_eq!(round_schedule(0.1), vec![0, 1, 2, 4, 8, 10]);
        assert_eq!(round_schedule(1.0), vec![0, 1]);
    }

    #[test]
    fn guided_yes_and_no() {
        let prob = diagonal_problem(&[0.5, 0.2], &[0.3, 0.7], -1.0, 0.1, 1.0);
        let s = prob.default_settings().unwrap();
        let d = guided_decide(&prob, &s, 1, 0).unwrap();
        assert_eq!(d.answer, Answer::Yes);
        assert!((d.transcript.good_overlap - 1.0).abs() < 1e-12);

        let gamma = 0.1f64;
        let guide = [gamma, (1.0 - gamma * gamma).sqrt()];
        let prob = diagonal_problem(&[1.2, 0.3], &guide, 1.0, 0.1, gamma);
        assert_eq!(prob.promise(), PromiseStatus::Yes);
        let s = prob.default_settings().unwrap();
        let yes = (0..100).filter(|&t| guided_decide(&prob, &s, DEFAULT_SCHEDULE_PASSES, t).unwrap().answer == Answer::Yes).count();
        assert!(yes >= 90, "{yes}");

        let prob = diagonal_problem(&[0.8, 0.3], &guide, 1.0, 0.1, gamma);
        assert_eq!(prob.promise(), PromiseStatus::No);
        let no = (0..100).filter(|&t| guided_decide(&prob, &s, DEFAULT_SCHEDULE_PASSES, t).unwrap().answer == Answer::No).count();
        assert!(no >= 99);

        let prob = diagonal_problem(&[0.95, 0.3], &guide, 1.0, 0.1, gamma);
        assert_eq!(prob.promise(), PromiseStatus::UndeterminedPromise);
    }

    #[test]
    fn resources_multiply_and_scale() {
        let base = ResourceInputs { sparsity: 10.0, overlap_gamma: 0.01, alpha: 0.1, lambda: 5.0, n_qubits: 40.0, prep_gates: 1e4 };
        let r = estimate_resources(&base).unwrap();
        assert_eq!(r.queries, r.q_hs * r.q_pe * r.q_aa);
        let doubled = estimate_resources(&ResourceInputs { overlap_gamma: 0.02, ..base }).unwrap();
        assert_eq!(doubled.q_aa, (r.q_aa / 2.0).ceil());
        // Random guide overlap N^{-1/2} gives Q_AA = ⌈√N⌉.
        for dim in [100.0f64, 10_000.0, 1e6] {
            let e = estimate_resources(&ResourceInputs { overlap_gamma: dim.powf(-0.5), ..base }).unwrap();
            assert_eq!(e.q_aa, dim.sqrt().ceil());
        }
        assert!(estimate_resources(&ResourceInputs { alpha: 0.0, ..base }).is_err());
    }

    #[test]
    fn worked_example_exponent() {
        let r = sweep_worked_example(&WorkedExample::default(), &log_grid(1e6, 1e12, 13)).unwrap();
        assert!((r.gate_fit.slope - 10.1).abs() < 0.2, "{:?}", r.gate_fit);
        assert!((r.exponent_ratio - 32.0 / 10.1).abs() < 0.07);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn rotation_matches_closed_form(gamma in 1e-3f64..1.0, r in 0u64..200) {
            prop_assert!((rotation_success(gamma, r) - amplification_success(gamma, r).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn queries_monotone(g in 0.001f64..0.5, a in 0.01f64..0.5, l in 0.5f64..5.0) {
            let base = ResourceInputs { sparsity: 10.0, overlap_gamma: g, alpha: a, lambda: l, n_qubits: 40.0, prep_gates: 1e4 };
            let q = estimate_resources(&base).unwrap().queries;
            let bumped = estimate_resources(&ResourceInputs { overlap_gamma: g * 1.5, ..base }).unwrap().queries;
            prop_assert!(bumped <= q);
            let bumped = estimate_resources(&ResourceInputs { alpha: a * 1.5, ..base }).unwrap().queries;
            prop_assert!(bumped <= q);
            let bumped = estimate_resources(&ResourceInputs { lambda: l * 1.5, ..base }).unwrap().queries;
            prop_assert!(bumped <= q);
        }

        #[test]
        fn flag_probability_in_unit_interval(h in -3.0f64..3.0, d in 0.0f64..0.9) {
            let s = PESettings::new(4.0, 0.2, 1.0, d).unwrap();
            let p = s.flag_probability(h, 1.0);
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }
}
