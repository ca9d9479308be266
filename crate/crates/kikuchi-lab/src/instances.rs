//! Random and planted noisy kXOR instances.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_rational::Ratio;
use rand::Rng;
use serde::Serialize;

use crate::combinat::{binomial_u64, validate_subset, BinomialTable};
use crate::error::{invalid, Error, Result};
use crate::rng::{poisson, rademacher, stream, Stream};

/// A parity constraint `x^scope = rhs`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Constraint {
    pub scope: Vec<u32>,
    pub rhs: i8,
}

/// A ±1 assignment to variables `1..=n` (stored 0-based).
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Assignment {
    values: Vec<i8>,
}

impl Assignment {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        if values.iter().any(|&v| v != 1 && v != -1) {
            return invalid("assignment entries must be +1 or -1");
        }
        Ok(Assignment { values })
    }

    pub fn all_ones(n: u32) -> Self {
        Assignment { values: vec![1; n as usize] }
    }

    pub fn random(n: u32, seed: u64) -> Self {
        let mut rng = stream(seed, "assignment", 0);
        Assignment { values: (0..n).map(|_| rademacher(&mut rng)).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    /// `x^S = Π_{i∈S} x_i` for a 1-based scope.
    #[inline]
    pub fn parity(&self, scope: &[u32]) -> i8 {
        scope.iter().fold(1i8, |acc, &i| acc * self.values[i as usize - 1])
    }
}

/// Parameters of the planted distribution.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PlantedParams {
    pub n: u32,
    pub k: u32,
    pub m: f64,
    pub rho: f64,
    pub poissonized: bool,
}

impl PlantedParams {
    pub fn validate(&self) -> Result<()> {
        validate_shape(self.n, self.k, self.m, self.poissonized)?;
        if !(0.0..=1.0).contains(&self.rho) {
            return invalid(format!("rho = {} outside [0, 1]", self.rho));
        }
        Ok(())
    }

    /// `η = (1 − ρ)/2`.
    pub fn noise_rate(&self) -> f64 {
        (1.0 - self.rho) / 2.0
    }

    /// `Δ = m/n`.
    pub fn density(&self) -> f64 {
        self.m / self.n as f64
    }
}

fn validate_shape(n: u32, k: u32, m: f64, poissonized: bool) -> Result<()> {
    if k < 2 || n < k {
        return invalid(format!("need n >= k >= 2, got n={n}, k={k}"));
    }
    if !(m >= 0.0) || !m.is_finite() {
        return invalid(format!("m = {m} must be a finite nonnegative number"));
    }
    if !poissonized && m.fract() != 0.0 {
        return invalid(format!("m = {m} must be an integer without Poissonization"));
    }
    Ok(())
}

/// A multiset of k-ary constraints over `n` variables.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct KXorInstance {
    n: u32,
    k: u32,
    constraints: Vec<Constraint>,
}

impl KXorInstance {
    pub fn new(n: u32, k: u32, constraints: Vec<Constraint>) -> Result<Self> {
        if k == 0 || n < k {
            return invalid(format!("need n >= k >= 1, got n={n}, k={k}"));
        }
        for c in &constraints {
            if c.scope.len() != k as usize {
                return invalid(format!("scope {:?} does not have {k} elements", c.scope));
            }
            validate_subset(&c.scope, n)?;
            if c.rhs != 1 && c.rhs != -1 {
                return invalid(format!("rhs {} is not a sign", c.rhs));
            }
        }
        Ok(KXorInstance { n, k, constraints })
    }

    pub fn empty(n: u32, k: u32) -> Self {
        KXorInstance { n, k, constraints: Vec::new() }
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    /// Copy with every right-hand side negated.
    pub fn negated(&self) -> Self {
        let constraints = self
            .constraints
            .iter()
            .map(|c| Constraint { scope: c.scope.clone(), rhs: -c.rhs })
            .collect();
        KXorInstance { n: self.n, k: self.k, constraints }
    }

    /// Serializes to the line-based text format.
    pub fn to_text(&self) -> String {
        let mut out = format!("kxor n={} k={} count={}\n", self.n, self.k, self.len());
        for c in &self.constraints {
            for i in &c.scope {
                write!(out, "{i} ").unwrap();
            }
            out.push_str(if c.rhs > 0 { "+1\n" } else { "-1\n" });
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse { line: 1, message: "missing header".into() })?;
        let fields = parse_header(header, "kxor", &["n", "k", "count"], 1)?;
        let n: u32 = parse_num(&fields[0], 1)?;
        let k: u32 = parse_num(&fields[1], 1)?;
        let count: usize = parse_num(&fields[2], 1)?;
        let mut constraints = Vec::with_capacity(count);
        for (idx, line) in lines {
            let line_no = idx + 1;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() != k as usize + 1 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {} fields, found {}", k + 1, tokens.len()),
                });
            }
            let scope = tokens[..k as usize]
                .iter()
                .map(|t| parse_num::<u32>(t, line_no))
                .collect::<Result<Vec<_>>>()?;
            let rhs = match tokens[k as usize] {
                "+1" => 1,
                "-1" => -1,
                other => {
                    return Err(Error::Parse { line: line_no, message: format!("bad sign {other:?}") })
                }
            };
            validate_subset(&scope, n).map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
            constraints.push(Constraint { scope, rhs });
        }
        if constraints.len() != count {
            return Err(Error::Parse {
                line: 1,
                message: format!("header count {count} but {} constraints", constraints.len()),
            });
        }
        KXorInstance::new(n, k, constraints)
    }
}

pub(crate) fn parse_header(header: &str, tag: &str, keys: &[&str], line: usize) -> Result<Vec<String>> {
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some(tag) {
        return Err(Error::Parse { line, message: format!("header must start with {tag:?}") });
    }
    let pairs: Vec<(&str, &str)> = tokens.filter_map(|t| t.split_once('=')).collect();
    keys.iter()
        .map(|key| {
            pairs
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.to_string())
                .ok_or_else(|| Error::Parse { line, message: format!("header lacks {key}=") })
        })
        .collect()
}

pub(crate) fn parse_num<T: std::str::FromStr>(token: &str, line: usize) -> Result<T> {
    token
        .parse()
        .map_err(|_| Error::Parse { line, message: format!("cannot parse {token:?}") })
}

fn draw_count<R: Rng>(rng: &mut R, m: f64, poissonized: bool) -> usize {
    if poissonized {
        poisson(rng, m) as usize
    } else {
        m as usize
    }
}

fn draw_scope<R: Rng>(rng: &mut R, table: &BinomialTable, n: u32, k: u32, total: u64) -> Vec<u32> {
    let mut scope = Vec::with_capacity(k as usize);
    table.unrank_into(rng.gen_range(0..total), n, k as usize, &mut scope);
    scope
}

/// Uniform scopes with Rademacher right-hand sides.
pub fn sample_random_instance(n: u32, k: u32, m: f64, poissonized: bool, seed: u64) -> Result<KXorInstance> {
    validate_shape(n, k, m, poissonized)?;
    let table = BinomialTable::new(n as usize);
    let total = table.get(n as usize, k as i64)?;
    let mut rng = stream(seed, "random-instance", 0);
    let count = draw_count(&mut rng, m, poissonized);
    let constraints = (0..count)
        .map(|_| {
            let scope = draw_scope(&mut rng, &table, n, k, total);
            Constraint { scope, rhs: rademacher(&mut rng) }
        })
        .collect();
    Ok(KXorInstance { n, k, constraints })
}

/// Uniform scopes with `rhs = η·z^S`, `E[η] = ρ`.
pub fn sample_planted_instance(params: &PlantedParams, z: &Assignment, seed: u64) -> Result<KXorInstance> {
    params.validate()?;
    if z.len() != params.n as usize {
        return invalid(format!("assignment has length {}, expected {}", z.len(), params.n));
    }
    let (n, k) = (params.n, params.k);
    let table = BinomialTable::new(n as usize);
    let total = table.get(n as usize, k as i64)?;
    let mut rng = stream(seed, "planted-instance", 0);
    let count = draw_count(&mut rng, params.m, params.poissonized);
    let keep = (1.0 + params.rho) / 2.0;
    let constraints = (0..count)
        .map(|_| {
            let scope = draw_scope(&mut rng, &table, n, k, total);
            let eta = if rng.gen::<f64>() < keep { 1 } else { -1 };
            Constraint { rhs: eta * z.parity(&scope), scope }
        })
        .collect();
    Ok(KXorInstance { n, k, constraints })
}

/// `adv_𝓘(x) = (1/|𝓘|) Σ b·x^S` as an exact fraction.
pub fn advantage(instance: &KXorInstance, x: &Assignment) -> Result<Ratio<i64>> {
    if instance.is_empty() {
        return Err(Error::EmptyInstance);
    }
    let total = satisfied_minus_violated(instance, x)?;
    Ok(Ratio::new(total, instance.len() as i64))
}

/// `A = #satisfied − #violated = Σ b_i·z^{S_i}`.
pub fn satisfied_minus_violated(instance: &KXorInstance, z: &Assignment) -> Result<i64> {
    if z.len() != instance.n as usize {
        return invalid(format!("assignment has length {}, expected {}", z.len(), instance.n));
    }
    Ok(instance
        .constraints
        .iter()
        .map(|c| (c.rhs * z.parity(&c.scope)) as i64)
        .sum())
}

/// Aggregated coefficient of one scope.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ScopeCoefficient {
    pub scope: Vec<u32>,
    /// `B(S)`, the sum of right-hand sides.
    pub value: i64,
    /// Number of constraints with this scope.
    pub multiplicity: u32,
}

/// `S ↦ B(S)` keyed by colex rank; absent keys mean zero.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CoefficientMap {
    pub n: u32,
    pub k: u32,
    pub entries: BTreeMap<u64, ScopeCoefficient>,
}

impl CoefficientMap {
    pub fn get(&self, rank: u64) -> i64 {
        self.entries.get(&rank).map_or(0, |e| e.value)
    }

    pub fn total_multiplicity(&self) -> usize {
        self.entries.values().map(|e| e.multiplicity as usize).sum()
    }

    /// Dense vector over all `C(n,k)` ranks, each value times `scale`.
    pub fn to_dense(&self, scale: f64) -> Result<Vec<f64>> {
        let total = binomial_u64(self.n as u64, self.k as i64)? as usize;
        let mut dense = vec![0.0; total];
        for (&rank, e) in &self.entries {
            dense[rank as usize] = e.value as f64 * scale;
        }
        Ok(dense)
    }
}

pub fn coefficient_map(instance: &KXorInstance) -> CoefficientMap {
    let table = BinomialTable::new(instance.n as usize);
    let mut entries: BTreeMap<u64, ScopeCoefficient> = BTreeMap::new();
    for c in &instance.constraints {
        let rank = table.rank_unchecked(&c.scope);
        let e = entries.entry(rank).or_insert_with(|| ScopeCoefficient {
            scope: c.scope.clone(),
            value: 0,
            multiplicity: 0,
        });
        e.value += c.rhs as i64;
        e.multiplicity += 1;
    }
    CoefficientMap { n: instance.n, k: instance.k, entries }
}

/// Main and guide halves of a random split.
#[derive(Clone, Debug, Serialize)]
pub struct SplitResult {
    pub main: KXorInstance,
    pub guide: KXorInstance,
    pub zeta: f64,
}

/// Sends each constraint to the guide independently with probability `zeta`.
pub fn split_instance(instance: &KXorInstance, zeta: f64, seed: u64) -> Result<SplitResult> {
    if !(0.0..=1.0).contains(&zeta) {
        return invalid(format!("zeta = {zeta} outside [0, 1]"));
    }
    let mut rng = stream(seed, "split", 0);
    let (mut main, mut guide) = (Vec::new(), Vec::new());
    for c in &instance.constraints {
        if rng.gen::<f64>() < zeta {
            guide.push(c.clone());
        } else {
            main.push(c.clone());
        }
    }
    Ok(SplitResult {
        main: KXorInstance { n: instance.n, k: instance.k, constraints: main },
        guide: KXorInstance { n: instance.n, k: instance.k, constraints: guide },
        zeta,
    })
}

/// `Poisson(mu0) − Poisson(mu1)`.
pub fn sample_skellam(mu0: f64, mu1: f64, seed: u64) -> Result<i64> {
    let mut rng = stream(seed, "skellam", 0);
    skellam_from(&mut rng, mu0, mu1)
}

pub fn skellam_from(rng: &mut Stream, mu0: f64, mu1: f64) -> Result<i64> {
    if !(mu0 >= 0.0 && mu1 >= 0.0) {
        return invalid(format!("Skellam parameters must be nonnegative, got ({mu0}, {mu1})"));
    }
    Ok(poisson(rng, mu0) as i64 - poisson(rng, mu1) as i64)
}
