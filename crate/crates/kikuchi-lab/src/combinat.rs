//! Exact binomials, colex ranking of subsets, symmetric differences and
//! enumeration of k-uniform partitions.
//!
//! Ground-set elements are 1-based and subsets are stored as strictly
//! increasing `u32` slices.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{invalid, Error, Result};

/// Largest `C(n, ℓ)` a dense vector over ℓ-subsets may have.
pub const DEFAULT_DIMENSION_CAP: u64 = 1 << 24;

/// Largest ground size accepted by [`binomial`].
pub const DEFAULT_MAX_N: u64 = 1 << 20;

/// Exact `C(n, r)`; zero when `r < 0` or `r > n`.
pub fn binomial(n: u64, r: i64) -> Result<BigUint> {
    if n > DEFAULT_MAX_N {
        return Err(Error::Capacity(format!(
            "binomial ground size {n} exceeds {DEFAULT_MAX_N}"
        )));
    }
    if r < 0 || r as u64 > n {
        return Ok(BigUint::zero());
    }
    let r = (r as u64).min(n - r as u64);
    let mut acc = BigUint::one();
    for i in 0..r {
        acc *= n - i;
        acc /= i + 1;
    }
    Ok(acc)
}

/// `C(n, r)` as a `u64`, with a capacity error when it does not fit.
pub fn binomial_u64(n: u64, r: i64) -> Result<u64> {
    binomial(n, r)?
        .to_u64()
        .ok_or_else(|| Error::Capacity(format!("C({n},{r}) does not fit in 64 bits")))
}

/// Natural log of `C(n, r)` for real-valued estimates at large `n`.
pub fn ln_binomial(n: f64, r: f64) -> f64 {
    if r < 0.0 || r > n {
        return f64::NEG_INFINITY;
    }
    let r = r.min(n - r);
    if r.fract() == 0.0 && r <= 64.0 {
        (0..r as u64)
            .map(|i| ((n - i as f64) / (i as f64 + 1.0)).ln())
            .sum()
    } else {
        use statrs::function::gamma::ln_gamma;
        ln_gamma(n + 1.0) - ln_gamma(r + 1.0) - ln_gamma(n - r + 1.0)
    }
}

/// Checks `C(n, ℓ)` against the dimension cap and returns it.
pub fn checked_dimension(n: u32, ell: u32, cap: u64) -> Result<usize> {
    let dim = binomial(n as u64, ell as i64)?;
    match dim.to_u64() {
        Some(d) if d <= cap => Ok(d as usize),
        _ => Err(Error::Capacity(format!(
            "C({n},{ell}) = {dim} exceeds the dimension cap {cap}"
        ))),
    }
}

/// Pascal triangle up to `max_n`, exact entries plus a `u64` mirror used
/// for ranking in hot loops.
#[derive(Clone, Debug)]
pub struct BinomialTable {
    max_n: usize,
    exact: Vec<Vec<BigUint>>,
    fast: Vec<Vec<Option<u64>>>,
}

impl BinomialTable {
    pub fn new(max_n: usize) -> Self {
        let mut exact: Vec<Vec<BigUint>> = Vec::with_capacity(max_n + 1);
        for a in 0..=max_n {
            let mut row = vec![BigUint::one(); a + 1];
            for b in 1..a {
                row[b] = &exact[a - 1][b - 1] + &exact[a - 1][b];
            }
            exact.push(row);
        }
        let fast = exact
            .iter()
            .map(|row| row.iter().map(|v| v.to_u64()).collect())
            .collect();
        BinomialTable { max_n, exact, fast }
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    /// Exact `C(a, b)`; zero outside the triangle.
    pub fn exact(&self, a: usize, b: i64) -> BigUint {
        if b < 0 || b as usize > a || a > self.max_n {
            return BigUint::zero();
        }
        self.exact[a][b as usize].clone()
    }

    /// `C(a, b)` as `u64`, capacity error if it overflows or `a > max_n`.
    pub fn get(&self, a: usize, b: i64) -> Result<u64> {
        if a > self.max_n {
            return Err(Error::Capacity(format!(
                "table built for n <= {}, asked for {a}",
                self.max_n
            )));
        }
        if b < 0 || b as usize > a {
            return Ok(0);
        }
        self.fast[a][b as usize]
            .ok_or_else(|| Error::Capacity(format!("C({a},{b}) does not fit in 64 bits")))
    }

    #[inline]
    fn c(&self, a: usize, b: usize) -> u64 {
        if b > a {
            0
        } else {
            self.fast[a][b].expect("binomial entry exceeds u64")
        }
    }

    /// Colex rank of a valid sorted subset without validation.
    #[inline]
    pub fn rank_unchecked(&self, elements: &[u32]) -> u64 {
        elements
            .iter()
            .enumerate()
            .map(|(i, &e)| self.c(e as usize - 1, i + 1))
            .sum()
    }

    /// Writes the `size`-subset of `[1, n]` with colex `rank` into `out`.
    pub fn unrank_into(&self, mut rank: u64, n: u32, size: usize, out: &mut Vec<u32>) {
        out.clear();
        out.resize(size, 0);
        let mut upper = n as usize;
        for i in (0..size).rev() {
            // Largest e with C(e-1, i+1) <= rank.
            let mut e = upper;
            while self.c(e - 1, i + 1) > rank {
                e -= 1;
            }
            rank -= self.c(e - 1, i + 1);
            out[i] = e as u32;
            upper = e - 1;
        }
    }

    pub fn rank(&self, elements: &[u32], n: u32) -> Result<u64> {
        validate_subset(elements, n)?;
        if n as usize > self.max_n {
            return Err(Error::Capacity(format!(
                "table built for n <= {}, asked for {n}",
                self.max_n
            )));
        }
        let total = self.get(n as usize, elements.len() as i64)?;
        let r = self.rank_unchecked(elements);
        debug_assert!(r < total);
        Ok(r)
    }

    pub fn unrank(&self, rank: u64, n: u32, size: u32) -> Result<Vec<u32>> {
        if n as usize > self.max_n {
            return Err(Error::Capacity(format!(
                "table built for n <= {}, asked for {n}",
                self.max_n
            )));
        }
        let total = self.get(n as usize, size as i64)?;
        if rank >= total {
            return invalid(format!("rank {rank} out of range for C({n},{size}) = {total}"));
        }
        let mut out = Vec::new();
        self.unrank_into(rank, n, size as usize, &mut out);
        Ok(out)
    }
}

/// Rejects subsets that are unsorted, repeat elements or leave `[1, n]`.
pub fn validate_subset(elements: &[u32], n: u32) -> Result<()> {
    for (i, &e) in elements.iter().enumerate() {
        if e == 0 || e > n {
            return invalid(format!("element {e} outside [1, {n}]"));
        }
        if i > 0 && elements[i - 1] >= e {
            return invalid(format!("subset {elements:?} is not strictly increasing"));
        }
    }
    Ok(())
}

/// Colex rank `Σ_i C(e_i − 1, i + 1)`.
pub fn subset_rank(elements: &[u32], n: u32) -> Result<u64> {
    validate_subset(elements, n)?;
    let mut rank = BigUint::zero();
    for (i, &e) in elements.iter().enumerate() {
        rank += binomial(e as u64 - 1, i as i64 + 1)?;
    }
    rank.to_u64()
        .ok_or_else(|| Error::Capacity("subset rank does not fit in 64 bits".into()))
}

/// Inverse of [`subset_rank`].
pub fn subset_unrank(rank: u64, n: u32, size: u32) -> Result<Vec<u32>> {
    let total = binomial(n as u64, size as i64)?;
    if BigUint::from(rank) >= total {
        return invalid(format!("rank {rank} out of range for C({n},{size}) = {total}"));
    }
    let mut left = BigUint::from(rank);
    let mut out = vec![0u32; size as usize];
    let mut upper = n as u64;
    for i in (0..size as usize).rev() {
        let mut e = upper;
        loop {
            let c = binomial(e - 1, i as i64 + 1)?;
            if c <= left {
                left -= c;
                break;
            }
            e -= 1;
        }
        out[i] = e as u32;
        upper = e - 1;
    }
    Ok(out)
}

/// `(T ∪ U) \ (T ∩ U)` of two sorted subsets.
pub fn sym_diff(t: &[u32], u: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(t.len() + u.len());
    sym_diff_into(t, u, &mut out);
    out
}

pub(crate) fn sym_diff_into(t: &[u32], u: &[u32], out: &mut Vec<u32>) {
    out.clear();
    let (mut i, mut j) = (0, 0);
    while i < t.len() && j < u.len() {
        match t[i].cmp(&u[j]) {
            std::cmp::Ordering::Less => {
                out.push(t[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(u[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&t[i..]);
    out.extend_from_slice(&u[j..]);
}

/// Size of the intersection of two sorted subsets.
#[inline]
pub fn intersection_size(t: &[u32], u: &[u32]) -> usize {
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < t.len() && j < u.len() {
        match t[i].cmp(&u[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// All `size`-subsets of `0..len` as position lists, in lexicographic order.
pub fn combinations(len: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if size > len {
        return out;
    }
    let mut idx: Vec<usize> = (0..size).collect();
    loop {
        out.push(idx.clone());
        let mut i = size;
        while i > 0 && idx[i - 1] == i - 1 + len - size {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..size {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Unordered partitions of positions `0..len` into blocks of `k`.
///
/// The block containing the smallest unused position is fixed first, so each
/// unordered partition appears once.
pub fn position_partitions(len: usize, k: usize) -> Result<Vec<Vec<Vec<usize>>>> {
    if k == 0 || len % k != 0 {
        return invalid(format!("block size {k} does not divide {len}"));
    }
    let mut out = Vec::new();
    let mut current = Vec::new();
    let remaining: Vec<usize> = (0..len).collect();
    extend_partitions(&remaining, k, &mut current, &mut out);
    Ok(out)
}

fn extend_partitions(
    remaining: &[usize],
    k: usize,
    current: &mut Vec<Vec<usize>>,
    out: &mut Vec<Vec<Vec<usize>>>,
) {
    if remaining.is_empty() {
        out.push(current.clone());
        return;
    }
    let first = remaining[0];
    let rest = &remaining[1..];
    for pick in combinations(rest.len(), k - 1) {
        let mut block = Vec::with_capacity(k);
        block.push(first);
        block.extend(pick.iter().map(|&p| rest[p]));
        let left: Vec<usize> = rest
            .iter()
            .enumerate()
            .filter(|(i, _)| !pick.contains(i))
            .map(|(_, &v)| v)
            .collect();
        current.push(block);
        extend_partitions(&left, k, current, out);
        current.pop();
    }
}

/// The family `Part_k(T)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionFamily {
    pub base_set: Vec<u32>,
    pub block_size: usize,
    pub blocks_count: usize,
    pub partitions: Vec<Vec<Vec<u32>>>,
}

pub fn enumerate_partitions(t: &[u32], k: usize) -> Result<PartitionFamily> {
    let patterns = position_partitions(t.len(), k)?;
    let partitions = patterns
        .into_iter()
        .map(|p| {
            p.into_iter()
                .map(|block| block.into_iter().map(|i| t[i]).collect())
                .collect()
        })
        .collect();
    Ok(PartitionFamily {
        base_set: t.to_vec(),
        block_size: k,
        blocks_count: t.len() / k,
        partitions,
    })
}

/// `Part_k(ℓ) = ℓ! / (k!^c · c!)` with `c = ℓ/k`.
pub fn partition_count(ell: usize, k: usize) -> Result<BigUint> {
    if k == 0 || ell % k != 0 {
        return invalid(format!("block size {k} does not divide {ell}"));
    }
    let c = ell / k;
    let mut count = BigUint::one();
    // Choose the block of the smallest remaining element each time.
    let mut left = ell;
    for _ in 0..c {
        count *= binomial(left as u64 - 1, k as i64 - 1)?;
        left -= k;
    }
    Ok(count)
}

pub fn partition_count_f64(ell: usize, k: usize) -> Result<f64> {
    Ok(partition_count(ell, k)?.to_f64().unwrap_or(f64::INFINITY))
}
