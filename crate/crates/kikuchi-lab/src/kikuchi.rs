//! The implicit Kikuchi operator on ℓ-subsets.
//!
//! Only the k-subset coefficients are stored. Row `T` lists, for every stored
//! scope `S` with `|S ∩ T| = k/2`, the column `T Δ S` with weight `w(S)`.

use std::fmt::{Debug, Write as _};
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use serde::Serialize;

use crate::combinat::{
    binomial, binomial_u64, checked_dimension, combinations, intersection_size, sym_diff_into,
    validate_subset, BinomialTable, DEFAULT_DIMENSION_CAP,
};
use crate::error::{invalid, Result};
use crate::instances::{coefficient_map, Assignment, KXorInstance};

/// Entry type of an operator: exact integers for kXOR, reals for tensors.
pub trait Weight: Copy + Send + Sync + Debug + PartialEq + Default + 'static {
    fn to_f64(self) -> f64;
    fn is_zero(self) -> bool;
    fn add(self, other: Self) -> Self;
}

impl Weight for i64 {
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn is_zero(self) -> bool {
        self == 0
    }
    fn add(self, other: Self) -> Self {
        self + other
    }
}

impl Weight for f64 {
    fn to_f64(self) -> f64 {
        self
    }
    fn is_zero(self) -> bool {
        self == 0.0
    }
    fn add(self, other: Self) -> Self {
        self + other
    }
}

/// A stored scope with its aggregated weight and constraint multiplicity.
#[derive(Clone, Debug, PartialEq)]
pub struct ScopeWeight<W> {
    pub rank: u64,
    pub scope: Vec<u32>,
    pub weight: W,
    pub multiplicity: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RowEntry<W> {
    pub column: u64,
    pub value: W,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DegreeStats {
    /// Largest number of incident matching edges (multiset degree).
    pub max_degree: u64,
    /// `2·|edge multiset| / N`.
    pub average_degree: f64,
    /// Largest number of distinct nonzero neighbours.
    pub max_collapsed_degree: u64,
    pub average_collapsed_degree: f64,
    pub edge_multiset_size: u64,
    /// Largest number of listed entries in a row, zero weights included.
    pub max_row_entries: u64,
    /// Largest `Σ_U |K(T,U)|` over rows.
    pub max_abs_row_sum: f64,
}

/// Compressed sparse rows, used by the iterative eigensolver.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub dimension: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn matvec_into(&self, v: &[f64], out: &mut [f64]) {
        for (row, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for idx in self.row_ptr[row]..self.row_ptr[row + 1] {
                acc += self.values[idx] * v[self.cols[idx] as usize];
            }
            *slot = acc;
        }
    }

    pub fn max_abs_row_sum(&self) -> f64 {
        (0..self.dimension)
            .map(|r| self.values[self.row_ptr[r]..self.row_ptr[r + 1]].iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
enum RowStrategy {
    /// Loop over stored scopes and test the overlap condition.
    Scan,
    /// Pick k/2 elements inside T and k/2 outside and look the scope up.
    Enumerate { inside: Vec<Vec<usize>>, outside: Vec<Vec<usize>> },
}

#[derive(Clone, Debug)]
pub struct KikuchiOperator<W> {
    n: u32,
    k: u32,
    ell: u32,
    dimension: usize,
    scopes: Vec<ScopeWeight<W>>,
    /// `scopes[rank]` is valid when every k-subset is stored.
    complete: bool,
    table: Arc<BinomialTable>,
    sparsity_bound: usize,
    strategy: RowStrategy,
}

/// Reusable buffers for row generation.
#[derive(Default)]
pub struct RowScratch {
    t: Vec<u32>,
    u: Vec<u32>,
    s: Vec<u32>,
    outside: Vec<u32>,
}

fn validate_levels(n: u32, k: u32, ell: u32) -> Result<()> {
    if k == 0 || k % 2 != 0 {
        return invalid(format!("k = {k} must be a positive even number"));
    }
    if ell < k / 2 || ell > n || k > n {
        return invalid(format!("need n >= ell >= k/2 and n >= k, got n={n}, k={k}, ell={ell}"));
    }
    Ok(())
}

/// `δ_{ℓ,n,k} = C(k,k/2)·C(n−k, ℓ−k/2)/C(n,ℓ)`.
pub fn delta(ell: u32, n: u32, k: u32) -> Result<BigRational> {
    validate_levels(n, k, ell)?;
    let num = binomial(k as u64, (k / 2) as i64)? * binomial((n - k) as u64, ell as i64 - (k / 2) as i64)?;
    let den = binomial(n as u64, ell as i64)?;
    Ok(BigRational::new(BigInt::from(num), BigInt::from(den)))
}

pub fn delta_f64(ell: u32, n: u32, k: u32) -> Result<f64> {
    let d = delta(ell, n, k)?;
    Ok(d.numer().to_f64().unwrap_or(f64::NAN) / d.denom().to_f64().unwrap_or(f64::NAN))
}

/// `d_ℓ = C(n−ℓ,k/2)·C(ℓ,k/2)`, the exact degree of a full tensor operator.
pub fn tensor_regular_degree(n: u32, ell: u32, k: u32) -> Result<u64> {
    validate_levels(n, k, ell)?;
    Ok(binomial_u64((n - ell) as u64, (k / 2) as i64)? * binomial_u64(ell as u64, (k / 2) as i64)?)
}

/// Builds an operator from `(scope, weight, multiplicity)` triples;
/// repeated scopes are merged.
pub fn build_operator<W: Weight>(
    coeffs: impl IntoIterator<Item = (Vec<u32>, W, u32)>,
    n: u32,
    k: u32,
    ell: u32,
) -> Result<KikuchiOperator<W>> {
    build_operator_with_cap(coeffs, n, k, ell, DEFAULT_DIMENSION_CAP)
}

pub fn build_operator_with_cap<W: Weight>(
    coeffs: impl IntoIterator<Item = (Vec<u32>, W, u32)>,
    n: u32,
    k: u32,
    ell: u32,
    cap: u64,
) -> Result<KikuchiOperator<W>> {
    validate_levels(n, k, ell)?;
    let dimension = checked_dimension(n, ell, cap)?;
    let table = Arc::new(BinomialTable::new(n as usize));
    let mut scopes: Vec<ScopeWeight<W>> = Vec::new();
    for (scope, weight, multiplicity) in coeffs {
        if scope.len() != k as usize {
            return invalid(format!("scope {scope:?} does not have {k} elements"));
        }
        validate_subset(&scope, n)?;
        let rank = table.rank_unchecked(&scope);
        scopes.push(ScopeWeight { rank, scope, weight, multiplicity });
    }
    scopes.sort_by_key(|s| s.rank);
    let mut merged: Vec<ScopeWeight<W>> = Vec::with_capacity(scopes.len());
    for s in scopes {
        match merged.last_mut() {
            Some(last) if last.rank == s.rank => {
                last.weight = last.weight.add(s.weight);
                last.multiplicity += s.multiplicity;
            }
            _ => merged.push(s),
        }
    }
    let total_scopes = table.get(n as usize, k as i64)? as usize;
    let complete = merged.len() == total_scopes;
    let half = (k / 2) as usize;
    let structural = binomial_u64(ell as u64, half as i64)? as usize
        * binomial_u64((n - ell) as u64, half as i64)? as usize;
    let strategy = if structural < merged.len() {
        RowStrategy::Enumerate {
            inside: combinations(ell as usize, half),
            outside: combinations((n - ell) as usize, half),
        }
    } else {
        RowStrategy::Scan
    };
    Ok(KikuchiOperator {
        n,
        k,
        ell,
        dimension,
        sparsity_bound: structural.min(merged.len()),
        scopes: merged,
        complete,
        table,
        strategy,
    })
}

/// Integer operator with weights `B(S)` from an instance.
pub fn operator_from_instance(instance: &KXorInstance, ell: u32) -> Result<KikuchiOperator<i64>> {
    let map = coefficient_map(instance);
    build_operator(
        map.entries.into_values().map(|e| (e.scope, e.value, e.multiplicity)),
        instance.n(),
        instance.k(),
        ell,
    )
}

/// Real operator from a dense coefficient vector over all k-subset ranks.
pub fn operator_from_dense(n: u32, k: u32, ell: u32, coeffs: &[f64]) -> Result<KikuchiOperator<f64>> {
    let total = binomial_u64(n as u64, k as i64)? as usize;
    if coeffs.len() != total {
        return invalid(format!("expected {total} coefficients, got {}", coeffs.len()));
    }
    let table = BinomialTable::new(n as usize);
    let mut scope = Vec::new();
    let triples: Vec<(Vec<u32>, f64, u32)> = coeffs
        .iter()
        .enumerate()
        .map(|(r, &w)| {
            table.unrank_into(r as u64, n, k as usize, &mut scope);
            (scope.clone(), w, 1)
        })
        .collect();
    build_operator(triples, n, k, ell)
}

impl<W: Weight> KikuchiOperator<W> {
    pub fn n(&self) -> u32 {
        self.n
    }
    pub fn k(&self) -> u32 {
        self.k
    }
    pub fn ell(&self) -> u32 {
        self.ell
    }
    /// `N = C(n, ℓ)`.
    pub fn dimension(&self) -> usize {
        self.dimension
    }
    pub fn scopes(&self) -> &[ScopeWeight<W>] {
        &self.scopes
    }
    pub fn table(&self) -> &BinomialTable {
        &self.table
    }
    /// Structural bound on row entries: `min(#scopes, C(ℓ,k/2)·C(n−ℓ,k/2))`.
    pub fn sparsity_bound(&self) -> usize {
        self.sparsity_bound
    }

    /// Probabilistic sparsity bound `min(#scopes, ⌈(1+κ)·δ·m⌉)`.
    pub fn sparsity_bound_with_kappa(&self, kappa: f64) -> Result<usize> {
        let m: u64 = self.scopes.iter().map(|s| s.multiplicity as u64).sum();
        let d = delta_f64(self.ell, self.n, self.k)?;
        Ok(self.scopes.len().min(((1.0 + kappa) * d * m as f64).ceil() as usize))
    }

    /// Largest `|w(S)|` over stored scopes.
    pub fn max_abs_weight(&self) -> f64 {
        self.scopes.iter().map(|s| s.weight.to_f64().abs()).fold(0.0, f64::max)
    }

    fn lookup(&self, rank: u64) -> Option<&ScopeWeight<W>> {
        if self.complete {
            self.scopes.get(rank as usize)
        } else {
            self.scopes.binary_search_by_key(&rank, |s| s.rank).ok().map(|i| &self.scopes[i])
        }
    }

    /// Calls `f(column, weight, multiplicity)` for every listed entry of `row`.
    pub fn for_each_row_entry(&self, row: u64, scratch: &mut RowScratch, mut f: impl FnMut(u64, W, u32)) {
        let half = (self.k / 2) as usize;
        let ell = self.ell as usize;
        self.table.unrank_into(row, self.n, ell, &mut scratch.t);
        match &self.strategy {
            RowStrategy::Scan => {
                for s in &self.scopes {
                    if intersection_size(&s.scope, &scratch.t) == half {
                        sym_diff_into(&scratch.t, &s.scope, &mut scratch.u);
                        f(self.table.rank_unchecked(&scratch.u), s.weight, s.multiplicity);
                    }
                }
            }
            RowStrategy::Enumerate { inside, outside } => {
                scratch.outside.clear();
                let mut ti = 0;
                for e in 1..=self.n {
                    if ti < ell && scratch.t[ti] == e {
                        ti += 1;
                    } else {
                        scratch.outside.push(e);
                    }
                }
                for pick_in in inside {
                    for pick_out in outside {
                        scratch.s.clear();
                        scratch.s.extend(pick_in.iter().map(|&i| scratch.t[i]));
                        scratch.s.extend(pick_out.iter().map(|&i| scratch.outside[i]));
                        scratch.s.sort_unstable();
                        let rank = self.table.rank_unchecked(&scratch.s);
                        if let Some(sw) = self.lookup(rank) {
                            sym_diff_into(&scratch.t, &scratch.s, &mut scratch.u);
                            f(self.table.rank_unchecked(&scratch.u), sw.weight, sw.multiplicity);
                        }
                    }
                }
            }
        }
    }

    fn check_rank(&self, rank: u64) -> Result<()> {
        if rank as usize >= self.dimension {
            return invalid(format!("rank {rank} out of range for dimension {}", self.dimension));
        }
        Ok(())
    }

    /// Adjacency-list oracle: distinct columns of row `row`, zero weights included.
    pub fn row_nonzeros(&self, row: u64) -> Result<Vec<RowEntry<W>>> {
        self.check_rank(row)?;
        let mut out = Vec::new();
        let mut scratch = RowScratch::default();
        self.for_each_row_entry(row, &mut scratch, |column, value, _| out.push(RowEntry { column, value }));
        Ok(out)
    }

    /// `K(T,U) = w(T Δ U)` when `|T Δ U| = k`, otherwise zero.
    pub fn entry(&self, t: u64, u: u64) -> Result<W> {
        self.check_rank(t)?;
        self.check_rank(u)?;
        let ell = self.ell as usize;
        let (mut a, mut b, mut d) = (Vec::new(), Vec::new(), Vec::new());
        self.table.unrank_into(t, self.n, ell, &mut a);
        self.table.unrank_into(u, self.n, ell, &mut b);
        sym_diff_into(&a, &b, &mut d);
        if d.len() != self.k as usize {
            return Ok(W::default());
        }
        Ok(self.lookup(self.table.rank_unchecked(&d)).map_or(W::default(), |s| s.weight))
    }

    /// `K·v` in floating point.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dimension {
            return invalid(format!("vector length {} != dimension {}", v.len(), self.dimension));
        }
        let mut scratch = RowScratch::default();
        Ok((0..self.dimension as u64)
            .map(|row| {
                let mut acc = 0.0;
                self.for_each_row_entry(row, &mut scratch, |c, w, _| acc += w.to_f64() * v[c as usize]);
                acc
            })
            .collect())
    }

    /// `⟨v, K v⟩` in floating point.
    pub fn quadratic_form(&self, v: &[f64]) -> Result<f64> {
        let kv = self.matvec(v)?;
        Ok(v.iter().zip(&kv).map(|(a, b)| a * b).sum())
    }

    pub fn to_csr(&self) -> CsrMatrix {
        let mut row_ptr = Vec::with_capacity(self.dimension + 1);
        let mut cols = Vec::new();
        let mut values = Vec::new();
        let mut scratch = RowScratch::default();
        row_ptr.push(0);
        for row in 0..self.dimension as u64 {
            self.for_each_row_entry(row, &mut scratch, |c, w, _| {
                if !w.is_zero() {
                    cols.push(c as u32);
                    values.push(w.to_f64());
                }
            });
            row_ptr.push(cols.len());
        }
        CsrMatrix { dimension: self.dimension, row_ptr, cols, values }
    }

    /// Dense row-major copy (for oracles and debugging).
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.dimension]; self.dimension];
        let mut scratch = RowScratch::default();
        for (row, slot) in dense.iter_mut().enumerate() {
            self.for_each_row_entry(row as u64, &mut scratch, |c, w, _| slot[c as usize] = w.to_f64());
        }
        dense
    }

    /// Row-major text dump, one row per line.
    pub fn dense_dump(&self) -> String {
        let mut out = String::new();
        for row in self.to_dense() {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{}", line.join(" ")).unwrap();
        }
        out
    }

    pub fn degree_stats(&self) -> DegreeStats {
        let mut stats = DegreeStats {
            max_degree: 0,
            average_degree: 0.0,
            max_collapsed_degree: 0,
            average_collapsed_degree: 0.0,
            edge_multiset_size: 0,
            max_row_entries: 0,
            max_abs_row_sum: 0.0,
        };
        let mut scratch = RowScratch::default();
        let (mut total_multi, mut total_collapsed) = (0u64, 0u64);
        for row in 0..self.dimension as u64 {
            let (mut multi, mut collapsed, mut entries, mut abs_sum) = (0u64, 0u64, 0u64, 0.0);
            self.for_each_row_entry(row, &mut scratch, |_, w, m| {
                multi += m as u64;
                entries += 1;
                if !w.is_zero() {
                    collapsed += 1;
                }
                abs_sum += w.to_f64().abs();
            });
            total_multi += multi;
            total_collapsed += collapsed;
            stats.max_degree = stats.max_degree.max(multi);
            stats.max_collapsed_degree = stats.max_collapsed_degree.max(collapsed);
            stats.max_row_entries = stats.max_row_entries.max(entries);
            stats.max_abs_row_sum = stats.max_abs_row_sum.max(abs_sum);
        }
        if self.dimension > 0 {
            stats.average_degree = total_multi as f64 / self.dimension as f64;
            stats.average_collapsed_degree = total_collapsed as f64 / self.dimension as f64;
        }
        stats.edge_multiset_size = total_multi / 2;
        stats
    }
}

impl KikuchiOperator<i64> {
    /// `K·v` exactly.
    pub fn matvec_exact(&self, v: &[i64]) -> Result<Vec<i64>> {
        if v.len() != self.dimension {
            return invalid(format!("vector length {} != dimension {}", v.len(), self.dimension));
        }
        let mut scratch = RowScratch::default();
        Ok((0..self.dimension as u64)
            .map(|row| {
                let mut acc = 0i64;
                self.for_each_row_entry(row, &mut scratch, |c, w, _| acc += w * v[c as usize]);
                acc
            })
            .collect())
    }

    /// `⟨v, K v⟩` exactly.
    pub fn quadratic_form_exact(&self, v: &[i64]) -> Result<i128> {
        let kv = self.matvec_exact(v)?;
        Ok(v.iter().zip(&kv).map(|(&a, &b)| a as i128 * b as i128).sum())
    }
}

/// `x^{⊙ℓ}`: the ±1 vector over ℓ-subsets with coordinate `x^T`.
pub fn lift_assignment(x: &Assignment, ell: u32) -> Result<Vec<i64>> {
    let n = x.len() as u32;
    let dim = checked_dimension(n, ell, DEFAULT_DIMENSION_CAP)?;
    let table = BinomialTable::new(n as usize);
    let mut t = Vec::new();
    Ok((0..dim as u64)
        .map(|r| {
            table.unrank_into(r, n, ell as usize, &mut t);
            x.parity(&t) as i64
        })
        .collect())
}

/// Real lift `z^T = Π_{i∈T} z_i` over ℓ-subsets.
pub fn lift_real(z: &[f64], ell: u32) -> Result<Vec<f64>> {
    let n = z.len() as u32;
    let dim = checked_dimension(n, ell, DEFAULT_DIMENSION_CAP)?;
    let table = BinomialTable::new(n as usize);
    let mut t = Vec::new();
    Ok((0..dim as u64)
        .map(|r| {
            table.unrank_into(r, n, ell as usize, &mut t);
            t.iter().map(|&i| z[i as usize - 1]).product()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinat::{subset_rank, subset_unrank, sym_diff};
    use crate::instances::{sample_random_instance, Constraint, PlantedParams};
    use num_traits::Zero;
    use proptest::prelude::*;

    /// Dense double-loop oracle built straight from the constraint list.
    fn brute_force(instance: &KXorInstance, ell: u32) -> Vec<Vec<i64>> {
        let n = instance.n();
        let dim = binomial_u64(n as u64, ell as i64).unwrap() as usize;
        let subsets: Vec<Vec<u32>> = (0..dim as u64).map(|r| subset_unrank(r, n, ell).unwrap()).collect();
        let mut m = vec![vec![0i64; dim]; dim];
        for (i, t) in subsets.iter().enumerate() {
            for (j, u) in subsets.iter().enumerate() {
                let d = sym_diff(t, u);
                for c in instance.constraints() {
                    if d == c.scope {
                        m[i][j] += c.rhs as i64;
                    }
                }
            }
        }
        m
    }

    #[test]
    fn delta_examples() {
        assert_eq!(delta(1, 8, 2).unwrap(), BigRational::new(1.into(), 4.into()));
        assert_eq!(delta(2, 8, 4).unwrap(), BigRational::new(3.into(), 14.into()));
        assert!(delta(1, 8, 3).is_err());
        assert!(delta(1, 8, 4).is_err());
    }

    #[test]
    fn matching_touches_delta_fraction_of_vertices() {
        for (n, k, ell) in [(8u32, 2u32, 1u32), (8, 4, 2), (9, 4, 3), (10, 4, 4), (10, 2, 3)] {
            let scope: Vec<u32> = (1..=k).map(|i| 2 * i - 1).collect();
            let op = build_operator(vec![(scope, 1i64, 1)], n, k, ell).unwrap();
            let touched = (0..op.dimension() as u64)
                .filter(|&r| !op.row_nonzeros(r).unwrap().is_empty())
                .count();
            let expected = delta(ell, n, k).unwrap() * BigRational::from_integer(op.dimension().into());
            assert_eq!(BigRational::from_integer(touched.into()), expected);
        }
    }

    #[test]
    fn empty_operator_is_zero() {
        let op = build_operator(Vec::<(Vec<u32>, i64, u32)>::new(), 8, 4, 2).unwrap();
        assert_eq!(op.matvec(&vec![1.0; 28]).unwrap(), vec![0.0; 28]);
        let s = op.degree_stats();
        assert_eq!((s.max_degree, s.average_degree), (0, 0.0));
    }

    #[test]
    fn single_scope_is_scaled_matching() {
        let (n, k, ell) = (8u32, 4u32, 2u32);
        let scope = vec![2, 3, 5, 7];
        let op = build_operator(vec![(scope.clone(), -3i64, 1)], n, k, ell).unwrap();
        let dense = op.to_dense();
        for t in 0..28u64 {
            for u in 0..28u64 {
                let tt = subset_unrank(t, n, ell).unwrap();
                let uu = subset_unrank(u, n, ell).unwrap();
                let matched = sym_diff(&tt, &uu) == scope;
                assert_eq!(dense[t as usize][u as usize], if matched { -3.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn operator_matches_brute_force_n8_k4_l4() {
        for seed in 0..5 {
            let inst = sample_random_instance(8, 4, 25.0, true, seed).unwrap();
            let op = operator_from_instance(&inst, 4).unwrap();
            assert_eq!(op.dimension(), 70);
            let oracle = brute_force(&inst, 4);
            let mut rebuilt = vec![vec![0i64; 70]; 70];
            for t in 0..70u64 {
                let row = op.row_nonzeros(t).unwrap();
                let mut cols: Vec<u64> = row.iter().map(|e| e.column).collect();
                cols.dedup();
                assert_eq!(cols.len(), row.len());
                for e in row {
                    rebuilt[t as usize][e.column as usize] = e.value;
                }
                for u in 0..70u64 {
                    assert_eq!(op.entry(t, u).unwrap(), oracle[t as usize][u as usize]);
                }
            }
            assert_eq!(rebuilt, oracle);
            let v: Vec<i64> = (0..70).map(|i| (i * 7 % 11) as i64 - 5).collect();
            let expect: Vec<i64> = oracle.iter().map(|r| r.iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
            assert_eq!(op.matvec_exact(&v).unwrap(), expect);
            let vf: Vec<f64> = v.iter().map(|&x| x as f64 * 0.37).collect();
            let got = op.matvec(&vf).unwrap();
            for (g, e) in got.iter().zip(&expect) {
                assert!((g - *e as f64 * 0.37).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn both_row_strategies_agree() {
        // Dense coefficients trigger enumeration; a sparse copy scans.
        let (n, k, ell) = (9u32, 4u32, 3u32);
        let coeffs: Vec<f64> = (0..126).map(|i| ((i * 37) % 17) as f64 - 8.0).collect();
        let full = operator_from_dense(n, k, ell, &coeffs).unwrap();
        assert!(matches!(full.strategy, RowStrategy::Enumerate { .. }));
        let table = BinomialTable::new(n as usize);
        let triples: Vec<(Vec<u32>, f64, u32)> =
            (0..126u64).map(|r| (table.unrank(r, n, k).unwrap(), coeffs[r as usize], 1)).collect();
        let mut scan = build_operator(triples, n, k, ell).unwrap();
        scan.strategy = RowStrategy::Scan;
        for r in 0..full.dimension() as u64 {
            let mut a = full.row_nonzeros(r).unwrap();
            let mut b = scan.row_nonzeros(r).unwrap();
            a.sort_by_key(|e| e.column);
            b.sort_by_key(|e| e.column);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn errors() {
        assert!(build_operator(vec![(vec![1, 2, 3], 1i64, 1)], 8, 3, 2).is_err());
        assert!(build_operator(vec![(vec![1, 2], 1i64, 1)], 40, 2, 20).is_err());
        let op = build_operator(vec![(vec![1, 2], 1i64, 1)], 6, 2, 2).unwrap();
        assert!(op.entry(15, 0).is_err());
        assert!(op.matvec(&[1.0]).is_err());
        assert_eq!(op.entry(3, 3).unwrap(), 0);
    }

    #[test]
    fn tensor_degree_examples() {
        assert_eq!(tensor_regular_degree(6, 3, 4).unwrap(), 9);
        assert_eq!(tensor_regular_degree(10, 2, 4).unwrap(), binomial_u64(8, 2).unwrap());
        let coeffs = vec![1.0; 15];
        let op = operator_from_dense(6, 4, 3, &coeffs).unwrap();
        let s = op.degree_stats();
        assert_eq!(s.max_degree, 9);
        assert_eq!(s.average_degree, 9.0);
        for r in 0..op.dimension() as u64 {
            assert_eq!(op.row_nonzeros(r).unwrap().len(), 9);
        }
    }

    #[test]
    fn full_design_is_regular() {
        for (n, k, ell) in [(7u32, 2u32, 3u32), (8, 4, 4), (9, 4, 2)] {
            let table = BinomialTable::new(n as usize);
            let total = binomial_u64(n as u64, k as i64).unwrap();
            let triples = (0..total).map(|r| (table.unrank(r, n, k).unwrap(), 1i64, 1u32));
            let op = build_operator(triples, n, k, ell).unwrap();
            let d = tensor_regular_degree(n, ell, k).unwrap();
            let s = op.degree_stats();
            assert_eq!(s.max_degree, d);
            assert_eq!(s.average_degree, d as f64);
        }
    }

    #[test]
    fn quadratic_form_identity_exact() {
        for seed in 0..30 {
            let z = Assignment::random(10, seed);
            let p = PlantedParams { n: 10, k: 4, m: 30.0, rho: 0.5, poissonized: true };
            let inst = crate::instances::sample_planted_instance(&p, &z, seed).unwrap();
            for ell in [2u32, 3, 4] {
                let op = operator_from_instance(&inst, ell).unwrap();
                let q = op.quadratic_form_exact(&lift_assignment(&z, ell).unwrap()).unwrap();
                let a = crate::instances::satisfied_minus_violated(&inst, &z).unwrap();
                // q / C(n,ℓ) = δ·A  ⇔  q = C(k,k/2)·C(n−k, ℓ−k/2)·A.
                let scale = binomial_u64(4, 2).unwrap() * binomial_u64(6, ell as i64 - 2).unwrap();
                assert_eq!(q, scale as i128 * a as i128);
            }
        }
    }

    #[test]
    fn average_degree_tracks_delta_m() {
        let (n, k, ell, m) = (16u32, 4u32, 4u32, 200.0);
        let d = delta_f64(ell, n, k).unwrap() * m;
        let z = Assignment::random(n, 1);
        let p = PlantedParams { n, k, m, rho: 0.5, poissonized: true };
        let avgs: Vec<f64> = (0..200)
            .map(|s| {
                let inst = crate::instances::sample_planted_instance(&p, &z, s).unwrap();
                operator_from_instance(&inst, ell).unwrap().degree_stats().average_degree
            })
            .collect();
        let s = crate::stats::summarize(&avgs);
        assert!((s.mean - d).abs() < 4.0 * s.std_error, "{} vs {d}", s.mean);
    }

    #[test]
    fn row_counts_bounded() {
        for seed in 0..100 {
            let inst = sample_random_instance(10, 4, 40.0, true, seed).unwrap();
            let op = operator_from_instance(&inst, 3).unwrap();
            let bound = op.sparsity_bound();
            assert!(op.degree_stats().max_row_entries as usize <= bound);
        }
    }

    #[test]
    fn multiset_and_collapsed_degrees_differ_on_cancellation() {
        let c = |rhs| Constraint { scope: vec![1, 2, 3, 4], rhs };
        let inst = KXorInstance::new(6, 4, vec![c(1), c(-1)]).unwrap();
        let op = operator_from_instance(&inst, 2).unwrap();
        let s = op.degree_stats();
        assert_eq!(s.max_degree, 2);
        assert_eq!(s.max_collapsed_degree, 0);
        assert_eq!(s.max_row_entries, 1);
        assert!(op.to_csr().values.is_empty());
        assert!(op.dense_dump().lines().count() == 15);
    }

    #[test]
    fn delta_is_rational_zero_when_level_too_small_for_ground() {
        // ℓ − k/2 > n − k leaves no room: δ = 0.
        assert!(delta(5, 6, 4).unwrap().is_zero());
    }

    proptest! {
        #[test]
        fn symmetric_entries(seed in any::<u64>(), ell in 2u32..=4) {
            let inst = sample_random_instance(8, 4, 12.0, true, seed).unwrap();
            let op = operator_from_instance(&inst, ell).unwrap();
            let dense = op.to_dense();
            for t in 0..op.dimension() {
                prop_assert_eq!(dense[t][t], 0.0);
                for u in 0..t {
                    prop_assert_eq!(dense[t][u], dense[u][t]);
                }
            }
        }

        #[test]
        fn advantage_transfer(seed in any::<u64>(), ell in prop::sample::select(vec![2u32, 4])) {
            let inst = sample_random_instance(9, 4, 15.0, false, seed).unwrap();
            let x = Assignment::random(9, seed.wrapping_add(1));
            let op = operator_from_instance(&inst, ell).unwrap();
            let q = op.quadratic_form_exact(&lift_assignment(&x, ell).unwrap()).unwrap();
            let two_edges = 2 * op.degree_stats().edge_multiset_size as i128;
            let adv = crate::instances::advantage(&inst, &x).unwrap();
            prop_assert_eq!(q * *adv.denom() as i128, *adv.numer() as i128 * two_edges);
        }

        #[test]
        fn lift_parity_matches_ranks(seed in any::<u64>()) {
            let x = Assignment::random(7, seed);
            let lift = lift_assignment(&x, 3).unwrap();
            for r in 0..35u64 {
                let t = subset_unrank(r, 7, 3).unwrap();
                prop_assert_eq!(lift[subset_rank(&t, 7).unwrap() as usize], x.parity(&t) as i64);
            }
        }
    }
}
