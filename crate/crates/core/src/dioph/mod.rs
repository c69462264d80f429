//! Signed solution counts of `k . x_p = r_p` over the simplex `k . 1 <= R`.
//!
//! Grouping the truncated series by the reachable `r` tuples replaces a sum
//! over `C(R + M, M)` k-tuples by a sum over far fewer distinct `r`, each
//! weighted by its net parity count.

mod file;

use std::collections::HashMap;
use std::hash::Hasher;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub use file::{load_cache, save_cache, CACHE_FORMAT_VERSION};

pub const DEFAULT_ADMISSION_LIMIT: u64 = 1_000_000_000;

/// `C(n, k)` in exact arithmetic.
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::from(0u32);
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 1..=k {
        // the running product of i consecutive integers is divisible by i!
        acc *= n - k + i;
        acc /= i;
    }
    acc
}

/// Number of ordered M-tuples of non-negative integers summing to `r`.
pub fn compositions_count(r: u64, m: u64) -> BigUint {
    assert!(m >= 1, "compositions need M >= 1");
    binomial(r + m - 1, m - 1)
}

/// Number of ordered M-tuples of non-negative integers summing to at most `budget`.
pub fn compositions_cum(budget: u64, m: u64) -> BigUint {
    assert!(m >= 1, "compositions need M >= 1");
    binomial(budget + m, m)
}

pub fn log10_biguint(v: &BigUint) -> f64 {
    if let Some(f) = v.to_f64().filter(|f| f.is_finite() && *f > 0.0) {
        return f.log10();
    }
    let bits = v.bits();
    let shift = bits.saturating_sub(64);
    let top = (v >> shift).to_f64().unwrap_or(f64::MAX);
    top.log10() + shift as f64 * std::f64::consts::LOG10_2
}

/// FNV-1a over `M`, `P` and the covariate values, all little-endian u32.
pub fn x_hash(x: &[Vec<u32>]) -> u64 {
    let mut h = fnv::FnvHasher::default();
    let m = x.first().map_or(0, |v| v.len());
    h.write(&(m as u32).to_le_bytes());
    h.write(&(x.len() as u32).to_le_bytes());
    for row in x {
        for v in row {
            h.write(&v.to_le_bytes());
        }
    }
    h.finish()
}

fn check_x(x: &[Vec<u32>]) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::InvalidData("need at least one covariate vector".into()));
    }
    let m = x[0].len();
    if m == 0 {
        return Err(Error::InvalidData("covariate vectors must be non-empty".into()));
    }
    if let Some(p) = x.iter().position(|row| row.len() != m) {
        return Err(Error::InvalidData(format!(
            "covariate vector {} has length {}, expected {m}",
            p + 1,
            x[p].len()
        )));
    }
    if let Some(j) = (0..m).find(|j| x.iter().all(|row| row[*j] == 0)) {
        return Err(Error::InvalidData(format!(
            "observation {} has all covariates zero",
            j + 1
        )));
    }
    Ok(m)
}

/// Admission check shared by the CLI dry run and `build_cache`.
pub fn admitted_tuples(budget: u32, m: usize, limit: u64) -> Result<u64> {
    let admitted = compositions_cum(budget as u64, m as u64);
    let cap = limit.min(i64::MAX as u64);
    match admitted.to_u64().filter(|a| *a <= cap) {
        Some(a) => Ok(a),
        None => Err(Error::BudgetExceeded {
            log10: log10_biguint(&admitted),
            admitted: admitted.to_string(),
            limit: cap,
        }),
    }
}

/// Signed counts per reachable `r`, plus the subset contributed by `k . 1 == R`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DioCache {
    x: Vec<Vec<u32>>,
    budget: u32,
    x_hash: u64,
    admitted: u64,
    /// Row-major `len x P`, sorted by (sum of r, r).
    r: Vec<u64>,
    counts: Vec<i64>,
    frontier_r: Vec<u64>,
    frontier_counts: Vec<i64>,
}

impl DioCache {
    pub fn x_vectors(&self) -> &[Vec<u32>] {
        &self.x
    }

    pub fn budget(&self) -> u32 {
        self.budget
    }

    pub fn x_hash(&self) -> u64 {
        self.x_hash
    }

    pub fn admitted(&self) -> u64 {
        self.admitted
    }

    pub fn n_attributes(&self) -> usize {
        self.x.len()
    }

    pub fn n_observations(&self) -> usize {
        self.x[0].len()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = (&[u64], i64)> + '_ {
        self.r.chunks_exact(self.x.len()).zip(self.counts.iter().copied())
    }

    /// Entries coming only from k-tuples with `k . 1 == R`.
    pub fn frontier(&self) -> impl ExactSizeIterator<Item = (&[u64], i64)> + '_ {
        self.frontier_r.chunks_exact(self.x.len()).zip(self.frontier_counts.iter().copied())
    }

    pub fn count(&self, r: &[u64]) -> i64 {
        self.entries().find(|(rr, _)| *rr == r).map_or(0, |(_, c)| c)
    }

    pub fn ensure_matches(&self, x: &[Vec<u32>]) -> Result<()> {
        if self.x.as_slice() != x {
            return Err(Error::CacheMismatch(format!(
                "cache was built for x-hash {:016x}, requested {:016x}",
                self.x_hash,
                x_hash(x)
            )));
        }
        Ok(())
    }
}

type CountMap = HashMap<Box<[u64]>, i64>;

struct Enumerator<'a> {
    x: &'a [Vec<u32>],
    m: usize,
    budget: u32,
    r: Vec<u64>,
    all: CountMap,
    frontier: CountMap,
}

impl Enumerator<'_> {
    fn bump(map: &mut CountMap, r: &[u64], delta: i64) {
        match map.get_mut(r) {
            Some(c) => *c += delta,
            None => {
                map.insert(r.into(), delta);
            }
        }
    }

    fn visit(&mut self, j: usize, used: u32) {
        if j == self.m {
            let sign = if used.is_multiple_of(2) { 1 } else { -1 };
            Self::bump(&mut self.all, &self.r, sign);
            if used == self.budget {
                Self::bump(&mut self.frontier, &self.r, sign);
            }
            return;
        }
        let room = self.budget - used;
        for k in 0..=room {
            if k > 0 {
                for (p, row) in self.x.iter().enumerate() {
                    self.r[p] += row[j] as u64;
                }
            }
            self.visit(j + 1, used + k);
        }
        for (p, row) in self.x.iter().enumerate() {
            self.r[p] -= row[j] as u64 * room as u64;
        }
    }
}

fn flatten(map: CountMap, p: usize) -> (Vec<u64>, Vec<i64>) {
    let mut items: Vec<(Box<[u64]>, i64)> = map.into_iter().filter(|(_, c)| *c != 0).collect();
    items.sort_by(|a, b| {
        let sa: u64 = a.0.iter().sum();
        let sb: u64 = b.0.iter().sum();
        sa.cmp(&sb).then_with(|| a.0.cmp(&b.0))
    });
    let mut r = Vec::with_capacity(items.len() * p);
    let mut counts = Vec::with_capacity(items.len());
    for (key, c) in items {
        r.extend_from_slice(&key);
        counts.push(c);
    }
    (r, counts)
}

fn merge_into(dst: &mut CountMap, src: CountMap) -> Result<()> {
    for (k, v) in src {
        let slot = dst.entry(k).or_insert(0);
        *slot = slot
            .checked_add(v)
            .ok_or_else(|| Error::Domain("signed count overflowed 64 bits".into()))?;
    }
    Ok(())
}

/// Enumerates the simplex `k . 1 <= budget` and accumulates signed counts per `r`.
pub fn build_cache(x: &[Vec<u32>], budget: u32, admission_limit: u64) -> Result<DioCache> {
    let m = check_x(x)?;
    let admitted = admitted_tuples(budget, m, admission_limit)?;
    let p = x.len();

    // parallel over the first coordinate's value; merged in slice order
    let slices: Vec<(CountMap, CountMap)> = (0..=budget)
        .into_par_iter()
        .map(|k0| {
            let mut e = Enumerator {
                x,
                m,
                budget,
                r: x.iter().map(|row| row[0] as u64 * k0 as u64).collect(),
                all: HashMap::new(),
                frontier: HashMap::new(),
            };
            e.visit(1, k0);
            (e.all, e.frontier)
        })
        .collect();
    let mut all = CountMap::new();
    let mut frontier = CountMap::new();
    for (a, f) in slices {
        merge_into(&mut all, a)?;
        merge_into(&mut frontier, f)?;
    }
    let (r, counts) = flatten(all, p);
    let (frontier_r, frontier_counts) = flatten(frontier, p);
    Ok(DioCache {
        x: x.to_vec(),
        budget,
        x_hash: x_hash(x),
        admitted,
        r,
        counts,
        frontier_r,
        frontier_counts,
    })
}

/// Brute-force `(K+, K-)` by scanning the box `[0, R]^M` and keeping `k . 1 <= R`.
pub fn signed_count_oracle(x: &[Vec<u32>], r: &[u64], budget: u32) -> Result<(u64, u64)> {
    let m = check_x(x)?;
    if r.len() != x.len() {
        return Err(Error::Domain(format!(
            "r has {} coordinates, expected {}",
            r.len(),
            x.len()
        )));
    }
    let mut k = vec![0u32; m];
    let (mut plus, mut minus) = (0u64, 0u64);
    loop {
        let total: u32 = k.iter().sum();
        if total <= budget {
            let hit = x.iter().zip(r).all(|(row, rp)| {
                row.iter().zip(&k).map(|(a, b)| *a as u64 * *b as u64).sum::<u64>() == *rp
            });
            if hit {
                if total.is_multiple_of(2) {
                    plus += 1;
                } else {
                    minus += 1;
                }
            }
        }
        // odometer increment over the box
        let mut j = 0;
        loop {
            if j == m {
                return Ok((plus, minus));
            }
            if k[j] < budget {
                k[j] += 1;
                break;
            }
            k[j] = 0;
            j += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailBoundInput {
    pub budget: u32,
    /// Observations per household.
    pub m: usize,
    pub epsilon: f64,
    /// Lower bound on every scaled covariate.
    pub delta: f64,
    pub p: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TailBound {
    /// `None` when `eps delta P <= 2 ln 2`.
    pub dyadic: Option<f64>,
    /// `None` when `eps delta P <= ln 2` or `R = 0`.
    pub simple: Option<f64>,
}

pub fn tail_bound(inp: TailBoundInput) -> TailBound {
    let ln2 = std::f64::consts::LN_2;
    let rate = inp.epsilon * inp.delta * inp.p as f64;
    let m = inp.m as f64;
    let r = inp.budget as f64;
    let dyadic = (rate > 2.0 * ln2).then(|| 2.0 * (-((rate - 2.0 * ln2) * r - m * ln2)).exp());
    let simple = (rate > ln2 && inp.budget > 0).then(|| {
        let a = rate - ln2;
        ((m - 1.0) * ln2 - a * r.ln()).exp() / a
    });
    TailBound { dyadic, simple }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compositions_examples() {
        for m in 1..6 {
            assert_eq!(compositions_count(0, m), BigUint::one());
        }
        let c = compositions_count(5, 20);
        assert_eq!(c, BigUint::from(42504u32));
        assert!((log10_biguint(&c) - 4.63).abs() < 0.005);
        assert_eq!(compositions_count(3, 2), BigUint::from(4u32));
        assert_eq!(compositions_cum(0, 3), BigUint::one());
        assert_eq!(compositions_cum(5, 20), BigUint::from(53130u32));
        let big = compositions_cum(9, 40);
        assert_eq!(big, binomial(49, 40));
        assert!((log10_biguint(&big) - 9.31).abs() < 0.01);
    }

    #[test]
    fn compositions_match_brute_force() {
        // count tuples of length m summing to r by enumerating the box
        for m in 1..5u64 {
            for r in 0..7u64 {
                let mut n = 0u64;
                let total = (r + 1).pow(m as u32);
                for code in 0..total {
                    let mut c = code;
                    let mut s = 0;
                    for _ in 0..m {
                        s += c % (r + 1);
                        c /= r + 1;
                    }
                    if s == r {
                        n += 1;
                    }
                }
                assert_eq!(compositions_count(r, m), BigUint::from(n), "r={r} m={m}");
            }
        }
    }

    #[test]
    fn log10_of_huge_values() {
        let v = binomial(4000, 2000);
        let exact: f64 = (1..=2000).map(|i| ((2000 + i) as f64 / i as f64).log10()).sum();
        assert!((log10_biguint(&v) - exact).abs() < 1e-9);
    }

    #[test]
    fn build_cache_examples() {
        let c = build_cache(&[vec![1, 1]], 2, DEFAULT_ADMISSION_LIMIT).unwrap();
        let got: Vec<(u64, i64)> = c.entries().map(|(r, n)| (r[0], n)).collect();
        assert_eq!(got, vec![(0, 1), (1, -2), (2, 3)]);
        assert_eq!(c.admitted(), 6);

        let c = build_cache(&[vec![1, 2]], 1, DEFAULT_ADMISSION_LIMIT).unwrap();
        let got: Vec<(u64, i64)> = c.entries().map(|(r, n)| (r[0], n)).collect();
        assert_eq!(got, vec![(0, 1), (1, -1), (2, -1)]);

        let c = build_cache(&[vec![3, 1, 2], vec![0, 4, 1]], 0, DEFAULT_ADMISSION_LIMIT).unwrap();
        let got: Vec<(Vec<u64>, i64)> = c.entries().map(|(r, n)| (r.to_vec(), n)).collect();
        assert_eq!(got, vec![(vec![0, 0], 1)]);
    }

    #[test]
    fn frontier_holds_top_level() {
        let c = build_cache(&[vec![1, 1]], 2, DEFAULT_ADMISSION_LIMIT).unwrap();
        let got: Vec<(u64, i64)> = c.frontier().map(|(r, n)| (r[0], n)).collect();
        assert_eq!(got, vec![(2, 3)]);
        let c = build_cache(&[vec![1, 2]], 1, DEFAULT_ADMISSION_LIMIT).unwrap();
        let got: Vec<(u64, i64)> = c.frontier().map(|(r, n)| (r[0], n)).collect();
        assert_eq!(got, vec![(1, -1), (2, -1)]);
    }

    #[test]
    fn oracle_examples() {
        assert_eq!(signed_count_oracle(&[vec![1, 1]], &[2], 2).unwrap(), (3, 0));
        assert_eq!(signed_count_oracle(&[vec![1, 1]], &[1], 2).unwrap(), (0, 2));
        assert_eq!(signed_count_oracle(&[vec![2, 2]], &[3], 4).unwrap(), (0, 0));
    }

    #[test]
    fn admission_limit() {
        let e = build_cache(&[vec![1; 40]], 9, DEFAULT_ADMISSION_LIMIT).unwrap_err();
        match e {
            Error::BudgetExceeded { log10, ref admitted, .. } => {
                assert!((log10 - 9.31).abs() < 0.01);
                assert_eq!(admitted, "2054455634");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(build_cache(&[vec![1, 0]], 2, 10), Err(Error::InvalidData(_))));
        assert!(matches!(build_cache(&[vec![1, 1]], 2, 5), Err(Error::BudgetExceeded { .. })));
    }

    #[test]
    fn tail_bound_examples() {
        let t = tail_bound(TailBoundInput { budget: 20, m: 4, epsilon: 0.5, delta: 2.0, p: 2 });
        let expected = 2.0 * (-((2.0 - 2.0 * std::f64::consts::LN_2) * 20.0 - 4.0 * std::f64::consts::LN_2)).exp();
        assert!((t.dyadic.unwrap() - expected).abs() < 1e-18);
        assert!((t.dyadic.unwrap() / 2.0).ln() + 9.5 < 0.01);

        let t = tail_bound(TailBoundInput { budget: 20, m: 4, epsilon: 0.1, delta: 1.0, p: 2 });
        assert!(t.dyadic.is_none());
        assert!(t.simple.is_none());
        let t = tail_bound(TailBoundInput { budget: 20, m: 4, epsilon: 0.4, delta: 1.0, p: 2 });
        assert!(t.dyadic.is_none());
        assert!(t.simple.is_some());
    }
}
