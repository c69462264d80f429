use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{cached_sum, check_dims, diagnostics, naive_sum, Evaluation, HouseholdSums, Kernel, SeriesConfig, SummationMode};
use crate::data::{Dataset, HeterogeneitySpec};
use crate::dioph::{build_cache, load_cache, save_cache, DioCache};
use crate::error::{Error, Result};
use crate::sum::CompensatedSum;

/// Caches keyed by canonical covariate vectors, all at one budget.
#[derive(Debug, Clone, Default)]
pub struct CacheSet {
    caches: Vec<DioCache>,
    index: HashMap<Vec<Vec<u32>>, usize>,
}

impl CacheSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces any cache for the same covariate vectors.
    pub fn insert(&mut self, cache: DioCache) -> usize {
        match self.index.get(cache.x_vectors()) {
            Some(&i) => {
                self.caches[i] = cache;
                i
            }
            None => {
                self.index.insert(cache.x_vectors().to_vec(), self.caches.len());
                self.caches.push(cache);
                self.caches.len() - 1
            }
        }
    }

    pub fn get(&self, x: &[Vec<u32>]) -> Option<&DioCache> {
        self.index.get(x).map(|i| &self.caches[*i])
    }

    pub fn len(&self) -> usize {
        self.caches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.caches.is_empty()
    }

    pub(crate) fn at(&self, i: usize) -> &DioCache {
        &self.caches[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &DioCache> {
        self.caches.iter()
    }

    /// Builds one cache per distinct signature of `d`.
    pub fn build_for(d: &Dataset, budget: u32, admission_limit: u64) -> Result<Self> {
        let mut set = CacheSet::new();
        for x in signatures(d)? {
            set.insert(build_cache(&x, budget, admission_limit)?);
        }
        Ok(set)
    }

    pub fn file_name(x_hash: u64, budget: u32) -> String {
        format!("dioc-{x_hash:016x}-r{budget}.bin")
    }

    pub fn path_for(dir: &Path, x: &[Vec<u32>], budget: u32) -> PathBuf {
        dir.join(Self::file_name(crate::dioph::x_hash(x), budget))
    }

    /// Loads each signature's cache from `dir`; a missing file is an error.
    pub fn load_for(d: &Dataset, budget: u32, dir: &Path) -> Result<Self> {
        let mut set = CacheSet::new();
        for x in signatures(d)? {
            let path = Self::path_for(dir, &x, budget);
            if !path.exists() {
                return Err(Error::CacheMismatch(format!(
                    "no cache at {}; run precompute or pass --build-cache",
                    path.display()
                )));
            }
            let cache = load_cache(&path)?;
            cache.ensure_matches(&x)?;
            if cache.budget() != budget {
                return Err(Error::CacheMismatch(format!(
                    "{} has budget {}, requested {budget}",
                    path.display(),
                    cache.budget()
                )));
            }
            set.insert(cache);
        }
        Ok(set)
    }

    pub fn save_all(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut paths = Vec::with_capacity(self.caches.len());
        for c in &self.caches {
            let path = dir.join(Self::file_name(c.x_hash(), c.budget()));
            save_cache(c, &path)?;
            paths.push(path);
        }
        Ok(paths)
    }
}

/// Distinct canonical covariate vectors, in order of first appearance.
pub fn signatures(d: &Dataset) -> Result<Vec<Vec<Vec<u32>>>> {
    d.ensure_valid()?;
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for h in &d.households {
        let s = HouseholdSums::from_household(h, d.n_attributes)?.canonical();
        if !seen.contains_key(&s.x) {
            seen.insert(s.x.clone(), ());
            out.push(s.x);
        }
    }
    Ok(out)
}

/// Households sharing covariate multiset and outcome sums, evaluated once.
#[derive(Debug, Clone)]
pub(crate) struct Group {
    pub(crate) sums: HouseholdSums,
    pub(crate) cache: Option<usize>,
    pub(crate) multiplicity: u64,
    pub(crate) household: u64,
}

/// A validated dataset reduced to evaluation groups, with caches attached.
#[derive(Debug, Clone)]
pub struct Workspace {
    cfg: SeriesConfig,
    units: Vec<f64>,
    n_attributes: usize,
    total_observations: u64,
    n_households: usize,
    pub(crate) groups: Vec<Group>,
    pub(crate) caches: CacheSet,
}

impl Workspace {
    /// Groups the data and builds every cache the grouped mode needs.
    pub fn build(d: &Dataset, cfg: &SeriesConfig) -> Result<Self> {
        let caches = match cfg.mode {
            SummationMode::Grouped => CacheSet::build_for(d, cfg.budget, cfg.admission_limit)?,
            SummationMode::Naive => CacheSet::new(),
        };
        Self::with_caches(d, cfg, caches)
    }

    /// Uses the supplied caches; grouped mode requires one per signature at `cfg.budget`.
    pub fn with_caches(d: &Dataset, cfg: &SeriesConfig, caches: CacheSet) -> Result<Self> {
        d.ensure_valid()?;
        let mut index: HashMap<HouseholdSums, usize> = HashMap::new();
        let mut groups: Vec<Group> = Vec::new();
        for h in &d.households {
            let sums = HouseholdSums::from_household(h, d.n_attributes)?.canonical();
            if let Some(&g) = index.get(&sums) {
                groups[g].multiplicity += 1;
                continue;
            }
            let cache = match cfg.mode {
                SummationMode::Naive => None,
                SummationMode::Grouped => {
                    let i = caches.index.get(&sums.x).copied().ok_or_else(|| {
                        Error::CacheMismatch(format!(
                            "no cache for the covariate signature of household {}",
                            h.id
                        ))
                    })?;
                    if caches.caches[i].budget() != cfg.budget {
                        return Err(Error::CacheMismatch(format!(
                            "cache budget {} differs from requested {}",
                            caches.caches[i].budget(),
                            cfg.budget
                        )));
                    }
                    Some(i)
                }
            };
            index.insert(sums.clone(), groups.len());
            groups.push(Group { sums, cache, multiplicity: 1, household: h.id });
        }
        Ok(Workspace {
            cfg: *cfg,
            units: d.units(),
            n_attributes: d.n_attributes,
            total_observations: d.n_observations() as u64,
            n_households: d.households.len(),
            groups,
            caches,
        })
    }

    pub fn config(&self) -> &SeriesConfig {
        &self.cfg
    }

    pub fn units(&self) -> &[f64] {
        &self.units
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_households(&self) -> usize {
        self.n_households
    }

    pub fn caches(&self) -> &CacheSet {
        &self.caches
    }

    /// Per-group `(household id, multiplicity, H_i evaluation)` in group order.
    pub fn household_values(&self, spec: &HeterogeneitySpec) -> Result<Vec<(u64, u64, Evaluation)>> {
        Ok(self.raw_values(spec)?.into_iter().map(|(id, m, e, _)| (id, m, e)).collect())
    }

    /// As `household_values`, plus the signed top-level contribution of each group.
    fn raw_values(&self, spec: &HeterogeneitySpec) -> Result<Vec<(u64, u64, Evaluation, f64)>> {
        spec.validate()?;
        if spec.n_attributes() != self.n_attributes {
            return Err(Error::InvalidSpec(format!(
                "specification has {} attributes, data has {}",
                spec.n_attributes(),
                self.n_attributes
            )));
        }
        let kernel = Kernel::from_spec(spec);
        Ok(self
            .groups
            .par_iter()
            .map(|g| {
                let (value, frontier, terms) = self.group_sum(g, &kernel);
                let e = diagnostics(&g.sums, &self.units, kernel.translation(), self.cfg.budget, value, frontier, terms);
                (g.household, g.multiplicity, e, frontier)
            })
            .collect())
    }

    /// `(H_R, top-level part, terms)` for one group.
    pub(crate) fn group_sum(&self, g: &Group, kernel: &Kernel<'_>) -> (f64, f64, u64) {
        match g.cache {
            Some(i) => {
                let c = &self.caches.caches[i];
                let (v, f) = cached_sum(&g.sums, &self.units, c, kernel);
                (v, f, c.len() as u64)
            }
            None => naive_sum(&g.sums, &self.units, kernel, self.cfg.budget),
        }
    }

    /// `log L`; the parity spread is `|log L_R - log L_(R-1)| / |log L_R|`.
    pub fn log_marginal(&self, spec: &HeterogeneitySpec) -> Result<Evaluation> {
        let values = self.raw_values(spec)?;
        let mut at_r = CompensatedSum::new();
        let mut at_prev = CompensatedSum::new();
        let mut prev_ok = true;
        let mut terms = 0u64;
        let mut tail: Option<f64> = None;
        for (id, mult, e, frontier) in &values {
            if !(e.value > 0.0 && e.value.is_finite()) {
                return Err(Error::Truncation {
                    household: id.to_string(),
                    value: e.value,
                    parity_spread: e.parity_spread.unwrap_or(f64::NAN),
                });
            }
            let m = *mult as f64;
            at_r.add(m * e.value.ln());
            terms += e.terms;
            if let Some(t) = e.tail_bound {
                tail = Some(tail.unwrap_or(0.0) + m * t);
            }
            // H_(R-1) = H_R - frontier, and spread = |frontier| / H_R
            let share = frontier / e.value;
            if share < 1.0 {
                at_prev.add(m * (e.value.ln() + (-share).ln_1p()));
            } else {
                prev_ok = false;
            }
        }
        let log_l = self.combine(spec, at_r.value());
        let parity_spread = if !self.cfg.parity_check {
            None
        } else if prev_ok {
            let log_prev = self.combine(spec, at_prev.value());
            Some(((log_l - log_prev) / log_l).abs())
        } else {
            Some(f64::INFINITY)
        };
        Ok(Evaluation { value: log_l, parity_spread, tail_bound: tail, terms })
    }

    /// Applies the all-or-nothing point mass, if any, to `sum_i log H_i`.
    fn combine(&self, spec: &HeterogeneitySpec, sum_log_h: f64) -> f64 {
        match spec {
            HeterogeneitySpec::PointMassGamma(pm) => {
                let log_zero = -(self.total_observations as f64) * std::f64::consts::LN_2;
                log_mix(pm.w, log_zero, sum_log_h)
            }
            _ => sum_log_h,
        }
    }
}

/// `ln(w e^a + (1 - w) e^b)` without overflow; `w` in `[0, 1]`.
pub(crate) fn log_mix(w: f64, a: f64, b: f64) -> f64 {
    if w <= 0.0 {
        return b;
    }
    if w >= 1.0 {
        return a;
    }
    let la = w.ln() + a;
    let lb = (-w).ln_1p() + b;
    let hi = la.max(lb);
    hi + ((la - hi).exp() + (lb - hi).exp()).ln()
}

/// One-shot `log L`: builds or reuses caches, then evaluates.
pub fn log_marginal(
    d: &Dataset,
    spec: &HeterogeneitySpec,
    cfg: &SeriesConfig,
    caches: Option<CacheSet>,
) -> Result<Evaluation> {
    spec.validate()?;
    let ws = match caches {
        Some(c) => Workspace::with_caches(d, cfg, c)?,
        None => Workspace::build(d, cfg)?,
    };
    if let Some(g) = ws.groups.first() {
        check_dims(spec, &g.sums)?;
    }
    ws.log_marginal(spec)
}
