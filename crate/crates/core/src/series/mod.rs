//! Truncated series for the per-household marginal likelihood `H_i`.
//!
//! Expanding each logit denominator geometrically and integrating term by
//! term gives `H_i = sum_k (-1)^(k.1) E[exp(-K(k) . beta)]` with
//! `K_p(k) = u_p (Y_p + k . x_p)`, truncated to the simplex `k . 1 <= R`.

mod moments;
mod workspace;

use serde::{Deserialize, Serialize};

use crate::data::{GammaSpec, HeterogeneitySpec, Household};
use crate::dioph::{tail_bound, DioCache, TailBoundInput, DEFAULT_ADMISSION_LIMIT};
use crate::error::{Error, Result};
use crate::kernels::{
    ln_gamma_kernel, mixture_factor_unchecked, BivariateNamed, GmvGammaSpec, MixtureComponent,
};
use crate::sum::CompensatedSum;

pub use moments::{moment_expansion_h, GammaMoments, MomentProvider};
pub use workspace::{log_marginal, signatures, CacheSet, Workspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SummationMode {
    Naive,
    #[default]
    Grouped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesConfig {
    pub budget: u32,
    pub mode: SummationMode,
    /// Report the relative change between budgets `R - 1` and `R`.
    pub parity_check: bool,
    pub admission_limit: u64,
}

impl SeriesConfig {
    pub fn new(budget: u32) -> Self {
        SeriesConfig {
            budget,
            mode: SummationMode::Grouped,
            parity_check: true,
            admission_limit: DEFAULT_ADMISSION_LIMIT,
        }
    }

    pub fn naive(budget: u32) -> Self {
        SeriesConfig { mode: SummationMode::Naive, ..Self::new(budget) }
    }
}

impl Default for SeriesConfig {
    fn default() -> Self {
        Self::new(100)
    }
}

/// Flattened covariate columns of one household and its outcome-weighted sums.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HouseholdSums {
    /// `Y_p = sum_{j,t} y x_p`.
    pub y: Vec<u64>,
    /// `P` rows of length `J N_i`.
    pub x: Vec<Vec<u32>>,
}

impl HouseholdSums {
    pub fn from_household(h: &Household, n_attributes: usize) -> Result<Self> {
        if h.observations.is_empty() {
            return Err(Error::InvalidData(format!("household {} has no observations", h.id)));
        }
        let mut y = vec![0u64; n_attributes];
        let mut x = vec![Vec::with_capacity(h.observations.len()); n_attributes];
        for o in &h.observations {
            if o.x.len() != n_attributes || !(o.y == 0 || o.y == 1) {
                return Err(Error::InvalidData(format!(
                    "household {} category {} occasion {} fails validation",
                    h.id, o.category, o.occasion
                )));
            }
            for (p, v) in o.x.iter().enumerate() {
                let v = u32::try_from(*v).map_err(|_| {
                    Error::InvalidData(format!(
                        "household {}: covariate {v} outside 0..=u32::MAX",
                        h.id
                    ))
                })?;
                x[p].push(v);
                y[p] += o.y as u64 * v as u64;
            }
        }
        Ok(HouseholdSums { y, x })
    }

    pub fn n_observations(&self) -> usize {
        self.x.first().map_or(0, |r| r.len())
    }

    /// Same sums with observation columns sorted; `H` is invariant under this.
    pub fn canonical(&self) -> Self {
        let m = self.n_observations();
        let mut cols: Vec<Vec<u32>> =
            (0..m).map(|j| self.x.iter().map(|row| row[j]).collect()).collect();
        cols.sort();
        let x = (0..self.x.len()).map(|p| cols.iter().map(|c| c[p]).collect()).collect();
        HouseholdSums { y: self.y.clone(), x }
    }
}

/// A series value with its truncation diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub value: f64,
    /// Relative change between budgets `R - 1` and `R`.
    pub parity_spread: Option<f64>,
    /// Dyadic bound on the discarded tail; translated Gammas only.
    pub tail_bound: Option<f64>,
    pub terms: u64,
}

/// `E[exp(-K . beta)]` for each family with a closed form.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Kernel<'a> {
    Gamma { b: &'a [f64], n: &'a [f64], eps: f64 },
    Mixture { components: &'a [Vec<MixtureComponent>], eps: f64 },
    Gmv(&'a GmvGammaSpec),
    Bivariate(&'a BivariateNamed),
}

impl<'a> Kernel<'a> {
    /// Point-mass specs map to their inner Gamma; the mass is applied by the caller.
    pub(crate) fn from_spec(spec: &'a HeterogeneitySpec) -> Kernel<'a> {
        match spec {
            HeterogeneitySpec::IndependentGamma(g) => Kernel::gamma(g),
            HeterogeneitySpec::PointMassGamma(pm) => Kernel::gamma(&pm.inner),
            HeterogeneitySpec::GammaMixture(m) => {
                Kernel::Mixture { components: &m.components, eps: m.epsilon }
            }
            HeterogeneitySpec::GeneralizedMvGamma(g) => Kernel::Gmv(g),
            HeterogeneitySpec::BivariateNamed(b) => Kernel::Bivariate(b),
        }
    }

    pub(crate) fn gamma(g: &'a GammaSpec) -> Kernel<'a> {
        Kernel::Gamma { b: &g.b, n: &g.n, eps: g.epsilon }
    }

    #[inline]
    pub(crate) fn term(&self, k: &[f64]) -> f64 {
        match *self {
            Kernel::Gamma { b, n, eps } => {
                let mut acc = 0.0;
                for p in 0..k.len() {
                    acc += -eps * k[p] + ln_gamma_kernel(k[p], b[p], n[p]);
                }
                acc.exp()
            }
            Kernel::Mixture { components, eps } => k
                .iter()
                .zip(components)
                .map(|(kp, cs)| mixture_factor_unchecked(*kp, cs, eps))
                .product(),
            Kernel::Gmv(g) => g.ln_mgf_neg(k).exp(),
            Kernel::Bivariate(b) => b.ln_mgf_neg(k).exp(),
        }
    }

    pub(crate) fn translation(&self) -> f64 {
        match *self {
            Kernel::Gamma { eps, .. } | Kernel::Mixture { eps, .. } => eps,
            Kernel::Gmv(_) | Kernel::Bivariate(_) => 0.0,
        }
    }
}

/// Smallest scaled covariate, or `None` if some covariate is zero.
fn covariate_floor(sums: &HouseholdSums, units: &[f64]) -> Option<f64> {
    let mut floor = f64::INFINITY;
    for (row, u) in sums.x.iter().zip(units) {
        for v in row {
            floor = floor.min(*v as f64 * u);
        }
    }
    (floor > 0.0 && floor.is_finite()).then_some(floor)
}

fn diagnostics(
    sums: &HouseholdSums,
    units: &[f64],
    eps: f64,
    budget: u32,
    value: f64,
    frontier: f64,
    terms: u64,
) -> Evaluation {
    let tail = if eps > 0.0 {
        covariate_floor(sums, units).and_then(|delta| {
            tail_bound(TailBoundInput {
                budget,
                m: sums.n_observations(),
                epsilon: eps,
                delta,
                p: sums.x.len(),
            })
            .dyadic
        })
    } else {
        None
    };
    Evaluation {
        value,
        parity_spread: Some((frontier / value).abs()),
        tail_bound: tail,
        terms,
    }
}

fn check_units(sums: &HouseholdSums, units: &[f64]) -> Result<()> {
    if units.len() != sums.x.len() {
        return Err(Error::InvalidData(format!(
            "{} covariate units for {} attributes",
            units.len(),
            sums.x.len()
        )));
    }
    Ok(())
}

fn check_dims(spec: &HeterogeneitySpec, sums: &HouseholdSums) -> Result<()> {
    if spec.n_attributes() != sums.x.len() {
        return Err(Error::InvalidSpec(format!(
            "specification has {} attributes, data has {}",
            spec.n_attributes(),
            sums.x.len()
        )));
    }
    Ok(())
}

/// Sum over the simplex in increasing `k . 1`; returns (value, top-level part, terms).
pub(crate) fn naive_sum(
    sums: &HouseholdSums,
    units: &[f64],
    kernel: &Kernel<'_>,
    budget: u32,
) -> (f64, f64, u64) {
    struct Walk<'a, 'k> {
        sums: &'a HouseholdSums,
        units: &'a [f64],
        kernel: &'a Kernel<'k>,
        r: Vec<u64>,
        k: Vec<f64>,
        level: CompensatedSum,
        terms: u64,
    }
    impl Walk<'_, '_> {
        fn visit(&mut self, j: usize, left: u32, sign: f64) {
            let m = self.sums.n_observations();
            if j + 1 == m {
                // the last coordinate takes whatever budget is left
                for p in 0..self.r.len() {
                    let r = self.r[p] + self.sums.x[p][j] as u64 * left as u64;
                    self.k[p] = self.units[p] * (self.sums.y[p] + r) as f64;
                }
                self.level.add(sign * self.kernel.term(&self.k));
                self.terms += 1;
                return;
            }
            for kj in 0..=left {
                self.visit(j + 1, left - kj, sign);
                for p in 0..self.r.len() {
                    self.r[p] += self.sums.x[p][j] as u64;
                }
            }
            for p in 0..self.r.len() {
                self.r[p] -= self.sums.x[p][j] as u64 * (left as u64 + 1);
            }
        }
    }
    let p = sums.x.len();
    let mut w = Walk {
        sums,
        units,
        kernel,
        r: vec![0; p],
        k: vec![0.0; p],
        level: CompensatedSum::new(),
        terms: 0,
    };
    let mut total = CompensatedSum::new();
    let mut top = 0.0;
    for s in 0..=budget {
        w.level = CompensatedSum::new();
        let sign = if s % 2 == 0 { 1.0 } else { -1.0 };
        w.visit(0, s, sign);
        let level = w.level.value();
        total.add(level);
        if s == budget {
            top = level;
        }
    }
    (total.value(), top, w.terms)
}

/// Sum over cached `r` tuples; returns (value, frontier part, terms).
pub(crate) fn cached_sum(
    sums: &HouseholdSums,
    units: &[f64],
    cache: &DioCache,
    kernel: &Kernel<'_>,
) -> (f64, f64) {
    let mut k = vec![0.0; sums.y.len()];
    let mut eval = |r: &[u64]| {
        for p in 0..k.len() {
            k[p] = units[p] * (sums.y[p] + r[p]) as f64;
        }
        kernel.term(&k)
    };
    let mut total = CompensatedSum::new();
    for (r, c) in cache.entries() {
        total.add(c as f64 * eval(r));
    }
    let mut frontier = CompensatedSum::new();
    for (r, c) in cache.frontier() {
        frontier.add(c as f64 * eval(r));
    }
    (total.value(), frontier.value())
}

/// Term-by-term truncated sum over the simplex, without regrouping.
pub fn h_naive(
    h: &Household,
    spec: &GammaSpec,
    units: &[f64],
    cfg: &SeriesConfig,
) -> Result<Evaluation> {
    spec.validate()?;
    let sums = HouseholdSums::from_household(h, spec.n_attributes())?;
    check_units(&sums, units)?;
    let kernel = Kernel::gamma(spec);
    let (value, top, terms) = naive_sum(&sums, units, &kernel, cfg.budget);
    Ok(diagnostics(&sums, units, kernel.translation(), cfg.budget, value, top, terms))
}

fn grouped_with(
    sums: &HouseholdSums,
    cache: &DioCache,
    units: &[f64],
    kernel: &Kernel<'_>,
) -> Result<Evaluation> {
    check_units(sums, units)?;
    cache.ensure_matches(&sums.x)?;
    let (value, frontier) = cached_sum(sums, units, cache, kernel);
    Ok(diagnostics(sums, units, kernel.translation(), cache.budget(), value, frontier, cache.len() as u64))
}

/// Grouped series for independent or mixed Gammas, optionally translated.
pub fn h_grouped(
    sums: &HouseholdSums,
    cache: &DioCache,
    spec: &HeterogeneitySpec,
    units: &[f64],
) -> Result<Evaluation> {
    spec.validate()?;
    check_dims(spec, sums)?;
    match spec {
        HeterogeneitySpec::IndependentGamma(_) | HeterogeneitySpec::GammaMixture(_) => {
            grouped_with(sums, cache, units, &Kernel::from_spec(spec))
        }
        _ => Err(Error::InvalidSpec(
            "grouped Gamma evaluation needs an independent_gamma or gamma_mixture spec".into(),
        )),
    }
}

/// Grouped series with each term given by the prior's MGF at `-K`.
pub fn h_mgf(
    sums: &HouseholdSums,
    cache: &DioCache,
    spec: &HeterogeneitySpec,
    units: &[f64],
) -> Result<Evaluation> {
    spec.validate()?;
    check_dims(spec, sums)?;
    match spec {
        HeterogeneitySpec::GeneralizedMvGamma(_) | HeterogeneitySpec::BivariateNamed(_) => {
            grouped_with(sums, cache, units, &Kernel::from_spec(spec))
        }
        _ => Err(Error::InvalidSpec(
            "MGF evaluation needs a generalized_mv_gamma or bivariate_named spec".into(),
        )),
    }
}

#[cfg(test)]
mod tests;
