//! Series for priors known only through their moments.
//!
//! Each `E[exp(-K . beta)]` is replaced by its Taylor expansion
//! `sum_l prod_p (-K_p)^(l_p) / l_p! mu_l`, truncated at total order `L`.
//! The inner series converges only where the prior's MGF is analytic at `-K`.

use statrs::function::gamma::ln_gamma;

use super::{check_units, diagnostics, Evaluation, HouseholdSums};
use crate::data::GammaSpec;
use crate::dioph::DioCache;
use crate::error::{Error, Result};
use crate::sum::CompensatedSum;

/// Non-central moments `E[prod_p beta_p^(l_p)]`.
pub trait MomentProvider: Sync {
    fn n_attributes(&self) -> usize;
    fn moment(&self, ell: &[u32]) -> Result<f64>;
}

/// Moments of independent, untranslated Gammas: `prod_p b_p^l Gamma(n_p + l) / Gamma(n_p)`.
#[derive(Debug, Clone)]
pub struct GammaMoments(GammaSpec);

impl GammaMoments {
    pub fn new(spec: GammaSpec) -> Result<Self> {
        spec.validate()?;
        if spec.epsilon != 0.0 {
            return Err(Error::InvalidSpec("gamma moments are for untranslated priors".into()));
        }
        Ok(GammaMoments(spec))
    }
}

impl MomentProvider for GammaMoments {
    fn n_attributes(&self) -> usize {
        self.0.n_attributes()
    }

    fn moment(&self, ell: &[u32]) -> Result<f64> {
        let mut ln = 0.0;
        for (p, l) in ell.iter().enumerate() {
            let (b, n) = (self.0.b[p], self.0.n[p]);
            let l = *l as f64;
            ln += l * b.ln() + ln_gamma(n + l) - ln_gamma(n);
        }
        Ok(ln.exp())
    }
}

/// Multi-indices with total order at most `order`, in increasing total order.
fn multi_indices(p: usize, order: u32) -> Vec<Vec<u32>> {
    fn fill(p: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() + 1 == p {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for l in (0..=left).rev() {
            prefix.push(l);
            fill(p, left - l, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for total in 0..=order {
        fill(p, total, &mut Vec::with_capacity(p), &mut out);
    }
    out
}

/// Double series over cached `r` and moment orders `|l| <= order`.
pub fn moment_expansion_h(
    sums: &HouseholdSums,
    cache: &DioCache,
    moments: &dyn MomentProvider,
    order: u32,
    units: &[f64],
) -> Result<Evaluation> {
    check_units(sums, units)?;
    cache.ensure_matches(&sums.x)?;
    let p = sums.x.len();
    if moments.n_attributes() != p {
        return Err(Error::InvalidSpec(format!(
            "moment provider has {} attributes, data has {p}",
            moments.n_attributes()
        )));
    }
    // (sign, ln(1/l!), mu_l, l) per multi-index
    let table: Vec<(f64, f64, f64, Vec<u32>)> = multi_indices(p, order)
        .into_iter()
        .map(|ell| {
            let total: u32 = ell.iter().sum();
            let sign = if total.is_multiple_of(2) { 1.0 } else { -1.0 };
            let ln_fact: f64 = ell.iter().map(|l| ln_gamma(*l as f64 + 1.0)).sum();
            let mu = moments.moment(&ell)?;
            Ok((sign, -ln_fact, mu, ell))
        })
        .collect::<Result<_>>()?;

    let mut k = vec![0.0; p];
    let mut inner = |r: &[u64]| {
        for q in 0..p {
            k[q] = units[q] * (sums.y[q] + r[q]) as f64;
        }
        let mut acc = CompensatedSum::new();
        for (sign, ln_inv_fact, mu, ell) in &table {
            let mut ln = *ln_inv_fact;
            let mut zero = false;
            for q in 0..p {
                if ell[q] > 0 {
                    if k[q] == 0.0 {
                        zero = true;
                        break;
                    }
                    ln += ell[q] as f64 * k[q].ln();
                }
            }
            if !zero {
                acc.add(sign * mu * ln.exp());
            }
        }
        acc.value()
    };
    let mut total = CompensatedSum::new();
    for (r, c) in cache.entries() {
        total.add(c as f64 * inner(r));
    }
    let mut frontier = CompensatedSum::new();
    for (r, c) in cache.frontier() {
        frontier.add(c as f64 * inner(r));
    }
    let terms = cache.len() as u64 * table.len() as u64;
    Ok(diagnostics(sums, units, 0.0, cache.budget(), total.value(), frontier.value(), terms))
}
