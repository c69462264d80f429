//! Gradient and Hessian of `H_i` and `log L` in the Gamma parameters.
//!
//! For one series term `B = exp(sum_p -eps K_p - n_p ln(1 + b_p K_p))`, with
//! `a_p = K_p / (1 + b_p K_p)` and `l_p = ln(1 + b_p K_p)`:
//! `grad B / B = g` where `g_(b_p) = -n_p a_p`, `g_(n_p) = -l_p`, and
//! `hess B / B = g g^T + D` with `D` block-diagonal, blocks `[[n a^2, -a], [-a, 0]]`.
//! Parameters are ordered `(b_1, n_1, ..., b_P, n_P)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::GammaSpec;
use crate::dioph::{build_cache, DioCache};
use crate::error::{Error, Result};
use crate::series::{HouseholdSums, Workspace};
use crate::sum::CompensatedSum;

#[derive(Debug, Clone, PartialEq)]
pub struct HouseholdDerivatives {
    pub h: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoglikDerivatives {
    pub loglik: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

fn accumulate(sums: &HouseholdSums, units: &[f64], cache: &DioCache, spec: &GammaSpec) -> HouseholdDerivatives {
    let p = spec.n_attributes();
    let d = 2 * p;
    let mut h = CompensatedSum::new();
    let mut grad = vec![CompensatedSum::new(); d];
    let mut hess = vec![CompensatedSum::new(); d * d];
    let mut g = vec![0.0; d];
    let mut a = vec![0.0; p];
    for (r, count) in cache.entries() {
        let mut ln_b = 0.0;
        for q in 0..p {
            let k = units[q] * (sums.y[q] + r[q]) as f64;
            let (b, n) = (spec.b[q], spec.n[q]);
            let l = (b * k).ln_1p();
            ln_b += -spec.epsilon * k - n * l;
            a[q] = k / (1.0 + b * k);
            g[2 * q] = -n * a[q];
            g[2 * q + 1] = -l;
        }
        let w = count as f64 * ln_b.exp();
        h.add(w);
        for i in 0..d {
            grad[i].add(w * g[i]);
            for j in 0..d {
                hess[i * d + j].add(w * g[i] * g[j]);
            }
        }
        for q in 0..p {
            let (bi, ni) = (2 * q, 2 * q + 1);
            hess[bi * d + bi].add(w * spec.n[q] * a[q] * a[q]);
            hess[bi * d + ni].add(-w * a[q]);
            hess[ni * d + bi].add(-w * a[q]);
        }
    }
    HouseholdDerivatives {
        h: h.value(),
        grad: DVector::from_iterator(d, grad.iter().map(|s| s.value())),
        hess: DMatrix::from_row_iterator(d, d, hess.iter().map(|s| s.value())),
    }
}

/// `H_i`, its gradient and Hessian from the same cached `r` sums.
pub fn derivatives(
    sums: &HouseholdSums,
    cache: &DioCache,
    spec: &GammaSpec,
    units: &[f64],
) -> Result<HouseholdDerivatives> {
    spec.validate()?;
    if spec.n_attributes() != sums.x.len() || units.len() != sums.x.len() {
        return Err(Error::InvalidSpec(format!(
            "specification has {} attributes, data has {}",
            spec.n_attributes(),
            sums.x.len()
        )));
    }
    cache.ensure_matches(&sums.x)?;
    Ok(accumulate(sums, units, cache, spec))
}

/// `log L = sum_i m_i ln H_i` with its gradient and Hessian.
pub fn loglik_derivatives(ws: &Workspace, spec: &GammaSpec) -> Result<LoglikDerivatives> {
    spec.validate()?;
    let units = ws.units();
    if spec.n_attributes() != units.len() {
        return Err(Error::InvalidSpec(format!(
            "specification has {} attributes, data has {}",
            spec.n_attributes(),
            units.len()
        )));
    }
    let budget = ws.config().budget;
    let limit = ws.config().admission_limit;
    let per_group: Vec<Result<(u64, u64, HouseholdDerivatives)>> = ws
        .groups
        .par_iter()
        .map(|g| {
            let hd = match g.cache {
                Some(i) => accumulate(&g.sums, units, ws.caches.at(i), spec),
                None => accumulate(&g.sums, units, &build_cache(&g.sums.x, budget, limit)?, spec),
            };
            Ok((g.household, g.multiplicity, hd))
        })
        .collect();
    let d = 2 * spec.n_attributes();
    let mut loglik = CompensatedSum::new();
    let mut grad = DVector::zeros(d);
    let mut hess = DMatrix::zeros(d, d);
    for item in per_group {
        let (id, mult, hd) = item?;
        if !(hd.h > 0.0 && hd.h.is_finite()) {
            return Err(Error::Truncation {
                household: id.to_string(),
                value: hd.h,
                parity_spread: f64::NAN,
            });
        }
        let m = mult as f64;
        loglik.add(m * hd.h.ln());
        let gh = &hd.grad / hd.h;
        hess += (&hd.hess / hd.h - &gh * gh.transpose()) * m;
        grad += gh * m;
    }
    Ok(LoglikDerivatives { loglik: loglik.value(), grad, hess })
}
