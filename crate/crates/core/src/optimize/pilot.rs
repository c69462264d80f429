use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, GammaSpec};
use crate::error::{Error, Result};

const PILOT_SHAPE: f64 = 2.0;
const PILOT_FLOOR: f64 = 1e-3;

/// Homogeneous fit of `P(y=1) = 1 / (1 + exp(z . m))`, `z_p = units_p x_p`, by Newton on `m`.
pub fn pooled_logit(d: &Dataset) -> Result<Vec<f64>> {
    d.ensure_valid()?;
    let p = d.n_attributes;
    let units = d.units();
    let rows: Vec<(Vec<f64>, bool)> = d
        .households
        .iter()
        .flat_map(|h| &h.observations)
        .map(|o| (o.x.iter().zip(&units).map(|(x, u)| *x as f64 * u).collect(), o.y == 1))
        .collect();
    let mut m = DVector::from_element(p, 0.1);
    let loglik = |m: &DVector<f64>| -> f64 {
        rows.iter()
            .map(|(z, y)| {
                let s: f64 = z.iter().zip(m.iter()).map(|(a, b)| a * b).sum();
                // ln P(y=1) = -ln(1 + e^s), ln P(y=0) = s - ln(1 + e^s)
                let lse = if s > 0.0 { s + (-s).exp().ln_1p() } else { s.exp().ln_1p() };
                if *y { -lse } else { s - lse }
            })
            .sum()
    };
    let mut current = loglik(&m);
    for _ in 0..100 {
        let mut g = DVector::zeros(p);
        let mut h = DMatrix::zeros(p, p);
        for (z, y) in &rows {
            let zv = DVector::from_column_slice(z);
            let s = zv.dot(&m);
            let q = 1.0 / (1.0 + (-s).exp()); // P(y=0)
            let resid = if *y { -q } else { 1.0 - q };
            g += &zv * resid;
            h -= &zv * zv.transpose() * (q * (1.0 - q));
        }
        if g.amax() < 1e-10 {
            break;
        }
        let step = h
            .clone()
            .lu()
            .solve(&(-&g))
            .ok_or(Error::SingularHessian { condition: f64::INFINITY })?;
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..50 {
            let cand = &m + &step * t;
            let v = loglik(&cand);
            if v >= current {
                m = cand;
                current = v;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(m.iter().copied().collect())
}

/// Gamma prior with shape 2 whose mean matches the pooled estimate, floored to stay positive.
pub fn pilot_center(d: &Dataset) -> Result<GammaSpec> {
    let m = pooled_logit(d)?;
    let b = m.iter().map(|v| (v / PILOT_SHAPE).max(PILOT_FLOOR)).collect();
    GammaSpec::new(b, vec![PILOT_SHAPE; m.len()], 0.0)
}
