use nalgebra::{DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{derivs::loglik_derivatives, FitFamily, FitResult, TracePoint};
use crate::data::{GammaSpec, HeterogeneitySpec};
use crate::error::{Error, Result};
use crate::series::Workspace;

pub const POSITIVITY_FLOOR: f64 = 1e-6;
const MAX_CONDITION: f64 = 1e14;
const MAX_HALVINGS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub max_iters: usize,
    /// Converged when the gradient sup-norm falls below this.
    pub tol: f64,
    /// Line-search candidates whose surface parity spread exceeds this are rejected,
    /// since the truncated series no longer tracks the likelihood there.
    #[serde(default = "default_max_spread")]
    pub max_parity_spread: f64,
}

fn default_max_spread() -> f64 {
    0.05
}

impl NewtonOptions {
    pub fn new(max_iters: usize, tol: f64) -> Self {
        NewtonOptions { max_iters, tol, max_parity_spread: default_max_spread() }
    }
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions::new(50, 1e-6)
    }
}

fn interleave(g: &GammaSpec) -> DVector<f64> {
    DVector::from_iterator(
        2 * g.n_attributes(),
        g.b.iter().zip(&g.n).flat_map(|(b, n)| [*b, *n]),
    )
}

fn to_spec(x: &DVector<f64>, eps: f64) -> Result<GammaSpec> {
    let b = x.iter().step_by(2).copied().collect();
    let n = x.iter().skip(1).step_by(2).copied().collect();
    GammaSpec::new(b, n, eps)
}

/// Ascent direction from `H p = -g`; indefinite Hessians get eigenvalues flipped and floored.
fn newton_direction(hess: &nalgebra::DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>> {
    let eig = SymmetricEigen::new(hess.clone());
    let abs: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
    let max = abs.iter().copied().fold(0.0, f64::max);
    let min = abs.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || !max.is_finite() || min == 0.0 || max / min > MAX_CONDITION {
        return Err(Error::SingularHessian { condition: if min > 0.0 { max / min } else { f64::INFINITY } });
    }
    let mut p = DVector::zeros(grad.len());
    for (i, lam) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        let curvature = if *lam < 0.0 { *lam } else { -lam.abs().max(1e-8 * max) };
        p += v * (v.dot(grad) / -curvature);
    }
    Ok(p)
}

/// Newton ascent on `log L` for independent Gammas, with step halving and a positivity floor.
pub fn newton_fit(ws: &Workspace, start: &GammaSpec, opts: &NewtonOptions) -> Result<FitResult> {
    start.validate()?;
    let eps = start.epsilon;
    let family = FitFamily::Gamma { p: start.n_attributes(), epsilon: eps };
    let mut x = interleave(start);
    let mut d = loglik_derivatives(ws, start)?;
    let mut trace = vec![TracePoint {
        params: x.iter().copied().collect(),
        loglik: Some(d.loglik),
        parity_spread: None,
        error: None,
    }];
    let mut iters = 0;
    let mut converged = false;
    while iters < opts.max_iters {
        if d.grad.amax() < opts.tol {
            converged = true;
            break;
        }
        let p = newton_direction(&d.hess, &d.grad)?;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = (&x + &p * step).map(|v| v.max(POSITIVITY_FLOOR));
            let value = to_spec(&cand, eps)
                .and_then(|s| ws.log_marginal(&HeterogeneitySpec::IndependentGamma(s)));
            if let Ok(e) = value {
                let trusted = e.parity_spread.is_none_or(|s| s <= opts.max_parity_spread);
                if trusted && e.value > d.loglik {
                    accepted = Some(cand);
                    break;
                }
            }
            step *= 0.5;
        }
        let Some(next) = accepted else {
            // no ascent along the direction: stationary up to round-off
            converged = d.grad.amax() < opts.tol;
            break;
        };
        x = next;
        d = loglik_derivatives(ws, &to_spec(&x, eps)?)?;
        iters += 1;
        trace.push(TracePoint {
            params: x.iter().copied().collect(),
            loglik: Some(d.loglik),
            parity_spread: None,
            error: None,
        });
    }
    if !converged && d.grad.amax() < opts.tol {
        converged = true;
    }
    Ok(FitResult {
        family,
        param_names: family.param_names(),
        omega_hat: x.iter().copied().collect(),
        loglik: d.loglik,
        trace,
        boundary_flag: false,
        newton_iters: Some(iters),
        converged: Some(converged),
    })
}
