//! Maximum marginal likelihood over prior parameters: grid search and Newton.

mod derivs;
mod newton;
mod pilot;

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GammaSpec, HeterogeneitySpec, PointMassSpec};
use crate::error::{Error, Result};
use crate::kernels::{BivariateNamed, CheriyanRamabhadranSpec};
use crate::series::{SeriesConfig, Workspace};

pub use derivs::{derivatives, loglik_derivatives, HouseholdDerivatives, LoglikDerivatives};
pub use newton::{newton_fit, NewtonOptions, POSITIVITY_FLOOR};
pub use pilot::{pilot_center, pooled_logit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub center: f64,
    pub count: usize,
    pub spacing: f64,
}

/// Axis `a` takes `center + (i - (count - 1) / 2) spacing` for `i < count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<GridAxis>,
}

impl GridSpec {
    pub fn new(centers: &[f64], counts: &[usize], spacing: &[f64]) -> Result<Self> {
        if centers.len() != counts.len() || centers.len() != spacing.len() {
            return Err(Error::Config(format!(
                "grid needs equal numbers of centers ({}), counts ({}) and spacings ({})",
                centers.len(),
                counts.len(),
                spacing.len()
            )));
        }
        let g = GridSpec {
            axes: centers
                .iter()
                .zip(counts)
                .zip(spacing)
                .map(|((c, n), s)| GridAxis { center: *c, count: *n, spacing: *s })
                .collect(),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::Config("grid has no axes".into()));
        }
        for (i, a) in self.axes.iter().enumerate() {
            if a.count == 0 {
                return Err(Error::Config(format!("grid axis {} has count 0", i + 1)));
            }
            if !(a.spacing > 0.0 && a.spacing.is_finite()) {
                return Err(Error::Config(format!("grid axis {} spacing must be > 0", i + 1)));
            }
            if !a.center.is_finite() {
                return Err(Error::Config(format!("grid axis {} center is not finite", i + 1)));
            }
        }
        Ok(())
    }

    pub fn cardinality(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn axis_values(&self, a: usize) -> Vec<f64> {
        let ax = &self.axes[a];
        let mid = (ax.count as f64 - 1.0) / 2.0;
        (0..ax.count).map(|i| ax.center + (i as f64 - mid) * ax.spacing).collect()
    }

    /// Every grid point with the first axis varying slowest.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let values: Vec<Vec<f64>> = (0..self.axes.len()).map(|a| self.axis_values(a)).collect();
        let mut out = Vec::with_capacity(self.cardinality());
        let mut idx = vec![0usize; values.len()];
        loop {
            out.push(idx.iter().enumerate().map(|(a, i)| values[a][*i]).collect());
            let mut a = values.len();
            loop {
                if a == 0 {
                    return out;
                }
                a -= 1;
                idx[a] += 1;
                if idx[a] < values[a].len() {
                    break;
                }
                idx[a] = 0;
            }
        }
    }

    /// Per-axis index of the point at `flat` position in `points()` order.
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.axes.len()];
        for a in (0..self.axes.len()).rev() {
            idx[a] = flat % self.axes[a].count;
            flat /= self.axes[a].count;
        }
        idx
    }
}

/// Parameterised prior families the optimizers search over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FitFamily {
    /// Parameters `(b_1, n_1, ..., b_P, n_P)`.
    Gamma { p: usize, epsilon: f64 },
    /// Parameters `(w, b_1, n_1, ..., b_P, n_P)`.
    PointMassGamma { p: usize, epsilon: f64 },
    /// Parameters `(theta_0, theta_1, theta_2)`.
    CheriyanRamabhadran,
}

impl FitFamily {
    pub fn name(&self) -> &'static str {
        match self {
            FitFamily::Gamma { .. } => "gamma",
            FitFamily::PointMassGamma { .. } => "point_mass_gamma",
            FitFamily::CheriyanRamabhadran => "cheriyan_ramabhadran",
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let gamma = |p: usize| -> Vec<String> {
            (1..=p).flat_map(|i| [format!("b{i}"), format!("n{i}")]).collect()
        };
        match self {
            FitFamily::Gamma { p, .. } => gamma(*p),
            FitFamily::PointMassGamma { p, .. } => {
                let mut v = vec!["w".to_string()];
                v.extend(gamma(*p));
                v
            }
            FitFamily::CheriyanRamabhadran => {
                vec!["theta0".into(), "theta1".into(), "theta2".into()]
            }
        }
    }

    pub fn n_params(&self) -> usize {
        self.param_names().len()
    }

    pub fn to_spec(&self, params: &[f64]) -> Result<HeterogeneitySpec> {
        if params.len() != self.n_params() {
            return Err(Error::InvalidSpec(format!(
                "{} expects {} parameters, got {}",
                self.name(),
                self.n_params(),
                params.len()
            )));
        }
        let gamma = |v: &[f64], eps: f64| -> Result<GammaSpec> {
            let b = v.iter().step_by(2).copied().collect();
            let n = v.iter().skip(1).step_by(2).copied().collect();
            GammaSpec::new(b, n, eps)
        };
        let spec = match self {
            FitFamily::Gamma { epsilon, .. } => {
                HeterogeneitySpec::IndependentGamma(gamma(params, *epsilon)?)
            }
            FitFamily::PointMassGamma { epsilon, .. } => {
                HeterogeneitySpec::PointMassGamma(PointMassSpec {
                    w: params[0],
                    inner: gamma(&params[1..], *epsilon)?,
                })
            }
            FitFamily::CheriyanRamabhadran => HeterogeneitySpec::BivariateNamed(
                BivariateNamed::CheriyanRamabhadran(CheriyanRamabhadranSpec {
                    theta: [params[0], params[1], params[2]],
                }),
            ),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Inverse of `to_spec` for specs of this family.
    pub fn params_of(&self, spec: &HeterogeneitySpec) -> Option<Vec<f64>> {
        let interleave = |g: &GammaSpec| -> Vec<f64> {
            g.b.iter().zip(&g.n).flat_map(|(b, n)| [*b, *n]).collect()
        };
        match (self, spec) {
            (FitFamily::Gamma { .. }, HeterogeneitySpec::IndependentGamma(g)) => Some(interleave(g)),
            (FitFamily::PointMassGamma { .. }, HeterogeneitySpec::PointMassGamma(pm)) => {
                let mut v = vec![pm.w];
                v.extend(interleave(&pm.inner));
                Some(v)
            }
            (
                FitFamily::CheriyanRamabhadran,
                HeterogeneitySpec::BivariateNamed(BivariateNamed::CheriyanRamabhadran(c)),
            ) => Some(c.theta.to_vec()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub params: Vec<f64>,
    pub loglik: Option<f64>,
    pub parity_spread: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: FitFamily,
    pub param_names: Vec<String>,
    pub omega_hat: Vec<f64>,
    pub loglik: f64,
    pub trace: Vec<TracePoint>,
    pub boundary_flag: bool,
    pub newton_iters: Option<usize>,
    pub converged: Option<bool>,
}

/// Lexicographic order on parameter tuples; NaN-free inputs only.
fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Evaluates `log L` at every grid point against one prepared workspace.
pub fn grid_fit_workspace(ws: &Workspace, family: &FitFamily, grid: &GridSpec) -> Result<FitResult> {
    grid.validate()?;
    if grid.axes.len() != family.n_params() {
        return Err(Error::Config(format!(
            "grid has {} axes, {} needs {}",
            grid.axes.len(),
            family.name(),
            family.n_params()
        )));
    }
    let points = grid.points();
    let trace: Vec<TracePoint> = points
        .par_iter()
        .map(|pt| match family.to_spec(pt).and_then(|s| ws.log_marginal(&s)) {
            Ok(e) => TracePoint {
                params: pt.clone(),
                loglik: Some(e.value),
                parity_spread: e.parity_spread,
                error: None,
            },
            Err(err) => TracePoint {
                params: pt.clone(),
                loglik: None,
                parity_spread: None,
                error: Some(err.to_string()),
            },
        })
        .collect();

    let mut best: Option<usize> = None;
    for (i, t) in trace.iter().enumerate() {
        let Some(ll) = t.loglik else { continue };
        best = match best {
            None => Some(i),
            Some(j) => {
                let bj = trace[j].loglik.expect("best has a value");
                if ll > bj || (ll == bj && lex_cmp(&t.params, &trace[j].params) == Ordering::Less) {
                    Some(i)
                } else {
                    Some(j)
                }
            }
        };
    }
    let Some(best) = best else {
        let first = trace.iter().find_map(|t| t.error.clone()).unwrap_or_default();
        return Err(Error::AllPointsFailed(first));
    };
    let idx = grid.unravel(best);
    let boundary_flag = grid
        .axes
        .iter()
        .zip(&idx)
        .any(|(a, i)| a.count > 1 && (*i == 0 || *i + 1 == a.count));
    Ok(FitResult {
        family: *family,
        param_names: family.param_names(),
        omega_hat: trace[best].params.clone(),
        loglik: trace[best].loglik.expect("best has a value"),
        trace,
        boundary_flag,
        newton_iters: None,
        converged: None,
    })
}

/// Builds the caches once, then evaluates the whole grid.
pub fn grid_fit(
    d: &Dataset,
    family: &FitFamily,
    grid: &GridSpec,
    cfg: &SeriesConfig,
) -> Result<FitResult> {
    let ws = Workspace::build(d, cfg)?;
    grid_fit_workspace(&ws, family, grid)
}
