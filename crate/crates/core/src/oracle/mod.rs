//! Reference integrators for the exact per-household marginal likelihood.
//!
//! Both oracles integrate the product of logit probabilities against the prior
//! density directly, without any series expansion, so they share no code path
//! with the closed-form engine beyond the data types.

pub mod quad;
mod sample;

use std::cell::RefCell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::{GammaSpec, HeterogeneitySpec, Household};
use crate::error::{Error, Result};
use crate::kernels::{arnold_strauss_normalizer, BivariateNamed, GmvGammaSpec};
use quad::{integrate, Integral, Integrator};

pub use sample::PriorSampler;

/// Largest number of latent dimensions the tensor quadrature accepts.
pub const MAX_QUAD_DIMS: usize = 3;
const MC_BLOCK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadConfig {
    pub rel_tol: f64,
    /// Interval budget per one-dimensional integral.
    pub max_subdivisions: usize,
    /// Per-dimension scale `s` of the map `u = 1 - exp(-z / s)`; prior means when absent.
    #[serde(default)]
    pub scales: Option<Vec<f64>>,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig { rel_tol: 1e-9, max_subdivisions: 2000, scales: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadEstimate {
    pub value: f64,
    /// Outer error estimate plus the worst inner error propagated relatively.
    pub error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// `(units_p x_p)_p` and the outcome for each observation.
fn design(h: &Household, units: &[f64]) -> Result<Vec<(Vec<f64>, bool)>> {
    h.observations
        .iter()
        .map(|o| {
            if o.x.len() != units.len() {
                return Err(Error::InvalidData(format!(
                    "household {} has {} covariates, expected {}",
                    h.id,
                    o.x.len(),
                    units.len()
                )));
            }
            Ok((o.x.iter().zip(units).map(|(x, u)| *x as f64 * u).collect(), o.y == 1))
        })
        .collect()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `prod_obs P(y | beta)` with `P(y=1) = 1 / (1 + e^u)`.
fn likelihood(obs: &[(Vec<f64>, bool)], beta: &[f64]) -> f64 {
    let mut ln = 0.0;
    for (z, y) in obs {
        let u: f64 = z.iter().zip(beta).map(|(a, b)| a * b).sum();
        ln -= if *y { softplus(u) } else { softplus(-u) };
    }
    ln.exp()
}

type Factor = Box<dyn Fn(f64) -> f64 + Sync>;

fn gamma_density(b: f64, n: f64) -> impl Fn(f64) -> f64 + Sync + Clone {
    let c = -n * b.ln() - ln_gamma(n);
    move |z| if z <= 0.0 { 0.0 } else { ((n - 1.0) * z.ln() - z / b + c).exp() }
}

fn unit() -> Factor {
    Box::new(|_| 1.0)
}

/// One latent axis, mapped from `[0, 1)` by `z = -s ln(1 - u^q)`.
struct Axis {
    scale: f64,
    /// `q = 1/n` for shapes `n < 1` removes the `z^(n-1)` singularity at the origin.
    power: f64,
    breaks: Vec<f64>,
}

/// Scale is the mean for shapes `n >= 1` and `b` below, where the mean would leave a
/// `(1 - u)^(n-1)` singularity at the far end.
fn gamma_axis(b: f64, n: f64) -> Axis {
    let mean = b * n;
    let sd = b * n.sqrt();
    Axis {
        scale: b * n.max(1.0),
        power: n.recip().max(1.0),
        breaks: (-2..=2).map(|k| mean + k as f64 * sd).filter(|v| *v > 0.0).collect(),
    }
}

/// Integrand over latent coordinates `z`: prior density and the map to coefficients.
///
/// The density is `prod_d factors[d](z_d) * joint(z)`.
struct Problem {
    axes: Vec<Axis>,
    factors: Vec<Factor>,
    joint: Option<Box<dyn Fn(&[f64]) -> f64 + Sync>>,
    to_beta: Box<dyn Fn(&[f64], &mut [f64]) + Sync>,
    /// Coordinates of the outer point that become breakpoints for the next axis.
    diagonal_kink: bool,
}

fn gmv_problem(g: &GmvGammaSpec) -> Result<Problem> {
    let m = g.n_factors();
    let p = g.n_attributes();
    if m + p > MAX_QUAD_DIMS {
        return Err(Error::InvalidSpec(format!(
            "multivariate gamma with {m} shared factors and {p} attributes needs {} latent \
             dimensions; quadrature handles at most {MAX_QUAD_DIMS}",
            m + p
        )));
    }
    let shapes: Vec<f64> = g.shared_shapes.iter().chain(&g.shapes).copied().collect();
    let axes = shapes.iter().map(|t| gamma_axis(1.0, *t)).collect();
    let g = g.clone();
    Ok(Problem {
        axes,
        factors: shapes.iter().map(|t| Box::new(gamma_density(1.0, *t)) as Factor).collect(),
        joint: None,
        to_beta: Box::new(move |z, beta| {
            for (q, b) in beta.iter_mut().enumerate() {
                let shared: f64 = g.loadings[q].iter().zip(&z[..m]).map(|(l, y)| l * y).sum();
                *b = shared + g.scales[q] * z[m + q];
            }
        }),
        diagonal_kink: false,
    })
}

fn gamma_problem(g: &GammaSpec) -> Problem {
    let eps = g.epsilon;
    let (b, n) = (&g.b, &g.n);
    Problem {
        axes: b.iter().zip(n).map(|(b, n)| gamma_axis(*b, *n)).collect(),
        factors: b.iter().zip(n).map(|(b, n)| Box::new(gamma_density(*b, *n)) as Factor).collect(),
        joint: None,
        to_beta: Box::new(move |z, beta| {
            for (b, z) in beta.iter_mut().zip(z) {
                *b = eps + z;
            }
        }),
        diagonal_kink: false,
    }
}

fn problem_for(spec: &HeterogeneitySpec) -> Result<Problem> {
    let p = spec.n_attributes();
    if p > MAX_QUAD_DIMS {
        return Err(Error::InvalidSpec(format!(
            "quadrature handles at most {MAX_QUAD_DIMS} attributes, got {p}"
        )));
    }
    Ok(match spec {
        HeterogeneitySpec::IndependentGamma(g) => gamma_problem(g),
        HeterogeneitySpec::PointMassGamma(pm) => gamma_problem(&pm.inner),
        HeterogeneitySpec::GammaMixture(mix) => {
            let eps = mix.epsilon;
            let comps = &mix.components;
            let axes = comps
                .iter()
                .map(|cs| {
                    let mean: f64 = cs.iter().map(|c| c.w * c.b * c.n).sum();
                    let mut breaks: Vec<f64> = cs.iter().flat_map(|c| gamma_axis(c.b, c.n).breaks).collect();
                    breaks.sort_by(f64::total_cmp);
                    let power = cs.iter().map(|c| c.n.recip()).fold(1.0, f64::max);
                    Axis { scale: mean, power, breaks }
                })
                .collect();
            Problem {
                axes,
                factors: comps
                    .iter()
                    .map(|cs| {
                        let parts: Vec<(f64, _)> = cs.iter().map(|c| (c.w, gamma_density(c.b, c.n))).collect();
                        Box::new(move |z| parts.iter().map(|(w, f)| w * f(z)).sum::<f64>()) as Factor
                    })
                    .collect(),
                joint: None,
                to_beta: Box::new(move |z, beta| {
                    for (b, z) in beta.iter_mut().zip(z) {
                        *b = eps + z;
                    }
                }),
                diagonal_kink: false,
            }
        }
        HeterogeneitySpec::GeneralizedMvGamma(g) => gmv_problem(g)?,
        HeterogeneitySpec::BivariateNamed(named) => {
            let means = named.means();
            let identity: Box<dyn Fn(&[f64], &mut [f64]) + Sync> = Box::new(|z, beta| beta.copy_from_slice(z));
            let axes = means.iter().map(|m| Axis { scale: *m, power: 1.0, breaks: vec![*m] }).collect();
            match *named {
                BivariateNamed::CheriyanRamabhadran(c) => {
                    gmv_problem(&GmvGammaSpec::cheriyan_ramabhadran(c.theta))?
                }
                BivariateNamed::Freund(f) => {
                    let [a1, a2] = f.alpha;
                    let [a1p, a2p] = f.alpha_prime;
                    Problem {
                        axes,
                        factors: vec![unit(), unit()],
                        joint: Some(Box::new(move |z| {
                            let (x1, x2) = (z[0], z[1]);
                            if x1 < 0.0 || x2 < 0.0 {
                                0.0
                            } else if x1 < x2 {
                                a1 * a2p * (-(a1 + a2) * x1 - a2p * (x2 - x1)).exp()
                            } else {
                                a2 * a1p * (-(a1 + a2) * x2 - a1p * (x1 - x2)).exp()
                            }
                        })),
                        to_beta: identity,
                        diagonal_kink: true,
                    }
                }
                BivariateNamed::ArnoldStrauss(a) => {
                    let norm = arnold_strauss_normalizer(&a);
                    Problem {
                        axes,
                        factors: vec![unit(), unit()],
                        joint: Some(Box::new(move |z| {
                            norm * (-a.lambda[0] * z[0] - a.lambda[1] * z[1] - a.lambda12 * z[0] * z[1]).exp()
                        })),
                        to_beta: identity,
                        diagonal_kink: false,
                    }
                }
            }
        }
    })
}

struct Nested<'a> {
    problem: &'a Problem,
    obs: &'a [(Vec<f64>, bool)],
    p: usize,
    scales: Vec<f64>,
    cfg: Integrator,
    inner_cfg: Integrator,
    /// Worst absolute error of any inner integral, and the first inner failure.
    inner_abs: RefCell<f64>,
    failure: RefCell<Option<Error>>,
}

impl Nested<'_> {
    fn integrand(&self, z: &[f64]) -> f64 {
        let dens = self.problem.joint.as_ref().map_or(1.0, |j| j(z));
        if dens == 0.0 {
            return 0.0;
        }
        let mut beta = vec![0.0; self.p];
        (self.problem.to_beta)(z, &mut beta);
        dens * likelihood(self.obs, &beta)
    }

    /// Integral over axes `prefix.len()..` with the leading coordinates fixed.
    fn level(&self, prefix: &[f64]) -> Result<Integral> {
        let d = prefix.len();
        let s = self.scales[d];
        let q = self.problem.axes[d].power;
        let last = d + 1 == self.problem.axes.len();
        let g = |u: f64| {
            let uq = u.powf(q);
            if uq >= 1.0 {
                // nodes can round onto the mapped point at infinity
                return 0.0;
            }
            let z = -s * (-uq).ln_1p();
            let w = (self.problem.factors[d])(z);
            if w == 0.0 {
                return 0.0;
            }
            let jac = w * s * q * uq / u / (1.0 - uq);
            let mut pt = Vec::with_capacity(d + 1);
            pt.extend_from_slice(prefix);
            pt.push(z);
            if last {
                return self.integrand(&pt) * jac;
            }
            match self.level(&pt) {
                Ok(inner) => {
                    // the outer weights integrate to at most one, so absolute inner error carries over
                    let mut worst = self.inner_abs.borrow_mut();
                    *worst = worst.max(inner.error);
                    inner.value * jac
                }
                Err(e) => {
                    self.failure.borrow_mut().get_or_insert(e);
                    0.0
                }
            }
        };
        let mut breaks: Vec<f64> = self.problem.axes[d].breaks.clone();
        if self.problem.diagonal_kink && d > 0 {
            breaks.push(prefix[d - 1]);
        }
        let bu: Vec<f64> = breaks.iter().map(|z| (-(-z / s).exp_m1()).powf(q.recip())).collect();
        integrate(&g, 0.0, 1.0, &bu, if d == 0 { &self.cfg } else { &self.inner_cfg })
    }
}

/// Adaptive tensor quadrature of the exact household likelihood against the prior.
pub fn quadrature_h(
    h: &Household,
    units: &[f64],
    spec: &HeterogeneitySpec,
    qc: &QuadConfig,
) -> Result<QuadEstimate> {
    spec.validate()?;
    if !(qc.rel_tol > 0.0) {
        return Err(Error::Config(format!("quadrature rel_tol must be > 0, got {}", qc.rel_tol)));
    }
    if spec.n_attributes() != units.len() {
        return Err(Error::InvalidSpec(format!(
            "specification has {} attributes, data has {}",
            spec.n_attributes(),
            units.len()
        )));
    }
    let obs = design(h, units)?;
    let problem = problem_for(spec)?;
    let scales = match &qc.scales {
        Some(s) if s.len() == problem.axes.len() && s.iter().all(|v| *v > 0.0) => s.clone(),
        Some(s) => {
            return Err(Error::Config(format!(
                "quadrature needs {} positive scales, got {:?}",
                problem.axes.len(),
                s
            )))
        }
        None => problem.axes.iter().map(|a| a.scale).collect(),
    };
    let run = |rel_tol: f64, inner_abs: f64| -> Result<QuadEstimate> {
        let cfg = Integrator { rel_tol, abs_tol: 0.0, max_intervals: qc.max_subdivisions };
        let nested = Nested {
            problem: &problem,
            obs: &obs,
            p: units.len(),
            scales: scales.clone(),
            cfg,
            inner_cfg: Integrator { abs_tol: inner_abs, ..cfg },
            inner_abs: RefCell::new(0.0),
            failure: RefCell::new(None),
        };
        let outer = nested.level(&[])?;
        if let Some(e) = nested.failure.into_inner() {
            return Err(e);
        }
        Ok(QuadEstimate { value: outer.value, error: outer.error + nested.inner_abs.into_inner() })
    };
    // a coarse pass sets the absolute scale for inner integrals
    let rough = if problem.axes.len() > 1 { run(qc.rel_tol.max(1e-3), 0.0)?.value } else { 0.0 };
    let mut est = run(qc.rel_tol, 0.1 * qc.rel_tol * rough)?;
    if let HeterogeneitySpec::PointMassGamma(pm) = spec {
        let atom = (-(obs.len() as f64) * std::f64::consts::LN_2).exp();
        est = QuadEstimate {
            value: pm.w * atom + (1.0 - pm.w) * est.value,
            error: (1.0 - pm.w) * est.error,
        };
    }
    Ok(est)
}

fn stream_seed(seed: u64, household: u64) -> u64 {
    // splitmix64 finaliser over the pair
    let mut z = seed ^ household.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mean of the household likelihood over prior draws, with its standard error.
///
/// Draw block `k` uses ChaCha stream `k` keyed by `(seed, household id)`, so the
/// estimate does not depend on thread count.
pub fn mc_h(
    h: &Household,
    units: &[f64],
    spec: &HeterogeneitySpec,
    n_draws: u64,
    seed: u64,
) -> Result<McEstimate> {
    if n_draws == 0 {
        return Err(Error::Config("Monte Carlo needs at least one draw".into()));
    }
    if spec.n_attributes() != units.len() {
        return Err(Error::InvalidSpec(format!(
            "specification has {} attributes, data has {}",
            spec.n_attributes(),
            units.len()
        )));
    }
    let sampler = PriorSampler::new(spec)?;
    let obs = design(h, units)?;
    let key = stream_seed(seed, h.id);
    let blocks = n_draws.div_ceil(MC_BLOCK as u64);
    // (count, mean, M2) per block, merged in block order
    let parts: Vec<(f64, f64, f64)> = (0..blocks)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(key);
            rng.set_stream(k);
            let len = (n_draws - k * MC_BLOCK as u64).min(MC_BLOCK as u64);
            let mut beta = vec![0.0; units.len()];
            let (mut mean, mut m2) = (0.0, 0.0);
            for i in 0..len {
                sampler.sample_into(&mut rng, &mut beta);
                let v = likelihood(&obs, &beta);
                let delta = v - mean;
                mean += delta / (i + 1) as f64;
                m2 += delta * (v - mean);
            }
            (len as f64, mean, m2)
        })
        .collect();
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for (nb, mb, m2b) in parts {
        let total = n + nb;
        let delta = mb - mean;
        mean += delta * nb / total;
        m2 += m2b + delta * delta * n * nb / total;
        n = total;
    }
    let var = if n > 1.0 { m2 / (n - 1.0) } else { 0.0 };
    Ok(McEstimate { value: mean, std_error: (var / n).sqrt() })
}

#[cfg(test)]
mod tests;

