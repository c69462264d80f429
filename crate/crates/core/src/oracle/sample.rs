use rand::Rng;
use rand_distr::{Distribution, Exp, Exp1, Gamma, WeightedIndex};

use crate::data::HeterogeneitySpec;
use crate::error::{Error, Result};
use crate::kernels::{BivariateNamed, GmvGammaSpec};

fn gamma(shape: f64, scale: f64) -> Result<Gamma<f64>> {
    Gamma::new(shape, scale)
        .map_err(|e| Error::InvalidSpec(format!("gamma({shape}, {scale}) cannot be sampled: {e}")))
}

fn exp(rate: f64) -> Result<Exp<f64>> {
    Exp::new(rate).map_err(|e| Error::InvalidSpec(format!("exponential rate {rate}: {e}")))
}

#[derive(Debug, Clone)]
enum Plan {
    Gamma { eps: f64, dists: Vec<Gamma<f64>> },
    Mixture { eps: f64, picks: Vec<WeightedIndex<f64>>, dists: Vec<Vec<Gamma<f64>>> },
    PointMass { w: f64, inner: Box<Plan> },
    Gmv { loadings: Vec<Vec<f64>>, scales: Vec<f64>, shared: Vec<Gamma<f64>>, own: Vec<Gamma<f64>> },
    Freund { first: Exp<f64>, share1: f64, after: [Exp<f64>; 2] },
    ArnoldStrauss { lambda: [f64; 2], lambda12: f64, base: Exp<f64> },
}

/// Draws coefficient vectors from a heterogeneity distribution.
#[derive(Debug, Clone)]
pub struct PriorSampler {
    plan: Plan,
    p: usize,
}

fn gmv_plan(s: &GmvGammaSpec) -> Result<Plan> {
    Ok(Plan::Gmv {
        loadings: s.loadings.clone(),
        scales: s.scales.clone(),
        shared: s.shared_shapes.iter().map(|t| gamma(*t, 1.0)).collect::<Result<_>>()?,
        own: s.shapes.iter().map(|t| gamma(*t, 1.0)).collect::<Result<_>>()?,
    })
}

fn plan_for(spec: &HeterogeneitySpec) -> Result<Plan> {
    Ok(match spec {
        HeterogeneitySpec::IndependentGamma(g) => Plan::Gamma {
            eps: g.epsilon,
            dists: g.b.iter().zip(&g.n).map(|(b, n)| gamma(*n, *b)).collect::<Result<_>>()?,
        },
        HeterogeneitySpec::GammaMixture(m) => Plan::Mixture {
            eps: m.epsilon,
            picks: m
                .components
                .iter()
                .map(|cs| {
                    WeightedIndex::new(cs.iter().map(|c| c.w))
                        .map_err(|e| Error::InvalidSpec(format!("mixture weights: {e}")))
                })
                .collect::<Result<_>>()?,
            dists: m
                .components
                .iter()
                .map(|cs| cs.iter().map(|c| gamma(c.n, c.b)).collect::<Result<Vec<_>>>())
                .collect::<Result<_>>()?,
        },
        HeterogeneitySpec::PointMassGamma(pm) => Plan::PointMass {
            w: pm.w,
            inner: Box::new(plan_for(&HeterogeneitySpec::IndependentGamma(pm.inner.clone()))?),
        },
        HeterogeneitySpec::GeneralizedMvGamma(g) => gmv_plan(g)?,
        HeterogeneitySpec::BivariateNamed(BivariateNamed::CheriyanRamabhadran(c)) => {
            gmv_plan(&GmvGammaSpec::cheriyan_ramabhadran(c.theta))?
        }
        HeterogeneitySpec::BivariateNamed(BivariateNamed::Freund(f)) => {
            let total = f.alpha[0] + f.alpha[1];
            Plan::Freund {
                first: exp(total)?,
                share1: f.alpha[0] / total,
                after: [exp(f.alpha_prime[0])?, exp(f.alpha_prime[1])?],
            }
        }
        HeterogeneitySpec::BivariateNamed(BivariateNamed::ArnoldStrauss(a)) => Plan::ArnoldStrauss {
            lambda: a.lambda,
            lambda12: a.lambda12,
            base: exp(a.lambda[0])?,
        },
    })
}

impl PriorSampler {
    pub fn new(spec: &HeterogeneitySpec) -> Result<Self> {
        spec.validate()?;
        Ok(PriorSampler { plan: plan_for(spec)?, p: spec.n_attributes() })
    }

    pub fn n_attributes(&self) -> usize {
        self.p
    }

    /// Writes one draw into `out`, which must have length `n_attributes()`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        draw(&self.plan, rng, out)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.p];
        self.sample_into(rng, &mut out);
        out
    }
}

fn draw<R: Rng + ?Sized>(plan: &Plan, rng: &mut R, out: &mut [f64]) {
    match plan {
        Plan::Gamma { eps, dists } => {
            for (o, d) in out.iter_mut().zip(dists) {
                *o = eps + d.sample(rng);
            }
        }
        Plan::Mixture { eps, picks, dists } => {
            for ((o, pick), ds) in out.iter_mut().zip(picks).zip(dists) {
                *o = eps + ds[pick.sample(rng)].sample(rng);
            }
        }
        Plan::PointMass { w, inner } => {
            if rng.gen::<f64>() < *w {
                out.fill(0.0);
            } else {
                draw(inner, rng, out);
            }
        }
        Plan::Gmv { loadings, scales, shared, own } => {
            let y0: Vec<f64> = shared.iter().map(|d| d.sample(rng)).collect();
            for (p, o) in out.iter_mut().enumerate() {
                let common: f64 = loadings[p].iter().zip(&y0).map(|(l, y)| l * y).sum();
                *o = common + scales[p] * own[p].sample(rng);
            }
        }
        Plan::Freund { first, share1, after } => {
            // first failure at rate alpha_1 + alpha_2; the survivor switches to its primed rate
            let t = first.sample(rng);
            if rng.gen::<f64>() < *share1 {
                out[0] = t;
                out[1] = t + after[1].sample(rng);
            } else {
                out[1] = t;
                out[0] = t + after[0].sample(rng);
            }
        }
        Plan::ArnoldStrauss { lambda, lambda12, base } => {
            // marginal of x_1 is proportional to e^(-lambda_1 x) / (lambda_2 + lambda_12 x)
            let x1 = loop {
                let x = base.sample(rng);
                if rng.gen::<f64>() * (lambda[1] + lambda12 * x) < lambda[1] {
                    break x;
                }
            };
            let rate = lambda[1] + lambda12 * x1;
            out[0] = x1;
            out[1] = rng.sample::<f64, _>(Exp1) / rate;
        }
    }
}
