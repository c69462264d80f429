//! Replicated simulation studies: synthetic panels, grid fits, Bonferroni t-tests.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{Dataset, HeterogeneitySpec, Household, Observation, ScaleNote};
use crate::error::{Error, Result};
use crate::optimize::{grid_fit_workspace, pilot_center, FitFamily, FitResult, GridSpec};
use crate::oracle::PriorSampler;
use crate::series::{SeriesConfig, Workspace};

/// Target mean purchase probability used to pick the default covariate scale.
pub const DEFAULT_TARGET_RATE: f64 = 0.25;
pub const DEFAULT_BONFERRONI_TESTS: usize = 12;
pub const BONFERRONI_ALPHA: f64 = 0.05;

/// Where the fitting grid is centred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "at", rename_all = "snake_case")]
pub enum GridCenter {
    Truth,
    /// Pooled homogeneous logit fit per replicate.
    Pilot,
    Fixed { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub households: usize,
    pub categories: u32,
    pub occasions: u32,
    pub attributes: usize,
    pub truth: HeterogeneitySpec,
    #[serde(default = "default_support")]
    pub x_support: Vec<i64>,
    /// Covariate scale `c`; chosen from the truth when absent.
    #[serde(default)]
    pub scale: Option<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub grid_counts: Vec<usize>,
    pub grid_spacing: Vec<f64>,
    pub center: GridCenter,
    pub budget: u32,
    #[serde(default = "default_tests")]
    pub bonferroni_tests: usize,
    /// Overrides the t-quantile critical value.
    #[serde(default)]
    pub critical_value: Option<f64>,
}

fn default_support() -> Vec<i64> {
    vec![1, 2, 3]
}

fn default_tests() -> usize {
    DEFAULT_BONFERRONI_TESTS
}

impl SimDesign {
    /// One category, one occasion, `x in {1, 2, 3}`, grid centred at the truth.
    pub fn single_observation(
        truth: HeterogeneitySpec,
        households: usize,
        budget: u32,
        replicates: usize,
        grid_counts: Vec<usize>,
        spacing: f64,
        seed: u64,
    ) -> Self {
        let attributes = truth.n_attributes();
        let axes = grid_counts.len();
        SimDesign {
            households,
            categories: 1,
            occasions: 1,
            attributes,
            truth,
            x_support: default_support(),
            scale: None,
            replicates,
            seed,
            grid_counts,
            grid_spacing: vec![spacing; axes],
            center: GridCenter::Truth,
            budget,
            bonferroni_tests: DEFAULT_BONFERRONI_TESTS,
            critical_value: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.truth.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.households == 0 || self.categories == 0 || self.occasions == 0 {
            return bad("design needs at least one household, category and occasion".into());
        }
        if self.replicates == 0 {
            return bad("design needs at least one replicate".into());
        }
        if self.attributes != self.truth.n_attributes() {
            return bad(format!(
                "design has {} attributes but the true distribution has {}",
                self.attributes,
                self.truth.n_attributes()
            ));
        }
        if self.x_support.is_empty() || self.x_support.iter().any(|x| *x <= 0) {
            return bad("x_support must be non-empty positive integers".into());
        }
        if let Some(c) = self.scale {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("scale must be > 0, got {c}"));
            }
        }
        if self.bonferroni_tests == 0 {
            return bad("bonferroni_tests must be >= 1".into());
        }
        Ok(())
    }

    /// `c = ln(1/q - 1) / (P mean(x) mean(beta))`, so the typical utility gives `P(y=1) = q`.
    pub fn effective_scale(&self) -> f64 {
        if let Some(c) = self.scale {
            return c;
        }
        let means = self.truth.marginal_means();
        let mean_beta = means.iter().sum::<f64>() / means.len() as f64;
        let mean_x = self.x_support.iter().sum::<i64>() as f64 / self.x_support.len() as f64;
        let target = (1.0 / DEFAULT_TARGET_RATE - 1.0).ln();
        target / (self.attributes as f64 * mean_x * mean_beta)
    }

    pub fn family(&self) -> Result<FitFamily> {
        let p = self.attributes;
        let family = match &self.truth {
            HeterogeneitySpec::IndependentGamma(g) => FitFamily::Gamma { p, epsilon: g.epsilon },
            HeterogeneitySpec::PointMassGamma(pm) => {
                FitFamily::PointMassGamma { p, epsilon: pm.inner.epsilon }
            }
            HeterogeneitySpec::BivariateNamed(crate::kernels::BivariateNamed::CheriyanRamabhadran(_)) => {
                FitFamily::CheriyanRamabhadran
            }
            _ => {
                return Err(Error::InvalidSpec(
                    "studies fit independent gamma, point-mass gamma or Cheriyan-Ramabhadran truths".into(),
                ))
            }
        };
        Ok(family)
    }

    pub fn true_params(&self) -> Result<Vec<f64>> {
        let family = self.family()?;
        family
            .params_of(&self.truth)
            .ok_or_else(|| Error::InvalidSpec("truth does not match its fit family".into()))
    }

    pub fn series_config(&self) -> SeriesConfig {
        SeriesConfig::new(self.budget)
    }

    fn grid_for(&self, d: &Dataset) -> Result<GridSpec> {
        let centers = match &self.center {
            GridCenter::Truth => self.true_params()?,
            GridCenter::Fixed { values } => values.clone(),
            GridCenter::Pilot => {
                let family = self.family()?;
                let pilot = pilot_center(d)?;
                match family {
                    FitFamily::Gamma { .. } => pilot.b.iter().zip(&pilot.n).flat_map(|(b, n)| [*b, *n]).collect(),
                    _ => {
                        return Err(Error::Config(format!(
                            "pilot centring is only defined for the gamma family, not {}",
                            family.name()
                        )))
                    }
                }
            }
        };
        GridSpec::new(&centers, &self.grid_counts, &self.grid_spacing)
    }
}

fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

/// One synthetic panel; a pure function of `(design, replicate)`.
///
/// Utilities are `u = c sum_p x_p beta_p` and `P(y=1) = 1 / (1 + e^u)`.
pub fn simulate_dataset(design: &SimDesign, replicate: usize) -> Result<Dataset> {
    design.validate()?;
    let sampler = PriorSampler::new(&design.truth)?;
    let c = design.effective_scale();
    let mut rng = replicate_rng(design.seed, replicate);
    let p = design.attributes;
    let mut beta = vec![0.0; p];
    let mut households = Vec::with_capacity(design.households);
    for i in 0..design.households {
        sampler.sample_into(&mut rng, &mut beta);
        let mut observations = Vec::with_capacity((design.categories * design.occasions) as usize);
        for j in 0..design.categories {
            for t in 0..design.occasions {
                let x: Vec<i64> =
                    (0..p).map(|_| design.x_support[rng.gen_range(0..design.x_support.len())]).collect();
                let u: f64 = c * x.iter().zip(&beta).map(|(x, b)| *x as f64 * b).sum::<f64>();
                let y = i64::from(rng.gen::<f64>() * (1.0 + u.exp()) < 1.0);
                observations.push(Observation::new(j, t, y, x));
            }
        }
        households.push(Household { id: i as u64 + 1, observations });
    }
    let mut d = Dataset::new(households, p);
    d.scale_note = Some(ScaleNote { units: vec![c; p], flipped: Vec::new() });
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub purchase_rate: f64,
    pub fit: Option<FitResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub sd: Option<f64>,
    /// `(mean - truth) / (sd / sqrt(replicates))`; absent with fewer than two fits.
    pub t: Option<f64>,
    pub crit: Option<f64>,
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub family: FitFamily,
    pub scale: f64,
    pub params: Vec<ParamSummary>,
    pub replicates: Vec<ReplicateOutcome>,
    pub failed_replicates: usize,
    pub boundary_hits: usize,
}

impl SimReport {
    /// Every parameter has a computable t-statistic within its critical value.
    pub fn all_pass(&self) -> bool {
        self.failed_replicates == 0 && self.params.iter().all(|p| p.pass == Some(true))
    }

    pub fn max_abs_t(&self) -> Option<f64> {
        self.params.iter().map(|p| p.t.map(f64::abs)).try_fold(0.0, |m, t| t.map(|t| f64::max(m, t)))
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v}"));
        let mut out = String::from("param,truth,mean,sd,t,crit,pass\n");
        for p in &self.params {
            let pass = p.pass.map_or_else(String::new, |b| b.to_string());
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                p.name,
                p.truth,
                p.mean,
                opt(p.sd),
                opt(p.t),
                opt(p.crit),
                pass
            );
        }
        out
    }
}

/// Two-sided Bonferroni critical value of a t-test with `df` degrees of freedom.
pub fn bonferroni_critical(df: usize, tests: usize) -> Result<f64> {
    let dist = StudentsT::new(0.0, 1.0, df as f64)
        .map_err(|e| Error::Config(format!("t distribution with {df} degrees of freedom: {e}")))?;
    Ok(dist.inverse_cdf(1.0 - BONFERRONI_ALPHA / (2.0 * tests as f64)))
}

fn fit_replicate(design: &SimDesign, family: &FitFamily, index: usize) -> ReplicateOutcome {
    let attempt = || -> Result<(f64, FitResult)> {
        let d = simulate_dataset(design, index)?;
        let rate = d.households.iter().flat_map(|h| &h.observations).filter(|o| o.y == 1).count() as f64
            / d.n_observations() as f64;
        let grid = design.grid_for(&d)?;
        let ws = Workspace::build(&d, &design.series_config())?;
        Ok((rate, grid_fit_workspace(&ws, family, &grid)?))
    };
    match attempt() {
        Ok((purchase_rate, fit)) => ReplicateOutcome { index, purchase_rate, fit: Some(fit), error: None },
        Err(e) => ReplicateOutcome { index, purchase_rate: f64::NAN, fit: None, error: Some(e.to_string()) },
    }
}

/// Simulates, fits and summarises every replicate; replicates run in parallel.
pub fn run_study(design: &SimDesign) -> Result<SimReport> {
    design.validate()?;
    let family = design.family()?;
    let truth = design.true_params()?;
    if design.grid_counts.len() != family.n_params() || design.grid_spacing.len() != family.n_params() {
        return Err(Error::Config(format!(
            "grid needs {} counts and spacings for {}",
            family.n_params(),
            family.name()
        )));
    }
    let replicates: Vec<ReplicateOutcome> =
        (0..design.replicates).into_par_iter().map(|i| fit_replicate(design, &family, i)).collect();
    let fits: Vec<&FitResult> = replicates.iter().filter_map(|r| r.fit.as_ref()).collect();
    let failed = replicates.len() - fits.len();
    let k = fits.len();
    let crit = match design.critical_value {
        Some(c) => Some(c),
        None if k >= 2 => Some(bonferroni_critical(k - 1, design.bonferroni_tests)?),
        None => None,
    };
    let params = family
        .param_names()
        .into_iter()
        .enumerate()
        .map(|(j, name)| {
            let vals: Vec<f64> = fits.iter().map(|f| f.omega_hat[j]).collect();
            let mean = if k > 0 { vals.iter().sum::<f64>() / k as f64 } else { f64::NAN };
            let sd = (k >= 2).then(|| {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
            });
            let t = sd.map(|sd| {
                let diff = mean - truth[j];
                if sd > 0.0 {
                    diff / (sd / (k as f64).sqrt())
                } else if diff == 0.0 {
                    0.0
                } else {
                    diff.signum() * f64::INFINITY
                }
            });
            let pass = match (t, crit) {
                (Some(t), Some(c)) => Some(t.abs() < c),
                _ => None,
            };
            ParamSummary { name, truth: truth[j], mean, sd, t, crit, pass }
        })
        .collect();
    let boundary_hits = fits.iter().filter(|f| f.boundary_flag).count();
    Ok(SimReport {
        family,
        scale: design.effective_scale(),
        params,
        replicates,
        failed_replicates: failed,
        boundary_hits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityRow {
    pub budget: u32,
    pub next: u32,
    /// Largest `|log L_(R+1) - log L_R| / |log L_(R+1)|` over the grid; infinite when
    /// the shorter truncation is not positive somewhere.
    pub max_spread: f64,
    pub failed_points: usize,
}

/// Parity spread of the grid surface of replicate 0 at each consecutive budget pair.
pub fn parity_study(design: &SimDesign, budgets: &[u32]) -> Result<Vec<ParityRow>> {
    design.validate()?;
    let family = design.family()?;
    let d = simulate_dataset(design, 0)?;
    let grid = design.grid_for(&d)?;
    let points = grid.points();
    budgets
        .iter()
        .map(|&r| {
            // caches at R+1 carry the R+1 frontier, so one pass yields both truncations
            let ws = Workspace::build(&d, &SeriesConfig::new(r + 1))?;
            let spreads: Vec<Option<f64>> = points
                .par_iter()
                .map(|pt| {
                    family
                        .to_spec(pt)
                        .and_then(|s| ws.log_marginal(&s))
                        .ok()
                        .map(|e| e.parity_spread.unwrap_or(f64::INFINITY))
                })
                .collect();
            let failed_points = spreads.iter().filter(|s| s.is_none()).count();
            let max_spread = spreads
                .iter()
                .map(|s| s.unwrap_or(f64::INFINITY))
                .fold(0.0, f64::max);
            Ok(ParityRow { budget: r, next: r + 1, max_spread, failed_points })
        })
        .collect()
}

#[cfg(test)]
mod tests;
