use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{
    check_mixture, check_translation, BivariateNamed, GammaParams, GmvGammaSpec, MixtureComponent,
};

/// Independent per-attribute Gammas, optionally translated by `epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSpec {
    pub b: Vec<f64>,
    pub n: Vec<f64>,
    #[serde(default)]
    pub epsilon: f64,
}

impl GammaSpec {
    pub fn new(b: Vec<f64>, n: Vec<f64>, epsilon: f64) -> Result<Self> {
        let s = GammaSpec { b, n, epsilon };
        s.validate()?;
        Ok(s)
    }

    pub fn params(&self, p: usize) -> GammaParams {
        GammaParams { b: self.b[p], n: self.n[p] }
    }

    pub fn n_attributes(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.b.is_empty() || self.b.len() != self.n.len() {
            return Err(Error::InvalidSpec(format!(
                "gamma spec needs equal, non-zero numbers of b and n values (got {} and {})",
                self.b.len(),
                self.n.len()
            )));
        }
        check_translation(self.epsilon)?;
        for p in 0..self.b.len() {
            self.params(p).validate()?;
        }
        Ok(())
    }
}

/// Per-attribute Gamma mixtures sharing one translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    /// One component list per attribute.
    pub components: Vec<Vec<MixtureComponent>>,
    #[serde(default)]
    pub epsilon: f64,
}

/// With probability `w` every coefficient of every household is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMassSpec {
    pub w: f64,
    pub inner: GammaSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum HeterogeneitySpec {
    IndependentGamma(GammaSpec),
    GammaMixture(MixtureSpec),
    PointMassGamma(PointMassSpec),
    GeneralizedMvGamma(GmvGammaSpec),
    BivariateNamed(BivariateNamed),
}

impl HeterogeneitySpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            HeterogeneitySpec::IndependentGamma(g) => g.validate(),
            HeterogeneitySpec::GammaMixture(m) => {
                if m.components.is_empty() {
                    return Err(Error::InvalidSpec("mixture needs P >= 1".into()));
                }
                check_translation(m.epsilon)?;
                m.components.iter().try_for_each(|c| check_mixture(c))
            }
            HeterogeneitySpec::PointMassGamma(pm) => {
                if !(0.0..=1.0).contains(&pm.w) {
                    return Err(Error::InvalidSpec(format!(
                        "point-mass weight {} outside [0, 1]",
                        pm.w
                    )));
                }
                pm.inner.validate()
            }
            HeterogeneitySpec::GeneralizedMvGamma(g) => g.validate(),
            HeterogeneitySpec::BivariateNamed(b) => b.validate(),
        }
    }

    pub fn n_attributes(&self) -> usize {
        match self {
            HeterogeneitySpec::IndependentGamma(g) => g.n_attributes(),
            HeterogeneitySpec::GammaMixture(m) => m.components.len(),
            HeterogeneitySpec::PointMassGamma(pm) => pm.inner.n_attributes(),
            HeterogeneitySpec::GeneralizedMvGamma(g) => g.n_attributes(),
            HeterogeneitySpec::BivariateNamed(_) => 2,
        }
    }

    /// Prior mean of each coefficient.
    pub fn marginal_means(&self) -> Vec<f64> {
        match self {
            HeterogeneitySpec::IndependentGamma(g) => {
                (0..g.n_attributes()).map(|p| g.epsilon + g.params(p).mean()).collect()
            }
            HeterogeneitySpec::GammaMixture(m) => m
                .components
                .iter()
                .map(|cs| m.epsilon + cs.iter().map(|c| c.w * c.b * c.n).sum::<f64>())
                .collect(),
            HeterogeneitySpec::PointMassGamma(pm) => (0..pm.inner.n_attributes())
                .map(|p| (1.0 - pm.w) * (pm.inner.epsilon + pm.inner.params(p).mean()))
                .collect(),
            HeterogeneitySpec::GeneralizedMvGamma(g) => g.means(),
            HeterogeneitySpec::BivariateNamed(b) => b.means().to_vec(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: HeterogeneitySpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("specs always serialize")
    }
}
