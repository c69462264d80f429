//! Closed-form integrals of exponentials against one-sided priors.
//!
//! Every series term of the marginal likelihood has the form
//! `E[exp(-K . beta)]` for a non-negative vector `K`; for each supported prior
//! family this is the moment generating function evaluated at `-K`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scale/shape pair of a Gamma density `z^(n-1) e^(-z/b) / (b^n Gamma(n))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub b: f64,
    pub n: f64,
}

impl GammaParams {
    pub fn new(b: f64, n: f64) -> Result<Self> {
        let g = GammaParams { b, n };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::InvalidSpec(format!("gamma scale b = {} must be > 0", self.b)));
        }
        if !(self.n > 0.0 && self.n.is_finite()) {
            return Err(Error::InvalidSpec(format!("gamma shape n = {} must be > 0", self.n)));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.b * self.n
    }

    pub fn variance(&self) -> f64 {
        self.b * self.b * self.n
    }
}

/// `ln (1 + b d)^(-n)`, the log of the Gamma kernel. No argument checks.
#[inline]
pub(crate) fn ln_gamma_kernel(d: f64, b: f64, n: f64) -> f64 {
    -n * (b * d).ln_1p()
}

fn check_distance(d: f64) -> Result<()> {
    if d.is_nan() || d < 0.0 {
        return Err(Error::Domain(format!("exponent d = {d} must be >= 0")));
    }
    Ok(())
}

/// `integral_0^inf e^(-z d) G(z; b, n) dz = (1 + b d)^(-n)` for `d >= 0`.
pub fn exp_vs_gamma(d: f64, g: GammaParams) -> Result<f64> {
    check_distance(d)?;
    g.validate()?;
    Ok(ln_gamma_kernel(d, g.b, g.n).exp())
}

/// Kernel for `beta = eps + Z` with `Z ~ G(b, n)`: `e^(-d eps) (1 + b d)^(-n)`.
pub fn translated_factor(d: f64, g: GammaParams, eps: f64) -> Result<f64> {
    check_distance(d)?;
    check_translation(eps)?;
    g.validate()?;
    Ok((-d * eps + ln_gamma_kernel(d, g.b, g.n)).exp())
}

pub(crate) fn check_translation(eps: f64) -> Result<()> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidSpec(format!("translation eps = {eps} must be >= 0")));
    }
    Ok(())
}

/// One weighted component of a Gamma mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub w: f64,
    pub b: f64,
    pub n: f64,
}

impl MixtureComponent {
    pub fn gamma(&self) -> GammaParams {
        GammaParams { b: self.b, n: self.n }
    }
}

pub const MIXTURE_WEIGHT_TOL: f64 = 1e-12;

pub(crate) fn check_mixture(components: &[MixtureComponent]) -> Result<()> {
    if components.is_empty() {
        return Err(Error::InvalidSpec("mixture has no components".into()));
    }
    let mut total = 0.0;
    for c in components {
        if !(0.0..=1.0).contains(&c.w) {
            return Err(Error::InvalidSpec(format!("mixture weight {} outside [0, 1]", c.w)));
        }
        c.gamma().validate()?;
        total += c.w;
    }
    if (total - 1.0).abs() > MIXTURE_WEIGHT_TOL {
        return Err(Error::InvalidSpec(format!(
            "mixture weights sum to {total}, not 1"
        )));
    }
    Ok(())
}

/// `sum_c w_c e^(-d eps) (1 + b_c d)^(-n_c)`.
pub fn mixture_factor(d: f64, components: &[MixtureComponent], eps: f64) -> Result<f64> {
    check_distance(d)?;
    check_translation(eps)?;
    check_mixture(components)?;
    Ok(mixture_factor_unchecked(d, components, eps))
}

#[inline]
pub(crate) fn mixture_factor_unchecked(d: f64, components: &[MixtureComponent], eps: f64) -> f64 {
    let shift = (-d * eps).exp();
    let mix: f64 = components
        .iter()
        .map(|c| c.w * ln_gamma_kernel(d, c.b, c.n).exp())
        .sum();
    shift * mix
}

/// Shared-factor multivariate Gamma:
/// `X_p = sum_m loadings[p][m] Y_{0,m} + scales[p] Y_p` with independent unit-scale
/// Gammas `Y_{0,m} ~ G(1, shared_shapes[m])`, `Y_p ~ G(1, shapes[p])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmvGammaSpec {
    /// P rows by M columns, all entries >= 0.
    pub loadings: Vec<Vec<f64>>,
    pub scales: Vec<f64>,
    pub shared_shapes: Vec<f64>,
    pub shapes: Vec<f64>,
}

impl GmvGammaSpec {
    pub fn n_attributes(&self) -> usize {
        self.scales.len()
    }

    pub fn n_factors(&self) -> usize {
        self.shared_shapes.len()
    }

    /// Cheriyan-Ramabhadran bivariate Gamma as the P=2, M=1 special case.
    pub fn cheriyan_ramabhadran(theta: [f64; 3]) -> Self {
        GmvGammaSpec {
            loadings: vec![vec![1.0], vec![1.0]],
            scales: vec![1.0, 1.0],
            shared_shapes: vec![theta[0]],
            shapes: vec![theta[1], theta[2]],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.scales.len();
        let m = self.shared_shapes.len();
        if p == 0 {
            return Err(Error::InvalidSpec("multivariate gamma needs P >= 1".into()));
        }
        if self.shapes.len() != p || self.loadings.len() != p {
            return Err(Error::InvalidSpec(format!(
                "multivariate gamma dimension mismatch: {} scales, {} shapes, {} loading rows",
                p,
                self.shapes.len(),
                self.loadings.len()
            )));
        }
        for (i, row) in self.loadings.iter().enumerate() {
            if row.len() != m {
                return Err(Error::InvalidSpec(format!(
                    "loading row {i} has {} entries, expected {m}",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                return Err(Error::InvalidSpec(format!("loading {v} must be >= 0")));
            }
        }
        for (name, vals) in [
            ("scale", &self.scales),
            ("shared shape", &self.shared_shapes),
            ("shape", &self.shapes),
        ] {
            if let Some(v) = vals.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidSpec(format!("{name} {v} must be > 0")));
            }
        }
        Ok(())
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.n_attributes())
            .map(|p| {
                let shared: f64 = self.loadings[p]
                    .iter()
                    .zip(&self.shared_shapes)
                    .map(|(l, t)| l * t)
                    .sum();
                shared + self.scales[p] * self.shapes[p]
            })
            .collect()
    }

    /// `ln M(-k)` for `k >= 0`; always inside the existence region.
    #[inline]
    pub(crate) fn ln_mgf_neg(&self, k: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (m, theta0) in self.shared_shapes.iter().enumerate() {
            let s: f64 = self.loadings.iter().zip(k).map(|(row, kp)| row[m] * kp).sum();
            acc -= theta0 * s.ln_1p();
        }
        for ((lam, theta), kp) in self.scales.iter().zip(&self.shapes).zip(k) {
            acc -= theta * (lam * kp).ln_1p();
        }
        acc
    }
}

/// `prod_m (1 - sum_p l_{p,m} t_p)^(-theta_{0,m}) prod_p (1 - l_p t_p)^(-theta_p)`.
pub fn mgf_gmv_gamma(t: &[f64], params: &GmvGammaSpec) -> Result<f64> {
    params.validate()?;
    if t.len() != params.n_attributes() {
        return Err(Error::Domain(format!(
            "query has {} coordinates, distribution has {}",
            t.len(),
            params.n_attributes()
        )));
    }
    let mut acc = 0.0;
    for (m, theta0) in params.shared_shapes.iter().enumerate() {
        let s: f64 = params.loadings.iter().zip(t).map(|(row, tp)| row[m] * tp).sum();
        if s >= 1.0 {
            return Err(Error::ExistenceRegion(format!(
                "shared factor {m}: sum_p loading * t_p = {s} must be < 1"
            )));
        }
        acc -= theta0 * (-s).ln_1p();
    }
    for (p, ((lam, theta), tp)) in params.scales.iter().zip(&params.shapes).zip(t).enumerate() {
        if lam * tp >= 1.0 {
            return Err(Error::ExistenceRegion(format!(
                "coordinate {p}: t_p = {tp} must be < 1/scale = {}",
                1.0 / lam
            )));
        }
        acc -= theta * (-lam * tp).ln_1p();
    }
    Ok(acc.exp())
}

/// Covariance matrix of the shared-factor multivariate Gamma.
pub fn gmv_gamma_covariance(params: &GmvGammaSpec) -> Result<DMatrix<f64>> {
    params.validate()?;
    let p = params.n_attributes();
    let mut cov = DMatrix::zeros(p, p);
    for r in 0..p {
        for s in 0..p {
            let shared: f64 = (0..params.n_factors())
                .map(|m| params.loadings[r][m] * params.loadings[s][m] * params.shared_shapes[m])
                .sum();
            cov[(r, s)] = if r == s {
                shared + params.scales[r].powi(2) * params.shapes[r]
            } else {
                shared
            };
        }
    }
    Ok(cov)
}

pub fn gmv_gamma_correlation(params: &GmvGammaSpec) -> Result<DMatrix<f64>> {
    let cov = gmv_gamma_covariance(params)?;
    let p = cov.nrows();
    let sd: Vec<f64> = (0..p).map(|i| cov[(i, i)].sqrt()).collect();
    Ok(DMatrix::from_fn(p, p, |r, s| cov[(r, s)] / (sd[r] * sd[s])))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheriyanRamabhadranSpec {
    pub theta: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreundSpec {
    pub alpha: [f64; 2],
    pub alpha_prime: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArnoldStraussSpec {
    pub lambda: [f64; 2],
    pub lambda12: f64,
}

/// Named bivariate families with closed-form MGFs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum BivariateNamed {
    CheriyanRamabhadran(CheriyanRamabhadranSpec),
    Freund(FreundSpec),
    ArnoldStrauss(ArnoldStraussSpec),
}

fn all_positive(name: &str, vals: &[f64]) -> Result<()> {
    if let Some(v) = vals.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidSpec(format!("{name} parameter {v} must be > 0")));
    }
    Ok(())
}

impl BivariateNamed {
    pub fn validate(&self) -> Result<()> {
        match self {
            BivariateNamed::CheriyanRamabhadran(s) => all_positive("Cheriyan-Ramabhadran", &s.theta),
            BivariateNamed::Freund(s) => {
                all_positive("Freund", &s.alpha)?;
                all_positive("Freund", &s.alpha_prime)
            }
            BivariateNamed::ArnoldStrauss(s) => {
                all_positive("Arnold-Strauss", &s.lambda)?;
                all_positive("Arnold-Strauss", &[s.lambda12])
            }
        }
    }

    pub fn means(&self) -> [f64; 2] {
        match self {
            BivariateNamed::CheriyanRamabhadran(s) => {
                [s.theta[0] + s.theta[1], s.theta[0] + s.theta[2]]
            }
            BivariateNamed::Freund(s) => {
                let total = s.alpha[0] + s.alpha[1];
                [
                    1.0 / total + s.alpha[1] / (total * s.alpha_prime[0]),
                    1.0 / total + s.alpha[0] / (total * s.alpha_prime[1]),
                ]
            }
            BivariateNamed::ArnoldStrauss(s) => {
                // d/dc [e^c E1(c)] = e^c E1(c) - 1/c
                let c0 = s.lambda[0] * s.lambda[1] / s.lambda12;
                let e = scaled_e1(c0);
                [
                    1.0 / (s.lambda[0] * e) - s.lambda[1] / s.lambda12,
                    1.0 / (s.lambda[1] * e) - s.lambda[0] / s.lambda12,
                ]
            }
        }
    }

    /// `ln M(-k)` for `k >= 0`.
    pub(crate) fn ln_mgf_neg(&self, k: &[f64]) -> f64 {
        match self {
            BivariateNamed::CheriyanRamabhadran(s) => {
                -s.theta[0] * (k[0] + k[1]).ln_1p()
                    - s.theta[1] * k[0].ln_1p()
                    - s.theta[2] * k[1].ln_1p()
            }
            BivariateNamed::Freund(s) => {
                let [a1, a2] = s.alpha;
                let [a1p, a2p] = s.alpha_prime;
                let inner = a1p * a2 / (a1p + k[0]) + a1 * a2p / (a2p + k[1]);
                inner.ln() - (a1 + a2 + k[0] + k[1]).ln()
            }
            BivariateNamed::ArnoldStrauss(s) => {
                let c0 = s.lambda[0] * s.lambda[1] / s.lambda12;
                let c = (s.lambda[0] + k[0]) * (s.lambda[1] + k[1]) / s.lambda12;
                scaled_e1(c).ln() - scaled_e1(c0).ln()
            }
        }
    }
}

/// Closed-form MGF of a named bivariate family at `t`.
pub fn mgf_bivariate_named(t: &[f64], spec: &BivariateNamed) -> Result<f64> {
    spec.validate()?;
    if t.len() != 2 {
        return Err(Error::Domain(format!(
            "bivariate MGF needs P = 2 coordinates, got {}",
            t.len()
        )));
    }
    let (t1, t2) = (t[0], t[1]);
    match spec {
        BivariateNamed::CheriyanRamabhadran(s) => {
            mgf_gmv_gamma(t, &GmvGammaSpec::cheriyan_ramabhadran(s.theta))
        }
        BivariateNamed::Freund(s) => {
            let [a1, a2] = s.alpha;
            let [a1p, a2p] = s.alpha_prime;
            if t1 >= a1p || t2 >= a2p || t1 + t2 >= a1 + a2 {
                return Err(Error::ExistenceRegion(format!(
                    "Freund MGF needs t_p < alpha_p' and t_1 + t_2 < alpha_1 + alpha_2, got ({t1}, {t2})"
                )));
            }
            Ok((a1p * a2 / (a1p - t1) + a1 * a2p / (a2p - t2)) / (a1 + a2 - t1 - t2))
        }
        BivariateNamed::ArnoldStrauss(s) => {
            if t1 >= s.lambda[0] || t2 >= s.lambda[1] {
                return Err(Error::ExistenceRegion(format!(
                    "Arnold-Strauss MGF needs t_p < lambda_p, got ({t1}, {t2})"
                )));
            }
            let c0 = s.lambda[0] * s.lambda[1] / s.lambda12;
            let c = (s.lambda[0] - t1) * (s.lambda[1] - t2) / s.lambda12;
            Ok(scaled_e1(c) / scaled_e1(c0))
        }
    }
}

/// Arnold-Strauss normaliser `A_12` making the density integrate to one.
pub fn arnold_strauss_normalizer(spec: &ArnoldStraussSpec) -> f64 {
    let c0 = spec.lambda[0] * spec.lambda[1] / spec.lambda12;
    spec.lambda12 / scaled_e1(c0)
}

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const EI_SERIES_CUTOFF: f64 = 6.0;

/// `e^x E_1(x)` for `x > 0`; stays finite where `e^x` alone would overflow.
pub(crate) fn scaled_e1(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x < EI_SERIES_CUTOFF {
        e1_series(x) * x.exp()
    } else {
        scaled_e1_continued_fraction(x)
    }
}

fn e1_series(x: f64) -> f64 {
    // E1(x) = -gamma - ln x - sum_{k>=1} (-x)^k / (k k!)
    let mut sum = 0.0;
    let mut term = 1.0;
    for k in 1..200 {
        let kf = k as f64;
        term *= -x / kf;
        let contrib = term / kf;
        sum += contrib;
        if contrib.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    -EULER_GAMMA - x.ln() - sum
}

fn scaled_e1_continued_fraction(x: f64) -> f64 {
    // modified Lentz on 1/(x+1- 1/(x+3- 4/(x+5- ...)))
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -((i * i) as f64);
        b += 2.0;
        d = 1.0 / (an * d + b);
        c = b + an / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Exponential integral `Ei(z) = -integral_{-z}^inf e^(-t)/t dt` on the negative axis.
pub fn expint_ei(z: f64) -> Result<f64> {
    if !(z < 0.0) {
        return Err(Error::Domain(format!("Ei is only evaluated for z < 0, got {z}")));
    }
    let x = -z;
    if x < EI_SERIES_CUTOFF {
        Ok(-e1_series(x))
    } else {
        Ok(-scaled_e1_continued_fraction(x) * z.exp())
    }
}
