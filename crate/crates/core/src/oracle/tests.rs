use super::*;
use crate::data::{MixtureSpec, Observation, PointMassSpec};
use crate::kernels::{ArnoldStraussSpec, CheriyanRamabhadranSpec, FreundSpec, MixtureComponent};

fn single(x: &[i64], y: i64) -> Household {
    Household { id: 7, observations: vec![Observation::new(0, 0, y, x.to_vec())] }
}

fn gamma(b: &[f64], n: &[f64]) -> HeterogeneitySpec {
    HeterogeneitySpec::IndependentGamma(GammaSpec::new(b.to_vec(), n.to_vec(), 0.0).unwrap())
}

#[test]
fn quadrature_unit_exponential_cases() {
    let qc = QuadConfig::default();
    let spec = gamma(&[1.0], &[1.0]);
    let v0 = quadrature_h(&single(&[1], 0), &[1.0], &spec, &qc).unwrap();
    let v1 = quadrature_h(&single(&[1], 1), &[1.0], &spec, &qc).unwrap();
    let ln2 = std::f64::consts::LN_2;
    assert!((v0.value - ln2).abs() < 1e-9, "{v0:?}");
    assert!((v1.value - (1.0 - ln2)).abs() < 1e-9, "{v1:?}");
    assert!(v0.error < 1e-8);
}

#[test]
fn quadrature_concentrates_on_point_mass_surrogate() {
    let mu = 0.7;
    let n = 1e4;
    let spec = gamma(&[mu / n], &[n]);
    let v = quadrature_h(&single(&[1], 0), &[1.0], &spec, &QuadConfig::default()).unwrap();
    assert!((v.value - 1.0 / (1.0 + (-mu).exp())).abs() < 1e-3);
}

#[test]
fn quadrature_of_point_mass_mixes_the_atom() {
    let inner = GammaSpec::new(vec![1.0], vec![1.0], 0.0).unwrap();
    let spec = HeterogeneitySpec::PointMassGamma(PointMassSpec { w: 0.25, inner });
    let v = quadrature_h(&single(&[1], 0), &[1.0], &spec, &QuadConfig::default()).unwrap();
    assert!((v.value - (0.25 * 0.5 + 0.75 * std::f64::consts::LN_2)).abs() < 1e-9);
}

#[test]
fn quadrature_rejects_wide_latent_spaces() {
    let g = GmvGammaSpec {
        loadings: vec![vec![1.0, 1.0], vec![1.0, 0.0]],
        scales: vec![1.0, 1.0],
        shared_shapes: vec![1.0, 1.0],
        shapes: vec![1.0, 1.0],
    };
    let spec = HeterogeneitySpec::GeneralizedMvGamma(g);
    let r = quadrature_h(&single(&[1, 1], 0), &[1.0, 1.0], &spec, &QuadConfig::default());
    assert!(matches!(r, Err(Error::InvalidSpec(_))));
}

#[test]
fn densities_integrate_to_one() {
    // y=0 with zero covariates has likelihood 1/2 everywhere
    let specs = [
        HeterogeneitySpec::BivariateNamed(BivariateNamed::Freund(FreundSpec {
            alpha: [1.0, 2.0],
            alpha_prime: [0.5, 3.0],
        })),
        HeterogeneitySpec::BivariateNamed(BivariateNamed::ArnoldStrauss(ArnoldStraussSpec {
            lambda: [1.0, 2.0],
            lambda12: 0.7,
        })),
        HeterogeneitySpec::BivariateNamed(BivariateNamed::CheriyanRamabhadran(CheriyanRamabhadranSpec {
            theta: [1.5, 0.5, 2.0],
        })),
        HeterogeneitySpec::GammaMixture(MixtureSpec {
            components: vec![
                vec![MixtureComponent { w: 0.3, b: 1.0, n: 2.0 }, MixtureComponent { w: 0.7, b: 0.5, n: 6.0 }],
                vec![MixtureComponent { w: 1.0, b: 2.0, n: 1.5 }],
            ],
            epsilon: 0.1,
        }),
    ];
    let qc = QuadConfig { rel_tol: 1e-7, ..QuadConfig::default() };
    for spec in &specs {
        let v = quadrature_h(&single(&[0, 0], 0), &[1.0, 1.0], spec, &qc).unwrap();
        assert!((v.value - 0.5).abs() < 1e-6, "{spec:?}: {v:?}");
    }
}

#[test]
fn mc_matches_quadrature_on_ln2_case() {
    let spec = gamma(&[1.0], &[1.0]);
    let h = single(&[1], 0);
    let est = mc_h(&h, &[1.0], &spec, 1_000_000, 3).unwrap();
    assert!((est.value - std::f64::consts::LN_2).abs() < 3.0 * est.std_error, "{est:?}");
}

#[test]
fn mc_is_seed_deterministic_and_scales() {
    let spec = gamma(&[1.0], &[1.0]);
    let h = single(&[1], 0);
    let a = mc_h(&h, &[1.0], &spec, 10_000, 9).unwrap();
    let b = mc_h(&h, &[1.0], &spec, 10_000, 9).unwrap();
    assert_eq!(a, b);
    let big = mc_h(&h, &[1.0], &spec, 1_000_000, 9).unwrap();
    let ratio = a.std_error / big.std_error;
    assert!((5.0..=20.0).contains(&ratio), "{ratio}");
}

#[test]
fn mc_and_quadrature_agree_across_families() {
    let h = Household {
        id: 3,
        observations: vec![Observation::new(0, 0, 1, vec![1, 2]), Observation::new(0, 1, 0, vec![2, 1])],
    };
    let units = [0.5, 0.25];
    let specs = [
        gamma(&[0.5, 1.0], &[2.0, 1.5]),
        HeterogeneitySpec::BivariateNamed(BivariateNamed::Freund(FreundSpec {
            alpha: [1.0, 2.0],
            alpha_prime: [0.5, 3.0],
        })),
        HeterogeneitySpec::BivariateNamed(BivariateNamed::ArnoldStrauss(ArnoldStraussSpec {
            lambda: [1.0, 2.0],
            lambda12: 0.7,
        })),
        HeterogeneitySpec::BivariateNamed(BivariateNamed::CheriyanRamabhadran(CheriyanRamabhadranSpec {
            theta: [1.5, 0.5, 2.0],
        })),
        HeterogeneitySpec::PointMassGamma(PointMassSpec {
            w: 0.4,
            inner: GammaSpec::new(vec![0.5, 1.0], vec![2.0, 1.5], 0.2).unwrap(),
        }),
    ];
    let qc = QuadConfig { rel_tol: 1e-7, ..QuadConfig::default() };
    for spec in &specs {
        let q = quadrature_h(&h, &units, spec, &qc).unwrap();
        let m = mc_h(&h, &units, spec, 400_000, 1).unwrap();
        assert!(q.value > 0.0 && q.value <= 1.0);
        assert!((q.value - m.value).abs() < 3.0 * m.std_error, "{spec:?}: {q:?} vs {m:?}");
    }
}

