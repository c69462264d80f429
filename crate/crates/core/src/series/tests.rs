use super::*;
use crate::data::{Dataset, MixtureSpec, Observation, PointMassSpec};
use crate::dioph::{build_cache, DEFAULT_ADMISSION_LIMIT};
use crate::kernels::{CheriyanRamabhadranSpec, GmvGammaSpec, MixtureComponent};

fn household(id: u64, obs: &[(i64, &[i64])]) -> Household {
    Household {
        id,
        observations: obs
            .iter()
            .enumerate()
            .map(|(t, (y, x))| Observation::new(1, t as u32 + 1, *y, x.to_vec()))
            .collect(),
    }
}

fn gamma(b: &[f64], n: &[f64], eps: f64) -> GammaSpec {
    GammaSpec::new(b.to_vec(), n.to_vec(), eps).unwrap()
}

#[test]
fn naive_single_observation_limits() {
    let g = gamma(&[1.0], &[1.0], 0.0);
    // the alternating tail after R terms is below 1/(R + 2)
    let e0 = h_naive(&household(1, &[(0, &[1])]), &g, &[1.0], &SeriesConfig::naive(4000)).unwrap();
    assert!((e0.value - std::f64::consts::LN_2).abs() < 1.0 / 4001.0);
    let e1 = h_naive(&household(1, &[(1, &[1])]), &g, &[1.0], &SeriesConfig::naive(4000)).unwrap();
    assert!((e1.value - (1.0 - std::f64::consts::LN_2)).abs() < 1.0 / 4002.0);
    assert_eq!(e0.terms, 4001);
}

#[test]
fn naive_zero_budget_is_first_term() {
    let g = gamma(&[2.0, 0.5], &[3.0, 4.0], 0.0);
    let h = household(1, &[(0, &[1, 2])]);
    assert_eq!(h_naive(&h, &g, &[1.0, 1.0], &SeriesConfig::naive(0)).unwrap().value, 1.0);
    let h = household(1, &[(1, &[1, 2]), (0, &[3, 1])]);
    let v = h_naive(&h, &g, &[1.0, 1.0], &SeriesConfig::naive(0)).unwrap().value;
    assert!((v - 3f64.powf(-3.0) * 2f64.powf(-4.0)).abs() < 1e-15);
}

#[test]
fn grouped_matches_naive_with_translation_and_units() {
    let h = household(7, &[(1, &[1, 2]), (0, &[3, 1]), (1, &[2, 2])]);
    let sums = HouseholdSums::from_household(&h, 2).unwrap();
    let cache = build_cache(&sums.x, 6, DEFAULT_ADMISSION_LIMIT).unwrap();
    let units = [0.3, 0.7];
    for eps in [0.0, 1e-4, 0.2] {
        let g = gamma(&[2.0, 0.5], &[3.0, 1.5], eps);
        let naive = h_naive(&h, &g, &units, &SeriesConfig::naive(6)).unwrap();
        let grouped =
            h_grouped(&sums, &cache, &HeterogeneitySpec::IndependentGamma(g), &units).unwrap();
        assert!((naive.value - grouped.value).abs() <= 1e-12 * naive.value.abs());
        assert!((naive.parity_spread.unwrap() - grouped.parity_spread.unwrap()).abs() < 1e-9);
    }
}

#[test]
fn translation_is_continuous() {
    let h = household(1, &[(0, &[1]), (1, &[2])]);
    let sums = HouseholdSums::from_household(&h, 1).unwrap();
    let cache = build_cache(&sums.x, 30, DEFAULT_ADMISSION_LIMIT).unwrap();
    let at = |eps| {
        let s = HeterogeneitySpec::IndependentGamma(gamma(&[1.0], &[2.0], eps));
        h_grouped(&sums, &cache, &s, &[1.0]).unwrap().value
    };
    assert!((at(1e-8) - at(0.0)).abs() < 1e-6 * at(0.0));
}

#[test]
fn single_component_mixture_equals_gamma() {
    let h = household(1, &[(1, &[2, 1]), (0, &[1, 3])]);
    let sums = HouseholdSums::from_household(&h, 2).unwrap();
    let cache = build_cache(&sums.x, 8, DEFAULT_ADMISSION_LIMIT).unwrap();
    let g = HeterogeneitySpec::IndependentGamma(gamma(&[1.5, 0.4], &[2.0, 6.0], 0.01));
    let m = HeterogeneitySpec::GammaMixture(MixtureSpec {
        components: vec![
            vec![MixtureComponent { w: 1.0, b: 1.5, n: 2.0 }],
            vec![MixtureComponent { w: 1.0, b: 0.4, n: 6.0 }],
        ],
        epsilon: 0.01,
    });
    let a = h_grouped(&sums, &cache, &g, &[1.0, 1.0]).unwrap().value;
    let b = h_grouped(&sums, &cache, &m, &[1.0, 1.0]).unwrap().value;
    assert!((a - b).abs() <= 1e-14 * a.abs());
}

#[test]
fn mgf_path_reproduces_gamma_path() {
    let h = household(1, &[(1, &[2, 1]), (0, &[1, 3])]);
    let sums = HouseholdSums::from_household(&h, 2).unwrap();
    let cache = build_cache(&sums.x, 8, DEFAULT_ADMISSION_LIMIT).unwrap();
    let g = HeterogeneitySpec::IndependentGamma(gamma(&[1.5, 0.4], &[2.0, 6.0], 0.0));
    let gmv = HeterogeneitySpec::GeneralizedMvGamma(GmvGammaSpec {
        loadings: vec![vec![0.0], vec![0.0]],
        scales: vec![1.5, 0.4],
        shared_shapes: vec![1.0],
        shapes: vec![2.0, 6.0],
    });
    let a = h_grouped(&sums, &cache, &g, &[1.0, 1.0]).unwrap().value;
    let b = h_mgf(&sums, &cache, &gmv, &[1.0, 1.0]).unwrap().value;
    assert!((a - b).abs() <= 1e-12 * a.abs());
    assert!(matches!(h_mgf(&sums, &cache, &g, &[1.0, 1.0]), Err(Error::InvalidSpec(_))));
    assert!(matches!(h_grouped(&sums, &cache, &gmv, &[1.0, 1.0]), Err(Error::InvalidSpec(_))));
}

#[test]
fn grouped_rejects_foreign_cache() {
    let sums = HouseholdSums::from_household(&household(1, &[(0, &[1]), (0, &[2])]), 1).unwrap();
    let cache = build_cache(&[vec![1, 3]], 3, DEFAULT_ADMISSION_LIMIT).unwrap();
    let s = HeterogeneitySpec::IndependentGamma(gamma(&[1.0], &[1.0], 0.0));
    assert!(matches!(h_grouped(&sums, &cache, &s, &[1.0]), Err(Error::CacheMismatch(_))));
}

#[test]
fn moment_expansion_agrees_where_it_converges() {
    // b K < 1 for every cached K keeps each Taylor series convergent
    let h = household(1, &[(0, &[1])]);
    let sums = HouseholdSums::from_household(&h, 1).unwrap();
    let cache = build_cache(&sums.x, 10, DEFAULT_ADMISSION_LIMIT).unwrap();
    let g = gamma(&[0.05], &[1.0], 0.0);
    let naive = h_naive(&h, &g, &[1.0], &SeriesConfig::naive(10)).unwrap().value;
    let mom = GammaMoments::new(g).unwrap();
    let v = moment_expansion_h(&sums, &cache, &mom, 80, &[1.0]).unwrap().value;
    assert!((v - naive).abs() < 1e-6, "{v} vs {naive}");
}

#[test]
fn moment_expansion_order_zero_is_parity_sum() {
    let h = household(1, &[(0, &[1]), (0, &[2]), (1, &[1])]);
    let sums = HouseholdSums::from_household(&h, 1).unwrap();
    let cache = build_cache(&sums.x, 5, DEFAULT_ADMISSION_LIMIT).unwrap();
    let mom = GammaMoments::new(gamma(&[1.0], &[1.0], 0.0)).unwrap();
    let v = moment_expansion_h(&sums, &cache, &mom, 0, &[1.0]).unwrap().value;
    let m = 3u64;
    let expected: f64 = (0..=5u64)
        .map(|r| {
            let c = crate::dioph::compositions_count(r, m);
            let c: f64 = num_traits::ToPrimitive::to_f64(&c).unwrap();
            if r % 2 == 0 { c } else { -c }
        })
        .sum();
    assert!((v - expected).abs() < 1e-12, "{v} vs {expected}");
}

#[test]
fn moment_partial_sums_bracket_the_limit() {
    let h = household(1, &[(1, &[1])]);
    let sums = HouseholdSums::from_household(&h, 1).unwrap();
    let cache = build_cache(&sums.x, 0, DEFAULT_ADMISSION_LIMIT).unwrap();
    let g = gamma(&[0.4], &[1.0], 0.0);
    let limit = 1.0 / 1.4;
    let mom = GammaMoments::new(g).unwrap();
    for order in 0..20u32 {
        let a = moment_expansion_h(&sums, &cache, &mom, order, &[1.0]).unwrap().value;
        let b = moment_expansion_h(&sums, &cache, &mom, order + 1, &[1.0]).unwrap().value;
        assert!(a.min(b) <= limit && limit <= a.max(b), "order {order}: {a} {b}");
    }
}

fn dataset(hs: Vec<Household>, p: usize) -> Dataset {
    Dataset::new(hs, p)
}

#[test]
fn identical_households_double_log_likelihood() {
    let h1 = household(1, &[(1, &[1]), (0, &[2])]);
    let h2 = household(2, &[(1, &[1]), (0, &[2])]);
    let spec = HeterogeneitySpec::IndependentGamma(gamma(&[0.7], &[2.0], 0.0));
    let cfg = SeriesConfig::new(20);
    let one = log_marginal(&dataset(vec![h1.clone()], 1), &spec, &cfg, None).unwrap().value;
    let two = log_marginal(&dataset(vec![h1, h2], 1), &spec, &cfg, None).unwrap().value;
    assert!((two - 2.0 * one).abs() < 1e-13);
}

#[test]
fn point_mass_extremes() {
    let d = dataset(
        vec![household(1, &[(1, &[1]), (0, &[2])]), household(2, &[(0, &[3])])],
        1,
    );
    let inner = gamma(&[0.7], &[2.0], 0.0);
    let cfg = SeriesConfig::new(20);
    let full = HeterogeneitySpec::PointMassGamma(PointMassSpec { w: 1.0, inner: inner.clone() });
    let v = log_marginal(&d, &full, &cfg, None).unwrap().value;
    assert!((v + 3.0 * std::f64::consts::LN_2).abs() < 1e-14);
    let none = HeterogeneitySpec::PointMassGamma(PointMassSpec { w: 0.0, inner: inner.clone() });
    let a = log_marginal(&d, &none, &cfg, None).unwrap().value;
    let b = log_marginal(&d, &HeterogeneitySpec::IndependentGamma(inner), &cfg, None).unwrap().value;
    assert_eq!(a, b);
}

#[test]
fn naive_and_grouped_workspaces_agree() {
    let d = dataset(
        vec![
            household(1, &[(1, &[1, 2]), (0, &[2, 1])]),
            household(2, &[(0, &[2, 1]), (1, &[1, 2])]),
            household(3, &[(0, &[3, 1])]),
        ],
        2,
    );
    let spec = HeterogeneitySpec::BivariateNamed(BivariateNamed::CheriyanRamabhadran(
        CheriyanRamabhadranSpec { theta: [2.0, 2.0, 2.0] },
    ));
    let g = Workspace::build(&d, &SeriesConfig::new(30)).unwrap();
    let n = Workspace::build(&d, &SeriesConfig::naive(30)).unwrap();
    // households 1 and 2 are permutations of each other
    assert_eq!(g.n_groups(), 2);
    let a = g.log_marginal(&spec).unwrap();
    let b = n.log_marginal(&spec).unwrap();
    assert!((a.value - b.value).abs() <= 1e-12 * a.value.abs());
    assert!((a.parity_spread.unwrap() - b.parity_spread.unwrap()).abs() < 1e-9);
}

#[test]
fn negative_truncation_is_reported() {
    // a tiny prior scale makes the truncated alternating sum overshoot below zero
    let d = dataset(vec![household(9, &[(0, &[1]), (0, &[1]), (0, &[1])])], 1);
    let spec = HeterogeneitySpec::IndependentGamma(gamma(&[1e-6], &[1.0], 0.0));
    match log_marginal(&d, &spec, &SeriesConfig::new(1), None) {
        Err(Error::Truncation { household, value, .. }) => {
            assert_eq!(household, "9");
            assert!(value <= 0.0);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn workspace_requires_matching_caches() {
    let d = dataset(vec![household(1, &[(0, &[1])])], 1);
    let caches = CacheSet::build_for(&d, 5, DEFAULT_ADMISSION_LIMIT).unwrap();
    assert!(Workspace::with_caches(&d, &SeriesConfig::new(5), caches.clone()).is_ok());
    assert!(matches!(
        Workspace::with_caches(&d, &SeriesConfig::new(6), caches),
        Err(Error::CacheMismatch(_))
    ));
    assert!(matches!(
        Workspace::with_caches(&d, &SeriesConfig::new(5), CacheSet::new()),
        Err(Error::CacheMismatch(_))
    ));
}
