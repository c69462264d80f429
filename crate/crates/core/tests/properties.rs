use std::collections::BTreeSet;

use conjlogit::data::{
    load_dataset, negate_attributes, save_dataset, validate_dataset, Dataset, GammaSpec, HeterogeneitySpec,
    Household, Observation,
};
use conjlogit::dioph::{build_cache, compositions_count, compositions_cum, save_cache, signed_count_oracle};
use conjlogit::kernels::{exp_vs_gamma, gmv_gamma_covariance, mgf_gmv_gamma, translated_factor, GammaParams, GmvGammaSpec};
use conjlogit::oracle::{mc_h, quadrature_h, QuadConfig};
use conjlogit::series::{h_naive, SeriesConfig, Workspace};
use conjlogit::sim::{simulate_dataset, SimDesign};
use num_bigint::BigUint;
use proptest::prelude::*;

const LIMIT: u64 = 1 << 40;

fn household_strategy(p: usize) -> impl Strategy<Value = Household> {
    prop::collection::vec((0i64..=1, prop::collection::vec(0i64..=3, p)), 1..=3).prop_map(|obs| Household {
        id: 0,
        observations: obs
            .into_iter()
            .enumerate()
            .map(|(t, (y, x))| Observation::new(0, t as u32, y, x))
            .collect(),
    })
}

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    (1usize..=2).prop_flat_map(|p| {
        prop::collection::vec(household_strategy(p), 1..=5).prop_map(move |hh| {
            let hh = hh
                .into_iter()
                .enumerate()
                .map(|(i, mut h)| {
                    h.id = i as u64 + 1;
                    h
                })
                .collect();
            Dataset::new(hh, p)
        })
    })
}

/// Covariates in 1..=3, so every row is admissible.
fn positive_x(p: usize, m: usize) -> impl Strategy<Value = Vec<Vec<u32>>> {
    prop::collection::vec(prop::collection::vec(1u32..=3, m), p)
}

fn gmv_strategy() -> impl Strategy<Value = GmvGammaSpec> {
    (1usize..=3, 1usize..=2).prop_flat_map(|(p, m)| {
        (
            prop::collection::vec(prop::collection::vec(0.0f64..2.0, m), p),
            prop::collection::vec(0.1f64..2.0, p),
            prop::collection::vec(0.5f64..5.0, m),
            prop::collection::vec(0.5f64..5.0, p),
        )
            .prop_map(|(loadings, scales, shared_shapes, shapes)| GmvGammaSpec { loadings, scales, shared_shapes, shapes })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_roundtrip_preserves_the_dataset(d in dataset_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        save_dataset(&d, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        prop_assert_eq!(back.households, d.households);
        prop_assert_eq!(back.n_attributes, d.n_attributes);
    }

    #[test]
    fn workspace_builds_exactly_when_validation_is_clean(d in dataset_strategy()) {
        let clean = validate_dataset(&d).is_empty();
        let built = Workspace::build(&d, &SeriesConfig::new(3)).is_ok();
        prop_assert_eq!(clean, built);
    }

    #[test]
    fn negation_is_an_involution(d in dataset_strategy(), mask in 0u8..4) {
        let flip: BTreeSet<usize> = (0..d.n_attributes).filter(|p| mask & (1 << p) != 0).collect();
        let twice = negate_attributes(&negate_attributes(&d, &flip), &flip);
        prop_assert_eq!(twice.households, d.households);
    }

    #[test]
    fn mgf_is_one_at_the_origin(g in gmv_strategy()) {
        let t = vec![0.0; g.scales.len()];
        prop_assert!((mgf_gmv_gamma(&t, &g).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn covariance_is_positive_semidefinite(g in gmv_strategy()) {
        let c = gmv_gamma_covariance(&g).unwrap();
        prop_assert!((&c - c.transpose()).amax() < 1e-12);
        let min = c.symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-10 * c.amax(), "eigenvalue {}", min);
    }

    #[test]
    fn zero_loadings_factor_into_gamma_kernels(g in gmv_strategy(), d in prop::collection::vec(0.0f64..5.0, 3)) {
        let g = GmvGammaSpec { loadings: vec![vec![0.0; g.shared_shapes.len()]; g.scales.len()], ..g };
        let t: Vec<f64> = d.iter().take(g.scales.len()).map(|v| -v).collect();
        let joint = mgf_gmv_gamma(&t, &g).unwrap();
        let product: f64 = t
            .iter()
            .zip(g.scales.iter().zip(&g.shapes))
            .map(|(t, (b, n))| exp_vs_gamma(-t, GammaParams::new(*b, *n).unwrap()).unwrap())
            .product();
        prop_assert!((joint - product).abs() <= 1e-14 * product.max(1e-300));
    }

    #[test]
    fn gamma_kernel_is_a_decreasing_probability(b in 0.01f64..10.0, n in 0.05f64..30.0, d1 in 0.0f64..20.0, step in 0.0f64..5.0) {
        let g = GammaParams::new(b, n).unwrap();
        let a = exp_vs_gamma(d1, g).unwrap();
        let c = exp_vs_gamma(d1 + step, g).unwrap();
        prop_assert!(a > 0.0 && a <= 1.0);
        prop_assert!(c <= a);
    }

    #[test]
    fn translation_is_continuous_at_zero(b in 0.05f64..5.0, n in 0.2f64..20.0, d in 0.0f64..10.0) {
        let g = GammaParams::new(b, n).unwrap();
        let base = translated_factor(d, g, 0.0).unwrap();
        prop_assert_eq!(base, exp_vs_gamma(d, g).unwrap());
        let near = translated_factor(d, g, 1e-9).unwrap();
        prop_assert!((near - base).abs() <= 1e-8 * base);
    }

    #[test]
    fn signed_counts_are_bounded_by_compositions(
        (x, r) in (1usize..=2, 1usize..=3).prop_flat_map(|(p, m)| (positive_x(p, m), prop::collection::vec(0u64..=12, p))),
        budget in 0u32..=6,
    ) {
        let m = x[0].len() as u64;
        let (plus, minus) = signed_count_oracle(&x, &r, budget).unwrap();
        let cache = build_cache(&x, budget, LIMIT).unwrap();
        let k = cache.count(&r);
        prop_assert_eq!(k, plus as i64 - minus as i64);
        let mut all = BigUint::from(0u32);
        for s in 0..=budget as u64 {
            all += compositions_count(s, m);
        }
        prop_assert!(BigUint::from(plus + minus) <= all);
        prop_assert!(BigUint::from(k.unsigned_abs()) <= all);
    }

    #[test]
    fn oracle_totals_partition_the_admitted_tuples(x in (1usize..=2, 1usize..=3).prop_flat_map(|(p, m)| positive_x(p, m)), budget in 0u32..=6) {
        // every k with sum <= R lands on exactly one r = x k
        let m = x[0].len();
        let mut seen = BTreeSet::new();
        let mut k = vec![0u64; m];
        loop {
            if k.iter().sum::<u64>() <= budget as u64 {
                let r: Vec<u64> = x.iter().map(|row| row.iter().zip(&k).map(|(a, b)| *a as u64 * b).sum()).collect();
                seen.insert(r);
            }
            let mut j = 0;
            while j < m && k[j] == budget as u64 {
                k[j] = 0;
                j += 1;
            }
            if j == m {
                break;
            }
            k[j] += 1;
        }
        let total: u64 = seen.iter().map(|r| {
            let (p, q) = signed_count_oracle(&x, r, budget).unwrap();
            p + q
        }).sum();
        prop_assert_eq!(BigUint::from(total), compositions_cum(budget as u64, m as u64));
    }

    #[test]
    fn cache_bytes_are_deterministic(x in (1usize..=2, 1usize..=3).prop_flat_map(|(p, m)| positive_x(p, m)), budget in 0u32..=8) {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
        save_cache(&build_cache(&x, budget, LIMIT).unwrap(), &a).unwrap();
        save_cache(&build_cache(&x, budget, LIMIT).unwrap(), &b).unwrap();
        prop_assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn consecutive_budgets_bracket_the_integral(y in 0i64..=1, x in 1i64..=3, b in 0.2f64..2.0, n in 0.5f64..5.0, budget in 0u32..=30) {
        // one observation: consecutive partial sums of the alternating series straddle H
        let h = Household { id: 1, observations: vec![Observation::new(0, 0, y, vec![x])] };
        let spec = GammaSpec::new(vec![b], vec![n], 0.0).unwrap();
        let lo = h_naive(&h, &spec, &[1.0], &SeriesConfig::naive(budget)).unwrap().value;
        let hi = h_naive(&h, &spec, &[1.0], &SeriesConfig::naive(budget + 1)).unwrap().value;
        let q = quadrature_h(&h, &[1.0], &HeterogeneitySpec::IndependentGamma(spec), &QuadConfig::default()).unwrap().value;
        let slack = 1e-9 * q;
        prop_assert!(q >= lo.min(hi) - slack && q <= lo.max(hi) + slack, "{} not between {} and {}", q, lo, hi);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn oracles_return_probabilities(h in household_strategy(2), b in 0.1f64..2.0, n in 0.5f64..5.0) {
        let mut h = h;
        for o in &mut h.observations {
            o.x[0] = o.x[0].max(1);
        }
        let spec = HeterogeneitySpec::IndependentGamma(GammaSpec::new(vec![b, b], vec![n, n], 0.0).unwrap());
        let q = quadrature_h(&h, &[1.0, 1.0], &spec, &QuadConfig::default()).unwrap().value;
        let m = mc_h(&h, &[1.0, 1.0], &spec, 2_000, 7).unwrap();
        prop_assert!(q > 0.0 && q <= 1.0);
        prop_assert!(m.value > 0.0 && m.value <= 1.0);
        // the standard error understates spread when failures are rare, hence the absolute slack
        prop_assert!((m.value - q).abs() <= 6.0 * m.std_error + 1e-4);
    }

    #[test]
    fn simulated_datasets_validate(b in 0.5f64..10.0, n in 1.0f64..15.0, seed in 0u64..1000, replicate in 0usize..3) {
        let truth = HeterogeneitySpec::IndependentGamma(GammaSpec::new(vec![b], vec![n], 0.0).unwrap());
        let design = SimDesign::single_observation(truth, 50, 20, 3, vec![1, 1], 0.1, seed);
        let d = simulate_dataset(&design, replicate).unwrap();
        prop_assert!(validate_dataset(&d).is_empty());
        prop_assert_eq!(d.households.len(), 50);
    }
}
