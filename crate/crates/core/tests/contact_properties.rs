use pandemic_fhoc_core::contact::{fit_linear, fit_quadratic, ContactMap, CurvatureStructure, PenaltySelection};
use pandemic_fhoc_core::npi::{NpiVector, NPI_COUNT, OXCGRT_MAX};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_npis(n: usize, seed: u64) -> Vec<NpiVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| NpiVector(core::array::from_fn(|k| rng.random_range(0..=OXCGRT_MAX[k] as u8) as f64)))
        .collect()
}

fn admissible_pair() -> impl Strategy<Value = (NpiVector, NpiVector)> {
    (prop::array::uniform12(0.0..1.0f64), prop::array::uniform12(0.0..1.0f64)).prop_map(|(x, y)| {
        let u = NpiVector(core::array::from_fn(|k| x[k].min(y[k]) * OXCGRT_MAX[k]));
        let v = NpiVector(core::array::from_fn(|k| x[k].max(y[k]) * OXCGRT_MAX[k]));
        (u, v)
    })
}

fn linear_map() -> impl Strategy<Value = ContactMap> {
    (prop::array::uniform12(0.0..0.1f64), 0.0..0.5f64).prop_map(|(a, b)| ContactMap::linear(a, b).unwrap())
}

fn quadratic_map() -> impl Strategy<Value = ContactMap> {
    (prop::array::uniform12(0.0..0.1f64), 0.0..0.5f64, prop::array::uniform12(1e-4..0.05f64)).prop_map(|(a, b, d)| {
        let mut s = [[0.0; NPI_COUNT]; NPI_COUNT];
        for k in 0..NPI_COUNT {
            s[k][k] = d[k];
        }
        ContactMap::quadratic(a, b, s).unwrap()
    })
}

proptest! {
    #[test]
    fn more_stringency_never_raises_the_drive(map in prop_oneof![linear_map(), quadratic_map()], (u, v) in admissible_pair()) {
        let hu = map.evaluate(&u).unwrap();
        let hv = map.evaluate(&v).unwrap();
        prop_assert!(hu >= hv - 1e-15);
        prop_assert!(hv >= 0.0);
        prop_assert!((map.evaluate(&NpiVector::max_stringency()).unwrap() - map.b).abs() < 1e-15);
    }

    #[test]
    fn fitted_maps_are_monotone(seed in 0u64..1000, pairs in prop::collection::vec(admissible_pair(), 20)) {
        let npis = random_npis(300, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
        let alpha: Vec<f64> = npis.iter().map(|u| 0.5 - 0.02 * u.iter().sum::<f64>() + 0.05 * rng.random::<f64>()).collect();
        let fit = fit_quadratic(&alpha, &npis, CurvatureStructure::Diagonal, PenaltySelection::Fixed(1e-3)).unwrap();
        for (u, v) in pairs {
            prop_assert!(fit.map.evaluate(&u).unwrap() >= fit.map.evaluate(&v).unwrap() - 1e-12);
            prop_assert!(fit.map.evaluate(&v).unwrap() >= 0.0);
        }
    }

    #[test]
    fn refitting_a_fitted_map_reproduces_it(seed in 0u64..1000) {
        let npis = random_npis(240, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy: Vec<f64> = npis.iter().map(|u| 0.2 + 0.03 * (3.0 - u[0]) + 0.02 * (4.0 - u[7]) + 0.01 * rng.random::<f64>()).collect();
        let first = fit_linear(&noisy, &npis, PenaltySelection::Fixed(0.0)).unwrap().map;
        let exact: Vec<f64> = npis.iter().map(|u| first.drive(u)).collect();
        let again = fit_linear(&exact, &npis, PenaltySelection::Fixed(0.0)).unwrap().map;
        for k in 0..NPI_COUNT {
            prop_assert!((again.a[k] - first.a[k]).abs() < 1e-8, "a[{k}]: {} vs {}", again.a[k], first.a[k]);
        }
        prop_assert!((again.b - first.b).abs() < 1e-8);
    }
}
