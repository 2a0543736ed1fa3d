use pandemic_fhoc_core::contact::ContactMap;
use pandemic_fhoc_core::fhoc::{
    default_eps_grid, dominates, hamiltonian, noiseless_config, solve_fhoc_eks, ControlProblem, FhocOptions,
};
use pandemic_fhoc_core::model::{CompartmentState, ModelParams};
use pandemic_fhoc_core::npi::{NpiBounds, NpiVector, NPI_COUNT, OXCGRT_MAX};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn problem(map: ContactMap, eps: f64, days: f64) -> ControlProblem {
    ControlProblem {
        params: ModelParams::new(0.219, 1.0 / 7.0, 1e7, 0.1, 1.0).unwrap(),
        map,
        weights: vec![[1.0; NPI_COUNT]],
        eps,
        horizon_days: days,
        x0: CompartmentState::new(0.95, 0.01, 0.5).unwrap(),
        bounds: NpiBounds::default(),
    }
}

fn linear_map(seed: u64) -> ContactMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = core::array::from_fn(|_| if rng.random_bool(0.4) { rng.random_range(0.01..0.06) } else { 0.0 });
    ContactMap::linear(a, rng.random_range(0.05..0.2)).unwrap()
}

fn quadratic_map(seed: u64) -> ContactMap {
    let lin = linear_map(seed);
    let mut s = [[0.0; NPI_COUNT]; NPI_COUNT];
    for (k, row) in s.iter_mut().enumerate() {
        row[k] = 0.002 + 0.001 * k as f64;
    }
    ContactMap::quadratic(lin.a, lin.b, s).unwrap()
}

fn solve(prob: &ControlProblem) -> pandemic_fhoc_core::fhoc::ScenarioResult {
    solve_fhoc_eks(prob, &noiseless_config(1e-10), &FhocOptions::default()).unwrap()
}

#[test]
fn sweep_is_monotone_and_mutually_non_dominated() {
    for seed in 0..3 {
        let base = problem(linear_map(seed), 0.0, 30.0);
        let points: Vec<(f64, f64)> = default_eps_grid(12)
            .into_iter()
            .map(|eps| solve(&base.with_eps(eps)))
            .filter(|r| r.converged)
            .map(|r| (r.j0, r.j1))
            .collect();
        assert!(points.len() >= 10, "seed {seed}: only {} converged", points.len());
        for w in points.windows(2) {
            assert!(w[1].1 <= w[0].1 * (1.0 + 1e-6) + 1e-12, "seed {seed}: j1 rose {w:?}");
        }
        for p in &points {
            for q in &points {
                assert!(!dominates(*q, *p), "seed {seed}: {q:?} dominates {p:?}");
            }
        }
    }
}

#[test]
fn solves_are_deterministic() {
    let prob = problem(quadratic_map(7), 0.01, 20.0);
    assert_eq!(solve(&prob), solve(&prob));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn schedules_are_admissible(seed in 0u64..1000, eps in 0.0..1.0f64, quadratic in any::<bool>(), caps in prop::array::uniform12(0.0..=1.0f64)) {
        let map = if quadratic { quadratic_map(seed) } else { linear_map(seed) };
        let mut prob = problem(map, eps, 15.0);
        let upper = core::array::from_fn(|k| (caps[k] * OXCGRT_MAX[k]).round());
        prob.bounds = NpiBounds::new([0.0; NPI_COUNT], upper).unwrap();
        let res = solve(&prob);
        prop_assert!(res.schedule.check(&prob.bounds).is_ok());
        if let Some((rounded, _, _)) = &res.rounded {
            prop_assert!(rounded.check(&prob.bounds).is_ok());
            prop_assert!(rounded.is_integral());
        }
        prop_assert!(res.j0 >= 0.0 && res.j0 <= 1.0 && res.j1 >= 0.0);
    }

    #[test]
    fn rule_output_minimizes_the_hamiltonian(seed in 0u64..1000, eps in 0.0..1.0f64, quadratic in any::<bool>()) {
        let map = if quadratic { quadratic_map(seed) } else { linear_map(seed) };
        let prob = problem(map, eps, 15.0);
        let res = solve(&prob);
        prop_assume!(res.converged);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5 {
            let k = rng.random_range(0..res.schedule.len());
            let a = res.decision_point(k);
            let w = prob.weight(k);
            let h_star = hamiltonian(&a, &res.schedule.rows[k], w, &prob.map, &prob.params, eps);
            for _ in 0..200 {
                let u = NpiVector(core::array::from_fn(|j| rng.random_range(0.0..=OXCGRT_MAX[j])));
                let h = hamiltonian(&a, &u, w, &prob.map, &prob.params, eps);
                prop_assert!(h_star <= h + 1e-9, "step {k}: {h_star} > {h}");
            }
        }
    }
}
