use pandemic_fhoc_core::estimation::{eks_run, ekf_run, FilterConfig, ObservationKind};
use pandemic_fhoc_core::model::{step_state, CompartmentState, ModelParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Run {
    truth: Vec<CompartmentState>,
    observations: Vec<Option<f64>>,
    drives: Vec<f64>,
}

fn params() -> ModelParams {
    ModelParams::new(0.219, 1.0 / 7.0, 1e7, 0.1, 1.0).unwrap()
}

fn simulate(seed: u64, days: usize, q_alpha: f64, r: f64, missing: f64) -> Run {
    let p = params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = CompartmentState::new(0.98, 1e-3, 0.3).unwrap();
    let sd = (q_alpha / p.delta_t).sqrt();
    let drives: Vec<f64> = (0..days).map(|k| if (k / 20) % 2 == 0 { 0.3 } else { 0.15 }).collect();
    let mut truth = vec![x];
    for &d in &drives {
        for _ in 0..10 {
            let w = sd * rng.sample::<f64, _>(StandardNormal);
            x = step_state(&x, d, &p, [0.0, 0.0, w]).unwrap().state;
        }
        truth.push(x);
    }
    let observations = truth
        .iter()
        .map(|x| {
            let v = r.sqrt() * rng.sample::<f64, _>(StandardNormal);
            (rng.random::<f64>() >= missing).then_some(x.incidence() + v)
        })
        .collect();
    Run {
        truth,
        observations,
        drives,
    }
}

fn config(q_alpha: f64, r: f64) -> FilterConfig {
    let x0 = CompartmentState::new(0.98, 1e-3, 0.3).unwrap();
    FilterConfig::diagonal([1e-14, 1e-14, q_alpha], r, x0, [1e-8, 1e-8, 1e-3], ObservationKind::NewCases)
}

fn alpha_rmse(estimates: impl Iterator<Item = f64>, truth: &[CompartmentState]) -> f64 {
    let (sum, n) = estimates.zip(truth).fold((0.0, 0), |(s, n), (e, t)| (s + (e - t.alpha).powi(2), n + 1));
    (sum / n as f64).sqrt()
}

#[test]
fn smoothing_beats_filtering_on_average() {
    let (q, r) = (1e-4, 1e-10);
    let mut filtered = 0.0;
    let mut smoothed = 0.0;
    for seed in 0..20 {
        let run = simulate(seed, 150, q, r, 0.1);
        let out = eks_run(&config(q, r), &run.observations, &run.drives, &params(), 0.0).unwrap();
        filtered += alpha_rmse(out.filtered.steps.iter().map(|s| s.posterior[2]), &run.truth);
        smoothed += alpha_rmse(out.states.iter().map(|v| v[2]), &run.truth);
    }
    assert!(smoothed <= filtered, "smoothed {smoothed} filtered {filtered}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn covariances_stay_symmetric_and_positive(seed in 0u64..10_000, missing in 0.0..0.5f64) {
        let (q, r) = (1e-4, 1e-10);
        let run = simulate(seed, 80, q, r, missing);
        let out = ekf_run(&config(q, r), &run.observations, &run.drives, &params(), 0.0).unwrap();
        for step in &out.steps {
            let p = step.posterior_cov;
            prop_assert_eq!(p, p.transpose());
            let eig = p.symmetric_eigenvalues();
            prop_assert!(eig.iter().all(|&e| e >= -1e-12 * p.norm().max(1e-300)), "{eig}");
        }
        let seen = run.observations.iter().filter(|o| o.is_some()).count();
        prop_assert_eq!(out.innovations().len(), seen);
    }

    #[test]
    fn smoothing_never_widens_the_covariance(seed in 0u64..10_000) {
        let (q, r) = (1e-4, 1e-10);
        let run = simulate(seed, 60, q, r, 0.2);
        let out = eks_run(&config(q, r), &run.observations, &run.drives, &params(), 0.0).unwrap();
        for (k, (ps, step)) in out.covariances.iter().zip(&out.filtered.steps).enumerate() {
            let (ts, tf) = (ps.trace(), step.posterior_cov.trace());
            prop_assert!(ts <= tf * (1.0 + 1e-9) + 1e-18, "step {k}: {ts} > {tf}");
        }
        let n = out.states.len() - 1;
        prop_assert_eq!(out.states[n], out.filtered.steps[n].posterior);
    }
}
