use alloc::vec::Vec;

use super::{ekf_run, FilterConfig, FilterOutput};
use crate::linalg::{psd_inverse, symmetrize, Mat6, Vec6};
use crate::model::{AugmentedState, ModelParams};
use crate::Result;

/// Filter output together with its fixed-interval smoothed estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Smoothed {
    pub filtered: FilterOutput,
    pub states: Vec<Vec6>,
    pub covariances: Vec<Mat6>,
}

impl Smoothed {
    pub fn augmented(&self) -> Vec<AugmentedState> {
        self.states.iter().map(AugmentedState::from_vector).collect()
    }

    pub fn alpha(&self) -> Vec<f64> {
        self.states.iter().map(|x| x[2]).collect()
    }
}

/// Rauch-Tung-Striebel backward pass over a filter run.
pub fn rts_smooth(filtered: FilterOutput) -> Smoothed {
    let n = filtered.steps.len();
    let mut states: Vec<Vec6> = filtered.steps.iter().map(|s| s.posterior).collect();
    let mut covs: Vec<Mat6> = filtered.steps.iter().map(|s| s.posterior_cov).collect();
    for k in (0..n.saturating_sub(1)).rev() {
        let next = &filtered.steps[k + 1];
        let cur = &filtered.steps[k];
        let gain = cur.posterior_cov * next.transition.transpose() * psd_inverse(&next.prior_cov);
        let mut x = cur.posterior + gain * (states[k + 1] - next.prior);
        let mut a = AugmentedState::from_vector(&x);
        a.state.clamp();
        x = a.to_vector();
        states[k] = x;
        covs[k] = symmetrize(&(cur.posterior_cov + gain * (covs[k + 1] - next.prior_cov) * gain.transpose()));
    }
    Smoothed {
        filtered,
        states,
        covariances: covs,
    }
}

/// Forward filter followed by the RTS smoother.
pub fn eks_run(
    cfg: &FilterConfig,
    observations: &[Option<f64>],
    drives: &[f64],
    params: &ModelParams,
    eps: f64,
) -> Result<Smoothed> {
    Ok(rts_smooth(ekf_run(cfg, observations, drives, params, eps)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::ObservationKind;
    use crate::model::{step_state, CompartmentState};
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    #[test]
    fn smoother_reduces_trace_and_keeps_boundary() {
        let p = ModelParams::new(0.219, 1.0 / 7.0, 1e7, 0.1, 1.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut x = CompartmentState::new(0.995, 1e-3, 0.35).unwrap();
        let mut obs = alloc::vec![Some(x.incidence())];
        for _ in 0..80 {
            for _ in 0..10 {
                let w = 0.01 * rng.sample::<f64, _>(StandardNormal);
                x = step_state(&x, 0.3, &p, [0.0, 0.0, w]).unwrap().state;
            }
            obs.push(Some(x.incidence() * (1.0 + 0.05 * rng.sample::<f64, _>(StandardNormal))));
        }
        let x0 = CompartmentState::new(0.995, 1e-3, 0.3).unwrap();
        let cfg = FilterConfig::diagonal([1e-12, 1e-12, 1e-4], 1e-11, x0, [1e-8, 1e-7, 1e-2], ObservationKind::NewCases);
        let sm = eks_run(&cfg, &obs, &[0.3; 80], &p, 0.0).unwrap();
        let n = sm.states.len();
        assert_eq!(sm.states[n - 1], sm.filtered.steps[n - 1].posterior);
        for k in 0..n {
            assert!(sm.covariances[k].trace() <= sm.filtered.steps[k].posterior_cov.trace() * (1.0 + 1e-9));
        }
    }
}
