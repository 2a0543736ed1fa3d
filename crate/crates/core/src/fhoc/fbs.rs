use alloc::vec::Vec;

use super::{relax, schedule_from_costates, Damping, ControlProblem, ScenarioResult};
use crate::model::{costate_rates, step_state, AugmentedState};
use crate::npi::NpiSchedule;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct FbsOptions {
    pub max_iterations: usize,
    /// Max-norm co-state (or input) change that ends the sweep.
    pub tolerance: f64,
    /// Initial relaxation step; halved as in [`super::FhocOptions::relaxation`].
    pub relaxation: f64,
}

impl Default for FbsOptions {
    fn default() -> Self {
        FbsOptions {
            max_iterations: 500,
            tolerance: 1e-6,
            relaxation: 0.5,
        }
    }
}

/// Forward-backward sweep.
///
/// States are integrated forward with explicit Euler; co-states are
/// integrated backward from `lambda(t1) = 0` with
/// `lambda_k = lambda_{k+1} - dt * rate(lambda_{k+1}, x_{k+1})`. On
/// convergence the returned schedule is the rule output on the final
/// co-states.
pub fn solve_fhoc_fbs(prob: &ControlProblem, opts: &FbsOptions) -> Result<ScenarioResult> {
    prob.validate()?;
    let n = prob.steps();
    let dt = prob.params.delta_t;
    let mut schedule = schedule_from_costates(prob, &alloc::vec![0.0; n + 1])?;
    let mut lambda = alloc::vec![[0.0; 3]; n + 1];
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    let mut damping = Damping::new(opts.relaxation);

    while iterations < opts.max_iterations {
        iterations += 1;
        let mut xs = Vec::with_capacity(n + 1);
        let mut x = prob.x0;
        xs.push(x);
        for u in &schedule {
            x = step_state(&x, prob.map.drive(u), &prob.params, [0.0; 3])?.state;
            xs.push(x);
        }
        let previous = lambda.clone();
        lambda[n] = [0.0; 3];
        for k in (0..n).rev() {
            let l = lambda[k + 1];
            let a = AugmentedState {
                state: xs[k + 1],
                lambda1: l[0],
                lambda2: l[1],
                lambda3: l[2],
            };
            let rate = costate_rates(&a, &prob.params, prob.eps);
            lambda[k] = core::array::from_fn(|j| l[j] - dt * rate[j]);
        }
        let l3: Vec<f64> = lambda.iter().map(|l| l[2]).collect();
        let target = schedule_from_costates(prob, &l3)?;
        let costate_change = lambda
            .iter()
            .zip(&previous)
            .flat_map(|(a, b)| (0..3).map(move |j| (a[j] - b[j]).abs()))
            .fold(0.0, f64::max);
        change = relax(&mut schedule, &target, damping.step(&target)).min(costate_change);
        if change < opts.tolerance {
            schedule = target;
            break;
        }
    }
    let converged = change < opts.tolerance;
    let sched = NpiSchedule { dt, rows: schedule };
    let mut res = ScenarioResult::from_simulation(prob, sched, lambda)?;
    res.converged = converged;
    res.iterations = iterations;
    res.residual = change;
    Ok(res)
}
