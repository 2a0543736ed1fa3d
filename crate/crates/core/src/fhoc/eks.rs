use alloc::vec::Vec;


use super::{relax, schedule_from_costates, Damping, ControlProblem, ScenarioResult};
use crate::estimation::{ekf_run, rts_smooth, scalar_update, CostateTracking, FilterConfig};
use crate::linalg::{Mat6, Vec6};
use crate::model::AugmentedState;
use crate::npi::NpiSchedule;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct FhocOptions {
    pub max_iterations: usize,
    /// Max-norm co-state change that ends the iteration.
    pub tolerance: f64,
    /// Fraction of the way the schedule moves toward the rule output per
    /// iteration; 1 replaces it outright. Halved whenever the rule output
    /// returns to one of its recent values.
    pub relaxation: f64,
    /// Prior variance of the initial co-states.
    pub costate_prior_var: f64,
    /// Variance of the terminal `lambda = 0` pseudo-observations.
    pub terminal_var: f64,
}

impl Default for FhocOptions {
    fn default() -> Self {
        FhocOptions {
            max_iterations: 50,
            tolerance: 1e-6,
            relaxation: 0.5,
            costate_prior_var: 1.0,
            terminal_var: 1e-12,
        }
    }
}

/// Solves the control problem with the augmented filter and smoother.
///
/// Every iteration runs the filter forward over the horizon with the drive of
/// the current schedule, pins the terminal co-states to zero with
/// pseudo-observations, smooths, and moves the schedule toward the input
/// rule evaluated on the smoothed `lambda3`. On convergence the returned
/// schedule is the rule output on the final co-states. The compartment block of `cfg`
/// only shapes the covariances; the horizon has no observations.
pub fn solve_fhoc_eks(prob: &ControlProblem, cfg: &FilterConfig, opts: &FhocOptions) -> Result<ScenarioResult> {
    prob.validate()?;
    let n = prob.steps();
    let mut fc = cfg.clone();
    fc.x0 = AugmentedState::from_state(prob.x0);
    fc.substeps = 1;
    fc.costates = CostateTracking::Decoupled;
    fc.q.view_mut((3, 0), (3, 6)).fill(0.0);
    fc.q.view_mut((0, 3), (3, 3)).fill(0.0);
    fc.p0.view_mut((3, 0), (3, 6)).fill(0.0);
    fc.p0.view_mut((0, 3), (3, 3)).fill(0.0);
    for k in 3..6 {
        fc.p0[(k, k)] = opts.costate_prior_var;
    }
    let observations = alloc::vec![None; n + 1];

    let mut lambda: Vec<[f64; 3]> = alloc::vec![[0.0; 3]; n + 1];
    let zeros: Vec<f64> = alloc::vec![0.0; n + 1];
    let mut schedule = schedule_from_costates(prob, &zeros)?;
    let mut best: Option<(f64, Vec<crate::npi::NpiVector>, Vec<[f64; 3]>, usize)> = None;
    let mut damping = Damping::new(opts.relaxation);

    for iteration in 1..=opts.max_iterations {
        let drives: Vec<f64> = schedule.iter().map(|u| prob.map.drive(u)).collect();
        let mut out = ekf_run(&fc, &observations, &drives, &prob.params, prob.eps)?;
        let last = out.steps.last_mut().expect("horizon has at least one step");
        let (mut x, mut p) = (last.posterior, last.posterior_cov);
        for j in 3..6 {
            let mut c = Vec6::zeros();
            c[j] = 1.0;
            let up = scalar_update(&x, &p, &c, x[j], 0.0, opts.terminal_var, n)?;
            x = up.x;
            p = up.p;
        }
        last.posterior = x;
        last.posterior_cov = p;
        let smoothed = rts_smooth(out);
        let next: Vec<[f64; 3]> = smoothed.states.iter().map(|v| [v[3], v[4], v[5]]).collect();
        if next.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::FilterBreakdown {
                step: n,
                reason: "non-finite co-state".into(),
            });
        }
        let change = next
            .iter()
            .zip(&lambda)
            .flat_map(|(a, b)| (0..3).map(move |j| (a[j] - b[j]).abs()))
            .fold(0.0, f64::max);
        lambda = next;
        if best.as_ref().is_none_or(|b| change < b.0) {
            best = Some((change, schedule.clone(), lambda.clone(), iteration));
        }
        let l3: Vec<f64> = lambda.iter().map(|l| l[2]).collect();
        let target = schedule_from_costates(prob, &l3)?;
        if change < opts.tolerance {
            return finish(prob, target, lambda, true, iteration, change);
        }
        relax(&mut schedule, &target, damping.step(&target));
    }
    let (change, schedule, lambda, iteration) = best.expect("at least one iteration");
    finish(prob, schedule, lambda, false, iteration, change)
}

fn finish(
    prob: &ControlProblem,
    rows: Vec<crate::npi::NpiVector>,
    costates: Vec<[f64; 3]>,
    converged: bool,
    iterations: usize,
    residual: f64,
) -> Result<ScenarioResult> {
    let schedule = NpiSchedule {
        dt: prob.params.delta_t,
        rows,
    };
    let mut res = ScenarioResult::from_simulation(prob, schedule, costates)?;
    res.converged = converged;
    res.iterations = iterations;
    res.residual = residual;
    Ok(res)
}

/// Default filter settings for a control solve: the compartments are known
/// exactly and carry no process noise.
pub fn noiseless_config(r: f64) -> FilterConfig {
    FilterConfig {
        q: Mat6::zeros(),
        r,
        x0: AugmentedState::from_state(crate::model::CompartmentState { s: 1.0, i: 0.0, alpha: 0.0 }),
        p0: Mat6::zeros(),
        observation: crate::estimation::ObservationKind::NewCases,
        substeps: 1,
        costates: CostateTracking::Decoupled,
    }
}
