//! Finite-horizon optimal NPI control.
//!
//! The scalarized cost is `(1 - eps) J0 + eps J1` with `J0` the infected
//! fraction over the horizon and `J1` the weighted stringency-days.

mod eks;
mod fbs;
mod sweep;

pub use eks::{noiseless_config, solve_fhoc_eks, FhocOptions};
pub use fbs::{solve_fhoc_fbs, FbsOptions};
pub use sweep::{
    closest_to_origin, comparison_schedules, default_eps_grid, dominates, eps_label, mark_dominated, optimal_point,
    pareto_sweep, random_schedules, scenario_point, ScenarioKind, SweepPlan, SweepPoint,
};

#[allow(unused_imports)]
use num_traits::Float;
use alloc::collections::VecDeque;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::contact::{ContactMap, MapForm};
use crate::model::{step_state, AugmentedState, CompartmentState, ModelParams};
use crate::npi::{NpiBounds, NpiSchedule, NpiVector, NPI_COUNT, OXCGRT_MAX};
use crate::{Error, Result};

pub type Weights = [f64; NPI_COUNT];

#[derive(Debug, Clone, PartialEq)]
pub struct ControlProblem {
    /// `delta_t` is the control and integration step.
    pub params: ModelParams,
    pub map: ContactMap,
    /// Cost weights per day of the horizon; the last row is reused past its
    /// end.
    pub weights: Vec<Weights>,
    pub eps: f64,
    pub horizon_days: f64,
    pub x0: CompartmentState,
    pub bounds: NpiBounds,
}

impl ControlProblem {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.map.validate()?;
        self.x0.validate()?;
        if !(0.0..=1.0).contains(&self.eps) {
            return Err(Error::InvalidParameter(alloc::format!("eps = {} outside [0, 1]", self.eps)));
        }
        if !(self.horizon_days.is_finite() && self.horizon_days > 0.0) {
            return Err(Error::InvalidParameter("horizon must be positive".into()));
        }
        if self.steps() == 0 {
            return Err(Error::InvalidParameter("horizon shorter than one step".into()));
        }
        if self.weights.is_empty() || self.weights.iter().flatten().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParameter("weights must be non-empty, finite and non-negative".into()));
        }
        NpiBounds::new(self.bounds.lower, self.bounds.upper)?;
        Ok(())
    }

    /// Number of control steps.
    pub fn steps(&self) -> usize {
        (self.horizon_days / self.params.delta_t).round() as usize
    }

    /// Weights in force at step `k`.
    pub fn weight(&self, k: usize) -> &Weights {
        let day = (k as f64 * self.params.delta_t + 1e-9).floor() as usize;
        &self.weights[day.min(self.weights.len() - 1)]
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        ControlProblem { eps, ..self.clone() }
    }
}

/// `(1-eps) a s i + eps w^T u - l1 a s i + l2 (a s i - beta i) - gamma l3 (a - h[u])`.
pub fn hamiltonian(a: &AugmentedState, u: &NpiVector, w: &Weights, map: &ContactMap, params: &ModelParams, eps: f64) -> f64 {
    let x = &a.state;
    let flow = x.alpha * x.s * x.i;
    (1.0 - eps) * flow + eps * u.cost(w) - a.lambda1 * flow + a.lambda2 * (flow - params.beta * x.i)
        - params.gamma * a.lambda3 * (x.alpha - map.drive(u))
}

/// Extreme-point rule for a linear map. A tie picks the lower bound.
pub fn optimal_input_linear(lambda3: f64, w: &Weights, map: &ContactMap, eps: f64, gamma: f64, bounds: &NpiBounds) -> NpiVector {
    NpiVector(core::array::from_fn(|k| {
        if eps * w[k] < gamma * lambda3 * map.a[k] {
            bounds.upper[k]
        } else {
            bounds.lower[k]
        }
    }))
}

/// Three-branch rule for a quadratic map.
///
/// Each coordinate compares the Hamiltonian gradient at the two ends of its
/// range; in between it takes the stationary point `u~`, clipped to the box.
/// For `lambda3 <= 0` the Hamiltonian is not convex in `u` and the
/// extreme-point rule is used.
pub fn optimal_input_quadratic(
    lambda3: f64,
    w: &Weights,
    map: &ContactMap,
    eps: f64,
    gamma: f64,
    bounds: &NpiBounds,
) -> Result<NpiVector> {
    let Some(s) = map.curvature_matrix() else {
        return Err(Error::InvalidParameter("quadratic rule needs a curvature matrix".into()));
    };
    if lambda3 <= 0.0 {
        return Ok(optimal_input_linear(lambda3, w, map, eps, gamma, bounds));
    }
    let gl = gamma * lambda3;
    let diagonal = (0..NPI_COUNT).all(|r| (0..NPI_COUNT).all(|c| r == c || s[(r, c)] == 0.0));
    let stationary: [f64; NPI_COUNT] = if diagonal {
        core::array::from_fn(|k| OXCGRT_MAX[k] - (eps * w[k] / gl - map.a[k]) / s[(k, k)])
    } else {
        let rhs = DVector::from_fn(NPI_COUNT, |k, _| eps * w[k] / gl - map.a[k]);
        let sd = DMatrix::from_fn(NPI_COUNT, NPI_COUNT, |r, c| s[(r, c)]);
        let d = sd.cholesky().ok_or(Error::NotPositiveDefinite("curvature matrix"))?.solve(&rhs);
        core::array::from_fn(|k| OXCGRT_MAX[k] - d[k])
    };
    let slack_hi: [f64; NPI_COUNT] = core::array::from_fn(|k| OXCGRT_MAX[k] - bounds.upper[k]);
    let slack_lo: [f64; NPI_COUNT] = core::array::from_fn(|k| OXCGRT_MAX[k] - bounds.lower[k]);
    Ok(NpiVector(core::array::from_fn(|k| {
        let sd_hi: f64 = (0..NPI_COUNT).map(|c| s[(k, c)] * slack_hi[c]).sum();
        let sd_lo: f64 = (0..NPI_COUNT).map(|c| s[(k, c)] * slack_lo[c]).sum();
        let grad_hi = eps * w[k] - gl * (map.a[k] + sd_hi);
        let grad_lo = eps * w[k] - gl * (map.a[k] + sd_lo);
        if grad_lo >= 0.0 {
            bounds.lower[k]
        } else if grad_hi < 0.0 {
            bounds.upper[k]
        } else {
            stationary[k].clamp(bounds.lower[k], bounds.upper[k])
        }
    })))
}

/// Dispatches on the map form.
pub fn optimal_input(lambda3: f64, w: &Weights, map: &ContactMap, eps: f64, gamma: f64, bounds: &NpiBounds) -> Result<NpiVector> {
    match map.form {
        MapForm::Linear => Ok(optimal_input_linear(lambda3, w, map, eps, gamma, bounds)),
        MapForm::Quadratic => optimal_input_quadratic(lambda3, w, map, eps, gamma, bounds),
    }
}

/// Costs of a schedule on the noise-free model.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub trajectory: Vec<CompartmentState>,
    pub j0: f64,
    pub j1: f64,
}

/// Forward Euler simulation of a schedule with `J0 = sum a s i dt` and
/// `J1 = sum w^T u dt`.
pub fn simulate(prob: &ControlProblem, schedule: &NpiSchedule) -> Result<Simulation> {
    let dt = prob.params.delta_t;
    let mut x = prob.x0;
    let mut trajectory = Vec::with_capacity(schedule.len() + 1);
    trajectory.push(x);
    let (mut j0, mut j1) = (0.0, 0.0);
    for (k, u) in schedule.rows.iter().enumerate() {
        j0 += x.incidence() * dt;
        j1 += u.cost(prob.weight(k)) * dt;
        x = step_state(&x, prob.map.drive(u), &prob.params, [0.0; 3])?.state;
        trajectory.push(x);
    }
    Ok(Simulation { trajectory, j0, j1 })
}

/// Outcome of an optimal-control solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub schedule: NpiSchedule,
    /// `steps + 1` states from `t0` to `t1`.
    pub trajectory: Vec<CompartmentState>,
    /// `(lambda1, lambda2, lambda3)` on the same grid as the trajectory.
    pub costates: Vec<[f64; 3]>,
    pub j0: f64,
    pub j1: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Largest co-state (or input) change of the last iteration.
    pub residual: f64,
    /// Integer schedule and its costs, when the optimizer emitted fractional
    /// levels.
    pub rounded: Option<(NpiSchedule, f64, f64)>,
}

impl ScenarioResult {
    pub(crate) fn from_simulation(prob: &ControlProblem, schedule: NpiSchedule, costates: Vec<[f64; 3]>) -> Result<Self> {
        let sim = simulate(prob, &schedule)?;
        let rounded = if schedule.is_integral() {
            None
        } else {
            let r = schedule.round_half_down();
            let rs = simulate(prob, &r)?;
            Some((r, rs.j0, rs.j1))
        };
        Ok(ScenarioResult {
            schedule,
            trajectory: sim.trajectory,
            costates,
            j0: sim.j0,
            j1: sim.j1,
            converged: false,
            iterations: 0,
            residual: f64::INFINITY,
            rounded,
        })
    }

    pub fn augmented(&self, k: usize) -> AugmentedState {
        let l = self.costates[k];
        AugmentedState {
            state: self.trajectory[k],
            lambda1: l[0],
            lambda2: l[1],
            lambda3: l[2],
        }
    }

    /// State at step `k` paired with the co-states that price input `k`,
    /// i.e. those of step `k + 1`.
    pub fn decision_point(&self, k: usize) -> AugmentedState {
        let l = self.costates[k + 1];
        AugmentedState {
            state: self.trajectory[k],
            lambda1: l[0],
            lambda2: l[1],
            lambda3: l[2],
        }
    }
}

/// Applies the input rule at every step to a co-state series of length
/// `steps + 1`. Input `k` moves the state from step `k` to `k + 1`, so it is
/// priced by `lambda3[k + 1]`.
pub(crate) fn schedule_from_costates(prob: &ControlProblem, lambda3: &[f64]) -> Result<Vec<NpiVector>> {
    (0..prob.steps())
        .map(|k| optimal_input(lambda3[k + 1], prob.weight(k), &prob.map, prob.eps, prob.params.gamma, &prob.bounds))
        .collect()
}

pub(crate) fn relax(current: &mut [NpiVector], target: &[NpiVector], step: f64) -> f64 {
    let mut change = 0.0f64;
    for (u, t) in current.iter_mut().zip(target) {
        for k in 0..NPI_COUNT {
            let next = u.0[k] + step * (t.0[k] - u.0[k]);
            change = change.max((next - u.0[k]).abs());
            u.0[k] = next;
        }
    }
    change
}

/// Iterations of rule output remembered by [`Damping`].
const DAMPING_MEMORY: usize = 4;

/// Relaxation step that halves whenever the rule output comes back to one of
/// its recent values, so switch times that cycle between neighbouring steps
/// settle instead of repeating.
pub(crate) struct Damping {
    step: f64,
    recent: VecDeque<Vec<NpiVector>>,
}

impl Damping {
    pub(crate) fn new(step: f64) -> Self {
        Damping {
            step,
            recent: VecDeque::with_capacity(DAMPING_MEMORY),
        }
    }

    pub(crate) fn step(&mut self, target: &[NpiVector]) -> f64 {
        let repeated = self.recent.back().is_some_and(|last| last.as_slice() != target)
            && self.recent.iter().any(|t| t.as_slice() == target);
        if repeated {
            self.step *= 0.5;
        }
        if self.recent.len() == DAMPING_MEMORY {
            self.recent.pop_front();
        }
        self.recent.push_back(target.to_vec());
        self.step
    }
}
