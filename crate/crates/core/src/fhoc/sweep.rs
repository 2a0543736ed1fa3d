//! Bi-objective sweeps over `eps` and comparison schedules.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{simulate, solve_fhoc_eks, ControlProblem, FhocOptions};
use crate::estimation::FilterConfig;
use crate::npi::{NpiBounds, NpiSchedule, NpiVector};

/// Relative tolerance of the dominance test.
const DOMINANCE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ScenarioKind {
    Optimal,
    /// The most recent NPI vector held over the horizon.
    Fixed,
    RandomConstant,
    RandomVariable,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepPoint {
    pub label: String,
    pub kind: ScenarioKind,
    pub eps: Option<f64>,
    pub j0: f64,
    pub j1: f64,
    pub converged: bool,
    pub dominated: bool,
    pub error: Option<String>,
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none", default))]
    pub schedule: Option<NpiSchedule>,
}

impl SweepPoint {
    pub fn is_valid(&self) -> bool {
        self.error.is_none() && self.j0.is_finite() && self.j1.is_finite()
    }

    fn failed(label: String, kind: ScenarioKind, eps: Option<f64>, err: crate::Error) -> Self {
        SweepPoint {
            label,
            kind,
            eps,
            j0: f64::NAN,
            j1: f64::NAN,
            converged: false,
            dominated: false,
            error: Some(err.to_string()),
            schedule: None,
        }
    }
}

/// What to sweep.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepPlan {
    pub eps_values: Vec<f64>,
    pub fixed: Option<NpiVector>,
    pub random_constant: usize,
    pub random_variable: usize,
    pub seed: u64,
}

/// `0` followed by `count - 1` log-spaced values from `1e-8` to `1`.
pub fn default_eps_grid(count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => alloc::vec![0.0],
        _ => {
            let m = count - 1;
            let mut grid = alloc::vec![0.0];
            grid.extend((0..m).map(|k| {
                if m == 1 {
                    1.0
                } else {
                    10f64.powf(-8.0 + 8.0 * k as f64 / (m - 1) as f64)
                }
            }));
            grid
        }
    }
}

pub fn eps_label(eps: f64) -> String {
    alloc::format!("eps={eps:.3e}")
}

/// Seeded uniform integer schedules. Constant schedules hold one draw over
/// the horizon; variable ones redraw every day.
pub fn random_schedules(steps: usize, dt: f64, count: usize, constant: bool, bounds: &NpiBounds, seed: u64) -> Vec<NpiSchedule> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_day = ((1.0 / dt).round() as usize).max(1);
    let draw = |rng: &mut ChaCha8Rng| {
        NpiVector(core::array::from_fn(|k| {
            let lo = bounds.lower[k].ceil() as i64;
            let hi = bounds.upper[k].floor() as i64;
            if hi <= lo {
                lo as f64
            } else {
                rng.random_range(lo..=hi) as f64
            }
        }))
    };
    (0..count)
        .map(|_| {
            if constant {
                NpiSchedule::constant(draw(&mut rng), dt, steps)
            } else {
                let mut rows = Vec::with_capacity(steps);
                let mut current = draw(&mut rng);
                for k in 0..steps {
                    if k > 0 && k % per_day == 0 {
                        current = draw(&mut rng);
                    }
                    rows.push(current);
                }
                NpiSchedule { dt, rows }
            }
        })
        .collect()
}

/// The comparison schedules of a plan, labelled.
pub fn comparison_schedules(template: &ControlProblem, plan: &SweepPlan) -> Vec<(String, ScenarioKind, NpiSchedule)> {
    let steps = template.steps();
    let dt = template.params.delta_t;
    let mut out = Vec::new();
    if let Some(u) = plan.fixed {
        out.push(("fixed".to_string(), ScenarioKind::Fixed, NpiSchedule::constant(template.bounds.clamp(&u), dt, steps)));
    }
    for (i, s) in random_schedules(steps, dt, plan.random_constant, true, &template.bounds, plan.seed)
        .into_iter()
        .enumerate()
    {
        out.push((alloc::format!("random-constant-{i}"), ScenarioKind::RandomConstant, s));
    }
    let seed = plan.seed ^ 0x9e37_79b9_7f4a_7c15;
    for (i, s) in random_schedules(steps, dt, plan.random_variable, false, &template.bounds, seed)
        .into_iter()
        .enumerate()
    {
        out.push((alloc::format!("random-variable-{i}"), ScenarioKind::RandomVariable, s));
    }
    out
}

/// Solves one `eps` point.
pub fn optimal_point(template: &ControlProblem, cfg: &FilterConfig, opts: &FhocOptions, eps: f64) -> SweepPoint {
    let label = eps_label(eps);
    match solve_fhoc_eks(&template.with_eps(eps), cfg, opts) {
        Ok(r) => SweepPoint {
            label,
            kind: ScenarioKind::Optimal,
            eps: Some(eps),
            j0: r.j0,
            j1: r.j1,
            converged: r.converged,
            dominated: false,
            error: None,
            schedule: Some(r.schedule),
        },
        Err(e) => SweepPoint::failed(label, ScenarioKind::Optimal, Some(eps), e),
    }
}

/// Costs of a comparison schedule.
pub fn scenario_point(template: &ControlProblem, label: String, kind: ScenarioKind, schedule: NpiSchedule) -> SweepPoint {
    match simulate(template, &schedule) {
        Ok(sim) => SweepPoint {
            label,
            kind,
            eps: None,
            j0: sim.j0,
            j1: sim.j1,
            converged: true,
            dominated: false,
            error: None,
            schedule: Some(schedule),
        },
        Err(e) => SweepPoint::failed(label, kind, None, e),
    }
}

/// Runs the whole plan sequentially and marks dominated points. Failures are
/// recorded on their point and the sweep continues.
pub fn pareto_sweep(template: &ControlProblem, cfg: &FilterConfig, opts: &FhocOptions, plan: &SweepPlan) -> Vec<SweepPoint> {
    let mut points: Vec<SweepPoint> = plan.eps_values.iter().map(|&e| optimal_point(template, cfg, opts, e)).collect();
    points.extend(
        comparison_schedules(template, plan)
            .into_iter()
            .map(|(label, kind, s)| scenario_point(template, label, kind, s)),
    );
    mark_dominated(&mut points);
    points
}

fn le(a: f64, b: f64) -> bool {
    a <= b + DOMINANCE_TOL * a.abs().max(b.abs())
}

fn lt(a: f64, b: f64) -> bool {
    a < b - DOMINANCE_TOL * a.abs().max(b.abs())
}

/// `a` is no worse on both costs and strictly better on one, beyond the
/// relative tolerance.
pub fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    le(a.0, b.0) && le(a.1, b.1) && (lt(a.0, b.0) || lt(a.1, b.1))
}

pub fn mark_dominated(points: &mut [SweepPoint]) {
    let costs: Vec<Option<(f64, f64)>> = points.iter().map(|p| p.is_valid().then_some((p.j0, p.j1))).collect();
    for (i, p) in points.iter_mut().enumerate() {
        p.dominated = match costs[i] {
            Some(c) => costs.iter().enumerate().any(|(j, o)| j != i && o.is_some_and(|o| dominates(o, c))),
            None => false,
        };
    }
}

/// Index of the valid point nearest the origin after scaling each cost by
/// its maximum. Ties go to the lower index.
pub fn closest_to_origin(points: &[SweepPoint]) -> Option<usize> {
    let valid = || points.iter().enumerate().filter(|(_, p)| p.is_valid());
    let m0 = valid().map(|(_, p)| p.j0).fold(0.0, f64::max);
    let m1 = valid().map(|(_, p)| p.j1).fold(0.0, f64::max);
    let scale = |m: f64| if m > 0.0 { m } else { 1.0 };
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in valid() {
        let d = (p.j0 / scale(m0)).hypot(p.j1 / scale(m1));
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|b| b.0)
}
