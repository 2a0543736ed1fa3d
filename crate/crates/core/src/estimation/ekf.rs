use alloc::vec::Vec;

use super::{CostateTracking, FilterConfig, FilterOutput, StepRecord};
use crate::linalg::{is_psd, symmetrize, Mat6, Vec6};
use crate::model::{step_augmented, step_jacobian, AugmentedState, ModelParams};
use crate::{Error, Result};

/// Advances mean and covariance over one observation interval.
///
/// Returns the predicted mean, the predicted covariance, the interval
/// Jacobian and whether any substep clamped the state.
pub fn predict_interval(
    x: &Vec6,
    p: &Mat6,
    drive: f64,
    params: &ModelParams,
    eps: f64,
    cfg: &FilterConfig,
) -> Result<(Vec6, Mat6, Mat6, bool)> {
    let with_costates = cfg.costates != CostateTracking::Off;
    let mut a = AugmentedState::from_vector(x);
    let mut jac = Mat6::identity();
    let mut clamped = false;
    for _ in 0..cfg.substeps {
        let mut j = step_jacobian(&a, params, eps, with_costates);
        if cfg.costates == CostateTracking::Decoupled {
            j.view_mut((3, 0), (3, 3)).fill(0.0);
        }
        jac = j * jac;
        let (next, c) = step_augmented(&a, drive, params, eps, with_costates)?;
        a = next;
        clamped |= c;
    }
    let interval = cfg.substeps as f64 * params.delta_t;
    let p_next = symmetrize(&(jac * p * jac.transpose() + cfg.q * interval));
    Ok((a.to_vector(), p_next, jac, clamped))
}

/// Result of a scalar measurement update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Update {
    pub x: Vec6,
    pub p: Mat6,
    pub innovation: f64,
    pub innovation_var: f64,
    pub gain: Vec6,
}

/// Scalar update with observation gradient `c`, predicted observation `g`
/// and noise variance `r`.
pub fn scalar_update(x: &Vec6, p: &Mat6, c: &Vec6, g: f64, y: f64, r: f64, step: usize) -> Result<Update> {
    let pc = p * c;
    let var = c.dot(&pc) + r;
    if !(var.is_finite() && var > 0.0) {
        return Err(Error::FilterBreakdown {
            step,
            reason: alloc::format!("innovation variance {var} is not positive"),
        });
    }
    let k = pc / var;
    let v = y - g;
    let x_new = x + k * v;
    let ikc = Mat6::identity() - k * c.transpose();
    let mut p_new = symmetrize(&(ikc * p));
    if !is_psd(&p_new) {
        p_new = symmetrize(&(ikc * p * ikc.transpose() + k * k.transpose() * r));
        if !is_psd(&p_new) {
            return Err(Error::FilterBreakdown {
                step,
                reason: "posterior covariance is not positive semidefinite".into(),
            });
        }
    }
    if !x_new.iter().all(|v| v.is_finite()) {
        return Err(Error::FilterBreakdown {
            step,
            reason: "non-finite posterior state".into(),
        });
    }
    Ok(Update {
        x: x_new,
        p: p_new,
        innovation: v,
        innovation_var: var,
        gain: k,
    })
}

fn clamp_state(x: &mut Vec6) -> bool {
    let mut a = AugmentedState::from_vector(x);
    let moved = a.state.clamp();
    *x = a.to_vector();
    moved
}

fn measure(cfg: &FilterConfig, x: &Vec6, p: &Mat6, y: Option<f64>, step: usize) -> Result<(Vec6, Mat6, Option<(f64, f64)>, bool)> {
    let Some(y) = y else {
        return Ok((*x, *p, None, false));
    };
    let state = AugmentedState::from_vector(x).state;
    let c = cfg.observation.gradient(&state);
    let g = cfg.observation.predict(&state);
    let up = scalar_update(x, p, &c, g, y, cfg.r, step)?;
    let mut xn = up.x;
    let clamped = clamp_state(&mut xn);
    Ok((xn, up.p, Some((up.innovation, up.innovation_var)), clamped))
}

/// Runs the extended Kalman filter.
///
/// `observations[k]` is taken at the `k`-th observation time (`None` for a
/// missing report) and `drives[k]` is the contagion drive `h[u]` held over
/// the interval from time `k` to `k + 1`, so
/// `observations.len() == drives.len() + 1`.
pub fn ekf_run(
    cfg: &FilterConfig,
    observations: &[Option<f64>],
    drives: &[f64],
    params: &ModelParams,
    eps: f64,
) -> Result<FilterOutput> {
    cfg.validate()?;
    params.validate()?;
    if observations.len() != drives.len() + 1 {
        return Err(Error::LengthMismatch(observations.len(), drives.len() + 1));
    }
    if observations.iter().flatten().any(|y| !y.is_finite()) || drives.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("observations or drives"));
    }

    let mut steps = Vec::with_capacity(observations.len());
    let x0 = cfg.x0.to_vector();
    let (x, p, inn, clamped) = measure(cfg, &x0, &cfg.p0, observations[0], 0)?;
    steps.push(StepRecord {
        prior: x0,
        prior_cov: cfg.p0,
        posterior: x,
        posterior_cov: p,
        transition: Mat6::identity(),
        innovation: inn.map(|v| v.0),
        innovation_var: inn.map(|v| v.1),
        clamped,
    });
    let (mut x, mut p) = (x, p);
    for (k, &drive) in drives.iter().enumerate() {
        let (xp, pp, jac, c1) = predict_interval(&x, &p, drive, params, eps, cfg)?;
        let (xu, pu, inn, c2) = measure(cfg, &xp, &pp, observations[k + 1], k + 1)?;
        steps.push(StepRecord {
            prior: xp,
            prior_cov: pp,
            posterior: xu,
            posterior_cov: pu,
            transition: jac,
            innovation: inn.map(|v| v.0),
            innovation_var: inn.map(|v| v.1),
            clamped: c1 || c2,
        });
        x = xu;
        p = pu;
    }
    Ok(FilterOutput {
        observation: cfg.observation,
        r: cfg.r,
        steps,
    })
}
