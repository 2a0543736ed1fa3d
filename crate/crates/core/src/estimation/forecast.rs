#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;

use super::{predict_interval, FilterConfig};
use crate::linalg::{Mat6, Vec6};
use crate::model::{AugmentedState, ModelParams};
use crate::Result;

/// One day of an open-loop forecast on the observation scale.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ForecastPoint {
    pub step: usize,
    pub state: AugmentedState,
    pub observation: f64,
    /// `3 sqrt(c^T P c + r)`.
    pub half_width: f64,
}

impl ForecastPoint {
    pub fn lower(&self) -> f64 {
        self.observation - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.observation + self.half_width
    }
}

/// Open-loop prediction from the posterior `(x, p)`.
///
/// Returns `drives.len() + 1` points; the first is the posterior itself.
pub fn forecast(
    cfg: &FilterConfig,
    x: &Vec6,
    p: &Mat6,
    drives: &[f64],
    params: &ModelParams,
    eps: f64,
) -> Result<Vec<ForecastPoint>> {
    let point = |step: usize, x: &Vec6, p: &Mat6| {
        let state = AugmentedState::from_vector(x);
        let c = cfg.observation.gradient(&state.state);
        let var = (c.dot(&(p * c)) + cfg.r).max(0.0);
        ForecastPoint {
            step,
            state,
            observation: cfg.observation.predict(&state.state),
            half_width: 3.0 * var.sqrt(),
        }
    };
    let mut out = Vec::with_capacity(drives.len() + 1);
    out.push(point(0, x, p));
    let (mut x, mut p) = (*x, *p);
    for (k, &d) in drives.iter().enumerate() {
        let (xn, pn, _, _) = predict_interval(&x, &p, d, params, eps, cfg)?;
        x = xn;
        p = pn;
        out.push(point(k + 1, &x, &p));
    }
    Ok(out)
}
