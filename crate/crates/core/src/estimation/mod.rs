//! Extended Kalman filtering and smoothing on the augmented state
//! `(s, i, alpha, lambda1, lambda2, lambda3)`.
//!
//! Observations are scalar and arrive once per observation interval; between
//! them the model is advanced by `substeps` Euler steps of `delta_t` days.

mod ekf;
mod forecast;
mod monitor;
mod rts;

pub use ekf::{ekf_run, predict_interval, scalar_update, Update};
pub use forecast::{forecast, ForecastPoint};
pub use monitor::{monitor, monitor_innovations, MonitorReport, VarianceCheck, MAX_LAG, MIN_INNOVATIONS};
pub use rts::{eks_run, rts_smooth, Smoothed};

use alloc::vec::Vec;

use crate::linalg::{is_psd, Mat6, Vec6};
use crate::model::{AugmentedState, CompartmentState};
use crate::{Error, Result};

/// Which case count the scalar observation measures.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum ObservationKind {
    /// `alpha s i`, new cases per day as a population fraction.
    NewCases,
    /// `s0 - s`, cumulative cases since the initial time.
    TotalCases { s0: f64 },
}

impl ObservationKind {
    pub fn predict(&self, x: &CompartmentState) -> f64 {
        match *self {
            ObservationKind::NewCases => x.incidence(),
            ObservationKind::TotalCases { s0 } => s0 - x.s,
        }
    }

    /// Gradient of [`Self::predict`] on the augmented state.
    pub fn gradient(&self, x: &CompartmentState) -> Vec6 {
        match *self {
            ObservationKind::NewCases => Vec6::new(x.alpha * x.i, x.alpha * x.s, x.s * x.i, 0.0, 0.0, 0.0),
            ObservationKind::TotalCases { .. } => Vec6::new(-1.0, 0.0, 0.0, 0.0, 0.0, 0.0),
        }
    }
}

/// How the co-state rows take part in the filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CostateTracking {
    /// Co-states are carried unchanged; estimation of the compartments only.
    #[default]
    Off,
    /// Full six-dimensional linearization.
    Coupled,
    /// Co-states are propagated, but the compartment-to-co-state block of the
    /// Jacobian is dropped from covariance propagation, so information about
    /// the co-states never moves the compartment estimates.
    Decoupled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    /// Process-noise covariance, per day.
    pub q: Mat6,
    /// Observation-noise variance, fraction squared.
    pub r: f64,
    pub x0: AugmentedState,
    pub p0: Mat6,
    pub observation: ObservationKind,
    /// Euler steps per observation interval.
    pub substeps: usize,
    pub costates: CostateTracking,
}

impl FilterConfig {
    /// Diagonal `Q` and `P0` with co-state entries at zero.
    pub fn diagonal(q: [f64; 3], r: f64, x0: CompartmentState, p0: [f64; 3], observation: ObservationKind) -> Self {
        let mut qm = Mat6::zeros();
        let mut pm = Mat6::zeros();
        for k in 0..3 {
            qm[(k, k)] = q[k];
            pm[(k, k)] = p0[k];
        }
        FilterConfig {
            q: qm,
            r,
            x0: AugmentedState::from_state(x0),
            p0: pm,
            observation,
            substeps: 10,
            costates: CostateTracking::Off,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r.is_finite() && self.r > 0.0) {
            return Err(Error::InvalidParameter(alloc::format!("observation variance r = {} must be > 0", self.r)));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidParameter("substeps must be at least 1".into()));
        }
        for (m, name) in [(&self.q, "Q"), (&self.p0, "P0")] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name));
            }
            if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1e-300) || !is_psd(m) {
                return Err(Error::NotPositiveDefinite(name));
            }
        }
        if !self.x0.is_finite() {
            return Err(Error::NonFinite("x0"));
        }
        if let ObservationKind::TotalCases { s0 } = self.observation {
            if !(0.0..=1.0).contains(&s0) {
                return Err(Error::InvalidParameter(alloc::format!("s0 = {s0} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// One observation time of a filter run.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub prior: Vec6,
    pub prior_cov: Mat6,
    pub posterior: Vec6,
    pub posterior_cov: Mat6,
    /// Transition Jacobian from the previous observation time; identity at
    /// the first record.
    pub transition: Mat6,
    pub innovation: Option<f64>,
    pub innovation_var: Option<f64>,
    /// The prediction or the update left the physical ranges.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub observation: ObservationKind,
    pub r: f64,
    pub steps: Vec<StepRecord>,
}

impl FilterOutput {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn posterior_states(&self) -> Vec<AugmentedState> {
        self.steps.iter().map(|s| AugmentedState::from_vector(&s.posterior)).collect()
    }

    /// `(innovation, innovation variance)` pairs of the updated steps.
    pub fn innovations(&self) -> Vec<(f64, f64)> {
        self.steps
            .iter()
            .filter_map(|s| Some((s.innovation?, s.innovation_var?)))
            .collect()
    }

    pub fn clamp_events(&self) -> Vec<usize> {
        self.steps.iter().enumerate().filter(|(_, s)| s.clamped).map(|(k, _)| k).collect()
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.steps.last()
    }
}
