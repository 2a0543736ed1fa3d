//! Per-region training: blind smoothing, map fit, informed smoothing, refit.

use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::contact::{fit_linear, fit_objective, fit_quadratic, ContactMap, CurvatureStructure, FitFlags, FitReport, MapForm, PenaltySelection};
use crate::estimation::{
    eks_run, forecast, monitor, CostateTracking, FilterConfig, FilterOutput, ForecastPoint, MonitorReport, ObservationKind,
    Smoothed,
    VarianceCheck,
};
use crate::fhoc::{ControlProblem, Weights};
use crate::linalg::{Mat6, Vec6};
use crate::model::{AugmentedState, CompartmentState, ModelParams};
use crate::npi::{NpiBounds, NpiVector, OXCGRT_MAX};
use crate::{Error, Result};

/// `beta = -ln(p) / T` for a contagion probability `p` remaining after `T`
/// days.
pub fn select_beta(contagion_prob: f64, days: f64) -> Result<f64> {
    if !(contagion_prob > 0.0 && contagion_prob < 1.0) {
        return Err(Error::InvalidParameter(alloc::format!("contagion probability {contagion_prob} outside (0, 1)")));
    }
    if !(days > 0.0 && days.is_finite()) {
        return Err(Error::InvalidParameter("T must be positive".into()));
    }
    Ok(-contagion_prob.ln() / days)
}

/// Contagion rate giving reproduction number `r0`: `beta + ln(r0) / unit`.
pub fn select_alpha0(r0: f64, beta: f64, generation_unit: f64) -> Result<f64> {
    if !(r0 > 0.0 && generation_unit > 0.0) {
        return Err(Error::InvalidParameter("r0 and the generation unit must be positive".into()));
    }
    Ok(beta + r0.ln() / generation_unit)
}

/// Daily reports of one region, aligned by day.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegionObservations {
    pub region_id: String,
    pub population: f64,
    /// Cumulative confirmed cases; `None` where no report was filed.
    pub cumulative: Vec<Option<f64>>,
    pub npis: Vec<NpiVector>,
}

impl RegionObservations {
    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cumulative.len() != self.npis.len() {
            return Err(Error::LengthMismatch(self.cumulative.len(), self.npis.len()));
        }
        if !(self.population.is_finite() && self.population > 0.0) {
            return Err(Error::InvalidParameter("population must be positive".into()));
        }
        if self.cumulative.iter().flatten().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidParameter("cumulative counts must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Which contact map the pipeline fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum MapChoice {
    #[default]
    Linear,
    Quadratic(CurvatureStructure),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainingHyper {
    pub contagion_prob: f64,
    pub contagion_days: f64,
    pub r0: f64,
    pub generation_unit: f64,
    pub gamma: f64,
    pub delta_t: f64,
    pub substeps: usize,
    pub min_cumulative: f64,
    pub min_days: usize,
    pub moving_average: usize,
    /// Days used to estimate the observation variance.
    pub r_days: usize,
    /// Process-noise variance of the s and i rows, per day, relative to the
    /// squared initial infected fraction.
    pub q_state_rel: f64,
    /// Pass-3 alpha-row variance as a multiple of `alpha0^2`.
    pub q_alpha_rel: f64,
    /// Pass-1 inflation of the alpha-row variance.
    pub q_alpha_inflation: f64,
    /// Initial variance of s and i relative to the squared initial infected
    /// fraction.
    pub p0_state_rel: f64,
    /// Initial alpha variance as a multiple of `alpha0^2`.
    pub p0_alpha_rel: f64,
    pub map: MapChoice,
    pub penalty: PenaltySelection,
}

impl Default for TrainingHyper {
    fn default() -> Self {
        TrainingHyper {
            contagion_prob: 0.01,
            contagion_days: 21.0,
            r0: 2.5,
            generation_unit: 1.0,
            gamma: 1.0 / 7.0,
            delta_t: 0.1,
            substeps: 10,
            min_cumulative: 100.0,
            min_days: 120,
            moving_average: 7,
            r_days: 28,
            q_state_rel: 1e-2,
            q_alpha_rel: 1e-4,
            q_alpha_inflation: 100.0,
            p0_state_rel: 1.0,
            p0_alpha_rel: 0.25,
            map: MapChoice::Linear,
            penalty: PenaltySelection::default(),
        }
    }
}

/// A trained region, ready for forecasting and prescription.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionModel {
    pub region_id: String,
    pub params: ModelParams,
    pub map: ContactMap,
    /// Pass-3 filter configuration.
    pub filter: FilterConfig,
    /// First and last day index of the training window, inclusive.
    pub window: (usize, usize),
    pub diagnostics: Option<MonitorReport>,
    pub low_confidence: bool,
    pub fit_flags: FitFlags,
    pub mu: f64,
    /// Filtered posterior at the last training day.
    pub posterior: Vec6,
    pub posterior_cov: Mat6,
    pub last_npi: NpiVector,
}

impl RegionModel {
    pub fn posterior_state(&self) -> AugmentedState {
        AugmentedState::from_vector(&self.posterior)
    }

    /// Posterior compartments pulled back into the physical ranges.
    pub fn current_state(&self) -> CompartmentState {
        let mut x = self.posterior_state().state;
        x.clamp();
        x
    }

    /// Open-loop forecast with one NPI vector per future day.
    pub fn forecast(&self, npis: &[NpiVector]) -> Result<Vec<ForecastPoint>> {
        let drives: Vec<f64> = npis.iter().map(|u| self.map.drive(u)).collect();
        forecast(&self.filter, &self.posterior, &self.posterior_cov, &drives, &self.params, 0.0)
    }

    /// Control problem starting from the current posterior.
    pub fn control_problem(&self, horizon_days: f64, weights: Vec<Weights>, eps: f64, bounds: NpiBounds) -> Result<ControlProblem> {
        let prob = ControlProblem {
            params: self.params,
            map: self.map.clone(),
            weights,
            eps,
            horizon_days,
            x0: self.current_state(),
            bounds,
        };
        prob.validate()?;
        Ok(prob)
    }
}

/// Intermediate products of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub observations: Vec<Option<f64>>,
    /// Alpha-row process-noise variance of pass 1 and pass 3.
    pub q_alpha: (f64, f64),
    pub alpha_pass1: Vec<f64>,
    pub alpha_pass3: Vec<f64>,
    /// Forward pass of the informed filter.
    pub filtered_pass3: FilterOutput,
    pub fit_pass2: FitReport,
    pub fit_pass4: FitReport,
    /// Lag-filtered NPI vectors used as regressors.
    pub lagged_npis: Vec<NpiVector>,
    /// Penalized objective of the pass-2 and pass-4 maps on the pass-3
    /// target, both with the pass-4 penalty.
    pub objective_pass2: f64,
    pub objective_pass4: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    pub model: RegionModel,
    pub trace: TrainingTrace,
}

/// Daily increments of the cumulative series; a missing neighbour or a
/// decrease makes the day missing.
pub fn daily_increments(cumulative: &[Option<f64>]) -> Vec<Option<f64>> {
    let mut out = Vec::with_capacity(cumulative.len());
    out.push(None);
    for w in cumulative.windows(2) {
        out.push(match (w[0], w[1]) {
            (Some(a), Some(b)) if b >= a => Some(b - a),
            _ => None,
        });
    }
    out
}

/// Centered moving average over the non-missing values of a window of
/// `width` days, shrinking at the edges. Missing days stay missing.
pub fn centered_moving_average(x: &[Option<f64>], width: usize) -> Vec<Option<f64>> {
    let half = width / 2;
    (0..x.len())
        .map(|k| {
            x[k]?;
            let lo = k.saturating_sub(half);
            let hi = (k + half).min(x.len() - 1);
            let vals: Vec<f64> = x[lo..=hi].iter().flatten().copied().collect();
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}

/// First-order lag matching the contagion-rate response over one day:
/// `d~_{k+1} = rho d~_k + (1 - rho) d_k` with `d~_0 = d_0`.
pub fn lag_filter(npis: &[NpiVector], rho: f64) -> Vec<NpiVector> {
    let mut out = Vec::with_capacity(npis.len());
    let Some(first) = npis.first() else { return out };
    let mut acc = first.slack();
    for u in npis {
        out.push(NpiVector(core::array::from_fn(|k| OXCGRT_MAX[k] - acc[k])));
        let d = u.slack();
        for k in 0..acc.len() {
            acc[k] = rho * acc[k] + (1.0 - rho) * d[k];
        }
    }
    out
}

fn fit(alpha: &[f64], npis: &[NpiVector], hyper: &TrainingHyper) -> Result<FitReport> {
    match hyper.map {
        MapChoice::Linear => fit_linear(alpha, npis, hyper.penalty),
        MapChoice::Quadratic(s) => fit_quadratic(alpha, npis, s, hyper.penalty),
    }
}

fn observation_variance(obs: &[Option<f64>], days: usize) -> f64 {
    let head = &obs[..days.min(obs.len())];
    let diffs: Vec<f64> = head
        .windows(2)
        .filter_map(|w| Some(w[1]? - w[0]?))
        .collect();
    let level = head.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * level).powi(2).max(1e-24);
    if diffs.len() < 2 {
        return floor;
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
    var.max(floor)
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64).sqrt()
}

/// Root-mean-square difference of two alpha series.
pub fn alpha_rmse(estimate: &[f64], truth: &[f64]) -> f64 {
    rmse(estimate, truth)
}

/// Runs the two-pass pipeline on one region.
pub fn train_region(data: &RegionObservations, hyper: &TrainingHyper) -> Result<TrainingOutcome> {
    data.validate()?;
    let n_pop = data.population;
    let start = data
        .cumulative
        .iter()
        .position(|c| c.is_some_and(|c| c >= hyper.min_cumulative))
        .ok_or(Error::TooFewSamples {
            needed: hyper.min_days,
            got: 0,
        })?;
    let end = data.len() - 1;
    let days = end + 1 - start;
    if days < hyper.min_days {
        return Err(Error::TooFewSamples {
            needed: hyper.min_days,
            got: days,
        });
    }

    let beta = select_beta(hyper.contagion_prob, hyper.contagion_days)?;
    let alpha0 = select_alpha0(hyper.r0, beta, hyper.generation_unit)?;
    let params = ModelParams::new(beta, hyper.gamma, n_pop, hyper.delta_t, hyper.generation_unit)?;

    let cumulative = &data.cumulative[start..];
    let npis = &data.npis[start..];
    let increments = daily_increments(&data.cumulative);
    let smoothed = centered_moving_average(&increments, hyper.moving_average);
    let obs: Vec<Option<f64>> = smoothed[start..].iter().map(|v| v.map(|v| v / n_pop)).collect();

    let c0 = cumulative[0].expect("window starts on a report");
    let lookback = (1.0 / beta).round() as usize;
    let earlier = start
        .checked_sub(lookback)
        .and_then(|k| data.cumulative[..=k].iter().rev().flatten().next().copied())
        .unwrap_or(0.0);
    let i0 = ((c0 - earlier).max(1.0) / n_pop).min(1.0);
    let s0 = (1.0 - c0 / n_pop).clamp(0.0, 1.0 - i0);
    let x0 = CompartmentState::new(s0, i0, alpha0)?;

    let r = observation_variance(&obs, hyper.r_days);
    let q_state = hyper.q_state_rel * i0 * i0;
    let p0_state = hyper.p0_state_rel * i0 * i0;
    let q_alpha3 = hyper.q_alpha_rel * alpha0 * alpha0;
    let q_alpha1 = q_alpha3 * hyper.q_alpha_inflation;
    let mut cfg1 = FilterConfig::diagonal(
        [q_state, q_state, q_alpha1],
        r,
        x0,
        [p0_state, p0_state, hyper.p0_alpha_rel * alpha0 * alpha0],
        ObservationKind::NewCases,
    );
    cfg1.substeps = hyper.substeps;
    cfg1.costates = CostateTracking::Off;

    let flat = alloc::vec![0.0; days - 1];
    let pass1 = eks_run(&cfg1, &obs, &flat, &params, 0.0)?;
    let alpha1 = pass1.alpha();

    let rho = (1.0 - hyper.delta_t * hyper.gamma).powi(hyper.substeps as i32);
    let lagged = lag_filter(npis, rho);
    let fit2 = fit(&alpha1, &lagged, hyper)?;

    let mut cfg3 = cfg1.clone();
    cfg3.q[(2, 2)] = q_alpha3;
    cfg3.x0 = AugmentedState::from_vector(&pass1.states[0]);
    let drives: Vec<f64> = npis[..days - 1].iter().map(|u| fit2.map.drive(u)).collect();
    let pass3: Smoothed = eks_run(&cfg3, &obs, &drives, &params, 0.0)?;
    let alpha3 = pass3.alpha();
    let fit4 = fit(&alpha3, &lagged, hyper)?;

    let objective_pass2 = fit_objective(&fit2.map, &alpha3, &lagged, fit4.mu);
    let objective_pass4 = fit_objective(&fit4.map, &alpha3, &lagged, fit4.mu);

    let diagnostics = monitor(&pass3.filtered).ok();
    let low_confidence = diagnostics.as_ref().is_none_or(|d| d.variance != VarianceCheck::Consistent);
    let last = pass3.filtered.last().expect("window is non-empty");

    let model = RegionModel {
        region_id: data.region_id.clone(),
        params,
        map: fit4.map.clone(),
        filter: cfg3,
        window: (start, end),
        diagnostics,
        low_confidence,
        fit_flags: fit4.flags,
        mu: fit4.mu,
        posterior: last.posterior,
        posterior_cov: last.posterior_cov,
        last_npi: *npis.last().expect("window is non-empty"),
    };
    Ok(TrainingOutcome {
        model,
        trace: TrainingTrace {
            observations: obs,
            q_alpha: (q_alpha1, q_alpha3),
            alpha_pass1: alpha1,
            alpha_pass3: alpha3,
            filtered_pass3: pass3.filtered,
            fit_pass2: fit2,
            fit_pass4: fit4,
            lagged_npis: lagged,
            objective_pass2,
            objective_pass4,
        },
    })
}

/// Whether a map carries any NPI response.
pub fn is_intercept_only(map: &ContactMap) -> bool {
    map.form == MapForm::Linear && map.a.iter().all(|&a| a == 0.0)
}
