//! Batch operations shared by the CLI and the service.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use chrono::NaiveDate;
use pandemic_fhoc_core::estimation::{FilterConfig, VarianceCheck};
use pandemic_fhoc_core::fhoc::{
    comparison_schedules, default_eps_grid, mark_dominated, optimal_point, scenario_point, ControlProblem, FhocOptions,
    SweepPlan, SweepPoint,
};
use pandemic_fhoc_core::npi::{NpiVector, NPI_COUNT};
use pandemic_fhoc_core::synthetic::SyntheticRegion;
use pandemic_fhoc_core::training::{is_intercept_only, train_region, TrainingHyper, TrainingOutcome};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::RegionSeries;
use crate::error::{Error, Result};
use crate::formats::{ForecastRow, ModelFile};

pub fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Input(format!("thread pool: {e}")))
}

#[derive(Debug, Clone)]
pub struct TrainedRegion {
    pub file: ModelFile,
    pub outcome: TrainingOutcome,
}

pub fn train_series(series: &RegionSeries, hyper: &TrainingHyper) -> Result<TrainedRegion> {
    let obs = series.to_observations()?;
    let outcome = train_region(&obs, hyper)?;
    let file = ModelFile::from_model(&outcome.model, series.start_date);
    Ok(TrainedRegion { file, outcome })
}

/// Trains every region on the current rayon pool; results keep input order.
pub fn train_many(series: &[RegionSeries], hyper: &TrainingHyper) -> Vec<(String, Result<TrainedRegion>)> {
    series
        .par_iter()
        .map(|s| (s.region_id.clone(), train_series(s, hyper)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub region: String,
    pub status: String,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub map_form: String,
    pub map_norm: Option<f64>,
    pub window_start: String,
    pub window_end: String,
    pub zero_mean: Option<bool>,
    pub white: Option<bool>,
    pub variance: String,
    pub low_confidence: Option<bool>,
    pub degenerate: Option<bool>,
    pub quadratic_fallback: Option<bool>,
    pub error: String,
}

pub fn summary_row(region: &str, result: &Result<TrainedRegion>) -> SummaryRow {
    match result {
        Ok(t) => {
            let m = &t.outcome.model;
            let d = m.diagnostics.as_ref();
            SummaryRow {
                region: region.to_string(),
                status: "ok".into(),
                beta: Some(m.params.beta),
                gamma: Some(m.params.gamma),
                map_form: serde_json::to_value(m.map.form)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default(),
                map_norm: Some(m.map.coefficient_norm()),
                window_start: t.file.training_window[0].to_string(),
                window_end: t.file.training_window[1].to_string(),
                zero_mean: d.map(|d| d.zero_mean),
                white: d.map(|d| d.white),
                variance: match d.map(|d| d.variance) {
                    Some(VarianceCheck::Consistent) => "consistent".into(),
                    Some(VarianceCheck::UnderSpecified) => "under_specified".into(),
                    Some(VarianceCheck::OverSpecified) => "over_specified".into(),
                    None => "unavailable".into(),
                },
                low_confidence: Some(m.low_confidence),
                degenerate: Some(m.fit_flags.degenerate || is_intercept_only(&m.map)),
                quadratic_fallback: Some(m.fit_flags.quadratic_fallback),
                error: String::new(),
            }
        }
        Err(e) => SummaryRow {
            region: region.to_string(),
            status: "failed".into(),
            beta: None,
            gamma: None,
            map_form: String::new(),
            map_norm: None,
            window_start: String::new(),
            window_end: String::new(),
            zero_mean: None,
            white: None,
            variance: String::new(),
            low_confidence: None,
            degenerate: None,
            quadratic_fallback: None,
            error: e.to_string(),
        },
    }
}

/// Explicit values if given, else the default grid of `grid` points.
pub fn eps_values(grid: usize, explicit: Option<&[f64]>) -> Result<Vec<f64>> {
    let values = explicit.map_or_else(|| default_eps_grid(grid), <[f64]>::to_vec);
    if let Some(e) = values.iter().find(|e| !(0.0..=1.0).contains(*e)) {
        return Err(Error::Input(format!("eps = {e} outside [0, 1]")));
    }
    Ok(values)
}

/// `random` comparison schedules split between constant (the larger half)
/// and day-to-day draws.
pub fn sweep_plan(eps_values: Vec<f64>, random: usize, fixed: Option<NpiVector>, seed: u64) -> SweepPlan {
    SweepPlan {
        eps_values,
        fixed,
        random_constant: random.div_ceil(2),
        random_variable: random / 2,
        seed,
    }
}

pub fn plan_size(plan: &SweepPlan) -> usize {
    plan.eps_values.len() + plan.random_constant + plan.random_variable + usize::from(plan.fixed.is_some())
}

/// The sweep of [`pandemic_fhoc_core::fhoc::pareto_sweep`], solved on the
/// rayon pool. Point order and values match the sequential sweep.
pub fn parallel_sweep(
    template: &ControlProblem,
    cfg: &FilterConfig,
    opts: &FhocOptions,
    plan: &SweepPlan,
    progress: Option<&AtomicUsize>,
) -> Vec<SweepPoint> {
    let tick = || {
        if let Some(p) = progress {
            p.fetch_add(1, Ordering::Relaxed);
        }
    };
    let mut points: Vec<SweepPoint> = plan
        .eps_values
        .par_iter()
        .map(|&e| {
            let p = optimal_point(template, cfg, opts, e);
            tick();
            p
        })
        .collect();
    let others: Vec<SweepPoint> = comparison_schedules(template, plan)
        .into_par_iter()
        .map(|(label, kind, s)| {
            let p = scenario_point(template, label, kind, s);
            tick();
            p
        })
        .collect();
    points.extend(others);
    mark_dominated(&mut points);
    points
}

/// Validated weight rows: one row for the whole horizon, or one per day.
pub fn parse_weights(value: &serde_json::Value) -> Result<Vec<[f64; NPI_COUNT]>> {
    let row = |v: &serde_json::Value| -> Result<[f64; NPI_COUNT]> {
        let items = v.as_array().ok_or_else(|| Error::Input("weights must be arrays of numbers".into()))?;
        if items.len() != NPI_COUNT {
            return Err(Error::Input(format!("weight vector has {} entries, expected {NPI_COUNT}", items.len())));
        }
        let mut w = [0.0; NPI_COUNT];
        for (k, x) in items.iter().enumerate() {
            let x = x.as_f64().ok_or_else(|| Error::Input(format!("weight {k} is not a number")))?;
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::Input(format!("weight {k} = {x} must be finite and non-negative")));
            }
            w[k] = x;
        }
        Ok(w)
    };
    match value.as_array() {
        Some(items) if items.first().is_some_and(|v| v.is_array()) => items.iter().map(row).collect(),
        _ => Ok(vec![row(value)?]),
    }
}

/// Region series for a synthetic region, starting at `start`.
pub fn synthetic_series(region: &SyntheticRegion, start: NaiveDate) -> RegionSeries {
    let name = region.data.region_id.clone();
    let npis = region.data.npis.iter().map(|u| u.0.map(Some)).collect();
    let mut s = RegionSeries::from_reports(&name, "", start, region.data.cumulative.clone(), npis);
    s.population = Some(region.data.population);
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub day: usize,
    pub date: NaiveDate,
    pub forecast: f64,
    pub truth: f64,
    /// `100 |forecast - truth| / truth`.
    pub error_pct: f64,
}

/// Look-ahead errors for forecast days that have a positive truth value.
pub fn forecast_errors(rows: &[ForecastRow], truth: &BTreeMap<NaiveDate, f64>) -> Vec<ErrorRow> {
    rows.iter()
        .filter(|r| r.day > 0)
        .filter_map(|r| {
            let t = *truth.get(&r.date)?;
            (t > 0.0).then(|| ErrorRow {
                day: r.day,
                date: r.date,
                forecast: r.mean,
                truth: t,
                error_pct: 100.0 * (r.mean - t).abs() / t,
            })
        })
        .collect()
}

/// `date,new_cases` CSV.
pub fn read_truth_csv(text: &str) -> Result<BTreeMap<NaiveDate, f64>> {
    #[derive(Deserialize)]
    struct Row {
        date: NaiveDate,
        new_cases: Option<f64>,
    }
    let mut out = BTreeMap::new();
    for row in csv::Reader::from_reader(text.as_bytes()).deserialize::<Row>() {
        let row = row?;
        if let Some(v) = row.new_cases {
            out.insert(row.date, v);
        }
    }
    Ok(out)
}
