//! On-disk formats for trained models and run outputs.

use std::io::Write;
use std::path::Path;

use chrono::{Days, NaiveDate};
use pandemic_fhoc_core::contact::{ContactMap, FitFlags};
use pandemic_fhoc_core::estimation::{
    CostateTracking, FilterConfig, FilterOutput, ForecastPoint, MonitorReport, ObservationKind,
};
use pandemic_fhoc_core::fhoc::SweepPoint;
use pandemic_fhoc_core::model::{AugmentedState, ModelParams};
use pandemic_fhoc_core::npi::{NpiSchedule, NpiVector, NPI_NAMES};
use pandemic_fhoc_core::training::RegionModel;
use pandemic_fhoc_core::{Mat6, Vec6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;

pub type Matrix6 = [[f64; 6]; 6];

fn to_rows(m: &Mat6) -> Matrix6 {
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

fn from_rows(rows: &Matrix6) -> Mat6 {
    Mat6::from_fn(|r, c| rows[r][c])
}

/// A contact map with its provenance in the training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFile {
    #[serde(flatten)]
    pub map: ContactMap,
    /// Last day of the training window.
    pub fitted_at: NaiveDate,
    pub region_id: String,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterFile {
    pub q: Matrix6,
    pub r: f64,
    pub x0: AugmentedState,
    pub p0: Matrix6,
    pub observation: ObservationKind,
    pub substeps: usize,
    pub costates: CostateTracking,
}

impl From<&FilterConfig> for FilterFile {
    fn from(f: &FilterConfig) -> Self {
        FilterFile {
            q: to_rows(&f.q),
            r: f.r,
            x0: f.x0,
            p0: to_rows(&f.p0),
            observation: f.observation,
            substeps: f.substeps,
            costates: f.costates,
        }
    }
}

impl From<&FilterFile> for FilterConfig {
    fn from(f: &FilterFile) -> Self {
        FilterConfig {
            q: from_rows(&f.q),
            r: f.r,
            x0: f.x0,
            p0: from_rows(&f.p0),
            observation: f.observation,
            substeps: f.substeps,
            costates: f.costates,
        }
    }
}

/// JSON form of a trained region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub region_id: String,
    pub params: ModelParams,
    pub map: MapFile,
    pub filter_cfg: FilterFile,
    /// First and last training day.
    pub training_window: [NaiveDate; 2],
    /// The same days as indices into the region series.
    pub window_index: [usize; 2],
    pub diagnostics: Option<MonitorReport>,
    pub low_confidence: bool,
    pub fit_flags: FitFlags,
    pub posterior: [f64; 6],
    pub posterior_cov: Matrix6,
    pub last_npi: NpiVector,
}

impl ModelFile {
    /// `series_start` is the date of index 0 of the training series.
    pub fn from_model(model: &RegionModel, series_start: NaiveDate) -> Self {
        let day = |k: usize| series_start + Days::new(k as u64);
        let window = [day(model.window.0), day(model.window.1)];
        ModelFile {
            region_id: model.region_id.clone(),
            params: model.params,
            map: MapFile {
                map: model.map.clone(),
                fitted_at: window[1],
                region_id: model.region_id.clone(),
                mu: model.mu,
            },
            filter_cfg: FilterFile::from(&model.filter),
            training_window: window,
            window_index: [model.window.0, model.window.1],
            diagnostics: model.diagnostics.clone(),
            low_confidence: model.low_confidence,
            fit_flags: model.fit_flags,
            posterior: std::array::from_fn(|k| model.posterior[k]),
            posterior_cov: to_rows(&model.posterior_cov),
            last_npi: model.last_npi,
        }
    }

    pub fn to_model(&self) -> Result<RegionModel> {
        self.params.validate()?;
        self.map.map.validate()?;
        let filter = FilterConfig::from(&self.filter_cfg);
        filter.validate()?;
        if self.window_index[0] > self.window_index[1] || self.training_window[0] > self.training_window[1] {
            return Err(Error::Input("training window is empty".into()));
        }
        if self.posterior.iter().chain(self.posterior_cov.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Input("posterior is not finite".into()));
        }
        Ok(RegionModel {
            region_id: self.region_id.clone(),
            params: self.params,
            map: self.map.map.clone(),
            filter,
            window: (self.window_index[0], self.window_index[1]),
            diagnostics: self.diagnostics.clone(),
            low_confidence: self.low_confidence,
            fit_flags: self.fit_flags,
            mu: self.map.mu,
            posterior: Vec6::from_fn(|r, _| self.posterior[r]),
            posterior_cov: from_rows(&self.posterior_cov),
            last_npi: self.last_npi,
        })
    }

    /// Date of the posterior, the origin of forecasts.
    pub fn origin(&self) -> NaiveDate {
        self.training_window[1]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: ModelFile = serde_json::from_str(text)?;
        m.to_model()?;
        Ok(m)
    }

    /// Loads and validates; errors carry the file name.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fsio::read_to_string(path)?;
        ModelFile::from_json(&text).map_err(|e| Error::file(path, e))
    }
}

fn flush<W: Write>(w: csv::Writer<W>) -> Result<W> {
    w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Columnar dump of a filter run, one row per observation time.
pub fn filter_csv(out: &FilterOutput) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "s", "i", "alpha", "lambda1", "lambda2", "lambda3", "innovation", "innovation_var", "clamped"])?;
    for (k, st) in out.steps.iter().enumerate() {
        let x = &st.posterior;
        w.write_record([
            k.to_string(),
            x[0].to_string(),
            x[1].to_string(),
            x[2].to_string(),
            x[3].to_string(),
            x[4].to_string(),
            x[5].to_string(),
            opt(st.innovation),
            opt(st.innovation_var),
            st.clamped.to_string(),
        ])?;
    }
    flush(w)
}

pub const SWEEP_COLUMNS: [&str; 8] = ["label", "eps", "j0", "j1", "converged", "dominated", "kind", "error"];

pub fn sweep_csv<'a>(points: impl IntoIterator<Item = &'a SweepPoint>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_COLUMNS)?;
    for p in points {
        let kind = serde_json::to_value(p.kind)?;
        w.write_record([
            p.label.clone(),
            opt(p.eps),
            p.j0.to_string(),
            p.j1.to_string(),
            p.converged.to_string(),
            p.dominated.to_string(),
            kind.as_str().unwrap_or_default().to_string(),
            p.error.clone().unwrap_or_default(),
        ])?;
    }
    flush(w)
}

/// One row per Euler step, with the time in days from the origin.
pub fn schedule_csv(schedule: &NpiSchedule) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["step", "t"];
    header.extend(NPI_NAMES);
    w.write_record(&header)?;
    for (k, u) in schedule.rows.iter().enumerate() {
        let mut rec = vec![k.to_string(), (k as f64 * schedule.dt).to_string()];
        rec.extend(u.0.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    flush(w)
}

pub fn read_schedule_csv(text: &str) -> Result<NpiSchedule> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    let mut times = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Input(format!("schedule row {}: bad field {k}", rows.len())))
        };
        times.push(num(1)?);
        let mut u = [0.0; 12];
        for (j, v) in u.iter_mut().enumerate() {
            *v = num(2 + j)?;
        }
        rows.push(NpiVector(u));
    }
    let dt = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
    Ok(NpiSchedule { dt, rows })
}

/// A forecast row in persons per day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub day: usize,
    pub date: NaiveDate,
    pub s: f64,
    pub i: f64,
    pub alpha: f64,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn forecast_rows(points: &[ForecastPoint], origin: NaiveDate, population: f64) -> Vec<ForecastRow> {
    points
        .iter()
        .map(|p| ForecastRow {
            day: p.step,
            date: origin + Days::new(p.step as u64),
            s: p.state.state.s,
            i: p.state.state.i,
            alpha: p.state.state.alpha,
            mean: p.observation * population,
            lo: p.lower() * population,
            hi: p.upper() * population,
        })
        .collect()
}

pub fn tidy_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    flush(w)
}
