use chrono::{Days, NaiveDate};
use pandemic_fhoc_core::npi::{NpiVector, NPI_COUNT};
use pandemic_fhoc_core::training::{daily_increments, RegionObservations};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One NPI reading per index; `None` marks a missing report.
pub type NpiReading = [Option<f64>; NPI_COUNT];

/// Daily case and NPI reports of one region on a contiguous calendar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSeries {
    pub region_id: String,
    pub country: String,
    /// Empty for a national aggregate.
    pub region: String,
    pub start_date: NaiveDate,
    /// Cumulative counts as reported.
    pub reported: Vec<Option<f64>>,
    /// Running maximum of `reported`.
    pub confirmed: Vec<Option<f64>>,
    /// First differences of `reported`; a decrease or a missing neighbour is
    /// missing.
    pub new_cases: Vec<Option<f64>>,
    pub npis: Vec<NpiReading>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<f64>,
}

pub fn region_key(country: &str, region: &str) -> String {
    if region.is_empty() {
        country.to_string()
    } else {
        format!("{country} / {region}")
    }
}

/// File-name stem for a region id: ASCII alphanumerics kept, everything else
/// mapped to `_`.
pub fn file_stem(region_id: &str) -> String {
    region_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

pub fn running_max(x: &[Option<f64>]) -> Vec<Option<f64>> {
    let mut best: Option<f64> = None;
    x.iter()
        .map(|v| {
            let v = (*v)?;
            let m = best.map_or(v, |b| b.max(v));
            best = Some(m);
            Some(m)
        })
        .collect()
}

/// Carries the last reported value forward; zero before the first report.
pub fn forward_fill(npis: &[NpiReading]) -> Vec<NpiVector> {
    let mut last = [0.0; NPI_COUNT];
    npis.iter()
        .map(|row| {
            for (k, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    last[k] = *v;
                }
            }
            NpiVector(last)
        })
        .collect()
}

impl RegionSeries {
    /// Builds the derived columns from raw cumulative reports.
    pub fn from_reports(country: &str, region: &str, start_date: NaiveDate, reported: Vec<Option<f64>>, npis: Vec<NpiReading>) -> Self {
        RegionSeries {
            region_id: region_key(country, region),
            country: country.to_string(),
            region: region.to_string(),
            start_date,
            confirmed: running_max(&reported),
            new_cases: daily_increments(&reported),
            reported,
            npis,
            population: None,
        }
    }

    pub fn len(&self) -> usize {
        self.reported.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reported.is_empty()
    }

    pub fn date(&self, k: usize) -> NaiveDate {
        self.start_date + Days::new(k as u64)
    }

    pub fn end_date(&self) -> NaiveDate {
        self.date(self.len().saturating_sub(1))
    }

    pub fn filled_npis(&self) -> Vec<NpiVector> {
        forward_fill(&self.npis)
    }

    /// Cumulative counts over the population.
    pub fn case_fractions(&self) -> Result<Vec<Option<f64>>> {
        let n = self.require_population()?;
        Ok(self.confirmed.iter().map(|c| c.map(|c| c / n)).collect())
    }

    pub fn require_population(&self) -> Result<f64> {
        self.population
            .ok_or_else(|| Error::Input(format!("region `{}` has no population", self.region_id)))
    }

    /// Training input: raw cumulative reports and forward-filled NPIs.
    pub fn to_observations(&self) -> Result<RegionObservations> {
        let obs = RegionObservations {
            region_id: self.region_id.clone(),
            population: self.require_population()?,
            cumulative: self.reported.clone(),
            npis: self.filled_npis(),
        };
        obs.validate()?;
        Ok(obs)
    }

    /// Drops every day from `len` on.
    pub fn truncate(&mut self, len: usize) {
        self.reported.truncate(len);
        self.confirmed.truncate(len);
        self.new_cases.truncate(len);
        self.npis.truncate(len);
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.confirmed.len() != n || self.new_cases.len() != n || self.npis.len() != n {
            return Err(Error::Input(format!("region `{}`: column lengths differ", self.region_id)));
        }
        if self.confirmed != running_max(&self.reported) || self.new_cases != daily_increments(&self.reported) {
            return Err(Error::Input(format!("region `{}`: derived columns are stale", self.region_id)));
        }
        for (k, row) in self.npis.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    if !(0.0..=pandemic_fhoc_core::npi::OXCGRT_MAX[j]).contains(v) {
                        return Err(Error::Inadmissible {
                            npi: pandemic_fhoc_core::npi::NPI_NAMES[j],
                            date: self.date(k).to_string(),
                            value: *v,
                            lower: 0.0,
                            upper: pandemic_fhoc_core::npi::OXCGRT_MAX[j],
                        });
                    }
                }
            }
        }
        if let Some(p) = self.population {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::Input(format!("region `{}`: population {p} is not positive", self.region_id)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: RegionSeries = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repair_of_a_decrease() {
        let start = NaiveDate::from_ymd_opt(2020, 3, 1).unwrap();
        let s = RegionSeries::from_reports("X", "", start, vec![Some(10.0), Some(8.0), Some(12.0)], vec![[None; NPI_COUNT]; 3]);
        assert_eq!(s.confirmed, vec![Some(10.0), Some(10.0), Some(12.0)]);
        assert_eq!(s.new_cases, vec![None, None, Some(4.0)]);
        assert_eq!(s.region_id, "X");
    }

    #[test]
    fn forward_fill_starts_at_zero() {
        let mut a = [None; NPI_COUNT];
        a[2] = Some(2.0);
        let filled = forward_fill(&[[None; NPI_COUNT], a, [None; NPI_COUNT]]);
        assert_eq!(filled[0], NpiVector::zeros());
        assert_eq!(filled[1].0[2], 2.0);
        assert_eq!(filled[2].0[2], 2.0);
    }

    #[test]
    fn keys_and_stems() {
        assert_eq!(region_key("United States", "Texas"), "United States / Texas");
        assert_eq!(file_stem("United States / Texas"), "United_States___Texas");
    }
}
