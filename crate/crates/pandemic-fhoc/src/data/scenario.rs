//! Scenario files: which NPI levels to hold over a horizon.

use chrono::{Days, NaiveDate};
use pandemic_fhoc_core::fhoc::random_schedules;
use pandemic_fhoc_core::npi::{NpiBounds, NpiSchedule, NpiVector, NPI_COUNT, NPI_NAMES};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// `levels` if given, else the last observed NPI vector.
    Fixed,
    RandomConstant,
    RandomVariable,
    Max,
    Min,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub kind: ScenarioKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Daily rows for `explicit`; the last row is held past its end.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<[f64; NPI_COUNT]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<[f64; NPI_COUNT]>,
    /// Date of the first `schedule` row, used in error messages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_date: Option<NaiveDate>,
}

/// What a scenario is materialized against.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioContext {
    pub days: usize,
    pub bounds: NpiBounds,
    pub last_npi: NpiVector,
    /// Used when the scenario has no seed.
    pub seed: u64,
    /// Date of the first materialized day.
    pub start_date: Option<NaiveDate>,
}

fn day_label(start: Option<NaiveDate>, k: usize) -> String {
    match start {
        Some(d) => (d + Days::new(k as u64)).to_string(),
        None => format!("day {k}"),
    }
}

/// Checks one row; the error names the first offending index and the date.
pub fn check_row(u: &[f64; NPI_COUNT], bounds: &NpiBounds, date: String) -> Result<()> {
    for k in 0..NPI_COUNT {
        let v = u[k];
        if !(v.is_finite() && v >= bounds.lower[k] && v <= bounds.upper[k]) {
            return Err(Error::Inadmissible {
                npi: NPI_NAMES[k],
                date,
                value: v,
                lower: bounds.lower[k],
                upper: bounds.upper[k],
            });
        }
    }
    Ok(())
}

impl Scenario {
    pub fn of_kind(kind: ScenarioKind) -> Self {
        Scenario {
            kind,
            seed: None,
            schedule: None,
            levels: None,
            start_date: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Scenario(e.to_string()))
    }

    /// One admissible NPI vector per day.
    pub fn materialize(&self, ctx: &ScenarioContext) -> Result<Vec<NpiVector>> {
        let days = ctx.days;
        let seed = self.seed.unwrap_or(ctx.seed);
        let rows = match self.kind {
            ScenarioKind::Max => vec![ctx.bounds.max_vector(); days],
            ScenarioKind::Min => vec![ctx.bounds.min_vector(); days],
            ScenarioKind::Fixed => {
                let u = match self.levels {
                    Some(l) => {
                        check_row(&l, &ctx.bounds, day_label(ctx.start_date, 0))?;
                        NpiVector(l)
                    }
                    None => ctx.bounds.clamp(&ctx.last_npi),
                };
                vec![u; days]
            }
            ScenarioKind::RandomConstant | ScenarioKind::RandomVariable => {
                let constant = self.kind == ScenarioKind::RandomConstant;
                let s = random_schedules(days, 1.0, 1, constant, &ctx.bounds, seed).remove(0);
                s.rows
            }
            ScenarioKind::Explicit => {
                let given = self
                    .schedule
                    .as_ref()
                    .filter(|s| !s.is_empty())
                    .ok_or_else(|| Error::Scenario("explicit scenario needs a non-empty schedule".into()))?;
                let start = self.start_date.or(ctx.start_date);
                for (k, row) in given.iter().enumerate() {
                    check_row(row, &ctx.bounds, day_label(start, k))?;
                }
                (0..days).map(|k| NpiVector(given[k.min(given.len() - 1)])).collect()
            }
        };
        Ok(rows)
    }
}

/// Repeats each daily row over the Euler steps of that day.
pub fn daily_to_steps(daily: &[NpiVector], dt: f64) -> NpiSchedule {
    let per_day = ((1.0 / dt).round() as usize).max(1);
    NpiSchedule {
        dt,
        rows: daily.iter().flat_map(|u| std::iter::repeat_n(*u, per_day)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(days: usize) -> ScenarioContext {
        ScenarioContext {
            days,
            bounds: NpiBounds::default(),
            last_npi: NpiVector::from_levels([1; NPI_COUNT]),
            seed: 0,
            start_date: NaiveDate::from_ymd_opt(2020, 6, 1),
        }
    }

    #[test]
    fn max_is_upper_bound_every_day() {
        let rows = Scenario::of_kind(ScenarioKind::Max).materialize(&ctx(5)).unwrap();
        assert_eq!(rows, vec![NpiVector::max_stringency(); 5]);
    }

    #[test]
    fn random_constant_repeats_with_seed() {
        let s = Scenario::from_json(r#"{"kind": "random_constant", "seed": 7}"#).unwrap();
        let a = s.materialize(&ctx(10)).unwrap();
        assert_eq!(a, s.materialize(&ctx(10)).unwrap());
        assert!(a.iter().all(|u| *u == a[0]));
    }

    #[test]
    fn explicit_out_of_range_names_index_and_date() {
        let mut row = [0.0; NPI_COUNT];
        row[3] = 9.0;
        let s = Scenario {
            schedule: Some(vec![[0.0; NPI_COUNT], row]),
            ..Scenario::of_kind(ScenarioKind::Explicit)
        };
        let err = s.materialize(&ctx(3)).unwrap_err().to_string();
        assert!(err.contains("C4") && err.contains("2020-06-02") && err.contains("9"), "{err}");
    }

    #[test]
    fn explicit_holds_last_row() {
        let s = Scenario {
            schedule: Some(vec![[1.0; NPI_COUNT]]),
            ..Scenario::of_kind(ScenarioKind::Explicit)
        };
        assert_eq!(s.materialize(&ctx(4)).unwrap(), vec![NpiVector([1.0; NPI_COUNT]); 4]);
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!(Scenario::from_json(r#"{"kind": "partial"}"#).is_err());
    }

    #[test]
    fn steps_repeat_days() {
        let s = daily_to_steps(&[NpiVector::zeros(), NpiVector::max_stringency()], 0.1);
        assert_eq!(s.rows.len(), 20);
        assert_eq!(s.rows[10], NpiVector::max_stringency());
    }
}
