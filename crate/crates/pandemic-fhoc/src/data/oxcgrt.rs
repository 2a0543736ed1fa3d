//! OxCGRT-format CSV ingestion.

use std::collections::BTreeMap;
use std::io::Read;

use chrono::NaiveDate;
use pandemic_fhoc_core::npi::{NPI_COUNT, NPI_NAMES, OXCGRT_MAX};
use serde::{Deserialize, Serialize};

use super::series::{NpiReading, RegionSeries};
use crate::error::{Error, Result};

/// Why a row was not stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// Not a `YYYYMMDD` calendar date.
    BadDate,
    /// Case count or NPI value that is not a non-negative number.
    BadValue,
    MissingCountry,
    /// Fewer fields than the header, or undecodable bytes.
    Malformed,
    /// Second row for an already seen region and date.
    DuplicateDate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_in: usize,
    pub rows_stored: usize,
    pub skipped: BTreeMap<SkipReason, usize>,
    /// Calendar days inserted with missing markers.
    pub gap_days: usize,
    /// Reports below the running maximum of their series.
    pub decreases: usize,
    /// NPI values outside their range, clamped.
    pub clamped_npis: usize,
    pub regions: usize,
}

impl IngestReport {
    pub fn rows_skipped(&self) -> usize {
        self.skipped.values().sum()
    }

    /// Rows in equals rows stored plus rows skipped.
    pub fn is_balanced(&self) -> bool {
        self.rows_in == self.rows_stored + self.rows_skipped()
    }

    fn skip(&mut self, reason: SkipReason) {
        *self.skipped.entry(reason).or_default() += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub regions: BTreeMap<String, RegionSeries>,
    pub report: IngestReport,
}

struct Columns {
    country: usize,
    region: usize,
    date: usize,
    cases: usize,
    npis: [usize; NPI_COUNT],
}

fn find(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

/// `C1`, `C1_School closing` or `C1M_School closing`, but never a flag column.
fn find_npi(headers: &csv::StringRecord, code: &str) -> Result<usize> {
    if let Ok(k) = find(headers, code) {
        return Ok(k);
    }
    headers
        .iter()
        .position(|h| {
            let h = h.trim();
            let rest = h
                .strip_prefix(&format!("{code}_"))
                .or_else(|| h.strip_prefix(&format!("{code}M_")));
            rest.is_some_and(|r| !r.eq_ignore_ascii_case("flag"))
        })
        .ok_or_else(|| Error::MissingColumn(code.to_string()))
}

impl Columns {
    fn locate(headers: &csv::StringRecord) -> Result<Self> {
        let mut npis = [0; NPI_COUNT];
        for (k, name) in NPI_NAMES.iter().enumerate() {
            npis[k] = find_npi(headers, name)?;
        }
        Ok(Columns {
            country: find(headers, "CountryName")?,
            region: find(headers, "RegionName")?,
            date: find(headers, "Date")?,
            cases: find(headers, "ConfirmedCases")?,
            npis,
        })
    }

    fn width(&self) -> usize {
        [self.country, self.region, self.date, self.cases]
            .into_iter()
            .chain(self.npis)
            .max()
            .unwrap_or(0)
            + 1
    }
}

pub fn parse_date(text: &str) -> Option<NaiveDate> {
    let t = text.trim();
    if t.len() != 8 || !t.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    NaiveDate::parse_from_str(t, "%Y%m%d").ok()
}

fn parse_value(text: &str) -> std::result::Result<Option<f64>, ()> {
    let t = text.trim();
    if t.is_empty() {
        return Ok(None);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(Some(v)),
        _ => Err(()),
    }
}

struct Row {
    cases: Option<f64>,
    npis: NpiReading,
}

/// Reads an OxCGRT-style CSV and returns one cleaned series per region.
///
/// Rows with a bad date or value are skipped and counted. NPI values above
/// their range are clamped and counted.
pub fn ingest_oxcgrt(input: impl Read) -> Result<Ingested> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::None).from_reader(input);
    let headers = reader.headers()?.clone();
    let cols = Columns::locate(&headers)?;
    let width = cols.width();

    let mut report = IngestReport::default();
    let mut raw: BTreeMap<(String, String), BTreeMap<NaiveDate, Row>> = BTreeMap::new();
    for record in reader.records() {
        report.rows_in += 1;
        let Ok(record) = record else {
            report.skip(SkipReason::Malformed);
            continue;
        };
        if record.len() < width {
            report.skip(SkipReason::Malformed);
            continue;
        }
        let country = record[cols.country].trim();
        if country.is_empty() {
            report.skip(SkipReason::MissingCountry);
            continue;
        }
        let Some(date) = parse_date(&record[cols.date]) else {
            report.skip(SkipReason::BadDate);
            continue;
        };
        let Ok(cases) = parse_value(&record[cols.cases]) else {
            report.skip(SkipReason::BadValue);
            continue;
        };
        let mut npis = [None; NPI_COUNT];
        let mut bad = false;
        let mut clamped = 0;
        for (k, &c) in cols.npis.iter().enumerate() {
            match parse_value(&record[c]) {
                Ok(Some(v)) if v > OXCGRT_MAX[k] => {
                    clamped += 1;
                    npis[k] = Some(OXCGRT_MAX[k]);
                }
                Ok(v) => npis[k] = v,
                Err(()) => bad = true,
            }
        }
        if bad {
            report.skip(SkipReason::BadValue);
            continue;
        }
        let key = (country.to_string(), record[cols.region].trim().to_string());
        let days = raw.entry(key).or_default();
        if days.contains_key(&date) {
            report.skip(SkipReason::DuplicateDate);
            continue;
        }
        days.insert(date, Row { cases, npis });
        report.clamped_npis += clamped;
        report.rows_stored += 1;
    }
    if report.clamped_npis > 0 {
        tracing::warn!(count = report.clamped_npis, "NPI values above range were clamped");
    }

    let mut regions = BTreeMap::new();
    for ((country, region), days) in raw {
        let (&first, _) = days.first_key_value().expect("region has a row");
        let (&last, _) = days.last_key_value().expect("region has a row");
        let len = (last - first).num_days() as usize + 1;
        report.gap_days += len - days.len();
        let mut reported = vec![None; len];
        let mut npis = vec![[None; NPI_COUNT]; len];
        for (date, row) in days {
            let k = (date - first).num_days() as usize;
            reported[k] = row.cases;
            npis[k] = row.npis;
        }
        let series = RegionSeries::from_reports(&country, &region, first, reported, npis);
        report.decreases += count_decreases(&series.reported);
        regions.insert(series.region_id.clone(), series);
    }
    report.regions = regions.len();
    Ok(Ingested { regions, report })
}

fn count_decreases(reported: &[Option<f64>]) -> usize {
    let mut best: Option<f64> = None;
    let mut n = 0;
    for v in reported.iter().flatten() {
        if best.is_some_and(|b| *v < b) {
            n += 1;
        }
        best = Some(best.map_or(*v, |b: f64| b.max(*v)));
    }
    n
}

/// Writes series back as an OxCGRT-style CSV, one row per calendar day.
pub fn write_oxcgrt(series: &[&RegionSeries], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["CountryName", "RegionName", "Date", "ConfirmedCases"];
    header.extend(NPI_NAMES);
    w.write_record(&header)?;
    let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for s in series {
        for k in 0..s.len() {
            let mut rec = vec![
                s.country.clone(),
                s.region.clone(),
                s.date(k).format("%Y%m%d").to_string(),
                fmt(s.reported[k]),
            ];
            rec.extend(s.npis[k].iter().map(|v| fmt(*v)));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> String {
        let mut h = String::from("CountryName,RegionName,Date,ConfirmedCases");
        for n in NPI_NAMES {
            h.push(',');
            h.push_str(n);
        }
        h
    }

    fn row(country: &str, date: &str, cases: &str, c3: &str) -> String {
        let mut npis = vec![""; NPI_COUNT];
        npis[2] = c3;
        format!("{country},,{date},{cases},{}", npis.join(","))
    }

    #[test]
    fn gap_day_is_missing() {
        let csv = [header(), row("A", "20200301", "1", "0"), row("A", "20200302", "2", "1"), row("A", "20200304", "4", "1")].join("\n");
        let out = ingest_oxcgrt(csv.as_bytes()).unwrap();
        let s = &out.regions["A"];
        assert_eq!(s.len(), 4);
        assert_eq!(s.reported[2], None);
        assert_eq!(out.report.gap_days, 1);
        assert!(out.report.is_balanced());
    }

    #[test]
    fn clamps_and_counts() {
        let csv = [header(), row("A", "20200301", "1", "5")].join("\n");
        let out = ingest_oxcgrt(csv.as_bytes()).unwrap();
        assert_eq!(out.regions["A"].npis[0][2], Some(2.0));
        assert_eq!(out.report.clamped_npis, 1);
    }

    #[test]
    fn missing_column_is_named() {
        let csv = header().replace(",H6", ",H7");
        match ingest_oxcgrt(csv.as_bytes()) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "H6"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn long_npi_headers_are_found_but_flags_are_not() {
        let csv = "CountryName,RegionName,Date,ConfirmedCases,C1_Flag,C1_School closing\n";
        match ingest_oxcgrt(csv.as_bytes()) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "C2"),
            other => panic!("{other:?}"),
        }
        let hdr = csv::StringRecord::from(vec!["C1_Flag", "C1M_School closing"]);
        assert_eq!(find_npi(&hdr, "C1").unwrap(), 1);
    }

    #[test]
    fn dates() {
        assert_eq!(parse_date("20200229"), NaiveDate::from_ymd_opt(2020, 2, 29));
        assert_eq!(parse_date("20210229"), None);
        assert_eq!(parse_date("2020-03-01"), None);
    }

    #[test]
    fn decreases_are_counted() {
        assert_eq!(count_decreases(&[Some(10.0), Some(8.0), Some(9.0), Some(12.0)]), 2);
    }
}
