use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::series::RegionSeries;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// One-based data row number.
    pub row: usize,
    pub region_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PopulationTable {
    pub populations: BTreeMap<String, f64>,
    pub rejected: Vec<RejectedRow>,
}

fn parse_population(text: &str) -> std::result::Result<f64, String> {
    let v: f64 = text.trim().parse().map_err(|_| format!("`{}` is not a number", text.trim()))?;
    if !(v.is_finite() && v > 0.0) {
        return Err(format!("population {v} is not positive"));
    }
    if v.fract() != 0.0 {
        return Err(format!("population {v} is not a whole number"));
    }
    Ok(v)
}

/// Two columns, `region_id,population`. A header row is recognized by a
/// non-numeric second field on the first line.
pub fn ingest_population(input: impl Read) -> Result<PopulationTable> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
    let mut table = PopulationTable::default();
    let mut row = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if line == 0 && record.get(1).is_some_and(|v| v.trim().parse::<f64>().is_err()) {
            continue;
        }
        row += 1;
        let region_id = record.get(0).unwrap_or("").trim().to_string();
        let result = match record.get(1) {
            _ if region_id.is_empty() => Err("empty region id".to_string()),
            None => Err("missing population".to_string()),
            Some(v) => parse_population(v),
        };
        match result {
            Ok(p) => {
                table.populations.insert(region_id, p);
            }
            Err(reason) => {
                tracing::warn!(row, region = %region_id, %reason, "population row rejected");
                table.rejected.push(RejectedRow { row, region_id, reason });
            }
        }
    }
    Ok(table)
}

/// Attaches populations; regions absent from the table are returned by id
/// and left out.
pub fn join_population(regions: BTreeMap<String, RegionSeries>, table: &PopulationTable) -> (BTreeMap<String, RegionSeries>, Vec<String>) {
    let mut kept = BTreeMap::new();
    let mut excluded = Vec::new();
    for (id, mut series) in regions {
        match table.populations.get(&id) {
            Some(&p) => {
                series.population = Some(p);
                kept.insert(id, series);
            }
            None => {
                tracing::warn!(region = %id, "no population, region excluded");
                excluded.push(id);
            }
        }
    }
    (kept, excluded)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_and_rejects() {
        let t = ingest_population("region_id,population\nUS,331000000\nNowhere,-5\nHalf,2.5\n".as_bytes()).unwrap();
        assert_eq!(t.populations["US"], 331_000_000.0);
        assert_eq!(t.populations.len(), 1);
        assert_eq!(t.rejected.len(), 2);
        assert_eq!(t.rejected[0].region_id, "Nowhere");
        assert_eq!(t.rejected[0].row, 2);
    }

    #[test]
    fn headerless() {
        let t = ingest_population("\"United States / Texas\",29000000\n".as_bytes()).unwrap();
        assert_eq!(t.populations["United States / Texas"], 29e6);
    }
}
