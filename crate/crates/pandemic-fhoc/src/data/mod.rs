//! Ingestion of case/NPI reports, population tables and scenario files.

pub mod oxcgrt;
pub mod population;
pub mod scenario;
pub mod series;

pub use oxcgrt::{ingest_oxcgrt, write_oxcgrt, IngestReport, Ingested, SkipReason};
pub use population::{ingest_population, join_population, PopulationTable, RejectedRow};
pub use scenario::{daily_to_steps, Scenario, ScenarioContext, ScenarioKind};
pub use series::{file_stem, forward_fill, region_key, RegionSeries};
