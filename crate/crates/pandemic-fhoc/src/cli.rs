//! Command-line entry points.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use pandemic_fhoc_core::contact::CurvatureStructure;
use pandemic_fhoc_core::fhoc::{closest_to_origin, noiseless_config, ScenarioKind as PointKind, SweepPoint};
use pandemic_fhoc_core::npi::NpiBounds;
use pandemic_fhoc_core::synthetic::{generate, NpiPolicy, SyntheticSpec};
use pandemic_fhoc_core::training::MapChoice;
use serde::Serialize;

use crate::config::Config;
use crate::data::{file_stem, ingest_oxcgrt, ingest_population, join_population, RegionSeries, Scenario, ScenarioContext, ScenarioKind};
use crate::error::{Error, Result};
use crate::formats::{filter_csv, forecast_rows, schedule_csv, sweep_csv, tidy_csv, ModelFile};
use crate::manifest::ManifestBuilder;
use crate::pipeline::{
    eps_values, forecast_errors, parallel_sweep, parse_weights, read_truth_csv, summary_row, sweep_plan, synthetic_series,
    thread_pool, train_many,
};
use crate::{fsio, service};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "pandemic-fhoc", version, about = "Epidemic forecasting and NPI prescription")]
pub struct Cli {
    /// TOML configuration file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "PANDEMIC_FHOC_SEED")]
    pub seed: Option<u64>,
    /// Worker threads, 0 for all cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean an OxCGRT CSV and write one JSON series per region.
    Ingest(IngestArgs),
    /// Train region models from ingested series.
    Train(TrainArgs),
    /// Forecast new cases under an NPI scenario.
    Forecast(ForecastArgs),
    /// Sweep eps and random scenarios and write the bi-objective table.
    Prescribe(PrescribeArgs),
    /// Serve trained models over HTTP.
    Serve(ServeArgs),
    /// Write synthetic region series with known truth.
    Synth(SynthArgs),
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub oxcgrt: PathBuf,
    #[arg(long)]
    pub population: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated region ids, or `all`.
    #[arg(long, default_value = "all")]
    pub regions: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub quadratic: bool,
    /// With `--quadratic`, fit every curvature entry instead of the diagonal.
    #[arg(long, requires = "quadratic")]
    pub full_curvature: bool,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Scenario JSON file.
    #[arg(long)]
    pub npis: PathBuf,
    #[arg(long)]
    pub days: Option<i64>,
    #[arg(long)]
    pub out: PathBuf,
    /// `date,new_cases` CSV for the look-ahead error table.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Error table path; defaults next to `--out`.
    #[arg(long, requires = "truth")]
    pub errors_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PrescribeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// JSON: twelve weights, or one row of twelve per day. Defaults to ones.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, conflicts_with = "eps")]
    pub eps_grid: Option<usize>,
    /// Explicit eps values, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub eps: Option<Vec<f64>>,
    /// Horizon in days.
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub random_scenarios: Option<usize>,
    /// Also cost the last observed NPI vector held over the horizon.
    #[arg(long)]
    pub fixed: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub models: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub cors_origin: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    pub count: usize,
    #[arg(long, default_value_t = 400)]
    pub days: usize,
    /// Hold every NPI at zero; the map cannot be identified.
    #[arg(long)]
    pub constant: bool,
    #[arg(long, default_value = "2020-03-01")]
    pub start_date: NaiveDate,
    /// Days kept out of the region series; truth and the NPIs of these days
    /// are still written.
    #[arg(long, default_value_t = 0)]
    pub holdout: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let argv: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, argv) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}

fn execute(cli: &Cli, argv: Vec<String>) -> Result<i32> {
    let mut config = Config::load_or_default(cli.config.as_deref())?;
    if let Some(j) = cli.jobs {
        config.jobs = j;
    }
    let seed = config.resolve_seed(cli.seed);
    let (name, manifest_path) = match &cli.command {
        Command::Ingest(a) => ("ingest", a.out.join("manifest.json")),
        Command::Train(a) => ("train", a.out.join("manifest.json")),
        Command::Forecast(a) => ("forecast", sibling(&a.out, "manifest.json")),
        Command::Prescribe(a) => ("prescribe", a.out.join("manifest.json")),
        Command::Synth(a) => ("synth", a.out.join("manifest.json")),
        Command::Serve(a) => return serve(a, config),
        Command::Config => {
            print!("{}", config.to_toml()?);
            return Ok(EXIT_OK);
        }
    };
    let mut m = ManifestBuilder::new(name, argv, cli.config.as_deref(), seed);
    if let Some(c) = &cli.config {
        m.input(c)?;
    }
    let pool = thread_pool(config.jobs)?;
    let result = pool.install(|| match &cli.command {
        Command::Ingest(a) => ingest(a, &mut m),
        Command::Train(a) => train(a, &config, &mut m),
        Command::Forecast(a) => forecast(a, &config, seed, &mut m),
        Command::Prescribe(a) => prescribe(a, &config, seed, &mut m),
        Command::Synth(a) => synth(a, seed, &mut m),
        Command::Serve(_) | Command::Config => unreachable!(),
    });
    let code = match &result {
        Ok(c) => *c,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    };
    m.finish(&manifest_path, code)?;
    Ok(code)
}

/// `out.csv` becomes `out.<suffix>` in the same directory.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

#[derive(Serialize)]
struct IngestSummary<'a> {
    report: &'a crate::data::IngestReport,
    population_rejected: &'a [crate::data::RejectedRow],
    excluded_without_population: &'a [String],
    regions_written: Vec<&'a str>,
}

fn ingest(a: &IngestArgs, m: &mut ManifestBuilder) -> Result<i32> {
    m.input(&a.oxcgrt)?;
    m.input(&a.population)?;
    let ingested = ingest_oxcgrt(open(&a.oxcgrt)?).map_err(|e| Error::file(&a.oxcgrt, e))?;
    let table = ingest_population(open(&a.population)?).map_err(|e| Error::file(&a.population, e))?;
    let (kept, excluded) = join_population(ingested.regions, &table);

    let mut stems = BTreeMap::new();
    for id in kept.keys() {
        if let Some(other) = stems.insert(file_stem(id), id) {
            return Err(Error::Input(format!("regions `{other}` and `{id}` map to the same file name")));
        }
    }
    for s in kept.values() {
        m.write(&a.out.join("regions").join(format!("{}.json", file_stem(&s.region_id))), s.to_json()?.as_bytes())?;
    }
    let r = &ingested.report;
    let summary = IngestSummary {
        report: r,
        population_rejected: &table.rejected,
        excluded_without_population: &excluded,
        regions_written: kept.keys().map(String::as_str).collect(),
    };
    m.write(&a.out.join("ingest_report.json"), &json_bytes(&summary)?)?;

    let skipped: Vec<String> = r.skipped.iter().map(|(k, v)| format!("{}={v}", serde_json::to_value(k).unwrap_or_default().as_str().unwrap_or("?"))).collect();
    println!("{} regions written", kept.len());
    println!(
        "rows: {} in, {} stored, {} skipped [{}]",
        r.rows_in,
        r.rows_stored,
        r.rows_skipped(),
        skipped.join(", ")
    );
    println!(
        "repairs: {} gap days, {} cumulative decreases, {} clamped NPI values",
        r.gap_days, r.decreases, r.clamped_npis
    );
    println!(
        "population: {} rows rejected, {} regions excluded without population",
        table.rejected.len(),
        excluded.len()
    );
    Ok(EXIT_OK)
}

/// Region series under `dir/regions`, or directly in `dir`.
pub fn load_series_dir(dir: &Path) -> Result<Vec<RegionSeries>> {
    let sub = dir.join("regions");
    let dir = if sub.is_dir() { sub } else { dir.to_path_buf() };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .filter(|p| !matches!(p.file_name().and_then(|n| n.to_str()), Some("manifest.json" | "ingest_report.json")))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| RegionSeries::from_json(&fsio::read_to_string(p)?).map_err(|e| Error::file(p, e)))
        .collect()
}

fn train(a: &TrainArgs, config: &Config, m: &mut ManifestBuilder) -> Result<i32> {
    m.input(&a.data)?;
    let mut series = load_series_dir(&a.data)?;
    if a.regions != "all" {
        let wanted: Vec<&str> = a.regions.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if let Some(missing) = wanted.iter().find(|w| !series.iter().any(|s| s.region_id == **w)) {
            return Err(Error::Input(format!("unknown region `{missing}`")));
        }
        series.retain(|s| wanted.contains(&s.region_id.as_str()));
    }
    if series.is_empty() {
        return Err(Error::Input(format!("no region series found in {}", a.data.display())));
    }
    let mut hyper = config.training;
    if a.quadratic {
        hyper.map = MapChoice::Quadratic(if a.full_curvature { CurvatureStructure::Full } else { CurvatureStructure::Diagonal });
    }
    let results = train_many(&series, &hyper);
    let mut rows = Vec::with_capacity(results.len());
    let mut failed = 0;
    for (id, result) in &results {
        rows.push(summary_row(id, result));
        match result {
            Ok(t) => {
                let stem = file_stem(id);
                m.write(&a.out.join(format!("{stem}.json")), t.file.to_json()?.as_bytes())?;
                m.write(&a.out.join(format!("{stem}.filter.csv")), &filter_csv(&t.outcome.trace.filtered_pass3)?)?;
            }
            Err(e) => {
                failed += 1;
                tracing::error!(region = %id, error = %e, "training failed");
                eprintln!("region {id}: {e}");
            }
        }
    }
    m.write(&a.out.join("summary.csv"), &tidy_csv(&rows)?)?;
    println!("{} regions trained, {failed} failed", results.len() - failed);
    Ok(if failed > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

fn forecast(a: &ForecastArgs, config: &Config, seed: u64, m: &mut ManifestBuilder) -> Result<i32> {
    let days = a.days.unwrap_or(config.forecast.days as i64);
    if days <= 0 {
        return Err(Error::Input(format!("forecast horizon must be positive, got {days}")));
    }
    m.input(&a.model)?;
    m.input(&a.npis)?;
    let file = ModelFile::load(&a.model)?;
    let model = file.to_model()?;
    let scenario = Scenario::from_json(&fsio::read_to_string(&a.npis)?).map_err(|e| Error::file(&a.npis, e))?;
    let ctx = ScenarioContext {
        days: days as usize,
        bounds: NpiBounds::default(),
        last_npi: model.last_npi,
        seed,
        start_date: Some(file.origin()),
    };
    let npis = scenario.materialize(&ctx)?;
    let points = model.forecast(&npis)?;
    let rows: Vec<_> = forecast_rows(&points, file.origin(), model.params.population).into_iter().skip(1).collect();
    m.write(&a.out, &tidy_csv(&rows)?)?;
    if let Some(t) = &a.truth {
        m.input(t)?;
        let truth = read_truth_csv(&fsio::read_to_string(t)?).map_err(|e| Error::file(t, e))?;
        let errors = forecast_errors(&rows, &truth);
        let path = a.errors_out.clone().unwrap_or_else(|| sibling(&a.out, "errors.csv"));
        m.write(&path, &tidy_csv(&errors)?)?;
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct PointRecord<'a> {
    #[serde(flatten)]
    point: &'a SweepPoint,
    schedule_file: Option<String>,
}

#[derive(Serialize)]
struct DominanceReport {
    points: usize,
    optimal: usize,
    converged_optimal: usize,
    comparisons: usize,
    non_dominated: usize,
    dominated_optimal: usize,
    dominated_comparisons: usize,
    failed: usize,
    chosen: Option<usize>,
}

fn prescribe(a: &PrescribeArgs, config: &Config, seed: u64, m: &mut ManifestBuilder) -> Result<i32> {
    m.input(&a.model)?;
    let file = ModelFile::load(&a.model)?;
    let model = file.to_model()?;
    let weights = match &a.weights {
        Some(p) => {
            m.input(p)?;
            let value: serde_json::Value = serde_json::from_str(&fsio::read_to_string(p)?).map_err(|e| Error::file(p, e))?;
            parse_weights(&value).map_err(|e| Error::file(p, e))?
        }
        None => vec![[1.0; 12]],
    };
    let sweep = &config.sweep;
    let explicit = a.eps.as_deref().or(if a.eps_grid.is_some() { None } else { sweep.eps.as_deref() });
    let eps = eps_values(a.eps_grid.unwrap_or(sweep.eps_grid), explicit)?;
    let horizon = a.horizon.unwrap_or(sweep.horizon_days);
    let random = a.random_scenarios.unwrap_or(sweep.random_scenarios);
    let fixed = (a.fixed || sweep.fixed).then_some(model.last_npi);
    let template = model.control_problem(horizon, weights, 0.0, NpiBounds::default())?;
    let plan = sweep_plan(eps, random, fixed, seed);
    let points = parallel_sweep(&template, &noiseless_config(sweep.solver_r), &config.fhoc, &plan, None);

    let mut records = Vec::with_capacity(points.len());
    for (k, p) in points.iter().enumerate() {
        let schedule_file = match &p.schedule {
            Some(s) => {
                let name = format!("schedules/{k:03}-{}.csv", file_stem(&p.label));
                m.write(&a.out.join(&name), &schedule_csv(s)?)?;
                Some(name)
            }
            None => None,
        };
        records.push(PointRecord { point: p, schedule_file });
    }
    let stripped: Vec<SweepPoint> = points.iter().map(|p| SweepPoint { schedule: None, ..p.clone() }).collect();
    m.write(&a.out.join("sweep.csv"), &sweep_csv(&stripped)?)?;
    m.write(&a.out.join("sweep.json"), &json_bytes(&records)?)?;
    m.write(
        &a.out.join("nondominated.csv"),
        &sweep_csv(stripped.iter().filter(|p| p.is_valid() && !p.dominated))?,
    )?;
    let chosen = closest_to_origin(&points);
    m.write(&a.out.join("chosen.json"), &json_bytes(&chosen.map(|k| &records[k]))?)?;

    let optimal: Vec<&SweepPoint> = points.iter().filter(|p| p.kind == PointKind::Optimal).collect();
    let report = DominanceReport {
        points: points.len(),
        optimal: optimal.len(),
        converged_optimal: optimal.iter().filter(|p| p.converged).count(),
        comparisons: points.len() - optimal.len(),
        non_dominated: points.iter().filter(|p| p.is_valid() && !p.dominated).count(),
        dominated_optimal: optimal.iter().filter(|p| p.dominated).count(),
        dominated_comparisons: points.iter().filter(|p| p.kind != PointKind::Optimal && p.dominated).count(),
        failed: points.iter().filter(|p| !p.is_valid()).count(),
        chosen,
    };
    m.write(&a.out.join("report.json"), &json_bytes(&report)?)?;
    println!(
        "{} points ({} optimal, {} comparisons), {} non-dominated, {} failed",
        report.points, report.optimal, report.comparisons, report.non_dominated, report.failed
    );
    for p in points.iter().filter(|p| p.error.is_some()) {
        eprintln!("{}: {}", p.label, p.error.as_deref().unwrap_or_default());
    }
    Ok(if report.failed > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

fn synth(a: &SynthArgs, seed: u64, m: &mut ManifestBuilder) -> Result<i32> {
    if a.holdout >= a.days {
        return Err(Error::Input(format!("holdout {} leaves no training days out of {}", a.holdout, a.days)));
    }
    let kept = a.days - a.holdout;
    for k in 0..a.count as u64 {
        let spec = SyntheticSpec {
            days: a.days,
            seed: seed + k,
            policy: if a.constant { NpiPolicy::Constant } else { NpiPolicy::Feedback },
            ..SyntheticSpec::default()
        };
        let region = generate(&spec)?;
        let mut series = synthetic_series(&region, a.start_date);
        series.truncate(kept);
        let stem = file_stem(&series.region_id);
        m.write(&a.out.join("regions").join(format!("{stem}.json")), series.to_json()?.as_bytes())?;
        #[derive(Serialize)]
        struct Truth {
            date: NaiveDate,
            new_cases: f64,
            alpha: f64,
        }
        let truth: Vec<Truth> = region
            .new_infections
            .iter()
            .zip(&region.states)
            .enumerate()
            .map(|(d, (n, x))| Truth {
                date: series.date(d),
                new_cases: *n,
                alpha: x.alpha,
            })
            .collect();
        m.write(&a.out.join("truth").join(format!("{stem}.csv")), &tidy_csv(&truth)?)?;
        m.write(&a.out.join("truth").join(format!("{stem}.map.json")), &json_bytes(&region.map)?)?;
        if a.holdout > 0 {
            let held = Scenario {
                kind: ScenarioKind::Explicit,
                seed: None,
                schedule: Some(region.data.npis[kept..].iter().map(|u| u.0).collect()),
                levels: None,
                start_date: Some(series.date(kept)),
            };
            m.write(&a.out.join("truth").join(format!("{stem}.npis.json")), &json_bytes(&held)?)?;
        }
    }
    println!("{} synthetic regions written", a.count);
    Ok(EXIT_OK)
}

fn serve(a: &ServeArgs, mut config: Config) -> Result<i32> {
    if let Some(d) = &a.models {
        config.service.models = d.clone();
    }
    if let Some(b) = &a.bind {
        config.service.bind = b.clone();
    }
    if let Some(o) = &a.cors_origin {
        config.service.cors_origin = o.clone();
    }
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io("<runtime>", e))?;
    runtime.block_on(service::serve(config))?;
    Ok(EXIT_OK)
}
