use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pandemic_fhoc::formats::{read_schedule_csv, ModelFile};
use pandemic_fhoc::manifest::RunManifest;
use pandemic_fhoc_core::npi::NpiBounds;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pandemic-fhoc"));
    c.env_remove("PANDEMIC_FHOC_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(out: &Output) {
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic series under `root/data` and their models under `root/models`.
fn trained(root: &Path, extra: &[&str]) -> PathBuf {
    let data = root.join("data");
    let models = root.join("models");
    let mut synth = vec!["synth", "--count", "3", "--out", path(&data)];
    synth.extend(extra);
    ok(&run(&synth));
    ok(&run(&["train", "--data", path(&data), "--out", path(&models)]));
    models
}

fn manifest(path: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    csv::Reader::from_path(path).unwrap().deserialize().map(Result::unwrap).collect()
}

#[test]
fn train_writes_a_model_per_region() {
    let dir = tempfile::tempdir().unwrap();
    let models = trained(dir.path(), &[]);
    for k in 0..3 {
        let file = ModelFile::load(&models.join(format!("synthetic-{k}.json"))).unwrap();
        let back = ModelFile::from_json(&file.to_json().unwrap()).unwrap();
        assert_eq!(back, file);
        file.to_model().unwrap();
        assert!(models.join(format!("synthetic-{k}.filter.csv")).is_file());
    }
    let summary = csv_rows(&models.join("summary.csv"));
    assert_eq!(summary.len(), 3);
    assert!(summary.iter().all(|r| r["status"] == "ok" && r["degenerate"] == "false"));
}

#[test]
fn constant_npis_are_flagged_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let models = trained(dir.path(), &["--constant"]);
    let summary = csv_rows(&models.join("summary.csv"));
    assert_eq!(summary.len(), 3);
    assert!(summary.iter().all(|r| r["degenerate"] == "true"), "{summary:?}");
}

#[test]
fn repeated_runs_have_identical_outputs() {
    let hashes = |root: &Path| {
        let models = trained(root, &["--seed", "4"]);
        let m = manifest(&models.join("manifest.json"));
        m.outputs
            .into_iter()
            .map(|(p, h)| (Path::new(&p).file_name().unwrap().to_string_lossy().into_owned(), h))
            .collect::<BTreeMap<_, _>>()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ha, hb) = (hashes(a.path()), hashes(b.path()));
    assert_eq!(ha.len(), 7);
    assert_eq!(ha, hb);
}

#[test]
fn every_run_writes_one_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let models = trained(dir.path(), &[]);
    let m = manifest(&models.join("manifest.json"));
    assert_eq!(m.command, "train");
    assert_eq!(m.exit_code, 0);
    assert_eq!(m.inputs.len(), 1);
    assert!(m.outputs.keys().all(|p| !p.ends_with("manifest.json")));
    assert_eq!(manifest(&dir.path().join("data/manifest.json")).command, "synth");

    let out = dir.path().join("fc/out.csv");
    let npis = dir.path().join("max.json");
    fs::write(&npis, r#"{"kind":"max"}"#).unwrap();
    ok(&run(&["forecast", "--model", path(&models.join("synthetic-0.json")), "--npis", path(&npis), "--days", "5", "--out", path(&out)]));
    let entries: Vec<_> = fs::read_dir(dir.path().join("fc")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(entries.len(), 2, "{entries:?}");
    assert_eq!(manifest(&dir.path().join("fc/out.manifest.json")).command, "forecast");
}

#[test]
fn forecast_rows_and_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let models = trained(dir.path(), &[]);
    let model = models.join("synthetic-1.json");
    let npis = dir.path().join("max.json");
    fs::write(&npis, r#"{"kind":"max"}"#).unwrap();
    let out = dir.path().join("one.csv");
    ok(&run(&["forecast", "--model", path(&model), "--npis", path(&npis), "--days", "1", "--out", path(&out)]));
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["day"], "1");
    let (lo, mean, hi): (f64, f64, f64) = (rows[0]["lo"].parse().unwrap(), rows[0]["mean"].parse().unwrap(), rows[0]["hi"].parse().unwrap());
    assert!(lo < mean && mean < hi);

    let missing = dir.path().join("nope.json");
    let code = |days: &str, npis: &Path| {
        run(&["forecast", "--model", path(&model), "--npis", path(npis), &format!("--days={days}"), "--out", path(&out)])
            .status
            .code()
    };
    assert_eq!(code("5", &missing), Some(2));
    assert_eq!(code("0", &npis), Some(2));
    assert_eq!(code("-3", &npis), Some(2));
}

#[test]
fn holdout_errors_grow_with_horizon_on_average() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let models = dir.path().join("models");
    ok(&run(&["synth", "--count", "8", "--days", "400", "--holdout", "30", "--out", path(&data)]));
    ok(&run(&["train", "--data", path(&data), "--out", path(&models)]));
    let (mut short, mut long) = (0.0, 0.0);
    for k in 0..8 {
        let stem = format!("synthetic-{k}");
        let out = dir.path().join(format!("{stem}.csv"));
        let truth = data.join("truth").join(format!("{stem}.csv"));
        let npis = data.join("truth").join(format!("{stem}.npis.json"));
        ok(&run(&[
            "forecast", "--model", path(&models.join(format!("{stem}.json"))), "--npis", path(&npis), "--days", "30",
            "--out", path(&out), "--truth", path(&truth),
        ]));
        let errors = csv_rows(&dir.path().join(format!("{stem}.errors.csv")));
        assert_eq!(errors.len(), 30);
        let mean = |range: std::ops::RangeInclusive<usize>| {
            let v: Vec<f64> = errors
                .iter()
                .filter(|r| range.contains(&r["day"].parse::<usize>().unwrap()))
                .map(|r| r["error_pct"].parse::<f64>().unwrap())
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        short += mean(1..=5);
        long += mean(21..=30);
    }
    assert!(long > short, "mean error days 1-5 {short:.2}, days 21-30 {long:.2}");
}

fn prescribe(dir: &Path, model: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["prescribe", "--model", path(model), "--out", path(&out)];
    args.extend(extra);
    ok(&run(&args));
    out
}

fn single_schedule(out: &Path) -> pandemic_fhoc_core::npi::NpiSchedule {
    let dir = out.join("schedules");
    let files: Vec<_> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(files.len(), 1);
    read_schedule_csv(&fs::read_to_string(&files[0]).unwrap()).unwrap()
}

#[test]
fn prescribe_corners() {
    let dir = tempfile::tempdir().unwrap();
    let models = trained(dir.path(), &[]);
    let model_path = models.join("synthetic-2.json");
    let model = ModelFile::load(&model_path).unwrap().to_model().unwrap();
    let bounds = NpiBounds::default();

    let out = prescribe(dir.path(), &model_path, "eps0", &["--eps", "0", "--random-scenarios", "0"]);
    let s = single_schedule(&out);
    let last = s.rows.len() - 1;
    for (k, u) in s.rows.iter().enumerate() {
        for j in 0..u.0.len() {
            let expected = if k < last && model.map.a[j] > 0.0 { bounds.upper[j] } else { bounds.lower[j] };
            assert_eq!(u.0[j], expected, "step {k} npi {j}");
        }
    }

    let out = prescribe(dir.path(), &model_path, "eps1", &["--eps", "1", "--random-scenarios", "0"]);
    assert!(single_schedule(&out).rows.iter().all(|u| u.0 == bounds.lower));
    let rows = csv_rows(&out.join("sweep.csv"));
    assert_eq!(rows[0]["j1"], "0");
}

#[test]
fn prescribe_grid_and_random_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let models = trained(dir.path(), &[]);
    let out = prescribe(
        dir.path(),
        &models.join("synthetic-0.json"),
        "sweep",
        &["--eps-grid", "25", "--random-scenarios", "50"],
    );
    let rows = csv_rows(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 75);
    assert_eq!(rows.iter().filter(|r| r["kind"] == "optimal").count(), 25);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["points"], 75);
    assert_eq!(report["comparisons"], 50);
    let non_dominated = csv_rows(&out.join("nondominated.csv"));
    assert_eq!(report["non_dominated"], non_dominated.len());
    assert_eq!(fs::read_dir(out.join("schedules")).unwrap().count(), 75);
    assert!(out.join("chosen.json").is_file());
}

#[test]
fn seed_precedence_flag_env_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    fs::write(&config, "seed = 11\n").unwrap();
    let seed_of = |args: &[&str], env: Option<&str>| {
        let out = dir.path().join("s");
        let mut c = bin();
        c.args(["synth", "--count", "1", "--days", "150", "--out", path(&out)]).args(args);
        if let Some(v) = env {
            c.env("PANDEMIC_FHOC_SEED", v);
        }
        ok(&c.output().unwrap());
        manifest(&out.join("manifest.json")).seed
    };
    assert_eq!(seed_of(&[], None), 0);
    assert_eq!(seed_of(&["--config", path(&config)], None), 11);
    assert_eq!(seed_of(&["--config", path(&config)], Some("21")), 21);
    assert_eq!(seed_of(&["--config", path(&config), "--seed", "31"], Some("21")), 31);
}

#[test]
fn config_flags_override_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    fs::write(&config, "jobs = 3\n[sweep]\neps_grid = 4\nrandom_scenarios = 2\n").unwrap();
    let out = run(&["--config", path(&config), "--jobs", "1", "config"]);
    ok(&out);
    let effective = pandemic_fhoc::config::Config::from_toml(&String::from_utf8_lossy(&out.stdout)).unwrap();
    assert_eq!(effective.jobs, 1);
    assert_eq!(effective.sweep.eps_grid, 4);

    let models = trained(dir.path(), &[]);
    let sweep = dir.path().join("sweep");
    ok(&run(&["--config", path(&config), "prescribe", "--model", path(&models.join("synthetic-0.json")), "--out", path(&sweep)]));
    assert_eq!(csv_rows(&sweep.join("sweep.csv")).len(), 6);
    ok(&run(&[
        "--config", path(&config), "prescribe", "--model", path(&models.join("synthetic-0.json")), "--out", path(&sweep),
        "--random-scenarios", "0",
    ]));
    assert_eq!(csv_rows(&sweep.join("sweep.csv")).len(), 4);

    fs::write(&config, "[sweep]\nepsgrid = 4\n").unwrap();
    assert_eq!(run(&["--config", path(&config), "config"]).status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["train"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
