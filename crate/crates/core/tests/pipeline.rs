use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use evdemand::chain::{make_supervised_rows, Target, TripChain};
use evdemand::config::{Overrides, RunConfig};
use evdemand::ingest::DayType;
use evdemand::models::suite::{default_grid, train_suite, ModelTemplate, SuiteKey, SuiteOptions};
use evdemand::models::{ModelKind, ModelSpec};
use evdemand::pipeline::{self, simulate_chains, RunDir, Source, TripPredictor};
use evdemand::{seed, synth};

const VEHICLES: &str = "house_id,vehicle_id,fuel_type\n30000041,1,electric\n30000041,2,gasoline\n";

// Person 1 of the four-trip survey sample drives vehicle 1 (an EV); person
// 2 drives the gasoline vehicle and is filtered out.
const TRIPS: &str =
    "house_id,person_id,vehicle_id,t_start,t_end,duration_min,distance_mi,travel_day\n\
30000041,1,1,8.0,9.5,90,68.4,3\n\
30000041,1,1,18.0,20.0,120,73.72,3\n\
30000041,2,2,7.0,7.25,15,0.68,3\n\
30000041,2,2,8.0,8.25,15,0.68,3\n";

fn write_inputs(dir: &Path, trips: &str, vehicles: &str, extra: &str) -> PathBuf {
    std::fs::write(dir.join("trips.csv"), trips).unwrap();
    std::fs::write(dir.join("vehicles.csv"), vehicles).unwrap();
    let config = format!(
        "version = 1\nseed = 11\noutput_dir = \"run\"\n\n[data]\ntrips = \"trips.csv\"\nvehicles = \"vehicles.csv\"\n{extra}"
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, config).unwrap();
    path
}

fn load(path: &Path) -> RunConfig {
    RunConfig::load(path, &Overrides::default()).unwrap()
}

#[test]
fn survey_sample_gives_two_event_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load(&write_inputs(dir.path(), TRIPS, VEHICLES, ""));
    let out = pipeline::run_ingest(&cfg).unwrap();
    assert_eq!(out.report.raw_trip_count, 4);
    assert_eq!(out.report.ev_count, 1);
    assert_eq!(out.report.filtered_trip_count, 2);
    assert_eq!((out.report.wd_count, out.report.wed_count), (2, 0));

    let fleet = pipeline::run_simulate(&cfg, Source::Actual).unwrap();
    let events: Vec<_> = fleet.events().collect();
    assert_eq!(events.len(), 2);
    let rate = 6.6 * 0.9;
    let expect = [(9.5, 0.15 * 68.4), (20.0, 0.15 * 73.72)];
    for (e, (t, kwh)) in events.iter().zip(expect) {
        assert!((e.t_begin - t).abs() < 1e-12);
        assert!((e.energy_kwh - kwh).abs() < 1e-9);
        assert!((e.duration_h - kwh / rate).abs() < 1e-9);
    }

    // the profile holds the two events at 5.94 kW: 9.5 h to 11.227 h and
    // 20.0 h to 21.862 h
    let run = RunDir::new(&cfg.output_dir);
    let text = std::fs::read_to_string(run.profile(Source::Actual, DayType::Weekday)).unwrap();
    let bins: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(bins.len(), 96);
    assert!((bins[38] - rate).abs() < 1e-9); // 9.50..9.75
    assert_eq!(bins[37], 0.0);
    assert!((bins[44] - rate * (0.15 * 68.4 / rate - 1.5) / 0.25).abs() < 1e-9); // 11.00..11.25, partial
    assert_eq!(bins[45], 0.0);
    assert!((bins[80] - rate).abs() < 1e-9); // 20.00..20.25
    let energy: f64 = bins.iter().sum::<f64>() * 0.25;
    assert!((energy - 0.15 * (68.4 + 73.72)).abs() < 1e-9);
    let wed = std::fs::read_to_string(run.profile(Source::Actual, DayType::Weekend)).unwrap();
    assert!(wed.lines().skip(1).all(|l| l.ends_with(",0")));
}

#[test]
fn empty_fleet_gives_zero_profiles() {
    let dir = tempfile::tempdir().unwrap();
    let vehicles = "house_id,vehicle_id,fuel_type\n30000041,1,gasoline\n30000041,2,gasoline\n";
    let cfg = load(&write_inputs(dir.path(), TRIPS, vehicles, ""));
    let out = pipeline::run_ingest(&cfg).unwrap();
    assert_eq!(out.report.filtered_trip_count, 0);
    let fleet = pipeline::run_simulate(&cfg, Source::Actual).unwrap();
    assert_eq!(fleet.events().count(), 0);
    for day in DayType::ALL {
        assert!(fleet.profiles[&day].bins.iter().all(|b| *b == 0.0));
        assert!(RunDir::new(&cfg.output_dir)
            .profile(Source::Actual, day)
            .is_file());
    }
}

fn memorizing_suite(chains: &[TripChain]) -> BTreeMap<DayType, TripPredictor> {
    let mut rows = BTreeMap::new();
    for day in DayType::ALL {
        let of_day: Vec<TripChain> = chains
            .iter()
            .filter(|c| c.day_type() == Some(day))
            .cloned()
            .collect();
        rows.insert(day, make_supervised_rows(&of_day));
    }
    let templates = vec![ModelTemplate::new(
        "memo",
        ModelSpec {
            k_neighbors: 1,
            ..ModelSpec::new(ModelKind::Knn)
        },
    )];
    let grid: Vec<_> = default_grid()
        .into_iter()
        .map(|mut c| {
            c.knn_neighbors = 1;
            c
        })
        .collect();
    let mut suite = train_suite(
        &rows,
        &templates,
        &grid,
        &SuiteOptions {
            with_duration: true,
            seed: 1,
        },
    )
    .unwrap();
    DayType::ALL
        .into_iter()
        .map(|day| {
            let mut take = |target| {
                suite
                    .remove(&SuiteKey {
                        target,
                        day_type: day,
                        model: "memo".into(),
                    })
                    .unwrap()
            };
            let (s, e, d) = (
                take(Target::Start),
                take(Target::End),
                take(Target::Distance),
            );
            (day, TripPredictor::new(s, e, d))
        })
        .collect()
}

#[test]
fn memorizing_model_reproduces_actual_profile() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load(&write_inputs(dir.path(), TRIPS, VEHICLES, ""));
    let mut rng = seed::rng(77);
    let chains: Vec<TripChain> = (0..150)
        .map(|i| synth::random_chain(&mut rng, i, 6, 150.0))
        .filter(|c| c.len() >= 2)
        .collect();
    let predictors = memorizing_suite(&chains);

    let actual = simulate_chains(&chains, None, &cfg).unwrap();
    let predicted = simulate_chains(&chains, Some(&predictors), &cfg).unwrap();
    for day in DayType::ALL {
        let (a, p) = (&actual.profiles[&day], &predicted.profiles[&day]);
        assert!(a.energy_kwh() > 0.0);
        for (x, y) in a.bins.iter().zip(&p.bins) {
            assert!((x - y).abs() < 1e-9, "{day}: {x} vs {y}");
        }
    }
    assert_eq!(actual.events().count(), predicted.events().count());
}

fn desk_config(out: &Path) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/desk/run.toml");
    let text = std::fs::read_to_string(&path).unwrap();
    // a light model list keeps this test quick
    let text = text.split("[[models]]").next().unwrap().to_string()
        + "[[models]]\nname = \"knn\"\nkind = \"knn\"\n\n[[models]]\nname = \"rf\"\nkind = \"rforest\"\nn_trees = 10\n\n[simulation]\nmodel = \"rf\"\n";
    let overrides = Overrides {
        output_dir: Some(out.to_path_buf()),
        ..Overrides::default()
    };
    RunConfig::parse(&text, path.parent().unwrap(), &overrides).unwrap()
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

fn run_all(cfg: &RunConfig) {
    pipeline::run_ingest(cfg).unwrap();
    pipeline::run_train(cfg, true).unwrap();
    pipeline::run_simulate(cfg, Source::Actual).unwrap();
    pipeline::run_simulate(cfg, Source::Predicted).unwrap();
    pipeline::run_report(cfg).unwrap();
}

#[test]
fn deleting_intermediates_and_rerunning_reproduces_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config(dir.path());
    run_all(&cfg);
    let first = snapshot(dir.path());
    assert!(first.contains_key(Path::new("models/no_duration/start_wd_rf.json")));
    assert!(first.contains_key(Path::new("evaluation.csv")));

    for sub in ["chains", "rows", "split", "models"] {
        std::fs::remove_dir_all(dir.path().join(sub)).unwrap();
    }
    for file in [
        "evaluation.csv",
        "events_actual.csv",
        "report.txt",
        "manifest.txt",
    ] {
        std::fs::remove_file(dir.path().join(file)).unwrap();
    }
    run_all(&cfg);
    let second = snapshot(dir.path());
    assert_eq!(
        first.keys().collect::<Vec<_>>(),
        second.keys().collect::<Vec<_>>()
    );
    for (k, v) in &first {
        assert!(&second[k] == v, "{} changed", k.display());
    }
}

#[test]
fn evaluation_table_layout_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config(dir.path());
    pipeline::run_ingest(&cfg).unwrap();
    let trained = pipeline::run_train(&cfg, true).unwrap();
    assert_eq!(trained.rows.len(), 3 * 2 * 2);
    assert!(trained
        .rows
        .iter()
        .all(|r| r.rmse_no_duration.is_some() && r.rmse.is_finite()));
    let csv = std::fs::read_to_string(RunDir::new(&cfg.output_dir).evaluation()).unwrap();
    assert!(csv.starts_with(
        "target,day_type,model,rmse,ci_low,ci_high,n,input_ci_low,input_ci_high,rmse_no_duration\n"
    ));
    assert_eq!(csv.lines().count(), 13);

    let reloaded = pipeline::run_evaluate(&cfg).unwrap();
    assert_eq!(reloaded, trained);

    // a later run without ablation drops the extra models and column
    let plain = pipeline::run_train(&cfg, false).unwrap();
    assert!(!plain.has_ablation());
    assert!(!RunDir::new(&cfg.output_dir).model_dir(false).exists());
    for (a, b) in plain.rows.iter().zip(&trained.rows) {
        assert_eq!(a.rmse, b.rmse);
    }
}

#[test]
fn manifest_lists_checksums_of_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load(&write_inputs(dir.path(), TRIPS, VEHICLES, ""));
    pipeline::run_ingest(&cfg).unwrap();
    let run = RunDir::new(&cfg.output_dir);
    let manifest = std::fs::read_to_string(run.manifest()).unwrap();
    let mut lines = manifest.lines();
    assert_eq!(
        lines.next().unwrap(),
        format!("config_sha256 = {}", cfg.hash())
    );
    let listed: Vec<&str> = lines.map(|l| l.split_once("  ").unwrap().1).collect();
    assert!(listed.contains(&"ingest_report.txt"));
    assert!(listed.contains(&"chains/vehicle_wd.csv"));
    assert!(listed.contains(&"rows/rows_wed.csv"));
    assert!(!listed.contains(&"manifest.txt"));
    let mut sorted = listed.clone();
    sorted.sort();
    assert_eq!(listed, sorted);
}

#[test]
fn desk_fixture_is_the_seeded_synthetic_survey() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/desk");
    let files = synth::survey(500, 2017);
    assert_eq!(
        std::fs::read_to_string(dir.join("trips.csv")).unwrap(),
        files.trips_csv
    );
    assert_eq!(
        std::fs::read_to_string(dir.join("vehicles.csv")).unwrap(),
        files.vehicles_csv
    );
    assert_eq!(
        std::fs::read_to_string(dir.join("schema.toml")).unwrap(),
        synth::SURVEY_SCHEMA
    );
}
