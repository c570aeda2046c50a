//! Pipeline stages. Each stage reads and writes plain files under the run
//! directory, so any stage can be rerun on its own once its inputs exist.
//! Every stage finishes by rewriting `manifest.txt`.
//!
//! Run directory layout:
//!
//! ```text
//! ingest_report.txt
//! chain_anomalies.txt
//! chains/{person,vehicle}_{wd,wed}.csv
//! rows/rows_{wd,wed}.csv
//! split/{train,test}_{wd,wed}.csv
//! models/<target>_<day>_<model>.json
//! models/no_duration/<target>_<day>_<model>.json   (ablation only)
//! evaluation.csv
//! profile_<source>_{wd,wed}.csv, events_<source>.csv, summary_<source>.txt
//! report.txt
//! manifest.txt
//! ```

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::chain::{self, Keying, SupervisedRow, Target, TripChain};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::ingest::{self, DayType, IngestReport, Schema, TripRecord};
use crate::models::suite::{train_suite, SuiteKey, SuiteOptions, TrainedModel};
use crate::preprocess::{ci95, rmse, split_train_test};
use crate::seed;
use crate::sim::{self, FleetResult, Leg};

pub const MANIFEST: &str = "manifest.txt";

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn ingest_report(&self) -> PathBuf {
        self.root.join("ingest_report.txt")
    }

    pub fn anomalies(&self) -> PathBuf {
        self.root.join("chain_anomalies.txt")
    }

    pub fn chains(&self, keying: Keying, day: DayType) -> PathBuf {
        let k = match keying {
            Keying::Person => "person",
            Keying::Vehicle => "vehicle",
        };
        self.root
            .join("chains")
            .join(format!("{k}_{}.csv", day.slug()))
    }

    pub fn rows(&self, day: DayType) -> PathBuf {
        self.root
            .join("rows")
            .join(format!("rows_{}.csv", day.slug()))
    }

    pub fn train_rows(&self, day: DayType) -> PathBuf {
        self.root
            .join("split")
            .join(format!("train_{}.csv", day.slug()))
    }

    pub fn test_rows(&self, day: DayType) -> PathBuf {
        self.root
            .join("split")
            .join(format!("test_{}.csv", day.slug()))
    }

    pub fn model_dir(&self, with_duration: bool) -> PathBuf {
        let models = self.root.join("models");
        if with_duration {
            models
        } else {
            models.join("no_duration")
        }
    }

    pub fn model(&self, key: &SuiteKey, with_duration: bool) -> PathBuf {
        self.model_dir(with_duration)
            .join(format!("{}.json", key.file_stem()))
    }

    pub fn evaluation(&self) -> PathBuf {
        self.root.join("evaluation.csv")
    }

    pub fn profile(&self, source: Source, day: DayType) -> PathBuf {
        self.root
            .join(format!("profile_{source}_{}.csv", day.slug()))
    }

    pub fn events(&self, source: Source) -> PathBuf {
        self.root.join(format!("events_{source}.csv"))
    }

    pub fn summary(&self, source: Source) -> PathBuf {
        self.root.join(format!("summary_{source}.txt"))
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join(MANIFEST)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::InvalidInput(msg) => Error::InvalidInput(format!("{}: {msg}", path.display())),
        other => other,
    }
}

fn save_rows(path: &Path, rows: &[SupervisedRow]) -> Result<()> {
    let mut w = create(path)?;
    chain::write_rows(&mut w, rows)?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn load_rows(path: &Path) -> Result<Vec<SupervisedRow>> {
    chain::read_rows(open(path)?).map_err(|e| with_path(path, e))
}

fn save_chains(path: &Path, chains: &[TripChain]) -> Result<()> {
    let mut w = create(path)?;
    chain::write_chains(&mut w, chains)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_chains(path: &Path) -> Result<Vec<TripChain>> {
    chain::read_chains(open(path)?).map_err(|e| with_path(path, e))
}

/// Rewrite the manifest: the config hash followed by the SHA-256 of every
/// other file in the run directory, sorted by relative path.
pub fn write_manifest(cfg: &RunConfig) -> Result<()> {
    let run = RunDir::new(&cfg.output_dir);
    let mut files = Vec::new();
    collect_files(run.root(), run.root(), &mut files)?;
    files.sort();
    let mut text = format!("config_sha256 = {}\n", cfg.hash());
    for rel in files {
        if rel == MANIFEST {
            continue;
        }
        let path = run.root().join(&rel);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        writeln!(text, "{}  {rel}", hex::encode(Sha256::digest(&bytes))).unwrap();
    }
    write_text(&run.manifest(), &text)
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("inside root");
            let parts: Vec<_> = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect();
            out.push(parts.join("/"));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub report: IngestReport,
    pub person_chains: usize,
    pub vehicle_chains: usize,
    pub anomalies: usize,
    pub rows: BTreeMap<DayType, usize>,
}

/// Parse, filter and chain the survey files. Supervised rows come from
/// person-keyed chains; vehicle-keyed chains feed the simulation.
pub fn run_ingest(cfg: &RunConfig) -> Result<IngestOutcome> {
    let run = RunDir::new(&cfg.output_dir);
    let schema = match &cfg.data.schema {
        Some(path) => Schema::load(path)?,
        None => Schema::default(),
    };
    let data = ingest::ingest(
        &cfg.data.trips,
        &cfg.data.vehicles,
        &schema,
        &cfg.ingest_options(),
    )?;
    write_text(&run.ingest_report(), &data.report.to_kv_text())?;

    let mut outcome = IngestOutcome {
        report: data.report.clone(),
        person_chains: 0,
        vehicle_chains: 0,
        anomalies: 0,
        rows: BTreeMap::new(),
    };
    let mut anomaly_text = String::new();
    for (day, trips) in [
        (DayType::Weekday, &data.weekday),
        (DayType::Weekend, &data.weekend),
    ] {
        for keying in [Keying::Person, Keying::Vehicle] {
            let set = chain::build_chains(trips, keying);
            for a in &set.anomalies {
                writeln!(
                    anomaly_text,
                    "{day} {keying:?} {} position {}: {}",
                    a.key, a.position, a.reason
                )
                .unwrap();
            }
            outcome.anomalies += set.anomalies.len();
            save_chains(&run.chains(keying, day), &set.chains)?;
            match keying {
                Keying::Person => {
                    outcome.person_chains += set.chains.len();
                    let rows = chain::make_supervised_rows(&set.chains);
                    save_rows(&run.rows(day), &rows)?;
                    outcome.rows.insert(day, rows.len());
                }
                Keying::Vehicle => outcome.vehicle_chains += set.chains.len(),
            }
        }
    }
    write_text(&run.anomalies(), &anomaly_text)?;
    write_manifest(cfg)?;
    Ok(outcome)
}

// ----------------------------------------------------------------- train

/// One line of the evaluation table.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub target: Target,
    pub day_type: DayType,
    pub model: String,
    pub rmse: f64,
    /// 95% interval of the mean prediction.
    pub ci: Option<(f64, f64)>,
    pub n: usize,
    /// 95% interval of the mean observed target.
    pub input_ci: Option<(f64, f64)>,
    /// RMSE of the same model trained without the duration feature.
    pub rmse_no_duration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
}

impl EvalTable {
    pub fn get(&self, target: Target, day_type: DayType, model: &str) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.target == target && r.day_type == day_type && r.model == model)
    }

    pub fn has_ablation(&self) -> bool {
        self.rows.iter().any(|r| r.rmse_no_duration.is_some())
    }

    pub fn to_csv(&self) -> String {
        let ablation = self.has_ablation();
        let mut out =
            String::from("target,day_type,model,rmse,ci_low,ci_high,n,input_ci_low,input_ci_high");
        if ablation {
            out.push_str(",rmse_no_duration");
        }
        out.push('\n');
        let num = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
        for r in &self.rows {
            write!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.target,
                r.day_type,
                r.model,
                num(Some(r.rmse)),
                num(r.ci.map(|c| c.0)),
                num(r.ci.map(|c| c.1)),
                r.n,
                num(r.input_ci.map(|c| c.0)),
                num(r.input_ci.map(|c| c.1)),
            )
            .unwrap();
            if ablation {
                write!(out, ",{}", num(r.rmse_no_duration)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for EvalTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ablation = self.has_ablation();
        write!(
            f,
            "{:<9} {:<4} {:<8} {:>10} {:>23} {:>6}",
            "target", "day", "model", "rmse", "95% ci (prediction)", "n"
        )?;
        if ablation {
            write!(f, " {:>10}", "rmse -dur")?;
        }
        writeln!(f)?;
        let ci = |c: Option<(f64, f64)>| {
            c.map_or_else(|| "-".to_string(), |(lo, hi)| format!("[{lo:.3}, {hi:.3}]"))
        };
        for r in &self.rows {
            write!(
                f,
                "{:<9} {:<4} {:<8} {:>10.4} {:>23} {:>6}",
                r.target,
                r.day_type,
                r.model,
                r.rmse,
                ci(r.ci),
                r.n
            )?;
            if ablation {
                match r.rmse_no_duration {
                    Some(v) => write!(f, " {v:>10.4}")?,
                    None => write!(f, " {:>10}", "-")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn load_day_rows(
    run: &RunDir,
    day: DayType,
    path: impl Fn(&RunDir, DayType) -> PathBuf,
) -> Result<Vec<SupervisedRow>> {
    load_rows(&path(run, day))
}

/// Split the supervised rows, train every configured model and evaluate
/// on the held-out rows. With `ablate_duration` a second suite without the
/// duration feature is trained under the same seeds.
pub fn run_train(cfg: &RunConfig, ablate_duration: bool) -> Result<EvalTable> {
    let run = RunDir::new(&cfg.output_dir);
    let mut train = BTreeMap::new();
    for (i, day) in DayType::ALL.into_iter().enumerate() {
        let rows = load_day_rows(&run, day, RunDir::rows)?;
        let (tr, te) = if rows.len() >= 2 {
            split_train_test(
                &rows,
                cfg.split.train_fraction,
                seed::derive(cfg.seed, "split", i as u64),
            )?
        } else {
            (Vec::new(), Vec::new())
        };
        save_rows(&run.train_rows(day), &tr)?;
        save_rows(&run.test_rows(day), &te)?;
        train.insert(day, tr);
    }
    if train.values().all(Vec::is_empty) {
        return Err(Error::invalid(
            "no day type has enough supervised rows to train on",
        ));
    }

    let suite_seed = seed::derive(cfg.seed, "train", 0);
    let mut variants = vec![true];
    if ablate_duration {
        variants.push(false);
    }
    for with_duration in variants {
        let dir = run.model_dir(with_duration);
        if dir.exists() {
            for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
                let path = entry.map_err(|e| Error::io(&dir, e))?.path();
                if path.extension().is_some_and(|e| e == "json") {
                    std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
                }
            }
        }
        let options = SuiteOptions {
            with_duration,
            seed: suite_seed,
        };
        let suite = train_suite(&train, &cfg.models, &cfg.grid, &options)?;
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (key, model) in &suite {
            model.save(&run.model(key, with_duration))?;
        }
    }
    if !ablate_duration {
        let dir = run.model_dir(false);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
    }
    run_evaluate(cfg)
}

/// Reload the persisted models and test rows and rewrite the evaluation
/// table. Ablation columns appear when ablation models are present.
pub fn run_evaluate(cfg: &RunConfig) -> Result<EvalTable> {
    let run = RunDir::new(&cfg.output_dir);
    let ablation = run.model_dir(false).is_dir();
    let mut table = EvalTable::default();
    for target in Target::ALL {
        for day in DayType::ALL {
            let test = load_day_rows(&run, day, RunDir::test_rows)?;
            if test.is_empty() {
                continue;
            }
            let actual: Vec<f64> = test.iter().map(|r| r.target(target)).collect();
            for template in &cfg.models {
                let key = SuiteKey {
                    target,
                    day_type: day,
                    model: template.name.clone(),
                };
                let score = |with_duration: bool| -> Result<(f64, Vec<f64>)> {
                    let model = TrainedModel::load(&run.model(&key, with_duration))?;
                    if model.key() != key || model.with_duration != with_duration {
                        return Err(Error::ModelFormat {
                            path: run.model(&key, with_duration),
                            reason: format!(
                                "file holds {} (with_duration = {})",
                                model.key(),
                                model.with_duration
                            ),
                        });
                    }
                    let pred = model.predict_rows(&test)?.to_vec();
                    Ok((rmse(&pred, &actual)?, pred))
                };
                let (err, pred) = score(true)?;
                table.rows.push(EvalRow {
                    target,
                    day_type: day,
                    model: template.name.clone(),
                    rmse: err,
                    ci: ci95(&pred).ok(),
                    n: test.len(),
                    input_ci: ci95(&actual).ok(),
                    rmse_no_duration: if ablation {
                        Some(score(false)?.0)
                    } else {
                        None
                    },
                });
            }
        }
    }
    write_text(&run.evaluation(), &table.to_csv())?;
    write_manifest(cfg)?;
    Ok(table)
}

// -------------------------------------------------------------- simulate

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// Observed trips.
    Actual,
    /// Trips after the first replaced by model predictions.
    Predicted,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Actual => "actual",
            Source::Predicted => "predicted",
        })
    }
}

impl std::str::FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "actual" => Ok(Source::Actual),
            "predicted" => Ok(Source::Predicted),
            other => Err(format!(
                "unknown source `{other}` (expected actual or predicted)"
            )),
        }
    }
}

/// The three next-trip models of one day type.
pub struct TripPredictor {
    start: TrainedModel,
    end: TrainedModel,
    distance: TrainedModel,
}

impl TripPredictor {
    pub fn new(start: TrainedModel, end: TrainedModel, distance: TrainedModel) -> Self {
        Self {
            start,
            end,
            distance,
        }
    }

    fn load(run: &RunDir, day: DayType, model: &str) -> Result<Self> {
        let get = |target| {
            TrainedModel::load(&run.model(
                &SuiteKey {
                    target,
                    day_type: day,
                    model: model.to_string(),
                },
                true,
            ))
        };
        Ok(Self::new(
            get(Target::Start)?,
            get(Target::End)?,
            get(Target::Distance)?,
        ))
    }

    /// Predicted next leg after `trip`; times are clamped to the day and
    /// distance to be non-negative.
    pub fn next_leg(&self, trip: &TripRecord) -> Result<Leg> {
        Ok(Leg {
            t_start: self.start.predict_trip(trip)?.clamp(0.0, 24.0),
            t_end: self.end.predict_trip(trip)?.clamp(0.0, 24.0),
            distance_mi: self.distance.predict_trip(trip)?.max(0.0),
        })
    }
}

/// Legs for one chain: the first trip as observed, every later trip
/// predicted from the observed trip before it.
pub fn predicted_legs(chain: &TripChain, predictor: &TripPredictor) -> Result<Vec<Leg>> {
    let mut legs = Vec::with_capacity(chain.len());
    for (i, trip) in chain.trips.iter().enumerate() {
        if i == 0 {
            legs.push(Leg {
                t_start: trip.t_start,
                t_end: trip.t_end,
                distance_mi: trip.distance_mi,
            });
        } else {
            legs.push(predictor.next_leg(&chain.trips[i - 1])?);
        }
    }
    Ok(legs)
}

/// Simulate vehicle chains from observed or predicted trips.
pub fn simulate_chains(
    chains: &[TripChain],
    predictors: Option<&BTreeMap<DayType, TripPredictor>>,
    cfg: &RunConfig,
) -> Result<FleetResult> {
    let options = cfg.simulation.options();
    options.validate()?;
    let mut days = Vec::with_capacity(chains.len());
    for chain in chains {
        chain.validate()?;
        let day = match predictors {
            None => sim::simulate_vehicle_day(chain, &cfg.ev, &options)?,
            Some(p) => {
                let day_type = chain.day_type().expect("validated chain is non-empty");
                let predictor = p.get(&day_type).ok_or_else(|| {
                    Error::invalid(format!(
                        "no trained {day_type} models for chain {}",
                        chain.key
                    ))
                })?;
                let legs = predicted_legs(chain, predictor)?;
                sim::simulate_legs(&chain.key.to_string(), day_type, &legs, &cfg.ev, &options)?
            }
        };
        days.push(day);
    }
    sim::collect_fleet(days, options.bin_width_h)
}

pub fn summary_text(source: Source, fleet: &FleetResult) -> String {
    let mut out = format!("source = {source}\n");
    for day in DayType::ALL {
        let s = fleet.summary(day);
        let slug = day.slug();
        writeln!(out, "{slug}.vehicles = {}", s.vehicles).unwrap();
        writeln!(out, "{slug}.events = {}", s.events).unwrap();
        writeln!(out, "{slug}.charged_kwh = {:.6}", s.charged_kwh).unwrap();
        writeln!(out, "{slug}.profile_kwh = {:.6}", s.profile_kwh).unwrap();
        writeln!(out, "{slug}.peak_kw = {:.6}", s.peak_kw).unwrap();
        writeln!(out, "{slug}.clamp_events = {}", s.clamp_events).unwrap();
    }
    out
}

/// Simulate the vehicle chains written by ingest and write the demand
/// profiles, the event ledger and a summary.
pub fn run_simulate(cfg: &RunConfig, source: Source) -> Result<FleetResult> {
    let run = RunDir::new(&cfg.output_dir);
    let mut chains = Vec::new();
    for day in DayType::ALL {
        chains.extend(load_chains(&run.chains(Keying::Vehicle, day))?);
    }
    let predictors = match source {
        Source::Actual => None,
        Source::Predicted => {
            let mut map = BTreeMap::new();
            for day in DayType::ALL {
                if chains.iter().any(|c| c.day_type() == Some(day)) {
                    map.insert(day, TripPredictor::load(&run, day, &cfg.simulation.model)?);
                }
            }
            Some(map)
        }
    };
    let fleet = simulate_chains(&chains, predictors.as_ref(), cfg)?;
    for day in DayType::ALL {
        let path = run.profile(source, day);
        let mut w = create(&path)?;
        fleet.profiles[&day]
            .write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&path, e))?;
    }
    let path = run.events(source);
    let mut w = create(&path)?;
    fleet
        .write_events_csv(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&path, e))?;
    write_text(&run.summary(source), &summary_text(source, &fleet))?;
    write_manifest(cfg)?;
    Ok(fleet)
}

// ---------------------------------------------------------------- report

/// Collect whatever stage outputs exist into `report.txt`.
pub fn run_report(cfg: &RunConfig) -> Result<String> {
    let run = RunDir::new(&cfg.output_dir);
    let mut out = format!("config sha256: {}\n", cfg.hash());
    let ingest_path = run.ingest_report();
    if ingest_path.is_file() {
        let text = std::fs::read_to_string(&ingest_path).map_err(|e| Error::io(&ingest_path, e))?;
        let r = IngestReport::from_kv_text(&text).map_err(|e| with_path(&ingest_path, e))?;
        writeln!(out, "\n== ingest").unwrap();
        writeln!(out, "raw trips        {}", r.raw_trip_count).unwrap();
        writeln!(out, "EVs              {}", r.ev_count).unwrap();
        writeln!(out, "kept EV trips    {}", r.filtered_trip_count).unwrap();
        writeln!(out, "weekday trips    {}", r.wd_count).unwrap();
        writeln!(out, "weekend trips    {}", r.wed_count).unwrap();
        writeln!(out, "rejected rows    {}", r.rejected_rows.len()).unwrap();
        writeln!(out, "flagged rows     {}", r.flagged_rows.len()).unwrap();
    }
    let eval_path = run.evaluation();
    if eval_path.is_file() {
        let text = std::fs::read_to_string(&eval_path).map_err(|e| Error::io(&eval_path, e))?;
        writeln!(out, "\n== evaluation (test split)\n{text}").unwrap();
    }
    for source in [Source::Actual, Source::Predicted] {
        let path = run.summary(source);
        if path.is_file() {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            writeln!(out, "\n== charging demand ({source})\n{text}").unwrap();
        }
    }
    write_text(&run.report(), &out)?;
    write_manifest(cfg)?;
    Ok(out)
}
