//! Survey file ingestion: vehicle and trip files, the EV cross-reference
//! and the distance / day-type filters.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FuelType {
    Gasoline,
    Hybrid,
    Electric,
    Other,
}

impl FuelType {
    /// Maps a textual fuel label onto a category. Codes that are not
    /// recognised become [`FuelType::Other`].
    pub fn from_label(label: &str) -> FuelType {
        match label.trim().to_ascii_lowercase().as_str() {
            "gasoline" | "gas" | "petrol" | "diesel" => FuelType::Gasoline,
            "hybrid" | "phev" | "plug-in hybrid" => FuelType::Hybrid,
            "electric" | "ev" | "bev" => FuelType::Electric,
            _ => FuelType::Other,
        }
    }
}

/// The fuel categories kept by [`filter_ev_trips`] unless configured otherwise.
pub fn default_ev_fuels() -> BTreeSet<FuelType> {
    [FuelType::Hybrid, FuelType::Electric].into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DayType {
    #[serde(rename = "wd", alias = "WD")]
    Weekday,
    #[serde(rename = "wed", alias = "WED")]
    Weekend,
}

impl DayType {
    pub const ALL: [DayType; 2] = [DayType::Weekday, DayType::Weekend];

    pub fn code(self) -> &'static str {
        match self {
            DayType::Weekday => "WD",
            DayType::Weekend => "WED",
        }
    }

    /// Lower-case code, used in file names.
    pub fn slug(self) -> &'static str {
        match self {
            DayType::Weekday => "wd",
            DayType::Weekend => "wed",
        }
    }

    pub fn from_code(code: &str) -> Option<DayType> {
        match code.trim().to_ascii_uppercase().as_str() {
            "WD" => Some(DayType::Weekday),
            "WED" => Some(DayType::Weekend),
            _ => None,
        }
    }

    /// Interprets a travel-day field. Integers follow the survey coding
    /// (1 = Sunday .. 7 = Saturday); weekday names and the `WD`/`WED`
    /// codes are accepted as well.
    pub fn from_travel_day(value: &str) -> Option<DayType> {
        let value = value.trim();
        if let Some(day) = DayType::from_code(value) {
            return Some(day);
        }
        if let Ok(n) = value.parse::<i64>() {
            return match n {
                1 | 7 => Some(DayType::Weekend),
                2..=6 => Some(DayType::Weekday),
                _ => None,
            };
        }
        let lower = value.to_ascii_lowercase();
        let prefix = lower.get(..3)?;
        match prefix {
            "sat" | "sun" => Some(DayType::Weekend),
            "mon" | "tue" | "wed" | "thu" | "fri" => Some(DayType::Weekday),
            _ => None,
        }
    }
}

impl fmt::Display for DayType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VehicleRecord {
    pub house_id: String,
    pub vehicle_id: String,
    pub fuel_type: FuelType,
}

/// One surveyed trip. Times are decimal hours of the travel day.
#[derive(Debug, Clone, PartialEq)]
pub struct TripRecord {
    pub house_id: String,
    pub person_id: String,
    pub vehicle_id: String,
    pub t_start: f64,
    pub t_end: f64,
    pub duration_min: f64,
    pub distance_mi: f64,
    pub day_type: DayType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeFormat {
    /// Decimal hours, e.g. `9.5`.
    #[default]
    Decimal,
    /// Clock time packed as `HHMM`, e.g. `0930`.
    Hhmm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleColumns {
    pub house_id: String,
    pub vehicle_id: String,
    pub fuel_type: String,
}

impl Default for VehicleColumns {
    fn default() -> Self {
        Self {
            house_id: "house_id".into(),
            vehicle_id: "vehicle_id".into(),
            fuel_type: "fuel_type".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripColumns {
    pub house_id: String,
    pub person_id: String,
    pub vehicle_id: String,
    pub t_start: String,
    pub t_end: String,
    pub duration: String,
    pub distance: String,
    pub travel_day: String,
}

impl Default for TripColumns {
    fn default() -> Self {
        Self {
            house_id: "house_id".into(),
            person_id: "person_id".into(),
            vehicle_id: "vehicle_id".into(),
            t_start: "t_start".into(),
            t_end: "t_end".into(),
            duration: "duration_min".into(),
            distance: "distance_mi".into(),
            travel_day: "travel_day".into(),
        }
    }
}

/// Maps logical fields onto the column names of a concrete survey export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schema {
    pub delimiter: char,
    pub time_format: TimeFormat,
    /// Allowed gap, in minutes, between the duration column and the
    /// start/end times before a row is flagged.
    pub duration_tolerance_min: f64,
    pub vehicle: VehicleColumns,
    pub trip: TripColumns,
    /// Raw fuel-column values mapped to a category; anything not listed is
    /// interpreted by [`FuelType::from_label`].
    pub fuel_codes: BTreeMap<String, FuelType>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            delimiter: ',',
            time_format: TimeFormat::Decimal,
            duration_tolerance_min: 1.0,
            vehicle: VehicleColumns::default(),
            trip: TripColumns::default(),
            fuel_codes: BTreeMap::new(),
        }
    }
}

impl Schema {
    pub fn load(path: &Path) -> Result<Schema> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Schema::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str) -> std::result::Result<Schema, String> {
        let schema: Schema = toml::from_str(text).map_err(|e| e.to_string())?;
        if !schema.delimiter.is_ascii() {
            return Err(format!("delimiter {:?} is not ASCII", schema.delimiter));
        }
        if !(schema.duration_tolerance_min >= 0.0) {
            return Err("duration_tolerance_min must be non-negative".into());
        }
        Ok(schema)
    }

    fn fuel_type(&self, raw: &str) -> FuelType {
        self.fuel_codes
            .get(raw.trim())
            .copied()
            .unwrap_or_else(|| FuelType::from_label(raw))
    }
}

/// A data row that was rejected or flagged during parsing. `row` is the
/// zero-based index among data rows (the header is not counted).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowIssue {
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedTrips {
    pub trips: Vec<TripRecord>,
    pub rejected: Vec<RowIssue>,
    /// Rows kept but whose duration disagrees with their start/end times.
    pub flagged: Vec<RowIssue>,
    pub raw_rows: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub raw_trip_count: usize,
    pub ev_count: usize,
    pub filtered_trip_count: usize,
    pub wd_count: usize,
    pub wed_count: usize,
    pub rejected_rows: Vec<RowIssue>,
    pub flagged_rows: Vec<RowIssue>,
}

impl IngestReport {
    /// Flat `key = value` rendering; one `rejected.<row>` / `flagged.<row>`
    /// line per issue.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: &dyn fmt::Display| out.push_str(&format!("{k} = {v}\n"));
        push("raw_trip_count", &self.raw_trip_count);
        push("ev_count", &self.ev_count);
        push("filtered_trip_count", &self.filtered_trip_count);
        push("wd_count", &self.wd_count);
        push("wed_count", &self.wed_count);
        push("rejected_count", &self.rejected_rows.len());
        push("flagged_count", &self.flagged_rows.len());
        for issue in &self.rejected_rows {
            push(&format!("rejected.{}", issue.row), &issue.reason);
        }
        for issue in &self.flagged_rows {
            push(&format!("flagged.{}", issue.row), &issue.reason);
        }
        out
    }

    pub fn from_kv_text(text: &str) -> Result<IngestReport> {
        let mut report = IngestReport::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once(" = ")
                .ok_or_else(|| Error::invalid(format!("malformed report line `{line}`")))?;
            let count = || {
                value
                    .parse::<usize>()
                    .map_err(|_| Error::invalid(format!("bad count in `{line}`")))
            };
            match key {
                "raw_trip_count" => report.raw_trip_count = count()?,
                "ev_count" => report.ev_count = count()?,
                "filtered_trip_count" => report.filtered_trip_count = count()?,
                "wd_count" => report.wd_count = count()?,
                "wed_count" => report.wed_count = count()?,
                "rejected_count" | "flagged_count" => {}
                _ => {
                    let (kind, row) = key
                        .split_once('.')
                        .ok_or_else(|| Error::invalid(format!("unknown report key `{key}`")))?;
                    let row = row
                        .parse()
                        .map_err(|_| Error::invalid(format!("bad row index in `{line}`")))?;
                    let issue = RowIssue {
                        row,
                        reason: value.to_string(),
                    };
                    match kind {
                        "rejected" => report.rejected_rows.push(issue),
                        "flagged" => report.flagged_rows.push(issue),
                        _ => return Err(Error::invalid(format!("unknown report key `{key}`"))),
                    }
                }
            }
        }
        Ok(report)
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn csv_reader<R: Read>(reader: R, schema: &Schema) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader)
}

fn column_index(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
}

pub fn parse_vehicle_file(path: &Path, schema: &Schema) -> Result<Vec<VehicleRecord>> {
    parse_vehicles(open(path)?, schema, path)
}

/// Parses vehicles from any reader; `origin` only labels errors.
pub fn parse_vehicles<R: Read>(
    reader: R,
    schema: &Schema,
    origin: &Path,
) -> Result<Vec<VehicleRecord>> {
    let csv_err = |source| Error::Csv {
        path: origin.to_path_buf(),
        source,
    };
    let mut rdr = csv_reader(reader, schema);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let cols = &schema.vehicle;
    let house = column_index(&headers, &cols.house_id, origin)?;
    let vehicle = column_index(&headers, &cols.vehicle_id, origin)?;
    let fuel = column_index(&headers, &cols.fuel_type, origin)?;

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let field = |i: usize| record.get(i).unwrap_or("").to_string();
        let rec = VehicleRecord {
            house_id: field(house),
            vehicle_id: field(vehicle),
            fuel_type: schema.fuel_type(record.get(fuel).unwrap_or("")),
        };
        if !seen.insert((rec.house_id.clone(), rec.vehicle_id.clone())) {
            return Err(Error::DuplicateVehicle {
                path: origin.to_path_buf(),
                house_id: rec.house_id,
                vehicle_id: rec.vehicle_id,
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn parse_trip_file(path: &Path, schema: &Schema) -> Result<ParsedTrips> {
    parse_trips(open(path)?, schema, path)
}

struct TripIndices {
    house: usize,
    person: usize,
    vehicle: usize,
    start: usize,
    end: usize,
    duration: usize,
    distance: usize,
    day: usize,
}

pub fn parse_trips<R: Read>(reader: R, schema: &Schema, origin: &Path) -> Result<ParsedTrips> {
    let csv_err = |source| Error::Csv {
        path: origin.to_path_buf(),
        source,
    };
    let mut rdr = csv_reader(reader, schema);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let cols = &schema.trip;
    let idx = TripIndices {
        house: column_index(&headers, &cols.house_id, origin)?,
        person: column_index(&headers, &cols.person_id, origin)?,
        vehicle: column_index(&headers, &cols.vehicle_id, origin)?,
        start: column_index(&headers, &cols.t_start, origin)?,
        end: column_index(&headers, &cols.t_end, origin)?,
        duration: column_index(&headers, &cols.duration, origin)?,
        distance: column_index(&headers, &cols.distance, origin)?,
        day: column_index(&headers, &cols.travel_day, origin)?,
    };

    let mut parsed = ParsedTrips::default();
    for (row, record) in rdr.records().enumerate() {
        parsed.raw_rows += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                parsed.rejected.push(RowIssue {
                    row,
                    reason: format!("unreadable row: {e}"),
                });
                continue;
            }
        };
        match trip_from_record(&record, &idx, schema) {
            Ok(trip) => {
                let implied = (trip.t_end - trip.t_start) * 60.0;
                if (trip.duration_min - implied).abs() > schema.duration_tolerance_min {
                    parsed.flagged.push(RowIssue {
                        row,
                        reason: format!(
                            "duration {} min differs from end - start = {:.2} min",
                            trip.duration_min, implied
                        ),
                    });
                }
                parsed.trips.push(trip);
            }
            Err(reason) => parsed.rejected.push(RowIssue { row, reason }),
        }
    }
    Ok(parsed)
}

fn parse_number(raw: Option<&str>, what: &str) -> std::result::Result<f64, String> {
    let raw = raw.ok_or_else(|| format!("missing {what}"))?;
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("non-numeric {what} `{raw}`")),
    }
}

fn parse_time(
    raw: Option<&str>,
    what: &str,
    format: TimeFormat,
) -> std::result::Result<f64, String> {
    let value = parse_number(raw, what)?;
    match format {
        TimeFormat::Decimal => Ok(value),
        TimeFormat::Hhmm => {
            if value < 0.0 || value.fract() != 0.0 {
                return Err(format!("invalid HHMM {what} `{}`", raw.unwrap_or("")));
            }
            let packed = value as u64;
            let (hours, minutes) = (packed / 100, packed % 100);
            if minutes >= 60 {
                return Err(format!("invalid HHMM {what} `{}`", raw.unwrap_or("")));
            }
            Ok(hours as f64 + minutes as f64 / 60.0)
        }
    }
}

fn trip_from_record(
    record: &csv::StringRecord,
    idx: &TripIndices,
    schema: &Schema,
) -> std::result::Result<TripRecord, String> {
    let t_start = parse_time(record.get(idx.start), "start time", schema.time_format)?;
    let t_end = parse_time(record.get(idx.end), "end time", schema.time_format)?;
    let duration_min = parse_number(record.get(idx.duration), "duration")?;
    let distance_mi = parse_number(record.get(idx.distance), "distance")?;
    if distance_mi < 0.0 {
        return Err("negative distance".into());
    }
    if duration_min < 0.0 {
        return Err("negative duration".into());
    }
    if !(0.0..24.0).contains(&t_start) {
        return Err(format!("start time {t_start} outside [0, 24)"));
    }
    if !(0.0..=24.0).contains(&t_end) {
        return Err(format!("end time {t_end} outside [0, 24]"));
    }
    if t_end < t_start {
        return Err(format!("end time {t_end} before start time {t_start}"));
    }
    let raw_day = record.get(idx.day).unwrap_or("");
    let day_type = DayType::from_travel_day(raw_day)
        .ok_or_else(|| format!("unrecognised travel day `{raw_day}`"))?;
    let key = |i: usize| record.get(i).unwrap_or("").to_string();
    Ok(TripRecord {
        house_id: key(idx.house),
        person_id: key(idx.person),
        vehicle_id: key(idx.vehicle),
        t_start,
        t_end,
        duration_min,
        distance_mi,
        day_type,
    })
}

/// Number of distinct vehicles whose fuel type is in `fuels`.
pub fn ev_count(vehicles: &[VehicleRecord], fuels: &BTreeSet<FuelType>) -> usize {
    vehicles
        .iter()
        .filter(|v| fuels.contains(&v.fuel_type))
        .count()
}

/// Keeps the trips made with a vehicle whose fuel type is in `fuels`.
pub fn filter_ev_trips(
    trips: &[TripRecord],
    vehicles: &[VehicleRecord],
    fuels: &BTreeSet<FuelType>,
) -> Vec<TripRecord> {
    let evs: HashSet<(&str, &str)> = vehicles
        .iter()
        .filter(|v| fuels.contains(&v.fuel_type))
        .map(|v| (v.house_id.as_str(), v.vehicle_id.as_str()))
        .collect();
    trips
        .iter()
        .filter(|t| evs.contains(&(t.house_id.as_str(), t.vehicle_id.as_str())))
        .cloned()
        .collect()
}

/// Keeps trips with `distance_mi < max_mi` (strict).
pub fn filter_distance(trips: &[TripRecord], max_mi: f64) -> Result<Vec<TripRecord>> {
    if !(max_mi > 0.0) {
        return Err(Error::invalid(format!(
            "distance threshold {max_mi} must be positive"
        )));
    }
    Ok(trips
        .iter()
        .filter(|t| t.distance_mi < max_mi)
        .cloned()
        .collect())
}

/// Partitions trips into (weekday, weekend), preserving input order.
pub fn split_day_type(trips: &[TripRecord]) -> (Vec<TripRecord>, Vec<TripRecord>) {
    trips
        .iter()
        .cloned()
        .partition(|t| t.day_type == DayType::Weekday)
}

/// Result of the full ingest stage.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub report: IngestReport,
    pub weekday: Vec<TripRecord>,
    pub weekend: Vec<TripRecord>,
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub max_distance_mi: f64,
    pub fuels: BTreeSet<FuelType>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            max_distance_mi: 200.0,
            fuels: default_ev_fuels(),
        }
    }
}

/// Parse both files, keep EV trips under the distance threshold and split
/// them by day type.
pub fn ingest(
    trips_path: &Path,
    vehicles_path: &Path,
    schema: &Schema,
    options: &IngestOptions,
) -> Result<Ingested> {
    let vehicles = parse_vehicle_file(vehicles_path, schema)?;
    let parsed = parse_trip_file(trips_path, schema)?;
    let ev_trips = filter_ev_trips(&parsed.trips, &vehicles, &options.fuels);
    let kept = filter_distance(&ev_trips, options.max_distance_mi)?;
    let (weekday, weekend) = split_day_type(&kept);
    let report = IngestReport {
        raw_trip_count: parsed.raw_rows,
        ev_count: ev_count(&vehicles, &options.fuels),
        filtered_trip_count: kept.len(),
        wd_count: weekday.len(),
        wed_count: weekend.len(),
        rejected_rows: parsed.rejected,
        flagged_rows: parsed.flagged,
    };
    Ok(Ingested {
        report,
        weekday,
        weekend,
    })
}

/// Resolve `path` against `base` unless it is already absolute.
pub(crate) fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}
