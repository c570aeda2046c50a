//! Trip chains and the supervised rows derived from them.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{DayType, TripRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Keying {
    Person,
    Vehicle,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ChainKey {
    Person {
        house_id: String,
        person_id: String,
    },
    Vehicle {
        house_id: String,
        vehicle_id: String,
    },
}

impl ChainKey {
    pub fn of(trip: &TripRecord, keying: Keying) -> ChainKey {
        match keying {
            Keying::Person => ChainKey::Person {
                house_id: trip.house_id.clone(),
                person_id: trip.person_id.clone(),
            },
            Keying::Vehicle => ChainKey::Vehicle {
                house_id: trip.house_id.clone(),
                vehicle_id: trip.vehicle_id.clone(),
            },
        }
    }
}

impl fmt::Display for ChainKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChainKey::Person {
                house_id,
                person_id,
            } => write!(f, "{house_id}/p{person_id}"),
            ChainKey::Vehicle {
                house_id,
                vehicle_id,
            } => write!(f, "{house_id}/v{vehicle_id}"),
        }
    }
}

/// A time-ordered sequence of trips sharing one key.
#[derive(Debug, Clone, PartialEq)]
pub struct TripChain {
    pub key: ChainKey,
    pub trips: Vec<TripRecord>,
}

impl TripChain {
    pub fn len(&self) -> usize {
        self.trips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trips.is_empty()
    }

    pub fn day_type(&self) -> Option<DayType> {
        self.trips.first().map(|t| t.day_type)
    }

    /// Checks strictly increasing start times and non-overlapping trips.
    pub fn validate(&self) -> Result<()> {
        if self.trips.is_empty() {
            return Err(Error::Chain {
                key: self.key.to_string(),
                reason: "empty chain".into(),
            });
        }
        for (k, pair) in self.trips.windows(2).enumerate() {
            if let Some(reason) = conflict(&pair[0], &pair[1]) {
                return Err(Error::Chain {
                    key: self.key.to_string(),
                    reason: format!("trips {k} and {}: {reason}", k + 1),
                });
            }
        }
        Ok(())
    }
}

fn conflict(prev: &TripRecord, next: &TripRecord) -> Option<String> {
    if next.t_start <= prev.t_start {
        Some(format!(
            "start {} does not follow start {}",
            next.t_start, prev.t_start
        ))
    } else if next.t_start < prev.t_end {
        Some(format!(
            "start {} before previous end {}",
            next.t_start, prev.t_end
        ))
    } else {
        None
    }
}

/// A chain was cut because a trip overlapped its predecessor.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainAnomaly {
    pub key: ChainKey,
    /// Position, in the sorted trips of the key, of the trip that starts
    /// the new chain.
    pub position: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ChainSet {
    pub chains: Vec<TripChain>,
    pub anomalies: Vec<ChainAnomaly>,
}

/// Groups trips by key and orders each group by start time (ties by end
/// time, then input order). A group whose trips overlap is split at each
/// offending trip and the cut is recorded as an anomaly.
///
/// Chains come out ordered by key, so the result does not depend on the
/// order of `trips` apart from exact ties.
pub fn build_chains(trips: &[TripRecord], keying: Keying) -> ChainSet {
    let mut groups: BTreeMap<ChainKey, Vec<&TripRecord>> = BTreeMap::new();
    for trip in trips {
        groups
            .entry(ChainKey::of(trip, keying))
            .or_default()
            .push(trip);
    }

    let mut out = ChainSet::default();
    for (key, mut group) in groups {
        group.sort_by(|a, b| {
            a.t_start
                .total_cmp(&b.t_start)
                .then(a.t_end.total_cmp(&b.t_end))
        });
        let mut current: Vec<TripRecord> = Vec::new();
        for (pos, trip) in group.into_iter().enumerate() {
            if let Some(prev) = current.last() {
                if let Some(reason) = conflict(prev, trip) {
                    out.anomalies.push(ChainAnomaly {
                        key: key.clone(),
                        position: pos,
                        reason,
                    });
                    out.chains.push(TripChain {
                        key: key.clone(),
                        trips: std::mem::take(&mut current),
                    });
                }
            }
            current.push(trip.clone());
        }
        out.chains.push(TripChain {
            key,
            trips: current,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Start,
    End,
    Distance,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::Start, Target::End, Target::Distance];

    pub fn name(self) -> &'static str {
        match self {
            Target::Start => "start",
            Target::End => "end",
            Target::Distance => "distance",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Target::Start | Target::End => "h",
            Target::Distance => "mi",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Current-trip features paired with next-trip targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupervisedRow {
    pub x_start: f64,
    pub x_end: f64,
    pub x_duration: f64,
    pub x_distance: f64,
    pub y_start: f64,
    pub y_end: f64,
    pub y_distance: f64,
}

pub const ROW_HEADER: [&str; 7] = [
    "x_start",
    "x_end",
    "x_duration",
    "x_distance",
    "y_start",
    "y_end",
    "y_distance",
];

impl SupervisedRow {
    pub fn from_pair(current: &TripRecord, next: &TripRecord) -> SupervisedRow {
        SupervisedRow {
            x_start: current.t_start,
            x_end: current.t_end,
            x_duration: current.duration_min,
            x_distance: current.distance_mi,
            y_start: next.t_start,
            y_end: next.t_end,
            y_distance: next.distance_mi,
        }
    }

    /// Input features of a trip; the duration column is dropped when
    /// `with_duration` is false.
    pub fn trip_features(trip: &TripRecord, with_duration: bool) -> Vec<f64> {
        if with_duration {
            vec![
                trip.t_start,
                trip.t_end,
                trip.duration_min,
                trip.distance_mi,
            ]
        } else {
            vec![trip.t_start, trip.t_end, trip.distance_mi]
        }
    }

    pub fn features(&self, with_duration: bool) -> Vec<f64> {
        if with_duration {
            vec![self.x_start, self.x_end, self.x_duration, self.x_distance]
        } else {
            vec![self.x_start, self.x_end, self.x_distance]
        }
    }

    pub fn target(&self, target: Target) -> f64 {
        match target {
            Target::Start => self.y_start,
            Target::End => self.y_end,
            Target::Distance => self.y_distance,
        }
    }

    fn values(&self) -> [f64; 7] {
        [
            self.x_start,
            self.x_end,
            self.x_duration,
            self.x_distance,
            self.y_start,
            self.y_end,
            self.y_distance,
        ]
    }
}

/// One row per consecutive trip pair in each chain.
pub fn make_supervised_rows(chains: &[TripChain]) -> Vec<SupervisedRow> {
    chains
        .iter()
        .flat_map(|c| {
            c.trips
                .windows(2)
                .map(|w| SupervisedRow::from_pair(&w[0], &w[1]))
        })
        .collect()
}

pub fn write_rows<W: Write>(writer: W, rows: &[SupervisedRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| Error::invalid(format!("writing rows: {e}"));
    wtr.write_record(ROW_HEADER).map_err(to_err)?;
    for row in rows {
        wtr.write_record(row.values().iter().map(|v| v.to_string()))
            .map_err(to_err)?;
    }
    wtr.flush()
        .map_err(|e| Error::invalid(format!("writing rows: {e}")))?;
    Ok(())
}

pub fn read_rows<R: Read>(reader: R) -> Result<Vec<SupervisedRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::invalid(format!("reading rows: {e}")))?;
    if headers.iter().ne(ROW_HEADER) {
        return Err(Error::invalid(format!(
            "supervised row header must be {}",
            ROW_HEADER.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::invalid(format!("reading rows: {e}")))?;
        let mut v = [0.0; 7];
        for (slot, field) in v.iter_mut().zip(record.iter()) {
            *slot = field
                .parse()
                .map_err(|_| Error::invalid(format!("row {i}: non-numeric `{field}`")))?;
        }
        rows.push(SupervisedRow {
            x_start: v[0],
            x_end: v[1],
            x_duration: v[2],
            x_distance: v[3],
            y_start: v[4],
            y_end: v[5],
            y_distance: v[6],
        });
    }
    Ok(rows)
}

const CHAIN_HEADER: [&str; 10] = [
    "chain",
    "house_id",
    "person_id",
    "vehicle_id",
    "t_start",
    "t_end",
    "duration_min",
    "distance_mi",
    "day_type",
    "keying",
];

/// Writes chains one trip per line; `chain` numbers the chains in order.
pub fn write_chains<W: Write>(writer: W, chains: &[TripChain]) -> Result<()> {
    let to_err = |e: csv::Error| Error::invalid(format!("writing chains: {e}"));
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(CHAIN_HEADER).map_err(to_err)?;
    for (i, chain) in chains.iter().enumerate() {
        let keying = match chain.key {
            ChainKey::Person { .. } => "person",
            ChainKey::Vehicle { .. } => "vehicle",
        };
        for t in &chain.trips {
            wtr.write_record([
                i.to_string(),
                t.house_id.clone(),
                t.person_id.clone(),
                t.vehicle_id.clone(),
                t.t_start.to_string(),
                t.t_end.to_string(),
                t.duration_min.to_string(),
                t.distance_mi.to_string(),
                t.day_type.code().to_string(),
                keying.to_string(),
            ])
            .map_err(to_err)?;
        }
    }
    wtr.flush()
        .map_err(|e| Error::invalid(format!("writing chains: {e}")))?;
    Ok(())
}

pub fn read_chains<R: Read>(reader: R) -> Result<Vec<TripChain>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let err = |msg: String| Error::invalid(format!("reading chains: {msg}"));
    let headers = rdr.headers().map_err(|e| err(e.to_string()))?;
    if headers.iter().ne(CHAIN_HEADER) {
        return Err(err(format!("header must be {}", CHAIN_HEADER.join(","))));
    }
    let mut chains: Vec<(String, TripChain)> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let r = record.map_err(|e| err(e.to_string()))?;
        let num = |j: usize| -> Result<f64> {
            r[j].parse()
                .map_err(|_| err(format!("line {i}: non-numeric `{}`", &r[j])))
        };
        let trip = TripRecord {
            house_id: r[1].to_string(),
            person_id: r[2].to_string(),
            vehicle_id: r[3].to_string(),
            t_start: num(4)?,
            t_end: num(5)?,
            duration_min: num(6)?,
            distance_mi: num(7)?,
            day_type: DayType::from_code(&r[8])
                .ok_or_else(|| err(format!("line {i}: bad day type `{}`", &r[8])))?,
        };
        let keying = match &r[9] {
            "person" => Keying::Person,
            "vehicle" => Keying::Vehicle,
            other => return Err(err(format!("line {i}: bad keying `{other}`"))),
        };
        match chains.last_mut() {
            Some((id, chain)) if id == &r[0] => chain.trips.push(trip),
            _ => {
                let key = ChainKey::of(&trip, keying);
                chains.push((
                    r[0].to_string(),
                    TripChain {
                        key,
                        trips: vec![trip],
                    },
                ));
            }
        }
    }
    Ok(chains.into_iter().map(|(_, c)| c).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn table_one() -> Vec<TripRecord> {
        let t = |person: &str, s: f64, e: f64, dur: f64, dist: f64| TripRecord {
            house_id: "30000041".into(),
            person_id: person.into(),
            vehicle_id: person.into(),
            t_start: s,
            t_end: e,
            duration_min: dur,
            distance_mi: dist,
            day_type: DayType::Weekday,
        };
        vec![
            t("1", 8.0, 9.5, 90.0, 68.4),
            t("1", 18.0, 20.0, 120.0, 73.72),
            t("2", 7.0, 7.25, 15.0, 0.68),
            t("2", 8.0, 8.25, 15.0, 0.68),
        ]
    }

    #[test]
    fn table_one_person_chains() {
        let set = build_chains(&table_one(), Keying::Person);
        assert!(set.anomalies.is_empty());
        assert_eq!(set.chains.len(), 2);
        assert_eq!(set.chains[0].len(), 2);
        assert_eq!(set.chains[1].len(), 2);
        assert!(set.chains.iter().all(|c| c.validate().is_ok()));
    }

    #[test]
    fn table_two_rows() {
        let set = build_chains(&table_one(), Keying::Person);
        let rows = make_supervised_rows(&set.chains);
        assert_eq!(
            rows,
            vec![
                SupervisedRow {
                    x_start: 8.0,
                    x_end: 9.5,
                    x_duration: 90.0,
                    x_distance: 68.4,
                    y_start: 18.0,
                    y_end: 20.0,
                    y_distance: 73.72
                },
                SupervisedRow {
                    x_start: 7.0,
                    x_end: 7.25,
                    x_duration: 15.0,
                    x_distance: 0.68,
                    y_start: 8.0,
                    y_end: 8.25,
                    y_distance: 0.68
                },
            ]
        );
    }

    #[test]
    fn unsorted_input_is_ordered() {
        let mut trips = table_one();
        trips.reverse();
        let set = build_chains(&trips, Keying::Person);
        assert_eq!(set.chains[0].trips[0].t_start, 8.0);
        assert_eq!(set.chains[0].trips[1].t_start, 18.0);
    }

    #[test]
    fn single_trip_chain_yields_no_rows() {
        let trips = vec![table_one().remove(0)];
        let set = build_chains(&trips, Keying::Person);
        assert_eq!(set.chains.len(), 1);
        assert_eq!(set.chains[0].len(), 1);
        assert!(make_supervised_rows(&set.chains).is_empty());
    }

    #[test]
    fn overlapping_trips_split_and_logged() {
        let mut trips = table_one();
        trips.truncate(1);
        let mut overlap = trips[0].clone();
        overlap.t_start = 9.0;
        overlap.t_end = 10.0;
        trips.push(overlap);
        let set = build_chains(&trips, Keying::Person);
        assert_eq!(set.chains.len(), 2);
        assert!(set.chains.iter().all(|c| c.len() == 1));
        assert_eq!(set.anomalies.len(), 1);
        assert_eq!(set.anomalies[0].position, 1);
    }

    #[test]
    fn equal_start_times_split() {
        let mut trips = table_one();
        trips.truncate(1);
        let mut twin = trips[0].clone();
        twin.t_end = 10.0;
        trips.push(twin);
        let set = build_chains(&trips, Keying::Person);
        assert_eq!(set.chains.len(), 2);
        // tie on start broken by end time
        assert_eq!(set.chains[0].trips[0].t_end, 9.5);
    }

    #[test]
    fn vehicle_keying_merges_drivers() {
        let mut trips = table_one();
        for t in &mut trips {
            t.vehicle_id = "1".into();
        }
        // person 2's 8:00 trip overlaps person 1's 8:00-9:30 trip on the shared car
        let set = build_chains(&trips, Keying::Vehicle);
        assert_eq!(set.anomalies.len(), 1);
        let lens: Vec<usize> = set.chains.iter().map(TripChain::len).collect();
        assert_eq!(lens.iter().sum::<usize>(), 4);
    }

    #[test]
    fn validate_rejects_overlap() {
        let mut trips = table_one();
        trips.truncate(2);
        trips[1].t_start = 9.0;
        let chain = TripChain {
            key: ChainKey::of(&trips[0], Keying::Vehicle),
            trips,
        };
        assert!(chain.validate().is_err());
    }

    #[test]
    fn rows_and_chains_round_trip_text() {
        let set = build_chains(&table_one(), Keying::Vehicle);
        let rows = make_supervised_rows(&set.chains);

        let mut buf = Vec::new();
        write_rows(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x_start,x_end,x_duration,x_distance,y_start,y_end,y_distance\n8,9.5,90,68.4,18,20,73.72\n"));
        assert_eq!(read_rows(buf.as_slice()).unwrap(), rows);

        let mut buf = Vec::new();
        write_chains(&mut buf, &set.chains).unwrap();
        assert_eq!(read_chains(buf.as_slice()).unwrap(), set.chains);
    }
}
