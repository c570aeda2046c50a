//! Synthetic survey data: small travel-survey exports for desk runs and
//! random chains/rows for property tests.

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::chain::{ChainKey, Keying, SupervisedRow, TripChain};
use crate::ingest::{DayType, TripRecord};
use crate::seed;

/// Survey-style vehicle and trip files, with column names and codes of the
/// public survey (`HOUSEID`, `HFUEL`, `STRTTIME` as HHMM, `TRAVDAY` 1..7).
#[derive(Debug, Clone)]
pub struct SurveyFiles {
    pub vehicles_csv: String,
    pub trips_csv: String,
}

/// Schema matching [`survey`] output.
pub const SURVEY_SCHEMA: &str = r#"delimiter = ","
time_format = "hhmm"
duration_tolerance_min = 1.0

[vehicle]
house_id = "HOUSEID"
vehicle_id = "VEHID"
fuel_type = "HFUEL"

[trip]
house_id = "HOUSEID"
person_id = "PERSONID"
vehicle_id = "VEHID"
t_start = "STRTTIME"
t_end = "ENDTIME"
duration = "TRVLCMIN"
distance = "TRPMILES"
travel_day = "TRAVDAY"

[fuel_codes]
"-1" = "gasoline"
"1" = "other"
"2" = "hybrid"
"3" = "electric"
"4" = "hybrid"
"97" = "other"
"#;

fn hhmm(minutes: u32) -> String {
    format!("{:02}{:02}", minutes / 60, minutes % 60)
}

/// Generate a survey export with exactly `n_trips` trip rows.
///
/// Most households drive gasoline vehicles; the rest are electric or
/// hybrid. A few rows carry the survey's negative missing-value code for
/// distance, a few are long trips over 200 miles and a few have a duration
/// that disagrees with the clock times.
pub fn survey(n_trips: usize, seed: u64) -> SurveyFiles {
    let mut rng = seed::rng(seed);
    let mut vehicles = String::from("HOUSEID,VEHID,HFUEL\n");
    let mut trips =
        String::from("HOUSEID,PERSONID,VEHID,STRTTIME,ENDTIME,TRVLCMIN,TRPMILES,TRAVDAY\n");
    let mut written = 0;
    let mut house = 30_000_001u64;
    'outer: while written < n_trips {
        let n_vehicles = rng.gen_range(1..=2);
        for v in 1..=n_vehicles {
            let fuel = match rng.gen_range(0..100) {
                0..=29 => "-1",
                30..=59 => "3",
                60..=74 => "2",
                75..=89 => "4",
                _ => "97",
            };
            writeln!(vehicles, "{house},{v},{fuel}").unwrap();
        }
        let travel_day = rng.gen_range(1..=7);
        let n_persons = rng.gen_range(1..=3);
        for person in 1..=n_persons {
            // persons beyond the vehicle count share vehicle 1
            let vehicle = if person <= n_vehicles { person } else { 1 };
            let n_legs = rng.gen_range(2..=5);
            let mut clock: u32 = rng.gen_range(6 * 60..10 * 60);
            for _ in 0..n_legs {
                let duration: u32 = rng.gen_range(5..=75);
                let end = clock + duration;
                if end >= 24 * 60 {
                    break;
                }
                let speed_mph = rng.gen_range(12.0..45.0);
                let mut distance =
                    ((speed_mph * duration as f64 / 60.0) * 100.0f64).round() / 100.0;
                let roll = rng.gen_range(0..100);
                if roll < 2 {
                    distance = rng.gen_range(200.0..320.0f64).round();
                } else if roll < 4 {
                    distance = -9.0;
                }
                let reported = if rng.gen_range(0..100) < 3 {
                    duration + 10
                } else {
                    duration
                };
                writeln!(
                    trips,
                    "{house},{person},{vehicle},{},{},{reported},{distance},{travel_day}",
                    hhmm(clock),
                    hhmm(end)
                )
                .unwrap();
                written += 1;
                if written == n_trips {
                    break 'outer;
                }
                let dwell = if rng.gen_bool(0.5) {
                    rng.gen_range(10..60)
                } else {
                    rng.gen_range(60..9 * 60)
                };
                clock = end + dwell;
                if clock >= 23 * 60 {
                    break;
                }
            }
        }
        house += 1;
    }
    SurveyFiles {
        vehicles_csv: vehicles,
        trips_csv: trips,
    }
}

/// A valid vehicle chain of 1..=`max_trips` trips with distances in
/// `[0, max_distance)`.
pub fn random_chain(
    rng: &mut ChaCha8Rng,
    id: usize,
    max_trips: usize,
    max_distance: f64,
) -> TripChain {
    let n = rng.gen_range(1..=max_trips);
    let day_type = if rng.gen_bool(0.7) {
        DayType::Weekday
    } else {
        DayType::Weekend
    };
    let mut trips = Vec::with_capacity(n);
    let mut clock = rng.gen_range(0.0..10.0);
    for _ in 0..n {
        let duration_h = rng.gen_range(0.05..1.5);
        let t_end = clock + duration_h;
        if t_end > 24.0 {
            break;
        }
        trips.push(TripRecord {
            house_id: format!("h{id}"),
            person_id: "1".into(),
            vehicle_id: "1".into(),
            t_start: clock,
            t_end,
            duration_min: duration_h * 60.0,
            distance_mi: rng.gen_range(0.0..max_distance),
            day_type,
        });
        clock = t_end + rng.gen_range(0.0..6.0);
        if clock >= 24.0 {
            break;
        }
    }
    let key = ChainKey::of(&trips[0], Keying::Vehicle);
    TripChain { key, trips }
}

/// Supervised rows with plausible ranges and a learnable relation between
/// current and next trip.
pub fn random_rows(n: usize, seed: u64) -> Vec<SupervisedRow> {
    let mut rng = seed::rng(seed);
    (0..n)
        .map(|_| {
            let x_start: f64 = rng.gen_range(5.0..18.0);
            let x_duration: f64 = rng.gen_range(5.0..90.0);
            let x_end = x_start + x_duration / 60.0;
            let x_distance = x_duration / 60.0 * rng.gen_range(10.0..40.0);
            let y_start = (x_end + rng.gen_range(0.2..5.0)).min(23.0);
            let y_end = y_start + rng.gen_range(0.1..1.0);
            let y_distance = x_distance * rng.gen_range(0.5..1.5);
            SupervisedRow {
                x_start,
                x_end,
                x_duration,
                x_distance,
                y_start,
                y_end,
                y_distance,
            }
        })
        .collect()
}
