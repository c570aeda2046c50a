//! State-of-charge recursion over a vehicle's trips and aggregation of the
//! resulting charging events into a daily demand profile.
//!
//! SOC is carried as a fraction of battery capacity. A trip of `d` miles
//! lowers it by `r·d / cap`; at a stop longer than the dwell threshold the
//! vehicle charges at `α·η` kW for `min(dwell, T_req)` hours, where
//! `T_req = (1 − soc)·cap / (α·η)` is the time to full.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::chain::TripChain;
use crate::error::{Error, Result};
use crate::ingest::DayType;

/// Vehicle parameters; the defaults describe a 30 kWh Nissan Leaf on a
/// 6.6 kW charger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvParams {
    pub capacity_kwh: f64,
    /// Charger power (kW).
    pub power_kw: f64,
    pub efficiency: f64,
    pub consumption_kwh_per_mile: f64,
}

impl Default for EvParams {
    fn default() -> Self {
        Self {
            capacity_kwh: 30.0,
            power_kw: 6.6,
            efficiency: 0.9,
            consumption_kwh_per_mile: 0.15,
        }
    }
}

impl EvParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.capacity_kwh)
            || !positive(self.power_kw)
            || !positive(self.consumption_kwh_per_mile)
        {
            return Err(Error::Config(format!(
                "EV parameters must be positive: {self:?}"
            )));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::Config(format!(
                "efficiency {} must lie in (0, 1]",
                self.efficiency
            )));
        }
        Ok(())
    }

    /// Power delivered to the battery while charging (kW).
    pub fn effective_power_kw(&self) -> f64 {
        self.power_kw * self.efficiency
    }
}

/// Battery state of charge as a fraction in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SocState(f64);

impl SocState {
    pub const FULL: SocState = SocState(1.0);
    pub const EMPTY: SocState = SocState(0.0);

    pub fn new(soc: f64) -> Result<SocState> {
        if (0.0..=1.0).contains(&soc) {
            Ok(SocState(soc))
        } else {
            Err(Error::invalid(format!(
                "state of charge {soc} outside [0, 1]"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discharge {
    pub state: SocState,
    /// Energy actually drawn from the battery (kWh).
    pub energy_kwh: f64,
    /// The trip needed more energy than was left; SOC was floored at 0.
    pub clamped: bool,
}

pub fn soc_after_trip(state: SocState, distance_mi: f64, params: &EvParams) -> Discharge {
    let distance_mi = distance_mi.max(0.0);
    let raw = state.0 - params.consumption_kwh_per_mile * distance_mi / params.capacity_kwh;
    if raw < 0.0 {
        Discharge {
            state: SocState::EMPTY,
            energy_kwh: state.0 * params.capacity_kwh,
            clamped: true,
        }
    } else {
        Discharge {
            state: SocState(raw),
            energy_kwh: params.consumption_kwh_per_mile * distance_mi,
            clamped: false,
        }
    }
}

/// Hours needed to reach full charge from `state`.
pub fn required_charge_time(state: SocState, params: &EvParams) -> f64 {
    (1.0 - state.0) * params.capacity_kwh / params.effective_power_kw()
}

/// One charging interval, before it is attributed to a vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Charge {
    pub t_begin: f64,
    pub duration_h: f64,
    pub energy_kwh: f64,
    pub power_kw: f64,
}

fn charge_for(
    state: SocState,
    duration_h: f64,
    t_begin: f64,
    params: &EvParams,
) -> (SocState, Option<Charge>) {
    if !(duration_h > 0.0) {
        return (state, None);
    }
    let power_kw = params.effective_power_kw();
    let energy_kwh = power_kw * duration_h;
    let soc = (state.0 + energy_kwh / params.capacity_kwh).min(1.0);
    let charge = Charge {
        t_begin,
        duration_h,
        energy_kwh,
        power_kw,
    };
    (SocState(soc), Some(charge))
}

/// Charging at a stop of `dwell_h` hours beginning at `t_begin`. Nothing
/// happens unless the dwell exceeds `min_dwell_h`; otherwise the vehicle
/// charges for `min(dwell, T_req)`.
pub fn charge_at_stop(
    state: SocState,
    dwell_h: f64,
    t_begin: f64,
    params: &EvParams,
    min_dwell_h: f64,
) -> (SocState, Option<Charge>) {
    if !(dwell_h > min_dwell_h) {
        return (state, None);
    }
    let duration = dwell_h.min(required_charge_time(state, params));
    charge_for(state, duration, t_begin, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Location {
    Home,
    Away,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Location::Home => "home",
            Location::Away => "away",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChargingEvent {
    pub vehicle: String,
    pub day_type: DayType,
    pub location: Location,
    pub t_begin: f64,
    pub duration_h: f64,
    pub energy_kwh: f64,
    pub power_kw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    /// Stops must be strictly longer than this to allow charging (hours).
    pub min_dwell_h: f64,
    pub bin_width_h: f64,
    /// Charge to full after the day's last trip.
    pub overnight_charge: bool,
    pub initial_soc: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            min_dwell_h: 1.0,
            bin_width_h: 0.25,
            overnight_charge: true,
            initial_soc: 1.0,
        }
    }
}

impl SimOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_dwell_h >= 0.0) {
            return Err(Error::Config("min_dwell_h must be non-negative".into()));
        }
        SocState::new(self.initial_soc).map_err(|e| Error::Config(e.to_string()))?;
        bin_count(self.bin_width_h).map(|_| ())
    }
}

/// The parts of a trip the simulation needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leg {
    pub t_start: f64,
    pub t_end: f64,
    pub distance_mi: f64,
}

/// Outcome of simulating one vehicle over one day.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleDay {
    pub vehicle: String,
    pub day_type: DayType,
    pub events: Vec<ChargingEvent>,
    /// SOC at the start, after each trip and after each charge.
    pub soc_trace: Vec<f64>,
    pub clamp_events: usize,
    /// Energy drawn by driving (kWh), after clamping.
    pub consumed_kwh: f64,
    pub initial_soc: f64,
    pub final_soc: f64,
}

impl VehicleDay {
    pub fn charged_kwh(&self) -> f64 {
        self.events.iter().map(|e| e.energy_kwh).sum()
    }
}

/// Run the SOC recursion over `legs`. Dwell times shorter than zero (which
/// can arise from predicted trips) count as zero.
pub fn simulate_legs(
    vehicle: &str,
    day_type: DayType,
    legs: &[Leg],
    params: &EvParams,
    options: &SimOptions,
) -> Result<VehicleDay> {
    params.validate()?;
    let mut soc = SocState::new(options.initial_soc)?;
    let mut day = VehicleDay {
        vehicle: vehicle.to_string(),
        day_type,
        events: Vec::new(),
        soc_trace: vec![soc.0],
        clamp_events: 0,
        consumed_kwh: 0.0,
        initial_soc: soc.0,
        final_soc: soc.0,
    };
    let record = |day: &mut VehicleDay, charge: Charge, location| {
        day.events.push(ChargingEvent {
            vehicle: vehicle.to_string(),
            day_type,
            location,
            t_begin: charge.t_begin,
            duration_h: charge.duration_h,
            energy_kwh: charge.energy_kwh,
            power_kw: charge.power_kw,
        });
    };
    for (k, leg) in legs.iter().enumerate() {
        let trip = soc_after_trip(soc, leg.distance_mi, params);
        soc = trip.state;
        day.consumed_kwh += trip.energy_kwh;
        day.clamp_events += usize::from(trip.clamped);
        day.soc_trace.push(soc.0);

        let charge = match legs.get(k + 1) {
            Some(next) => {
                let dwell = (next.t_start - leg.t_end).max(0.0);
                charge_at_stop(soc, dwell, leg.t_end, params, options.min_dwell_h)
                    .1
                    .map(|c| (c, Location::Away))
            }
            None if options.overnight_charge => {
                let t_req = required_charge_time(soc, params);
                charge_for(soc, t_req, leg.t_end, params)
                    .1
                    .map(|c| (c, Location::Home))
            }
            None => None,
        };
        if let Some((charge, location)) = charge {
            soc = SocState((soc.0 + charge.energy_kwh / params.capacity_kwh).min(1.0));
            record(&mut day, charge, location);
            day.soc_trace.push(soc.0);
        }
    }
    day.final_soc = soc.0;
    Ok(day)
}

/// Simulate one vehicle-keyed chain, checking the chain first.
pub fn simulate_vehicle_day(
    chain: &TripChain,
    params: &EvParams,
    options: &SimOptions,
) -> Result<VehicleDay> {
    chain.validate()?;
    let legs: Vec<Leg> = chain
        .trips
        .iter()
        .map(|t| Leg {
            t_start: t.t_start,
            t_end: t.t_end,
            distance_mi: t.distance_mi,
        })
        .collect();
    let day_type = chain.day_type().expect("validated chain is non-empty");
    simulate_legs(&chain.key.to_string(), day_type, &legs, params, options)
}

fn bin_count(bin_width_h: f64) -> Result<usize> {
    let bins = 24.0 / bin_width_h;
    let rounded = bins.round();
    if !(bin_width_h > 0.0)
        || !bins.is_finite()
        || rounded < 1.0
        || (bins - rounded).abs() > 1e-9 * rounded
    {
        return Err(Error::Config(format!(
            "bin width {bin_width_h} h does not divide 24 h"
        )));
    }
    Ok(rounded as usize)
}

/// Average charging power per time-of-day bin over `[0, 24)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile {
    pub bin_width_h: f64,
    pub bins: Vec<f64>,
}

impl DemandProfile {
    pub fn zeros(bin_width_h: f64) -> Result<DemandProfile> {
        Ok(DemandProfile {
            bin_width_h,
            bins: vec![0.0; bin_count(bin_width_h)?],
        })
    }

    /// Energy under the profile (kWh).
    pub fn energy_kwh(&self) -> f64 {
        self.bins.iter().sum::<f64>() * self.bin_width_h
    }

    pub fn peak_kw(&self) -> f64 {
        self.bins.iter().copied().fold(0.0, f64::max)
    }

    pub fn add(&mut self, other: &DemandProfile) -> Result<()> {
        if self.bins.len() != other.bins.len() {
            return Err(Error::invalid(
                "cannot add profiles with different bin widths",
            ));
        }
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            *a += b;
        }
        Ok(())
    }

    /// Spread `power_kw` over `[t_begin, t_begin + duration_h)`, wrapping
    /// past midnight and prorating partial bins.
    pub fn add_interval(&mut self, t_begin: f64, duration_h: f64, power_kw: f64) {
        let n = self.bins.len();
        let mut pos = t_begin.rem_euclid(24.0) / self.bin_width_h;
        let mut remaining = duration_h / self.bin_width_h;
        while remaining > 0.0 {
            let floor = pos.floor();
            let bin = (floor as usize) % n;
            let room = floor + 1.0 - pos;
            let seg = if room > 0.0 { remaining.min(room) } else { 0.0 };
            self.bins[bin] += power_kw * seg;
            remaining -= seg;
            pos = floor + 1.0;
            if pos >= n as f64 {
                pos -= n as f64;
            }
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin_start_hour,power_kw")?;
        for (i, p) in self.bins.iter().enumerate() {
            writeln!(w, "{},{}", i as f64 * self.bin_width_h, p)?;
        }
        Ok(())
    }
}

pub fn aggregate_demand(events: &[ChargingEvent], bin_width_h: f64) -> Result<DemandProfile> {
    let mut profile = DemandProfile::zeros(bin_width_h)?;
    for e in events {
        profile.add_interval(e.t_begin, e.duration_h, e.power_kw);
    }
    Ok(profile)
}

#[derive(Debug, Clone)]
pub struct FleetResult {
    pub profiles: BTreeMap<DayType, DemandProfile>,
    pub vehicles: Vec<VehicleDay>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaySummary {
    pub vehicles: usize,
    pub events: usize,
    pub charged_kwh: f64,
    pub profile_kwh: f64,
    pub peak_kw: f64,
    pub clamp_events: usize,
}

impl FleetResult {
    pub fn events(&self) -> impl Iterator<Item = &ChargingEvent> {
        self.vehicles.iter().flat_map(|v| v.events.iter())
    }

    pub fn summary(&self, day_type: DayType) -> DaySummary {
        let days: Vec<&VehicleDay> = self
            .vehicles
            .iter()
            .filter(|v| v.day_type == day_type)
            .collect();
        let profile = &self.profiles[&day_type];
        DaySummary {
            vehicles: days.len(),
            events: days.iter().map(|v| v.events.len()).sum(),
            charged_kwh: days.iter().map(|v| v.charged_kwh()).sum(),
            profile_kwh: profile.energy_kwh(),
            peak_kw: profile.peak_kw(),
            clamp_events: days.iter().map(|v| v.clamp_events).sum(),
        }
    }

    pub fn write_events_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "vehicle,t_begin,duration_h,energy_kwh,location,day_type")?;
        for e in self.events() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                e.vehicle, e.t_begin, e.duration_h, e.energy_kwh, e.location, e.day_type
            )?;
        }
        Ok(())
    }
}

/// Sum per-vehicle profiles into one profile per day type. Both day types
/// are always present in the result.
pub fn collect_fleet(vehicles: Vec<VehicleDay>, bin_width_h: f64) -> Result<FleetResult> {
    let mut profiles = BTreeMap::new();
    for day in DayType::ALL {
        profiles.insert(day, DemandProfile::zeros(bin_width_h)?);
    }
    for v in &vehicles {
        let own = aggregate_demand(&v.events, bin_width_h)?;
        profiles
            .get_mut(&v.day_type)
            .expect("all day types present")
            .add(&own)?;
    }
    Ok(FleetResult { profiles, vehicles })
}

/// Simulate every chain and aggregate per day type.
pub fn simulate_fleet(
    chains: &[TripChain],
    params: &EvParams,
    options: &SimOptions,
) -> Result<FleetResult> {
    options.validate()?;
    let vehicles = chains
        .iter()
        .map(|c| simulate_vehicle_day(c, params, options))
        .collect::<Result<Vec<_>>>()?;
    collect_fleet(vehicles, options.bin_width_h)
}
