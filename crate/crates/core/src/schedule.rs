//! Timetables, per-train state and network snapshots.
//!
//! An itinerary of `m` real stations is stored with two placeholder slots: index `0` holds the
//! train for five minutes before its scheduled departure, index `m + 1` stands for the five
//! minutes after its final arrival. A train's `position_index` never exceeds `m`; a train sitting
//! at index `m` has finished and is removed once its post-arrival window closes.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Seconds a train is shown at its placeholder before departure and after arrival.
pub const PLACEHOLDER_SECS: i64 = 300;

pub type TrainId = Arc<str>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrainType {
    Regional,
    Intercity,
    HighSpeed,
    Freight,
}

impl TrainType {
    pub const ALL: [TrainType; 4] = [
        TrainType::Regional,
        TrainType::Intercity,
        TrainType::HighSpeed,
        TrainType::Freight,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrainType::Regional => "regional",
            TrainType::Intercity => "intercity",
            TrainType::HighSpeed => "high_speed",
            TrainType::Freight => "freight",
        }
    }
}

impl FromStr for TrainType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TrainType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown train type `{s}`")))
    }
}

impl fmt::Display for TrainType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Departure,
    Arrival,
    Passage,
    Placeholder,
}

impl Role {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Departure => "departure",
            Role::Arrival => "arrival",
            Role::Passage => "passage",
            Role::Placeholder => "placeholder",
        }
    }
}

impl FromStr for Role {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "departure" => Ok(Role::Departure),
            "arrival" => Ok(Role::Arrival),
            "passage" => Ok(Role::Passage),
            _ => Err(Error::Data(format!("unknown role `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Itinerary {
    pub train_id: TrainId,
    pub train_type: TrainType,
    /// Network line the train runs on, when one covers all of its stations.
    pub line: Option<String>,
    /// `None` at the two placeholder slots.
    pub stations: Vec<Option<String>>,
    pub roles: Vec<Role>,
    pub scheduled: Vec<i64>,
}

impl Itinerary {
    /// Builds an itinerary from its real stops `(station, scheduled_time)`; roles are
    /// departure/passage/arrival by position.
    pub fn new(train_id: impl Into<TrainId>, train_type: TrainType, stops: &[(String, i64)]) -> Result<Self> {
        let train_id = train_id.into();
        if stops.len() < 2 {
            return Err(Error::Data(format!("train `{train_id}` needs at least two stations")));
        }
        if stops.windows(2).any(|w| w[1].1 <= w[0].1) {
            return Err(Error::Data(format!(
                "train `{train_id}` has non-increasing scheduled times"
            )));
        }
        let m = stops.len();
        let mut stations = Vec::with_capacity(m + 2);
        let mut roles = Vec::with_capacity(m + 2);
        let mut scheduled = Vec::with_capacity(m + 2);
        stations.push(None);
        roles.push(Role::Placeholder);
        scheduled.push(stops[0].1 - PLACEHOLDER_SECS);
        for (j, (s, t)) in stops.iter().enumerate() {
            stations.push(Some(s.clone()));
            roles.push(match j {
                0 => Role::Departure,
                j if j == m - 1 => Role::Arrival,
                _ => Role::Passage,
            });
            scheduled.push(*t);
        }
        stations.push(None);
        roles.push(Role::Placeholder);
        scheduled.push(stops[m - 1].1 + PLACEHOLDER_SECS);
        Ok(Itinerary {
            train_id,
            train_type,
            line: None,
            stations,
            roles,
            scheduled,
        })
    }

    /// Number of real stations `m`.
    pub fn real_len(&self) -> usize {
        self.stations.len() - 2
    }

    /// Index of the final real station; the furthest a train can advance.
    pub fn final_index(&self) -> usize {
        self.real_len()
    }

    pub fn scheduled_departure(&self) -> i64 {
        self.scheduled[1]
    }

    pub fn window_open(&self) -> i64 {
        self.scheduled_departure() - PLACEHOLDER_SECS
    }

    pub fn station(&self, index: usize) -> Option<&str> {
        self.stations.get(index).and_then(|s| s.as_deref())
    }

    pub fn real_stations(&self) -> impl Iterator<Item = &str> {
        self.stations.iter().filter_map(|s| s.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub itinerary: Arc<Itinerary>,
    position_index: usize,
    actual_times: Vec<i64>,
    realized_delays: Vec<i64>,
}

impl TrainState {
    /// A train waiting at its pre-departure placeholder. The placeholder is stamped with its
    /// scheduled time, so its realized delay is zero.
    pub fn at_placeholder(itinerary: Arc<Itinerary>) -> Self {
        let t0 = itinerary.scheduled[0];
        TrainState {
            itinerary,
            position_index: 0,
            actual_times: vec![t0],
            realized_delays: vec![0],
        }
    }

    /// State from realized times of real stations `1..=actual.len()`.
    pub fn from_actuals(itinerary: Arc<Itinerary>, actual: &[i64]) -> Result<Self> {
        let mut s = Self::at_placeholder(itinerary);
        if actual.len() > s.itinerary.final_index() {
            return Err(Error::State(format!(
                "train `{}`: {} actual times for {} stations",
                s.itinerary.train_id,
                actual.len(),
                s.itinerary.final_index()
            )));
        }
        for &t in actual {
            s.pass_next(t);
        }
        s.check()?;
        Ok(s)
    }

    pub fn train_id(&self) -> &TrainId {
        &self.itinerary.train_id
    }

    pub fn position_index(&self) -> usize {
        self.position_index
    }

    pub fn actual_times(&self) -> &[i64] {
        &self.actual_times
    }

    pub fn realized_delays(&self) -> &[i64] {
        &self.realized_delays
    }

    pub fn is_finished(&self) -> bool {
        self.position_index == self.itinerary.final_index()
    }

    pub fn remaining(&self) -> usize {
        self.itinerary.final_index() - self.position_index
    }

    /// Delay at the train's current position.
    pub fn last_delay(&self) -> i64 {
        self.realized_delays[self.position_index]
    }

    pub fn last_actual_time(&self) -> i64 {
        self.actual_times[self.position_index]
    }

    /// `actual - scheduled` at a passed station; positive means late.
    pub fn delay_at(&self, index: usize) -> Result<i64> {
        self.realized_delays.get(index).copied().ok_or_else(|| {
            Error::State(format!(
                "train `{}` has not passed index {index} (at {})",
                self.itinerary.train_id, self.position_index
            ))
        })
    }

    /// Marks the next station as passed at `time`.
    pub(crate) fn pass_next(&mut self, time: i64) {
        debug_assert!(self.position_index < self.itinerary.final_index());
        self.position_index += 1;
        self.actual_times.push(time);
        self.realized_delays
            .push(time - self.itinerary.scheduled[self.position_index]);
        debug_assert!(self.check().is_ok());
    }

    /// Verifies the passed-station bookkeeping.
    pub fn check(&self) -> Result<()> {
        let n = self.position_index + 1;
        if self.actual_times.len() != n || self.realized_delays.len() != n {
            return Err(Error::State(format!(
                "train `{}`: times recorded for {} stations at position {}",
                self.itinerary.train_id,
                self.actual_times.len(),
                self.position_index
            )));
        }
        for j in 0..n {
            if self.realized_delays[j] != self.actual_times[j] - self.itinerary.scheduled[j] {
                return Err(Error::State(format!(
                    "train `{}`: inconsistent delay at index {j}",
                    self.itinerary.train_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub clock: i64,
    /// Sorted by train id, no duplicates.
    pub trains: Vec<TrainState>,
}

impl Snapshot {
    pub fn new(clock: i64, mut trains: Vec<TrainState>) -> Result<Self> {
        trains.sort_by(|a, b| a.train_id().cmp(b.train_id()));
        if let Some(w) = trains.windows(2).find(|w| w[0].train_id() == w[1].train_id()) {
            return Err(Error::State(format!(
                "duplicate train `{}` in snapshot",
                w[0].train_id()
            )));
        }
        Ok(Snapshot { clock, trains })
    }

    pub fn get(&self, id: &str) -> Option<&TrainState> {
        self.trains
            .binary_search_by(|t| t.train_id().as_ref().cmp(id))
            .ok()
            .map(|i| &self.trains[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.trains.binary_search_by(|t| t.train_id().as_ref().cmp(id)).ok()
    }

    pub fn len(&self) -> usize {
        self.trains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trains.is_empty()
    }
}

/// A train as recorded in an operational log: its itinerary and realized times.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedTrain {
    pub itinerary: Arc<Itinerary>,
    /// Realized times of real stations `1..=m` (index `j - 1` for station `j`).
    pub actual: Vec<Option<i64>>,
}

impl LoggedTrain {
    pub fn final_arrival(&self) -> Option<i64> {
        self.actual.last().copied().flatten()
    }

    /// Closing instant of the activity window; scheduled arrival stands in when the final
    /// actual time is unknown.
    pub fn window_close(&self) -> i64 {
        let it = &self.itinerary;
        self.final_arrival().unwrap_or(it.scheduled[it.final_index()]) + PLACEHOLDER_SECS
    }

    pub fn is_active(&self, clock: i64) -> bool {
        clock >= self.itinerary.window_open() && clock <= self.window_close()
    }

    /// State at `clock`: every station whose realized time is at or before `clock` is passed.
    pub fn state_at(&self, clock: i64) -> TrainState {
        let mut s = TrainState::at_placeholder(self.itinerary.clone());
        for t in self.actual.iter() {
            match t {
                Some(t) if *t <= clock => s.pass_next(*t),
                _ => break,
            }
        }
        s
    }
}

/// Every train active at `clock`, placed by its realized times.
pub fn build_snapshot(trains: &[LoggedTrain], clock: i64) -> Snapshot {
    let states = trains
        .iter()
        .filter(|t| t.is_active(clock))
        .map(|t| t.state_at(clock))
        .collect();
    Snapshot::new(clock, states).expect("logged train ids are unique")
}

/// Itineraries known ahead of time, sorted by activity-window opening.
#[derive(Debug, Clone, Default)]
pub struct Timetable {
    itineraries: Vec<Arc<Itinerary>>,
}

impl Timetable {
    pub fn new(mut itineraries: Vec<Arc<Itinerary>>) -> Self {
        itineraries.sort_by(|a, b| {
            a.window_open()
                .cmp(&b.window_open())
                .then_with(|| a.train_id.cmp(&b.train_id))
        });
        Timetable { itineraries }
    }

    pub fn from_log(trains: &[LoggedTrain]) -> Self {
        Self::new(trains.iter().map(|t| t.itinerary.clone()).collect())
    }

    pub fn itineraries(&self) -> &[Arc<Itinerary>] {
        &self.itineraries
    }

    /// Itineraries whose window opens in `(from, to]`.
    pub fn opening_between(&self, from: i64, to: i64) -> &[Arc<Itinerary>] {
        let lo = self.itineraries.partition_point(|it| it.window_open() <= from);
        let hi = self.itineraries.partition_point(|it| it.window_open() <= to);
        &self.itineraries[lo..hi.max(lo)]
    }
}
