//! Per-train feature encoding.
//!
//! Layout (version [`LAYOUT_VERSION`]), in order:
//!
//! | block | width |
//! |---|---|
//! | train-type one-hot | 4 |
//! | 5 past slots (current station first): station emb, line emb, role one-hot, scheduled time rel. clock / 3600, realized delay / 600, validity | 5 × 23 |
//! | 5 or 15 future slots: station emb, line emb, role one-hot, scheduled time rel. clock / 3600, validity | F × 22 |
//! | hour-of-day sin/cos, day-of-week sin/cos | 4 |
//! | neighborhood: 5 normalized counts, 5 mean delays / 600 | 10 |
//!
//! Missing slots are all-zero including the validity bit.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::network::{Embedding, RailNetwork, EMBEDDING_DIM};
use crate::schedule::{Role, Snapshot, TrainState, TrainType};

pub const LAYOUT_VERSION: u32 = 1;

pub const PAST_SLOTS: usize = 5;
pub const SIMULATION_FUTURE_SLOTS: usize = 5;
pub const REGRESSION_FUTURE_SLOTS: usize = 15;
pub const NEIGHBORHOOD_RADII: [f64; 5] = [0.1, 0.3, 0.6, 1.0, 2.0];

pub const TIME_SCALE: f64 = 1.0 / 3600.0;
pub const DELAY_SCALE: f64 = 1.0 / 600.0;

const TRAIN_TYPES: usize = TrainType::ALL.len();
const PAST_SLOT_WIDTH: usize = 2 * EMBEDDING_DIM + Role::COUNT + 3;
const FUTURE_SLOT_WIDTH: usize = 2 * EMBEDDING_DIM + Role::COUNT + 2;
const TEMPORAL_WIDTH: usize = 4;
const NEIGHBORHOOD_WIDTH: usize = 2 * NEIGHBORHOOD_RADII.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureMode {
    Simulation,
    Regression,
}

impl FeatureMode {
    pub fn future_slots(self) -> usize {
        match self {
            FeatureMode::Simulation => SIMULATION_FUTURE_SLOTS,
            FeatureMode::Regression => REGRESSION_FUTURE_SLOTS,
        }
    }

    /// Feature dimension `d` for this mode.
    pub fn dim(self) -> usize {
        TRAIN_TYPES
            + PAST_SLOTS * PAST_SLOT_WIDTH
            + self.future_slots() * FUTURE_SLOT_WIDTH
            + TEMPORAL_WIDTH
            + NEIGHBORHOOD_WIDTH
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::Simulation => "simulation",
            FeatureMode::Regression => "regression",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "simulation" => Ok(FeatureMode::Simulation),
            "regression" => Ok(FeatureMode::Regression),
            _ => Err(Error::Invalid(format!("unknown feature mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout_version: u32,
}

/// Min-max statistics of raw neighborhood counts, fitted once on training snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub layout_version: u32,
    pub count_min: [f64; 5],
    pub count_max: [f64; 5],
    pub fitted: bool,
}

impl Default for NormalizationStats {
    fn default() -> Self {
        NormalizationStats {
            layout_version: LAYOUT_VERSION,
            count_min: [0.0; 5],
            count_max: [0.0; 5],
            fitted: false,
        }
    }
}

impl NormalizationStats {
    pub fn fit<'a>(snapshots: impl IntoIterator<Item = &'a Snapshot>, network: &RailNetwork) -> Result<Self> {
        let mut min = [f64::INFINITY; 5];
        let mut max = [f64::NEG_INFINITY; 5];
        let mut seen = false;
        for snap in snapshots {
            let positions = current_positions(snap, network)?;
            for i in 0..snap.len() {
                let (counts, _) = raw_neighborhood(snap, i, &positions);
                for r in 0..5 {
                    min[r] = min[r].min(counts[r]);
                    max[r] = max[r].max(counts[r]);
                }
                seen = true;
            }
        }
        if !seen {
            return Err(Error::Invalid(
                "cannot fit normalization statistics on zero train instances".into(),
            ));
        }
        Ok(NormalizationStats {
            layout_version: LAYOUT_VERSION,
            count_min: min,
            count_max: max,
            fitted: true,
        })
    }

    fn scale_count(&self, r: usize, count: f64) -> f64 {
        let span = self.count_max[r] - self.count_min[r];
        if span <= 0.0 {
            return 0.0;
        }
        ((count - self.count_min[r]) / span).clamp(0.0, 1.0)
    }
}

/// Embedding of the station each train currently sits at; placeholders map to the origin.
fn current_positions(snapshot: &Snapshot, network: &RailNetwork) -> Result<Vec<Embedding>> {
    if !network.has_embedding() {
        return Err(Error::Invalid("network embedding has not been computed".into()));
    }
    snapshot
        .trains
        .iter()
        .map(|t| station_embedding(network, t.itinerary.station(t.position_index())))
        .collect()
}

fn station_embedding(network: &RailNetwork, station: Option<&str>) -> Result<Embedding> {
    match station {
        None => Ok([0.0; EMBEDDING_DIM]),
        Some(id) => network
            .embedding_of(id)
            .copied()
            .ok_or_else(|| Error::Data(format!("station `{id}` is not in the network"))),
    }
}

fn distance(a: &Embedding, b: &Embedding) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Raw counts and mean last delays (seconds) of other trains within each radius.
fn raw_neighborhood(snapshot: &Snapshot, subject: usize, positions: &[Embedding]) -> ([f64; 5], [f64; 5]) {
    let mut counts = [0.0; 5];
    let mut sums = [0.0; 5];
    for (j, other) in snapshot.trains.iter().enumerate() {
        if j == subject {
            continue;
        }
        let d = distance(&positions[subject], &positions[j]);
        for (r, &radius) in NEIGHBORHOOD_RADII.iter().enumerate() {
            if d <= radius {
                counts[r] += 1.0;
                sums[r] += other.last_delay() as f64;
            }
        }
    }
    let mut means = [0.0; 5];
    for r in 0..5 {
        if counts[r] > 0.0 {
            means[r] = sums[r] / counts[r];
        }
    }
    (counts, means)
}

/// The ten neighborhood scalars: min-max normalized counts then mean delays in seconds.
pub fn neighborhood_features(
    snapshot: &Snapshot,
    train_id: &str,
    network: &RailNetwork,
    norm: &NormalizationStats,
) -> Result<[f64; 10]> {
    let subject = snapshot
        .position(train_id)
        .ok_or_else(|| Error::UnknownTrain(train_id.to_string()))?;
    let positions = current_positions(snapshot, network)?;
    Ok(neighborhood_from(snapshot, subject, &positions, norm))
}

fn neighborhood_from(
    snapshot: &Snapshot,
    subject: usize,
    positions: &[Embedding],
    norm: &NormalizationStats,
) -> [f64; 10] {
    let (counts, means) = raw_neighborhood(snapshot, subject, positions);
    let mut out = [0.0; 10];
    for r in 0..5 {
        out[r] = norm.scale_count(r, counts[r]);
        out[5 + r] = means[r];
    }
    out
}

/// Raw (unnormalized) neighbor counts per radius, exposed for diagnostics and tests.
pub fn neighbor_counts(snapshot: &Snapshot, train_id: &str, network: &RailNetwork) -> Result<[f64; 5]> {
    let subject = snapshot
        .position(train_id)
        .ok_or_else(|| Error::UnknownTrain(train_id.to_string()))?;
    let positions = current_positions(snapshot, network)?;
    Ok(raw_neighborhood(snapshot, subject, &positions).0)
}

fn line_embedding_for(state: &TrainState, network: &RailNetwork) -> Result<Embedding> {
    let it = &state.itinerary;
    if let Some(e) = it.line.as_deref().and_then(|l| network.cached_line_embedding(l)) {
        return Ok(*e);
    }
    let members = it
        .real_stations()
        .map(|s| {
            network
                .station_index(s)
                .ok_or_else(|| Error::Data(format!("station `{s}` is not in the network")))
        })
        .collect::<Result<Vec<_>>>()?;
    network
        .mean_embedding(&members)
        .ok_or_else(|| Error::Invalid("network embedding has not been computed".into()))
}

/// Encodes one train of a snapshot.
pub fn encode_features(
    snapshot: &Snapshot,
    train_id: &str,
    network: &RailNetwork,
    mode: FeatureMode,
    norm: &NormalizationStats,
) -> Result<FeatureVector> {
    let subject = snapshot
        .position(train_id)
        .ok_or_else(|| Error::UnknownTrain(train_id.to_string()))?;
    let mut enc = SnapshotEncoder::new(snapshot, network, mode, norm)?;
    enc.encode(subject)
}

/// Encodes many trains of one snapshot, sharing the per-snapshot work.
pub struct SnapshotEncoder<'a> {
    snapshot: &'a Snapshot,
    network: &'a RailNetwork,
    mode: FeatureMode,
    norm: &'a NormalizationStats,
    positions: Vec<Embedding>,
}

impl<'a> SnapshotEncoder<'a> {
    pub fn new(
        snapshot: &'a Snapshot,
        network: &'a RailNetwork,
        mode: FeatureMode,
        norm: &'a NormalizationStats,
    ) -> Result<Self> {
        if !norm.fitted {
            return Err(Error::UnfittedStats);
        }
        if norm.layout_version != LAYOUT_VERSION {
            return Err(Error::LayoutVersion {
                expected: LAYOUT_VERSION,
                found: norm.layout_version,
            });
        }
        let positions = current_positions(snapshot, network)?;
        Ok(SnapshotEncoder {
            snapshot,
            network,
            mode,
            norm,
            positions,
        })
    }

    /// Encodes the train at `index` in `snapshot.trains`.
    pub fn encode(&mut self, index: usize) -> Result<FeatureVector> {
        let mut values = Vec::with_capacity(self.mode.dim());
        self.encode_into(index, &mut values)?;
        Ok(FeatureVector {
            values,
            layout_version: LAYOUT_VERSION,
        })
    }

    pub fn encode_into(&mut self, index: usize, out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        let state = &self.snapshot.trains[index];
        let it = &state.itinerary;
        let clock = self.snapshot.clock;
        let line = line_embedding_for(state, self.network)?;

        let mut one_hot = [0.0; TRAIN_TYPES];
        one_hot[it.train_type.index()] = 1.0;
        out.extend_from_slice(&one_hot);

        let pos = state.position_index();
        for k in 0..PAST_SLOTS {
            match pos.checked_sub(k).filter(|&j| j >= 1) {
                Some(j) => {
                    out.extend_from_slice(&station_embedding(self.network, it.station(j))?);
                    out.extend_from_slice(&line);
                    push_role(out, it.roles[j]);
                    out.push((it.scheduled[j] - clock) as f64 * TIME_SCALE);
                    out.push(state.realized_delays()[j] as f64 * DELAY_SCALE);
                    out.push(1.0);
                }
                None => out.extend(std::iter::repeat_n(0.0, PAST_SLOT_WIDTH)),
            }
        }

        let last = it.final_index();
        for k in 1..=self.mode.future_slots() {
            let j = pos + k;
            if j <= last {
                out.extend_from_slice(&station_embedding(self.network, it.station(j))?);
                out.extend_from_slice(&line);
                push_role(out, it.roles[j]);
                out.push((it.scheduled[j] - clock) as f64 * TIME_SCALE);
                out.push(1.0);
            } else {
                out.extend(std::iter::repeat_n(0.0, FUTURE_SLOT_WIDTH));
            }
        }

        let day = clock.rem_euclid(86_400) as f64 / 86_400.0;
        // 1970-01-01 was a Thursday; Monday is day 0.
        let dow = ((clock.div_euclid(86_400) + 3).rem_euclid(7)) as f64 / 7.0;
        out.extend_from_slice(&[
            (TAU * day).sin(),
            (TAU * day).cos(),
            (TAU * dow).sin(),
            (TAU * dow).cos(),
        ]);

        let hood = neighborhood_from(self.snapshot, index, &self.positions, self.norm);
        out.extend_from_slice(&hood[..5]);
        out.extend(hood[5..].iter().map(|d| d * DELAY_SCALE));

        debug_assert_eq!(out.len(), self.mode.dim());
        if let Some(bad) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature {bad} of train `{}`", it.train_id)));
        }
        Ok(())
    }
}

fn push_role(out: &mut Vec<f64>, role: Role) {
    let mut r = [0.0; Role::COUNT];
    r[role.index()] = 1.0;
    out.extend_from_slice(&r);
}
