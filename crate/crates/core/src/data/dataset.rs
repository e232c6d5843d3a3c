use rand::Rng;

use super::OperationalLog;
use crate::dynamics::{derive_expert_action, Action};
use crate::error::{Error, Result};
use crate::features::{FeatureMode, NormalizationStats, SnapshotEncoder, DELAY_SCALE, REGRESSION_FUTURE_SLOTS};
use crate::network::RailNetwork;
use crate::schedule::{LoggedTrain, Snapshot, TrainState};

/// Clocks `start + k * dt` strictly before `end`.
pub fn snapshot_grid(start: i64, end: i64, dt: i64) -> Vec<i64> {
    assert!(dt > 0, "grid step must be positive");
    if end <= start {
        return Vec::new();
    }
    (0..).map(|k| start + k * dt).take_while(|&t| t < end).collect()
}

/// Active-window lookup over a log, for building many snapshots.
struct ActiveIndex<'a> {
    by_open: Vec<&'a LoggedTrain>,
    max_span: i64,
}

impl<'a> ActiveIndex<'a> {
    fn new(log: &'a OperationalLog) -> Self {
        let mut by_open: Vec<&LoggedTrain> = log.trains.iter().collect();
        by_open.sort_by_key(|t| t.itinerary.window_open());
        let max_span = by_open
            .iter()
            .map(|t| t.window_close() - t.itinerary.window_open())
            .max()
            .unwrap_or(0);
        ActiveIndex { by_open, max_span }
    }

    fn snapshot(&self, clock: i64) -> Snapshot {
        let hi = self.by_open.partition_point(|t| t.itinerary.window_open() <= clock);
        let lo = self.by_open[..hi].partition_point(|t| t.itinerary.window_open() < clock - self.max_span);
        let states = self.by_open[lo..hi]
            .iter()
            .filter(|t| t.is_active(clock))
            .map(|t| t.state_at(clock))
            .collect();
        Snapshot::new(clock, states).expect("logged train ids are unique")
    }

    /// Grid clocks with at least one active train, aligned to multiples of `dt`.
    fn active_grid(&self, dt: i64) -> Vec<i64> {
        let mut clocks: Vec<i64> = Vec::new();
        for t in &self.by_open {
            let open = t.itinerary.window_open().div_euclid(dt) * dt;
            let open = if open < t.itinerary.window_open() {
                open + dt
            } else {
                open
            };
            clocks.extend(snapshot_grid(open, t.window_close() + 1, dt));
        }
        clocks.sort_unstable();
        clocks.dedup();
        clocks
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotPair {
    pub snapshot: Snapshot,
    pub successor: Snapshot,
}

/// Subsampled grid snapshots, each with the logged snapshot one step later.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotDataset {
    pub dt: i64,
    pub pairs: Vec<SnapshotPair>,
}

impl SnapshotDataset {
    /// Keeps each non-empty grid snapshot independently with probability `fraction`.
    pub fn build(log: &OperationalLog, dt: i64, fraction: f64, rng: &mut impl Rng) -> Result<Self> {
        if log.is_empty() {
            return Err(Error::Data("cannot build snapshots from an empty log".into()));
        }
        if dt <= 0 {
            return Err(Error::Invalid(format!("grid step {dt} must be positive")));
        }
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Invalid(format!("subsample fraction {fraction} outside (0, 1]")));
        }
        let index = ActiveIndex::new(log);
        let pairs = index
            .active_grid(dt)
            .into_iter()
            .filter(|_| fraction >= 1.0 || rng.random::<f64>() < fraction)
            .map(|clock| SnapshotPair {
                snapshot: index.snapshot(clock),
                successor: index.snapshot(clock + dt),
            })
            .collect();
        Ok(SnapshotDataset { dt, pairs })
    }

    /// Every non-empty grid clock of the log.
    pub fn grid(log: &OperationalLog, dt: i64) -> Vec<i64> {
        ActiveIndex::new(log).active_grid(dt)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &Snapshot> {
        self.pairs.iter().map(|p| &p.snapshot)
    }
}

/// Logged snapshots at each clock.
pub fn snapshots_at(log: &OperationalLog, clocks: &[i64]) -> Vec<Snapshot> {
    let index = ActiveIndex::new(log);
    clocks.iter().map(|&c| index.snapshot(c)).collect()
}

/// Expert trajectories of `steps + 1` consecutive logged snapshots starting at each anchor.
pub fn trajectories(log: &OperationalLog, anchors: &[i64], steps: usize, dt: i64) -> Vec<Vec<Snapshot>> {
    let index = ActiveIndex::new(log);
    anchors
        .iter()
        .map(|&a| (0..=steps as i64).map(|k| index.snapshot(a + k * dt)).collect())
        .collect()
}

/// Flat feature matrix with one expert action per row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActionDataset {
    pub dim: usize,
    pub features: Vec<f64>,
    pub actions: Vec<Action>,
}

impl ActionDataset {
    /// One row per train present in both a snapshot and its successor.
    pub fn from_pairs(data: &SnapshotDataset, network: &RailNetwork, norm: &NormalizationStats) -> Result<Self> {
        let mode = FeatureMode::Simulation;
        let mut out = ActionDataset {
            dim: mode.dim(),
            ..Default::default()
        };
        let mut row = Vec::with_capacity(out.dim);
        for pair in &data.pairs {
            let mut enc = SnapshotEncoder::new(&pair.snapshot, network, mode, norm)?;
            for (i, state) in pair.snapshot.trains.iter().enumerate() {
                let Some(next) = pair.successor.get(state.train_id()) else {
                    continue;
                };
                let action = derive_expert_action(state, next)?;
                enc.encode_into(i, &mut row)?;
                out.features.extend_from_slice(&row);
                out.actions.push(action);
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

/// Scaled delay changes at the next `k` stations relative to the last known delay, with a
/// mask marking stations that exist and were realized in the log.
pub fn regression_targets(state: &TrainState, logged: &LoggedTrain, k: usize) -> (Vec<f64>, Vec<bool>) {
    let it = &state.itinerary;
    let p = state.position_index();
    let last = state.last_delay();
    let mut values = vec![0.0; k];
    let mut mask = vec![false; k];
    for s in 0..k {
        let j = p + 1 + s;
        if j > it.final_index() {
            break;
        }
        if let Some(a) = logged.actual[j - 1] {
            values[s] = (a - it.scheduled[j] - last) as f64 * DELAY_SCALE;
            mask[s] = true;
        }
    }
    (values, mask)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegressionDataset {
    pub dim: usize,
    pub outputs: usize,
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
    pub masks: Vec<bool>,
}

impl RegressionDataset {
    /// One row per train with at least one realized future station.
    pub fn from_snapshots<'a>(
        snapshots: impl IntoIterator<Item = &'a Snapshot>,
        log: &OperationalLog,
        network: &RailNetwork,
        norm: &NormalizationStats,
    ) -> Result<Self> {
        let mode = FeatureMode::Regression;
        let k = REGRESSION_FUTURE_SLOTS;
        let mut out = RegressionDataset {
            dim: mode.dim(),
            outputs: k,
            ..Default::default()
        };
        let mut row = Vec::with_capacity(out.dim);
        for snap in snapshots {
            let mut enc = SnapshotEncoder::new(snap, network, mode, norm)?;
            for (i, state) in snap.trains.iter().enumerate() {
                let logged = log
                    .get(state.train_id())
                    .ok_or_else(|| Error::UnknownTrain(state.train_id().to_string()))?;
                let (values, mask) = regression_targets(state, logged, k);
                if !mask.iter().any(|&m| m) {
                    continue;
                }
                enc.encode_into(i, &mut row)?;
                out.features.extend_from_slice(&row);
                out.targets.extend(values);
                out.masks.extend(mask);
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.features.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> (&[f64], &[f64], &[bool]) {
        let (d, k) = (self.dim, self.outputs);
        (
            &self.features[i * d..(i + 1) * d],
            &self.targets[i * k..(i + 1) * k],
            &self.masks[i * k..(i + 1) * k],
        )
    }
}
