//! Operational logs: synthetic generation, CSV ingestion, temporal splits and snapshot datasets.

mod dataset;
mod ingest;
mod synthetic;

use std::sync::Arc;

pub use dataset::{
    regression_targets, snapshot_grid, snapshots_at, trajectories, ActionDataset, RegressionDataset, SnapshotDataset,
    SnapshotPair,
};
pub use ingest::{ingest_csv, parse_csv, write_csv, write_tagged_csv, IngestReport, CSV_HEADER};
pub use synthetic::{
    desk_network, generate_synthetic, simulate_operations, ForcedIncident, SyntheticConfig, SyntheticOutput,
};

use crate::network::RailNetwork;
use crate::schedule::{Itinerary, LoggedTrain, Role, TrainType};

/// One row of an operational log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperationRecord {
    pub train_id: String,
    pub train_type: TrainType,
    pub station_id: String,
    pub sequence_index: usize,
    pub role: Role,
    pub scheduled_time: i64,
    pub actual_time: Option<i64>,
}

/// Logged trains, sorted by train id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OperationalLog {
    pub trains: Vec<LoggedTrain>,
}

impl OperationalLog {
    pub fn new(mut trains: Vec<LoggedTrain>) -> Self {
        trains.sort_by(|a, b| a.itinerary.train_id.cmp(&b.itinerary.train_id));
        OperationalLog { trains }
    }

    pub fn len(&self) -> usize {
        self.trains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trains.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&LoggedTrain> {
        self.trains
            .binary_search_by(|t| t.itinerary.train_id.as_ref().cmp(id))
            .ok()
            .map(|i| &self.trains[i])
    }

    pub fn records(&self) -> impl Iterator<Item = OperationRecord> + '_ {
        self.trains.iter().flat_map(|t| {
            let it = &t.itinerary;
            (1..=it.final_index()).map(move |j| OperationRecord {
                train_id: it.train_id.to_string(),
                train_type: it.train_type,
                station_id: it.station(j).unwrap_or_default().to_string(),
                sequence_index: j,
                role: it.roles[j],
                scheduled_time: it.scheduled[j],
                actual_time: t.actual[j - 1],
            })
        })
    }

    /// Tags each itinerary with the first network line covering all of its stations.
    pub fn with_lines(&self, network: &RailNetwork) -> Self {
        let trains = self
            .trains
            .iter()
            .map(|t| {
                let stations: Option<Vec<usize>> =
                    t.itinerary.real_stations().map(|s| network.station_index(s)).collect();
                let line = stations.and_then(|s| network.line_covering(&s).map(str::to_string));
                let mut it: Itinerary = (*t.itinerary).clone();
                it.line = line;
                LoggedTrain {
                    itinerary: Arc::new(it),
                    actual: t.actual.clone(),
                }
            })
            .collect();
        OperationalLog { trains }
    }

    /// First and last scheduled departures.
    pub fn departure_range(&self) -> Option<(i64, i64)> {
        let deps = self.trains.iter().map(|t| t.itinerary.scheduled_departure());
        let min = deps.clone().min()?;
        Some((min, deps.max()?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: OperationalLog,
    pub validation: OperationalLog,
    pub test: OperationalLog,
}

/// Assigns each train by scheduled departure to `[.., train_end)`, `[train_end, val_end)` or
/// `[val_end, ..)`.
pub fn temporal_split(log: &OperationalLog, train_end: i64, val_end: i64) -> crate::Result<Split> {
    if train_end > val_end {
        return Err(crate::Error::Invalid(format!(
            "split boundaries out of order: {train_end} > {val_end}"
        )));
    }
    if let Some((lo, hi)) = log.departure_range() {
        for b in [train_end, val_end] {
            if b < lo || b > hi {
                log::warn!("split boundary {b} lies outside the data range [{lo}, {hi}]");
            }
        }
    }
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for t in &log.trains {
        let dep = t.itinerary.scheduled_departure();
        if dep < train_end {
            train.push(t.clone());
        } else if dep < val_end {
            validation.push(t.clone());
        } else {
            test.push(t.clone());
        }
    }
    Ok(Split {
        train: OperationalLog::new(train),
        validation: OperationalLog::new(validation),
        test: OperationalLog::new(test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_with_departures(deps: &[(&str, i64)]) -> OperationalLog {
        OperationalLog::new(
            deps.iter()
                .map(|&(id, t)| {
                    let stops = vec![("A".to_string(), t), ("B".to_string(), t + 100)];
                    LoggedTrain {
                        itinerary: Arc::new(Itinerary::new(id, TrainType::Regional, &stops).unwrap()),
                        actual: vec![Some(t), Some(t + 100)],
                    }
                })
                .collect(),
        )
    }

    #[test]
    fn split_boundaries_are_half_open() {
        let log = log_with_departures(&[("a", 100), ("b", 200), ("c", 300)]);
        let s = temporal_split(&log, 1_000, 2_000).unwrap();
        assert_eq!(s.train.len(), 3);
        let s = temporal_split(&log, 200, 300).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (1, 1, 1));
        assert_eq!(s.validation.trains[0].itinerary.train_id.as_ref(), "b");
        assert!(temporal_split(&log, 300, 200).is_err());
    }
}
